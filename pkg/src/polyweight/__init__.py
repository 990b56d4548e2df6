"""Polyphone disambiguation: a small transformer encoder whose phoneme head is a
weighted softmax conditioned on the target character and its predicted POS tag."""

from .archive import load_archive, save_archive
from .config import RunConfig, load_config, parse_config
from .data import DataConfig, Sample, load_dataset, save_dataset, stratified_split
from .encoder import EncoderConfig
from .errors import (
    ArchiveError,
    ConfigError,
    DataError,
    LexiconError,
    PolyweightError,
    SupportError,
    TrainingAborted,
    UnknownCharacterError,
)
from .head import HeadConfig, conditional_weights, soft_weights, weighted_softmax
from .lexicon import POS_TAGS, build_lexicon, hard_mask
from .model import PolyphoneModel, Prediction, init_model
from .synth import DEFAULT_SPEC, make_synthetic_corpus
from .training import EvalReport, TrainConfig, ablation_run, evaluate, gradient_check, train

__version__ = "0.1.0"

__all__ = [
    "ArchiveError", "ConfigError", "DataConfig", "DataError", "DEFAULT_SPEC", "EncoderConfig", "EvalReport",
    "HeadConfig", "LexiconError", "POS_TAGS", "PolyphoneModel", "PolyweightError", "Prediction", "RunConfig",
    "Sample", "SupportError", "TrainConfig", "TrainingAborted", "UnknownCharacterError", "ablation_run",
    "build_lexicon", "conditional_weights", "evaluate", "gradient_check", "hard_mask", "init_model",
    "load_archive", "load_config", "load_dataset", "make_synthetic_corpus", "parse_config", "save_archive",
    "save_dataset", "soft_weights", "stratified_split", "train", "weighted_softmax",
]
