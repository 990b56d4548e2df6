"""The full polyphone model: encoder, heads, lexicon and vocabulary."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import encoder as enc
from . import head as hd
from . import layers
from .data import Batch, DataConfig, EncodedSample, Sample, collate, encode_sample
from .errors import DataError
from .lexicon import POS_TAG_SET, PhonemeInventory, PolyphoneLexicon, build_lexicon

EVAL_BATCH = 256


class Prediction(NamedTuple):
    phoneme: str
    probs: dict  # candidate label -> probability (only nonzero entries)
    pos_tag: str
    distribution: np.ndarray  # full length-n probability vector


@dataclass
class PolyphoneModel:
    encoder_config: enc.EncoderConfig
    head_config: hd.HeadConfig
    data_config: DataConfig
    vocab: enc.Vocab
    inventory: PhonemeInventory
    lexicon: PolyphoneLexicon
    params: dict
    frozen: set = field(default_factory=set)

    @property
    def dtype(self):
        return self.params["enc.tok_emb"].dtype

    def astype(self, dtype) -> "PolyphoneModel":
        return replace(self, params={k: v.astype(dtype) for k, v in self.params.items()},
                       frozen=set(self.frozen))

    def copy(self) -> "PolyphoneModel":
        return self.astype(self.dtype)

    def encode(self, sample: Sample, fallback: bool = False) -> EncodedSample:
        return encode_sample(sample, self.vocab, self.lexicon, self.inventory, POS_TAG_SET,
                             self.data_config, fallback=fallback)

    def encode_many(self, samples: Sequence[Sample], fallback: bool = False) -> list[EncodedSample]:
        return [self.encode(s, fallback) for s in samples]

    # -- training path -------------------------------------------------

    def loss_and_grads(self, batch: Batch, dropout_rng=None):
        """Mean total loss over ``batch`` (teacher-forced POS) and its gradients."""
        hc = self.head_config
        if np.any(batch.phoneme_id < 0):
            raise DataError("training samples need a gold phoneme label")
        if hc.needs_pos and np.any(batch.pos_id < 0):
            raise DataError("gold POS tags are required when beta > 0 or the cross/POS weights are on")
        hidden, ecache = enc.encode(self.params, self.encoder_config, batch.token_ids, batch.key_mask,
                                    dropout_rng=dropout_rng)
        e_t = enc.extract_target(hidden, batch.target_position)
        log_p, p_logits, hcache = hd.head_forward(self.params, hc, e_t, batch.char_id, batch.pos_id,
                                                  batch.candidate_mask)
        loss, l_ph, l_pos, grads, de = hd.head_loss_backward(self.params, hc, log_p, p_logits, hcache,
                                                             batch.phoneme_id, batch.pos_id)
        dh = enc.extract_target_backward(de, batch.target_position, hidden.shape, hidden.dtype)
        grads.update(enc.encode_backward(dh, ecache, self.params, self.encoder_config))
        for name in self.frozen:
            grads[name] = np.zeros_like(self.params[name])
        info = {"l_ph": l_ph, "l_pos": l_pos, "log_p": log_p, "pos_logits": p_logits}
        return loss, grads, info

    def forward_train(self, encoded: EncodedSample):
        """Teacher-mode forward for one sample: (L_total, phoneme probs, POS probs)."""
        batch = collate([encoded])
        loss, _, info = self.loss_and_grads(batch)
        return loss, np.exp(info["log_p"][0]), layers.softmax(info["pos_logits"][0])

    def loss(self, batch: Batch) -> float:
        return self.loss_and_grads(batch)[0]

    # -- inference path ------------------------------------------------

    def predict_batch(self, batch: Batch):
        """Predicted phoneme ids, phoneme distributions and POS ids for a batch.

        The conditional weight layer is fed the argmax of the POS head.
        """
        hc = self.head_config
        hidden, _ = enc.encode(self.params, self.encoder_config, batch.token_ids, batch.key_mask)
        e_t = enc.extract_target(hidden, batch.target_position)
        p_logits = hd.pos_logits(self.params, e_t, hc.depth)
        pos_pred = np.argmax(p_logits, axis=-1)
        log_p, _, _ = hd.head_forward(self.params, hc, e_t, batch.char_id, pos_pred, batch.candidate_mask)
        probs = np.exp(log_p)
        return np.argmax(log_p, axis=-1), probs, pos_pred

    def predict_samples(self, samples: Sequence[Sample], fallback: bool = False, batch_size: int = EVAL_BATCH):
        """Predict every sample in fixed-size chunks (a stable chunking keeps results bitwise reproducible)."""
        ids, probs, pos = [], [], []
        for start in range(0, len(samples), batch_size):
            chunk = [replace(s, phoneme_label=None, pos_label=None) for s in samples[start:start + batch_size]]
            b = collate(self.encode_many(chunk, fallback))
            i, p, q = self.predict_batch(b)
            ids.append(i)
            probs.append(p)
            pos.append(q)
        if not ids:
            n = len(self.inventory)
            return np.zeros(0, np.int64), np.zeros((0, n)), np.zeros(0, np.int64)
        return np.concatenate(ids), np.concatenate(probs), np.concatenate(pos)

    def predict(self, sentence: str, target_index: int, fallback: bool = False) -> Prediction:
        ids, probs, pos = self.predict_samples([Sample(sentence, target_index, None)], fallback)
        dist = probs[0]
        labels = self.inventory.labels
        return Prediction(labels[ids[0]], {labels[i]: float(dist[i]) for i in np.flatnonzero(dist > 0)},
                          POS_TAG_SET.tags[pos[0]], dist)


def init_model(train_samples: Sequence[Sample], encoder_config=None, head_options=None,
               data_config=None, seed: int = 0, dtype=np.float32, lexicon_samples=None,
               vocab=None) -> PolyphoneModel:
    """Build vocabulary and lexicon from data and initialize all parameters.

    ``lexicon_samples`` (defaults to ``train_samples``) decides the
    candidate sets; ``head_options`` are HeadConfig fields other than n/d.
    """
    encoder_config = encoder_config or enc.EncoderConfig()
    data_config = data_config or DataConfig()
    if encoder_config.max_positions < data_config.window_size + 2:
        raise ValueError("max_positions must be at least window_size + 2")
    vocab = vocab or enc.build_vocab(train_samples)
    inventory, lexicon = build_lexicon(lexicon_samples if lexicon_samples is not None else train_samples)
    head_config = hd.HeadConfig(n=len(inventory), d=encoder_config.hidden_size, **(head_options or {}))
    rng = np.random.default_rng(seed)
    params = enc.init_encoder(encoder_config, len(vocab), rng, dtype)
    params.update(hd.init_head(head_config, len(lexicon), rng, dtype))
    return PolyphoneModel(encoder_config, head_config, data_config, vocab, inventory, lexicon, params)
