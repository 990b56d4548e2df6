"""Dataset loading, windowing, sample encoding, splitting and batching."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .encoder import CLS_ID, PAD_ID, SEP_ID, Vocab
from .errors import DataError
from .lexicon import POS_TAG_SET, PhonemeInventory, PolyphoneLexicon, PosTagSet, hard_mask

CPP_MARKER = "▁"  # "▁" wraps the target character in CPP .sent files
FORMATS = ("native", "cpp")


@dataclass(frozen=True)
class Sample:
    sentence: str
    target_index: int
    phoneme_label: str | None
    pos_label: str | None = None

    def __post_init__(self):
        if not 0 <= self.target_index < len(self.sentence):
            raise DataError(
                f"target_index {self.target_index} out of range for sentence of length {len(self.sentence)}")

    @property
    def char(self) -> str:
        return self.sentence[self.target_index]


@dataclass(frozen=True)
class EncodedSample:
    token_ids: np.ndarray
    target_position: int
    phoneme_id: int  # -1 when the sample carries no gold label
    pos_id: int  # -1 when the sample carries no gold POS
    char_id: int  # lexicon row of the target char, -1 under the unrestricted fallback
    candidate_mask: np.ndarray


@dataclass(frozen=True)
class DataConfig:
    window_size: int = 32
    split_ratio: tuple = (10, 1, 1)
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if len(self.split_ratio) != 3 or min(self.split_ratio) <= 0:
            raise ValueError("split_ratio must be three positive numbers")


class Rejection(NamedTuple):
    line_number: int
    reason: str
    text: str


def load_dataset(path, format_tag: str = "native", strict: bool = False):
    """Read samples from ``path``.

    Returns ``(samples, rejections)``. Malformed lines are collected in
    ``rejections`` (or raise immediately with ``strict=True``).

    ``format_tag='native'`` expects UTF-8 TSV lines
    ``sentence<TAB>target_index<TAB>phoneme_label[<TAB>pos_tag]``.
    ``format_tag='cpp'`` expects a ``.sent`` file whose target character is
    wrapped in ``▁`` markers, with labels in a sibling ``.lb`` file and
    optional POS tags in a sibling ``.pos`` file.
    """
    if format_tag not in FORMATS:
        raise DataError(f"unknown format {format_tag!r}; expected one of {FORMATS}")
    if format_tag == "native":
        records = _native_records(path)
    else:
        records = _cpp_records(path)
    samples, rejections = [], []
    for lineno, raw, parsed in records:
        if isinstance(parsed, str):
            rej = Rejection(lineno, parsed, raw)
            if strict:
                raise DataError(f"{path}:{lineno}: {parsed}")
            rejections.append(rej)
        else:
            samples.append(parsed)
    return samples, rejections


def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _make_sample(sentence, index, label, pos):
    if pos is not None and pos not in POS_TAG_SET.index:
        return f"unknown POS tag {pos!r}"
    if not label:
        return "empty phoneme label"
    if not 0 <= index < len(sentence):
        return f"target_index {index} out of range"
    return Sample(sentence, index, label, pos)


def _native_records(path):
    for lineno, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            yield lineno, line, f"expected 3 or 4 tab-separated fields, got {len(fields)}"
            continue
        sentence, index, label = fields[:3]
        pos = fields[3] if len(fields) == 4 and fields[3] else None
        try:
            index = int(index)
        except ValueError:
            yield lineno, line, f"target_index {index!r} is not an integer"
            continue
        yield lineno, line, _make_sample(sentence, index, label, pos)


def _cpp_stem(path):
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".sent", ".lb", ".pos") else p


def _cpp_records(path):
    stem = _cpp_stem(path)
    sents = _read_lines(f"{stem}.sent")
    labels = _read_lines(f"{stem}.lb")
    pos_path = f"{stem}.pos"
    pos_tags = _read_lines(pos_path) if os.path.exists(pos_path) else None
    if len(labels) != len(sents) or (pos_tags is not None and len(pos_tags) != len(sents)):
        raise DataError(f"{stem}: .sent/.lb/.pos line counts differ")
    for i, raw in enumerate(sents):
        lineno = i + 1
        first = raw.find(CPP_MARKER)
        second = raw.find(CPP_MARKER, first + 1)
        if first < 0 or second != first + 2 or raw.count(CPP_MARKER) != 2:
            yield lineno, raw, "target must be exactly one character wrapped in ▁ markers"
            continue
        sentence = raw[:first] + raw[first + 1] + raw[second + 1:]
        pos = pos_tags[i].strip() or None if pos_tags is not None else None
        yield lineno, raw, _make_sample(sentence, first, labels[i].strip(), pos)


def save_dataset(samples, path) -> None:
    """Write samples in the native TSV format."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fields = [s.sentence, str(s.target_index), s.phoneme_label]
            if s.pos_label is not None:
                fields.append(s.pos_label)
            fh.write("\t".join(fields) + "\n")


def truncate_window(sentence: str, target_index: int, l_win: int):
    """Cut a window of at most ``l_win`` characters around the target.

    The target sits ``(l_win - 1) // 2`` characters from the left edge;
    near a sentence boundary the window is clamped and the unused span is
    given to the other side. Returns ``(subtext, new_index)``.
    """
    n = len(sentence)
    if n <= l_win:
        return sentence, target_index
    start = target_index - (l_win - 1) // 2
    start = max(0, min(start, n - l_win))
    return sentence[start:start + l_win], target_index - start


def encode_sample(sample: Sample, vocab: Vocab, lexicon: PolyphoneLexicon, inventory: PhonemeInventory,
                  pos_tags: PosTagSet = POS_TAG_SET, config: DataConfig = DataConfig(),
                  fallback: bool = False) -> EncodedSample:
    subtext, new_index = truncate_window(sample.sentence, sample.target_index, config.window_size)
    token_ids = np.array([CLS_ID, *vocab.ids(subtext), SEP_ID], dtype=np.int64)
    char = sample.char
    mask = hard_mask(lexicon, char, len(inventory), fallback=fallback)
    char_id = lexicon.char_index.get(char, -1)
    phoneme_id = -1 if sample.phoneme_label is None else inventory.id(sample.phoneme_label)
    if phoneme_id >= 0 and char_id >= 0 and mask[phoneme_id] != 1.0:
        raise DataError(f"gold label {sample.phoneme_label!r} is not a candidate of {char!r}")
    pos_id = -1 if sample.pos_label is None else pos_tags.id(sample.pos_label)
    return EncodedSample(token_ids, new_index + 1, phoneme_id, pos_id, char_id, mask)


class Batch(NamedTuple):
    token_ids: np.ndarray  # (B, T) padded with PAD
    key_mask: np.ndarray  # (B, T) true on real tokens
    target_position: np.ndarray
    phoneme_id: np.ndarray
    pos_id: np.ndarray
    char_id: np.ndarray
    candidate_mask: np.ndarray  # (B, n)

    def __len__(self):
        return len(self.target_position)


def collate(encoded: Sequence[EncodedSample]) -> Batch:
    T = max(len(e.token_ids) for e in encoded)
    B = len(encoded)
    ids = np.full((B, T), PAD_ID, dtype=np.int64)
    key_mask = np.zeros((B, T), dtype=bool)
    for i, e in enumerate(encoded):
        ids[i, :len(e.token_ids)] = e.token_ids
        key_mask[i, :len(e.token_ids)] = True
    return Batch(
        ids, key_mask,
        np.array([e.target_position for e in encoded], dtype=np.int64),
        np.array([e.phoneme_id for e in encoded], dtype=np.int64),
        np.array([e.pos_id for e in encoded], dtype=np.int64),
        np.array([e.char_id for e in encoded], dtype=np.int64),
        np.stack([e.candidate_mask for e in encoded]),
    )


def _apportion(m, ratio):
    # Largest-remainder rounding; ties go to the earlier split (train first).
    total = float(sum(ratio))
    ideal = [m * r / total for r in ratio]
    counts = [int(np.floor(x)) for x in ideal]
    order = sorted(range(3), key=lambda i: (-(ideal[i] - counts[i]), i))
    for i in order[:m - sum(counts)]:
        counts[i] += 1
    return counts


def stratified_split(samples: Sequence[Sample], ratio=(10, 1, 1), seed: int = 0):
    """Split per target character into (train, dev, test).

    Within each stratum the samples are shuffled with ``seed`` and cut by
    largest-remainder rounding of ``ratio``. Each output keeps the input
    order of its members.
    """
    if len(ratio) != 3 or min(ratio) <= 0:
        raise ValueError("ratio must be three positive numbers")
    strata: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        strata.setdefault(s.char, []).append(i)
    rng = np.random.default_rng(seed)
    assign = np.empty(len(samples), dtype=np.int64)
    for ch in sorted(strata):
        idx = np.array(strata[ch])
        idx = idx[rng.permutation(len(idx))]
        n_train, n_dev, _ = _apportion(len(idx), ratio)
        assign[idx[:n_train]] = 0
        assign[idx[n_train:n_train + n_dev]] = 1
        assign[idx[n_train + n_dev:]] = 2
    return tuple([s for s, a in zip(samples, assign) if a == k] for k in range(3))


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(samples: Sequence, batch_size: int, seed: int, epoch: int):
    """Yield consecutive chunks of a (seed, epoch)-determined permutation."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = epoch_permutation(len(samples), seed, epoch)
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start:start + batch_size]]
