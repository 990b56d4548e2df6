"""Phoneme inventory, POS tag set and per-character candidate sets.

The lexicon is the source of the hard mask: a binary vector over the
phoneme inventory that is 1 exactly on the pronunciations a character
is allowed to take.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import LexiconError, UnknownCharacterError

# Fixed order: output index i of the POS head always means POS_TAGS[i].
POS_TAGS = ("UNK", "A", "C", "D", "I", "N", "P", "T", "V", "DE", "SHI")


@dataclass(frozen=True)
class PosTagSet:
    tags: tuple = POS_TAGS
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.tags) != 11 or len(set(self.tags)) != 11:
            raise LexiconError("POS tag set must hold 11 distinct tags")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tags)})

    def __len__(self):
        return len(self.tags)

    def id(self, tag: str) -> int:
        try:
            return self.index[tag]
        except KeyError:
            raise LexiconError(f"unknown POS tag {tag!r}") from None


POS_TAG_SET = PosTagSet()


@dataclass(frozen=True)
class PhonemeInventory:
    labels: tuple
    index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        if not labels:
            raise LexiconError("phoneme inventory must not be empty")
        if len(set(labels)) != len(labels):
            raise LexiconError("phoneme labels must be unique")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "index", {lab: i for i, lab in enumerate(labels)})

    def __len__(self):
        return len(self.labels)

    def id(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise LexiconError(f"phoneme label {label!r} not in inventory") from None


@dataclass(frozen=True)
class PolyphoneLexicon:
    """Map from target character to its sorted tuple of candidate phoneme ids."""

    entries: Mapping[str, tuple]
    chars: tuple = field(init=False, repr=False, compare=False)
    char_index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = {}
        for ch, ids in self.entries.items():
            ids = tuple(sorted(set(int(i) for i in ids)))
            if not ids:
                raise LexiconError(f"character {ch!r} has no candidates")
            entries[ch] = ids
        chars = tuple(sorted(entries))
        object.__setattr__(self, "entries", {c: entries[c] for c in chars})
        object.__setattr__(self, "chars", chars)
        object.__setattr__(self, "char_index", {c: i for i, c in enumerate(chars)})

    def __len__(self):
        return len(self.chars)

    def __contains__(self, ch):
        return ch in self.entries

    def candidates(self, ch: str) -> tuple:
        try:
            return self.entries[ch]
        except KeyError:
            raise UnknownCharacterError(f"character not in lexicon: {ch!r}") from None

    def char_id(self, ch: str) -> int:
        try:
            return self.char_index[ch]
        except KeyError:
            raise UnknownCharacterError(f"character not in lexicon: {ch!r}") from None

    def is_polyphonic(self, ch: str) -> bool:
        return len(self.candidates(ch)) >= 2

    def validate(self, n: int) -> None:
        for ch, ids in self.entries.items():
            if ids[-1] >= n or ids[0] < 0:
                raise LexiconError(f"candidate id out of range for {ch!r}")


def build_lexicon(samples: Iterable) -> tuple[PhonemeInventory, PolyphoneLexicon]:
    """Collect the label inventory and per-character candidate sets.

    Labels are ordered lexicographically so that ids are stable across
    runs and across permutations of the input.
    """
    pairs = set()
    for s in samples:
        pairs.add((s.sentence[s.target_index], s.phoneme_label))
    if not pairs:
        raise LexiconError("empty corpus")
    inventory = PhonemeInventory(tuple(sorted({lab for _, lab in pairs})))
    grouped: dict[str, set] = {}
    for ch, lab in pairs:
        grouped.setdefault(ch, set()).add(inventory.index[lab])
    return inventory, PolyphoneLexicon(grouped)


def hard_mask(lexicon: PolyphoneLexicon, char: str, n: int, fallback: bool = False) -> np.ndarray:
    """Binary candidate mask of length ``n`` for ``char``.

    With ``fallback=True`` an unknown character gets the all-ones mask
    (unrestricted softmax) instead of raising.
    """
    mask = np.zeros(n, dtype=np.float64)
    if char not in lexicon.entries:
        if fallback:
            mask[:] = 1.0
            return mask
        raise UnknownCharacterError(f"character not in lexicon: {char!r}")
    mask[list(lexicon.entries[char])] = 1.0
    return mask


def mask_matrix(lexicon: PolyphoneLexicon, n: int) -> np.ndarray:
    """Stacked hard masks, one row per lexicon character in ``lexicon.chars`` order."""
    out = np.zeros((len(lexicon), n), dtype=np.float64)
    for i, ch in enumerate(lexicon.chars):
        out[i, list(lexicon.entries[ch])] = 1.0
    return out


def lexicon_to_text(lexicon: PolyphoneLexicon, inventory: PhonemeInventory) -> str:
    lines = []
    for ch in lexicon.chars:
        labels = [inventory.labels[i] for i in lexicon.entries[ch]]
        lines.append("\t".join([ch, *labels]))
    return "\n".join(lines) + ("\n" if lines else "")


def lexicon_from_text(text: str, inventory: PhonemeInventory) -> PolyphoneLexicon:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        ch, *labels = line.split("\t")
        if len(ch) != 1 or not labels:
            raise LexiconError(f"malformed lexicon line {lineno}: {line!r}")
        entries[ch] = {inventory.id(lab) for lab in labels}
    return PolyphoneLexicon(entries)
