"""Rule-generated polyphone corpora for desk-scale experiments.

Every sentence places a target character between a left neighbour and a
right neighbour. The left neighbour is a cue word whose class fixes the
target's POS tag; the right neighbour comes from a filler class. Each
polyphone resolves its reading either from the right neighbour's class
(``right_class``), from the POS tag (``pos``), or not at all (``fixed``).
So the gold reading is always a deterministic function of the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Sample
from .errors import PolyweightError
from .lexicon import POS_TAG_SET

RULES = ("right_class", "pos", "fixed")


@dataclass(frozen=True)
class Polyphone:
    char: str
    rule: str
    mapping: dict = field(default_factory=dict)  # class name or POS tag -> reading
    default: str | None = None  # reading when the class/tag is not in ``mapping``
    weight: float = 1.0  # relative sampling frequency

    @property
    def readings(self):
        out = set(self.mapping.values())
        if self.default is not None:
            out.add(self.default)
        return sorted(out)


@dataclass(frozen=True)
class SynthSpec:
    filler_classes: dict  # class name -> string of characters
    pos_cues: dict  # POS tag -> string of cue characters
    polyphones: tuple
    num_samples: int = 2400
    min_len: int = 8
    max_len: int = 48
    background: tuple = ()  # filler classes used away from the target; empty means all

    def background_chars(self):
        names = self.background or tuple(self.filler_classes)
        return "".join(self.filler_classes[n] for n in names)

    def validate(self):
        seen = {}
        groups = [("filler", k, v) for k, v in self.filler_classes.items()]
        groups += [("cue", k, v) for k, v in self.pos_cues.items()]
        groups += [("polyphone", p.char, p.char) for p in self.polyphones]
        for kind, name, chars in groups:
            if not chars:
                raise PolyweightError(f"{kind} group {name!r} is empty")
            for ch in chars:
                if ch in seen:
                    raise PolyweightError(f"character {ch!r} appears in both {seen[ch]} and {name!r}")
                seen[ch] = name
        for tag in self.pos_cues:
            if tag not in POS_TAG_SET.index:
                raise PolyweightError(f"unknown POS tag {tag!r}")
        for p in self.polyphones:
            if p.rule not in RULES:
                raise PolyweightError(f"unknown rule {p.rule!r} for {p.char!r}")
            if p.rule == "fixed":
                if p.default is None or p.mapping:
                    raise PolyweightError(f"fixed polyphone {p.char!r} needs exactly a default reading")
                continue
            keys = self.filler_classes if p.rule == "right_class" else self.pos_cues
            for k in p.mapping:
                if k not in keys:
                    raise PolyweightError(f"{p.char!r} maps undefined {p.rule} key {k!r}")
            # a POS rule without default restricts generation to its mapped tags
            covered = set(p.mapping) == set(keys) or p.rule == "pos"
            if p.default is None and not covered:
                raise PolyweightError(f"{p.char!r} needs a default reading")
            if len(p.readings) < 2:
                raise PolyweightError(f"{p.char!r} with rule {p.rule!r} must have at least 2 readings")
        for name in self.background:
            if name not in self.filler_classes:
                raise PolyweightError(f"background class {name!r} is not a filler class")
        if not 3 <= self.min_len <= self.max_len:
            raise PolyweightError("need 3 <= min_len <= max_len")
        if any(p.weight <= 0 for p in self.polyphones):
            raise PolyweightError("polyphone weights must be positive")
        if self.num_samples < 1:
            raise PolyweightError("num_samples must be positive")


DEFAULT_SPEC = SynthSpec(
    filler_classes={
        "verb": "吃喝看走跑說",
        "noun": "人書水車山門",
        "other": "天地上下中東西南北我你他們了",
    },
    pos_cues={
        "A": "很真太",
        "D": "再又才",
        "V": "會要能",
        "N": "這那每",
        "P": "在從對",
    },
    background=("other",),
    polyphones=(
        Polyphone("為", "right_class", {"verb": "ㄨㄟ2"}, "ㄨㄟ4"),
        Polyphone("行", "right_class", {"noun": "ㄏㄤ2"}, "ㄒㄧㄥ2"),
        Polyphone("長", "pos", {"A": "ㄔㄤ2", "V": "ㄓㄤ3"}),
        # same readings as 長 with the opposite POS mapping: needs char x POS
        Polyphone("場", "pos", {"A": "ㄓㄤ3", "V": "ㄔㄤ2"}),
        Polyphone("便", "pos", {"A": "ㄆㄧㄢ2", "D": "ㄅㄧㄢ4"}, weight=0.25),
        Polyphone("重", "pos", {"A": "ㄓㄨㄥ4", "D": "ㄔㄨㄥ2", "V": "ㄔㄨㄥ2"}),
        Polyphone("的", "fixed", default="ㄉㄜ˙"),
    ),
)


def _class_of(spec: SynthSpec):
    out = {}
    for name, chars in spec.filler_classes.items():
        for ch in chars:
            out[ch] = name
    return out


def cue_pos(spec: SynthSpec, ch: str) -> str | None:
    for tag, chars in spec.pos_cues.items():
        if ch in chars:
            return tag
    return None


def reference_label(spec: SynthSpec, sentence: str, target_index: int) -> tuple[str, str]:
    """Apply the generating rules to a sentence: returns (reading, POS tag)."""
    poly = {p.char: p for p in spec.polyphones}[sentence[target_index]]
    pos = cue_pos(spec, sentence[target_index - 1])
    if poly.rule == "fixed":
        return poly.default, pos
    if poly.rule == "pos":
        return poly.mapping.get(pos, poly.default), pos
    cls = _class_of(spec).get(sentence[target_index + 1])
    return poly.mapping.get(cls, poly.default), pos


def make_synthetic_corpus(spec: SynthSpec = DEFAULT_SPEC, seed: int = 0) -> list[Sample]:
    """Generate ``spec.num_samples`` rule-following samples."""
    spec.validate()
    rng = np.random.default_rng(seed)
    classes = list(spec.filler_classes)
    background = spec.background_chars()
    tags = list(spec.pos_cues)
    weights = np.array([p.weight for p in spec.polyphones], dtype=np.float64)
    weights /= weights.sum()
    samples = []
    for _ in range(spec.num_samples):
        poly = spec.polyphones[rng.choice(len(spec.polyphones), p=weights)]
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        t = int(rng.integers(1, length - 1))
        chars = [background[i] for i in rng.integers(len(background), size=length)]
        if poly.rule == "pos" and poly.default is None:
            tag = list(poly.mapping)[rng.integers(len(poly.mapping))]
        else:
            tag = tags[rng.integers(len(tags))]
        cues = spec.pos_cues[tag]
        chars[t - 1] = cues[rng.integers(len(cues))]
        right = spec.filler_classes[classes[rng.integers(len(classes))]]
        chars[t + 1] = right[rng.integers(len(right))]
        chars[t] = poly.char
        sentence = "".join(chars)
        label, pos = reference_label(spec, sentence, t)
        samples.append(Sample(sentence, t, label, pos))
    return samples
