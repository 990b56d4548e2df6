"""Training loop, evaluation metrics, ablation runner and gradient checking."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Sample, batches, collate
from .errors import TrainingAborted
from .lexicon import POS_TAG_SET
from .model import PolyphoneModel, init_model
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_iterations: int = 2000
    validate_every: int = 100
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_iterations < 1 or self.validate_every < 1:
            raise ValueError("learning rate and counts must be positive")
        if self.validate_every > self.max_iterations:
            raise ValueError("validate_every must not exceed max_iterations")

    @classmethod
    def paper_protocol(cls, **overrides):
        """Optimization constants of the original full-scale setup."""
        values = dict(learning_rate=5e-5, batch_size=256, max_iterations=10_000, validate_every=200)
        values.update(overrides)
        return cls(**values)

    def to_dict(self):
        return asdict(self)


@dataclass
class Checkpoint:
    iteration: int
    dev_accuracy: float
    model: PolyphoneModel


@dataclass
class TrainResult:
    best: Checkpoint
    history: list  # one dict per validation
    losses: list  # training loss per iteration

    @property
    def model(self):
        return self.best.model


@dataclass
class EvalReport:
    accuracy: float
    averaged_accuracy_by_characters: float
    pos_accuracy: float | None
    per_character: dict  # char -> (count, accuracy)
    count: int

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "averaged_accuracy_by_characters": self.averaged_accuracy_by_characters,
            "pos_accuracy": self.pos_accuracy,
            "count": self.count,
            "per_character": {c: {"count": n, "accuracy": a} for c, (n, a) in self.per_character.items()},
        }

    def summary(self) -> str:
        pos = "n/a" if self.pos_accuracy is None else f"{100 * self.pos_accuracy:.2f}%"
        lines = [
            f"samples:                         {self.count}",
            f"accuracy:                        {100 * self.accuracy:.2f}%",
            f"averaged accuracy by characters: {100 * self.averaged_accuracy_by_characters:.2f}%",
            f"POS accuracy:                    {pos}",
            "",
            "char  count  accuracy",
        ]
        for c, (n, a) in self.per_character.items():
            lines.append(f"{c:<4}  {n:>5}  {100 * a:7.2f}%")
        return "\n".join(lines)


def report_from_predictions(chars: Sequence[str], gold: Sequence, predicted: Sequence,
                            gold_pos: Sequence = None, predicted_pos: Sequence = None) -> EvalReport:
    """Build an EvalReport from aligned per-sample values.

    The averaged accuracy by characters is the unweighted mean of the
    per-character accuracies over the distinct target characters present.
    """
    if not len(chars):
        raise ValueError("cannot evaluate an empty sample set")
    counts: dict[str, list] = {}
    for ch, g, p in zip(chars, gold, predicted):
        entry = counts.setdefault(ch, [0, 0])
        entry[0] += 1
        entry[1] += int(g == p)
    per_char = {c: (n, k / n) for c, (n, k) in sorted(counts.items())}
    correct = sum(k for _, k in counts.values())
    pos_acc = None
    if gold_pos is not None:
        pairs = [(g, p) for g, p in zip(gold_pos, predicted_pos) if g is not None]
        if pairs:
            pos_acc = sum(g == p for g, p in pairs) / len(pairs)
    return EvalReport(correct / len(chars), float(np.mean([a for _, a in per_char.values()])),
                      pos_acc, per_char, len(chars))


def evaluate(model: PolyphoneModel, samples: Sequence[Sample], fallback: bool = False) -> EvalReport:
    """Phoneme accuracy, averaged accuracy by characters and POS accuracy via the inference path."""
    ids, _, pos = model.predict_samples(samples, fallback)
    labels = model.inventory.labels
    return report_from_predictions(
        [s.char for s in samples],
        [s.phoneme_label for s in samples],
        [labels[i] for i in ids],
        [s.pos_label for s in samples],
        [POS_TAG_SET.tags[i] for i in pos],
    )


def train(model: PolyphoneModel, train_set: Sequence[Sample], dev_set: Sequence[Sample],
          config: TrainConfig = TrainConfig(), on_validate: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam on the total loss; keeps the checkpoint with the best dev accuracy.

    ``model`` is updated in place. Validation uses predicted POS tags.
    Ties in dev accuracy keep the earliest checkpoint.
    """
    if not train_set or not dev_set:
        raise ValueError("train and dev sets must be nonempty")
    encoded = model.encode_many(train_set)
    opt = Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    dropout_rng = np.random.default_rng([config.seed, 0x5EED])
    dropout_rng = dropout_rng if model.encoder_config.dropout_rate > 0 else None
    losses, history = [], []
    best = None
    iteration = epoch = 0
    index = list(range(len(encoded)))
    while iteration < config.max_iterations:
        for chunk in batches(index, config.batch_size, config.seed, epoch):
            iteration += 1
            loss, grads, _ = model.loss_and_grads(collate([encoded[i] for i in chunk]), dropout_rng)
            if not np.isfinite(loss):
                raise TrainingAborted(f"non-finite loss {loss} at iteration {iteration}", iteration, chunk)
            opt.step(model.params, grads, model.frozen)
            losses.append(loss)
            if iteration % config.validate_every == 0:
                acc = evaluate(model, dev_set).accuracy
                record = {"iteration": iteration, "train_loss": loss, "dev_accuracy": acc}
                history.append(record)
                log.info("iter %d loss %.4f dev %.4f", iteration, loss, acc)
                if on_validate:
                    on_validate(record)
                if best is None or acc > best.dev_accuracy:
                    best = Checkpoint(iteration, acc, model.copy())
            if iteration >= config.max_iterations:
                break
        epoch += 1
    return TrainResult(best, history, losses)


# -- ablations -----------------------------------------------------------

@dataclass(frozen=True)
class AblationCell:
    name: str
    alphas: tuple = (1, 1, 0)
    beta: float = 0.1
    mask_mode: str = "hard_mask"
    soft_weights: bool = True

    def head_options(self):
        a_cross, a_char, a_pos = self.alphas
        return dict(alpha_cross=a_cross, alpha_char=a_char, alpha_pos=a_pos, beta=self.beta,
                    mask_mode=self.mask_mode, soft_weights=self.soft_weights)


ALPHA_GRID = [AblationCell(f"alphas={a}", a) for a in
              [(0, 1, 0), (0, 0, 1), (0, 1, 1), (1, 0, 0), (1, 1, 0), (1, 0, 1), (1, 1, 1)]]
BETA_GRID = [AblationCell(f"beta={b}", (1, 1, 0), b) for b in (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)]
CONTRIBUTION_GRID = [
    AblationCell("full", (1, 1, 0), 0.1),
    AblationCell("hard-mask+pos", (0, 0, 0), 0.1, soft_weights=False),
    AblationCell("hard-mask", (0, 0, 0), 0.0, soft_weights=False),
    AblationCell("baseline", (0, 0, 0), 0.0, mask_mode="no_mask", soft_weights=False),
]
GRIDS = {"alphas": ALPHA_GRID, "beta": BETA_GRID, "contribution": CONTRIBUTION_GRID}


@dataclass
class AblationResult:
    cell: AblationCell
    dev: EvalReport
    test: EvalReport | None
    best_iteration: int

    def to_dict(self):
        return {"cell": asdict(self.cell), "best_iteration": self.best_iteration,
                "dev": self.dev.to_dict(), "test": None if self.test is None else self.test.to_dict()}


def ablation_run(train_set, dev_set, test_set, grid: Iterable[AblationCell], train_config=TrainConfig(),
                 encoder_config=None, data_config=None, lexicon_samples=None, model_seed=0,
                 on_result: Callable[[AblationResult], None] | None = None) -> list[AblationResult]:
    """Train one model per grid cell on the same split and seeds."""
    grid = list(grid)
    if not grid:
        raise ValueError("ablation grid is empty")
    results = []
    for cell in grid:
        model = init_model(train_set, encoder_config, cell.head_options(), data_config, seed=model_seed,
                           lexicon_samples=lexicon_samples)
        res = train(model, train_set, dev_set, train_config)
        test = evaluate(res.model, test_set) if test_set else None
        out = AblationResult(cell, evaluate(res.model, dev_set), test, res.best.iteration)
        results.append(out)
        if on_result:
            on_result(out)
    return results


def format_ablation_table(results: Sequence[AblationResult]) -> str:
    def pct(x):
        return "   -  " if x is None else f"{100 * x:6.2f}"

    header = f"{'system':<16} {'mask':<5} {'weights':<10} {'POS':<9} {'dev acc':>7} {'test acc':>8} " \
             f"{'test avg/char':>13} {'test POS':>8}"
    lines = [header, "-" * len(header)]
    for r in results:
        c = r.cell
        weights = str(c.alphas).replace(" ", "") if c.soft_weights else "x"
        pos = f"b={c.beta:g}" if c.beta > 0 else "x"
        test = r.test
        lines.append(
            f"{c.name:<16} {'y' if c.mask_mode == 'hard_mask' else 'x':<5} {weights:<10} {pos:<9} "
            f"{pct(r.dev.accuracy):>7} {pct(test and test.accuracy):>8} "
            f"{pct(test and test.averaged_accuracy_by_characters):>13} "
            f"{pct(test.pos_accuracy if test and c.beta > 0 else None):>8}")
    return "\n".join(lines)


# -- gradient checking ---------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict  # tensor name -> max relative error
    tolerance: float
    failing: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failing

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0


def gradient_check(model: PolyphoneModel, samples: Sequence[Sample], tolerance: float = 1e-4,
                   step: float = 1e-5, floor: float = 1e-5, max_entries: int | None = None,
                   grad_fn: Callable | None = None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of the total loss with central differences.

    The model is evaluated at float64 without dropout. Each entry uses step
    ``step * max(1, |theta|)``; the relative error of an entry is
    ``|a - n| / max(|a|, |n|, floor)``, so gradients below ``floor`` are
    effectively compared in absolute terms. ``max_entries`` samples that
    many entries per tensor (all entries when None). ``grad_fn(model,
    batch)`` overrides the analytic gradient (used for negative controls).
    """
    model = model.astype(np.float64)
    batch = collate(model.encode_many(samples))
    if grad_fn is None:
        _, grads, _ = model.loss_and_grads(batch)
    else:
        grads = grad_fn(model, batch)
    rng = np.random.default_rng(seed)
    errors, failing = {}, []
    for name in sorted(model.params):
        p = model.params[name]
        g = np.asarray(grads[name])
        if name in model.frozen:
            errors[name] = 0.0 if not np.any(g) else float("inf")
            continue
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        worst = 0.0
        gflat = g.reshape(-1)
        for i in idx:
            orig = flat[i]
            h = step * max(1.0, abs(orig))
            flat[i] = orig + h
            up = model.loss(batch)
            flat[i] = orig - h
            down = model.loss(batch)
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
        errors[name] = float(worst)
        if worst > tolerance:
            failing.append(name)
    failing += [n for n in model.frozen if errors[n] > tolerance]
    return GradCheckReport(errors, tolerance, failing)

