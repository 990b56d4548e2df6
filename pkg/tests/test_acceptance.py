"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py``; the per-criterion
summary is printed at the end of the session. The training-based criteria
(6, 7, 9, 10) share one module-level set of runs on the synthetic corpus,
which takes roughly 15 minutes on one CPU core.

Criterion 11 needs the public CPP corpus. Point ``POLYWEIGHT_CPP_DIR`` at a
directory holding ``train``/``dev``/``test`` ``.sent``/``.lb`` files to
enable it; without it the test is skipped and recorded as SKIP.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from polyweight import encoder as enc
from polyweight import head as hd
from polyweight import layers
from polyweight.archive import load_archive, save_archive
from polyweight.data import Sample, collate, load_dataset, stratified_split
from polyweight.encoder import EncoderConfig
from polyweight.lexicon import build_lexicon
from polyweight.model import init_model
from polyweight.synth import DEFAULT_SPEC, make_synthetic_corpus
from polyweight.training import CONTRIBUTION_GRID, AblationCell, TrainConfig, evaluate, gradient_check, train
from tests.conftest import record_criterion

SEEDS = (0, 1, 2)
# Frozen after the pilot run (see the project notes): at the desk budget every
# contribution cell reaches 100% dev accuracy on every seed, so the ordering is
# asserted with zero slack.
ORDERING_MARGIN = 0.0
LEARNING_THRESHOLD = 0.99
TIME_BUDGET_S = 600.0
CELLS = {c.name: c for c in CONTRIBUTION_GRID}
BETA_CELLS = {b: AblationCell(f"beta={b}", (1, 1, 0), b) for b in (0.01, 0.1, 1.0)}


def _check(number, ok, detail):
    record_criterion(number, bool(ok), detail)
    assert ok, detail


# -- shared training runs --------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    samples = make_synthetic_corpus(DEFAULT_SPEC, seed=0)
    return samples, stratified_split(samples, (10, 1, 1), 0)


@pytest.fixture(scope="module")
def runs(corpus):
    """Train every cell needed by criteria 6, 7 and 9 at the desk defaults, for 3 seeds."""
    _, (tr, dv, te) = corpus
    cells = {"full": CELLS["full"], "hard-mask+pos": CELLS["hard-mask+pos"], "baseline": CELLS["baseline"],
             "beta=0.01": BETA_CELLS[0.01], "beta=1.0": BETA_CELLS[1.0]}
    out = {}
    for seed in SEEDS:
        for name, cell in cells.items():
            model = init_model(tr, EncoderConfig(), cell.head_options(), seed=seed, lexicon_samples=tr + dv)
            start = time.perf_counter()
            res = train(model, tr, dv, TrainConfig(seed=seed))
            elapsed = time.perf_counter() - start
            out[name, seed] = dict(result=res, seconds=elapsed, dev=evaluate(res.model, dv),
                                   test=evaluate(res.model, te))
    for seed in SEEDS:  # beta = 0.1 with alphas (1,1,0) is exactly the full cell
        out["beta=0.1", seed] = out["full", seed]
    return out


def random_queries(model, count, rng):
    """In-lexicon queries over random sentences drawn from the model's vocabulary."""
    chars = model.vocab.tokens[4:]
    targets = list(model.lexicon.chars)
    queries = []
    for _ in range(count):
        n = int(rng.integers(3, 40))
        sentence = [chars[i] for i in rng.integers(len(chars), size=n)]
        t = int(rng.integers(n))
        sentence[t] = targets[rng.integers(len(targets))]
        queries.append(Sample("".join(sentence), t, None))
    return queries


def randomized(model, seed, scale=0.2):
    rng = np.random.default_rng(seed)
    m = model.copy()
    for k, v in m.params.items():
        m.params[k] = (v + rng.normal(0, scale, v.shape)).astype(v.dtype)
    return m


# -- 1 ----------------------------------------------------------------------

def test_criterion_01_weighted_softmax():
    rng = np.random.default_rng(101)
    worst = dict(norm=0.0, plain=0.0, scale=0.0, shift=0.0)
    zero_ok = True
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        logits = rng.normal(0, rng.uniform(0.1, 20), n)
        w = rng.uniform(0, 1, n) * (rng.uniform(size=n) < rng.uniform(0.2, 1))
        if not w.any():
            w[rng.integers(n)] = rng.uniform(1e-3, 1)
        p = hd.weighted_softmax(logits, w)
        worst["norm"] = max(worst["norm"], abs(p.sum() - 1))
        zero_ok &= bool(np.all(p[w == 0] == 0.0))
        worst["plain"] = max(worst["plain"], np.abs(hd.weighted_softmax(logits, np.ones(n))
                                                   - layers.softmax(logits)).max())
        c = math.exp(rng.uniform(-8, 8))
        worst["scale"] = max(worst["scale"], np.abs(hd.weighted_softmax(logits, c * w) - p).max())
        s = rng.uniform(-100, 100)
        worst["shift"] = max(worst["shift"], np.abs(hd.weighted_softmax(logits + s, w) - p).max())
    ok = (worst["norm"] < 1e-6 and zero_ok and worst["plain"] < 1e-12 and worst["scale"] < 1e-9
          and worst["shift"] < 1e-9)
    _check(1, ok, "1000 draws: |sum-1| {norm:.1e}, plain-softmax gap {plain:.1e}, scale {scale:.1e}, "
                  "shift {shift:.1e}, zeros exact={z}".format(z=zero_ok, **worst))


# -- 2 ----------------------------------------------------------------------

def _loop_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))


def test_criterion_02_conditional_weights():
    rng = np.random.default_rng(202)
    worst_s = worst_c = 0.0
    for alphas in [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]:
        for _ in range(1000):
            n, chars = int(rng.integers(1, 12)), int(rng.integers(1, 6))
            cfg = hd.HeadConfig(n=n, d=4, alpha_cross=alphas[0], alpha_char=alphas[1], alpha_pos=alphas[2])
            params = {"head.e_cross": rng.normal(0, 3, (chars * 11, n)), "head.e_char": rng.normal(0, 3, (chars, n)),
                      "head.e_pos": rng.normal(0, 3, (11, n)), "head.bias": rng.normal(0, 3, n)}
            c, p = int(rng.integers(chars)), int(rng.integers(11))
            w_h = (rng.uniform(size=n) < 0.5).astype(float)
            w_s = hd.soft_weights(params, cfg, c, p)
            w_c = hd.conditional_weights(w_s, w_h)
            for i in range(n):
                ref = float(params["head.bias"][i])
                ref += alphas[0] * float(params["head.e_cross"][c * 11 + p, i])
                ref += alphas[1] * float(params["head.e_char"][c, i])
                ref += alphas[2] * float(params["head.e_pos"][p, i])
                worst_s = max(worst_s, abs(w_s[i] - ref))
                worst_c = max(worst_c, abs(w_c[i] - float(w_h[i]) * _loop_sigmoid(ref)))
    _check(2, worst_s < 1e-12 and worst_c < 1e-12,
           f"8 alpha settings x 1000 draws: soft-weight gap {worst_s:.1e}, conditional-weight gap {worst_c:.1e}")


# -- 3 ----------------------------------------------------------------------

def test_criterion_03_gradients():
    samples = make_synthetic_corpus(DEFAULT_SPEC, seed=3)
    cfg = EncoderConfig(num_layers=1, hidden_size=8, num_heads=2, ff_size=16, max_positions=34, dropout_rate=0.0)
    model = init_model(samples, cfg, dict(alpha_cross=1, alpha_char=1, alpha_pos=1, beta=0.5), seed=3,
                       dtype=np.float64)
    model = randomized(model, 33, scale=0.3)
    rng = np.random.default_rng(3)
    picked = [samples[i] for i in rng.choice(len(samples), 5, replace=False)]
    report = gradient_check(model, picked, tolerance=1e-4)
    worst = max(report.errors, key=report.errors.get)
    _check(3, report.passed and len(report.errors) == len(model.params),
           f"{len(report.errors)} tensors, every entry; max relative error {report.max_error:.2e} ({worst})")


# -- 4 ----------------------------------------------------------------------

def test_criterion_04_candidate_support(runs):
    trained = runs["full", 0]["result"].model
    random_model = randomized(trained, 44, scale=0.5)
    rng = np.random.default_rng(404)
    violations = single_bad = checked_single = 0
    for model in (trained, random_model):
        queries = random_queries(model, 10_000, rng)
        ids, probs, _ = model.predict_samples(queries)
        for q, i, p in zip(queries, ids, probs):
            cands = model.lexicon.candidates(q.char)
            violations += int(i not in cands) + int(np.any(np.delete(p, cands) != 0))
            if len(cands) == 1:
                checked_single += 1
                single_bad += int(p[cands[0]] != 1.0)
    _check(4, violations == 0 and single_bad == 0 and checked_single > 0,
           f"2 models x 10000 queries: {violations} support violations, {single_bad}/{checked_single} "
           "single-candidate queries off probability 1")


# -- 5 ----------------------------------------------------------------------

def _hard_mask_classifier(model, queries):
    """Independent hard-masked softmax: masked argmax over the phoneme projection."""
    preds = []
    for start in range(0, len(queries), 256):
        batch = collate(model.encode_many(queries[start:start + 256]))
        hidden, _ = enc.encode(model.params, model.encoder_config, batch.token_ids, batch.key_mask)
        e_t = hidden[np.arange(len(batch)), batch.target_position]
        logits = e_t @ model.params["head.w_ph"] + model.params["head.b_ph"]
        preds.append(np.argmax(np.where(batch.candidate_mask > 0, logits, -np.inf), axis=-1))
    return np.concatenate(preds)


def test_criterion_05_reductions(runs):
    from dataclasses import replace
    full = runs["full", 0]["result"].model
    queries = random_queries(full, 1000, np.random.default_rng(505))
    reference = _hard_mask_classifier(full, queries)

    ones = full.copy()
    ones.head_config = replace(full.head_config, soft_weights=False)
    got_ones = ones.predict_samples(queries)[0]

    zero = full.copy()
    zero.head_config = replace(full.head_config, alpha_cross=0, alpha_char=0, alpha_pos=0)
    zero.params["head.bias"][:] = 0.0
    got_zero = zero.predict_samples(queries)[0]
    hard = ones.predict_samples(queries)[0]
    a, b = int((got_ones == reference).sum()), int((got_zero == hard).sum())
    _check(5, a == 1000 and b == 1000,
           f"w_s forced to 1 vs hard-mask classifier: {a}/1000 equal; alphas (0,0,0), b=0 vs hard-mask: {b}/1000")


# -- 6 ----------------------------------------------------------------------

def test_criterion_06_desk_learning(corpus, runs):
    samples, (tr, dv, te) = corpus
    r = runs["full", 0]
    acc, secs = r["result"].best.dev_accuracy, r["seconds"]
    first = next((h["iteration"] for h in r["result"].history if h["dev_accuracy"] >= LEARNING_THRESHOLD), None)
    _check(6, len(samples) >= 2000 and acc >= LEARNING_THRESHOLD and secs < TIME_BUDGET_S,
           f"{len(samples)} samples ({len(tr)}/{len(dv)}/{len(te)}), best dev {100 * acc:.2f}% "
           f"(first >= {100 * LEARNING_THRESHOLD:.0f}% at iteration {first}), {secs:.0f}s for 2000 iterations")


# -- 7 ----------------------------------------------------------------------

def test_criterion_07_contribution_ordering(runs):
    rows, ok = [], True
    for seed in SEEDS:
        f, h, b = (runs[name, seed]["result"].best.dev_accuracy for name in ("full", "hard-mask+pos", "baseline"))
        ok &= f >= h - ORDERING_MARGIN and h >= b - ORDERING_MARGIN
        test = [runs[name, seed]["test"].accuracy for name in ("full", "hard-mask+pos", "baseline")]
        rows.append(f"seed {seed}: dev {100 * f:.2f}/{100 * h:.2f}/{100 * b:.2f} "
                    f"(test {'/'.join(f'{100 * x:.2f}' for x in test)})")
    _check(7, ok, f"full >= hard-mask >= baseline, margin {ORDERING_MARGIN}: " + "; ".join(rows))


# -- 8 ----------------------------------------------------------------------

def test_criterion_08_metric_oracle():
    from polyweight.training import report_from_predictions

    def brute(chars, gold, pred):
        groups = {}
        for c, g, p in zip(chars, gold, pred):
            groups.setdefault(c, []).append(g == p)
        return (sum(g == p for g, p in zip(gold, pred)) / len(gold),
                sum(sum(v) / len(v) for v in groups.values()) / len(groups))

    fixtures = [
        ("AABB", list("xyuv"), list("xyuu")),
        (["A"] * 100 + ["B"], ["x"] * 101, ["x"] * 99 + ["z", "z"]),
        ("AB", list("xy"), list("xy")),
        ("ABCABCAAB", list("xyzxyzxyz"), list("xyzzzzxxx")),
    ]
    ok = True
    for chars, gold, pred in fixtures:
        r = report_from_predictions(chars, gold, pred)
        ok &= (r.accuracy, r.averaged_accuracy_by_characters) == brute(chars, gold, pred)
    dom = report_from_predictions(*fixtures[1])
    ok &= round(dom.accuracy, 4) == 0.9802 and dom.averaged_accuracy_by_characters == 0.495
    ok &= report_from_predictions(*fixtures[0]).accuracy == 0.75
    _check(8, ok, f"{len(fixtures)} fixtures exact; domination fixture accuracy {dom.accuracy:.4f} "
                  f"vs averaged-by-characters {dom.averaged_accuracy_by_characters}")


# -- 9 ----------------------------------------------------------------------

def test_criterion_09_beta_pos_accuracy(runs):
    rows, ok = [], True
    for seed in SEEDS:
        accs = [runs[f"beta={b}", seed]["test"].pos_accuracy for b in (0.01, 0.1, 1.0)]
        ok &= accs[0] <= accs[1] <= accs[2]
        rows.append(f"seed {seed}: " + "/".join(f"{100 * a:.1f}" for a in accs))
    _check(9, ok, "test POS accuracy at beta 0.01/0.1/1.0 non-decreasing: " + "; ".join(rows))


# -- 10 ---------------------------------------------------------------------

def test_criterion_10_determinism_and_serialization(corpus, runs, tmp_path):
    _, (tr, dv, _) = corpus
    cfg = TrainConfig(max_iterations=200, validate_every=100, seed=7)
    a = train(init_model(tr, EncoderConfig(), seed=7, lexicon_samples=tr + dv), tr, dv, cfg)
    b = train(init_model(tr, EncoderConfig(), seed=7, lexicon_samples=tr + dv), tr, dv, cfg)
    same_losses = np.array(a.losses).tobytes() == np.array(b.losses).tobytes()

    best = runs["full", 0]["result"].best
    path = tmp_path / "best.pwa"
    save_archive(best.model, path, TrainConfig(seed=0), seed=0)
    back = load_archive(path)
    bit_exact = all(back.params[k].tobytes() == v.tobytes() and back.params[k].dtype == v.dtype
                    for k, v in best.model.params.items()) and set(back.params) == set(best.model.params)
    reload_acc = evaluate(back, dv).accuracy
    _check(10, same_losses and bit_exact and reload_acc == best.dev_accuracy,
           f"loss histories identical={same_losses} ({len(a.losses)} steps), archive bit-exact={bit_exact}, "
           f"reloaded dev {reload_acc} vs recorded {best.dev_accuracy}")


# -- 11 ---------------------------------------------------------------------

def test_criterion_11_cpp_ingestion(tmp_path):
    root = os.environ.get("POLYWEIGHT_CPP_DIR")
    if not root:
        record_criterion(11, "SKIP", "CPP corpus not available; set POLYWEIGHT_CPP_DIR to run")
        pytest.skip("CPP corpus not available (set POLYWEIGHT_CPP_DIR)")
    root = Path(root)
    splits, rejected, lines = {}, 0, 0
    for name in ("train", "dev", "test"):
        samples, rej = load_dataset(root / f"{name}.sent", "cpp")
        splits[name] = samples
        rejected += len(rej)
        lines += len(samples) + len(rej)
    inventory, lexicon = build_lexicon(splits["train"] + splits["dev"] + splits["test"])
    outside = sum(inventory.id(s.phoneme_label) not in lexicon.candidates(s.char)
                  for part in splits.values() for s in part)
    toy = TrainConfig(max_iterations=20, validate_every=10, batch_size=16)
    model = init_model(splits["train"], EncoderConfig(num_layers=1), dict(alpha_cross=0, alpha_pos=0, beta=0.0),
                       lexicon_samples=splits["train"] + splits["dev"] + splits["test"])
    res = train(model, splits["train"], splits["dev"][:500], toy)
    _check(11, rejected / lines < 1e-3 and outside == 0 and res.best is not None,
           f"{lines} lines, {rejected} rejected, {outside} labels outside candidate sets, toy run finished")
