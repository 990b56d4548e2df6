"""Command line entry point: ``polyweight {train,eval,predict,ablate,gradcheck,make-synth}``.

Exit codes: 0 success, 1 gradient check failed, 2 configuration or usage
error, 3 data error, 4 training aborted, 5 unknown character, 6 unreadable
or corrupt archive.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import archive, synth
from .config import load_config
from .data import load_dataset, save_dataset, stratified_split
from .encoder import EncoderConfig
from .errors import (
    ArchiveError,
    ConfigError,
    DataError,
    LexiconError,
    PolyweightError,
    TrainingAborted,
    UnknownCharacterError,
)
from .model import init_model
from .training import (
    GRIDS,
    evaluate,
    format_ablation_table,
    gradient_check,
    ablation_run,
    train,
)

log = logging.getLogger("polyweight")

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_ABORT, EXIT_UNKNOWN_CHAR, EXIT_ARCHIVE = 0, 1, 2, 3, 4, 5, 6


class Output:
    """Human-readable text by default; one JSON object per line with ``--json``."""

    def __init__(self, as_json: bool, stream=None):
        self.as_json = as_json
        self.stream = stream or sys.stdout

    def record(self, kind: str, payload: dict, text: str | None = None):
        if self.as_json:
            self.stream.write(json.dumps({"type": kind, **payload}, ensure_ascii=False, sort_keys=True) + "\n")
        elif text is not None:
            self.stream.write(text + "\n")
        self.stream.flush()

    def text(self, text: str):
        if not self.as_json:
            self.stream.write(text + "\n")
            self.stream.flush()


def _load(path, fmt, what="dataset"):
    samples, rejections = load_dataset(path, fmt)
    if rejections:
        log.warning("%s: rejected %d malformed line(s); first: line %d (%s)", path, len(rejections),
                    rejections[0].line_number, rejections[0].reason)
    if not samples:
        raise DataError(f"{what} {path} contains no samples")
    return samples


def _datasets(args, run):
    """Return (train, dev, test) from --data (split here) or explicit --train/--dev[/--test]."""
    if args.data:
        if args.train or args.dev or args.test:
            raise ConfigError("use either --data or --train/--dev/--test, not both")
        samples = _load(args.data, args.format)
        return stratified_split(samples, run.data.split_ratio, run.data.shuffle_seed)
    if not (args.train and args.dev):
        raise ConfigError("need --data, or both --train and --dev")
    test = _load(args.test, args.format, "test set") if args.test else []
    return _load(args.train, args.format, "train set"), _load(args.dev, args.format, "dev set"), test


def _run_config(args):
    run = load_config(args.config, args.paper_protocol)
    if args.seed is not None:
        run = replace(run, train=replace(run.train, seed=args.seed))
    return run


def cmd_train(args, out: Output) -> int:
    run = _run_config(args)
    train_set, dev_set, test_set = _datasets(args, run)
    seed = run.train.seed
    model = init_model(train_set, run.encoder, run.head, run.data, seed=seed, lexicon_samples=train_set + dev_set)
    log.info("train %d / dev %d / test %d samples, %d phonemes, %d characters in lexicon",
             len(train_set), len(dev_set), len(test_set), len(model.inventory), len(model.lexicon))

    def on_validate(rec):
        out.record("validation", rec, f"iter {rec['iteration']:>6}  loss {rec['train_loss']:.4f}  "
                                      f"dev acc {100 * rec['dev_accuracy']:.2f}%")

    result = train(model, train_set, dev_set, run.train, on_validate)
    best = result.best
    extra = {"checkpoint": {"iteration": best.iteration, "dev_accuracy": best.dev_accuracy},
             "run_config": run.to_dict()}
    archive.save_archive(best.model, args.out, run.train, seed, extra)
    report = evaluate(best.model, dev_set)
    out.record("checkpoint", {"iteration": best.iteration, "dev_accuracy": best.dev_accuracy, "path": args.out},
               f"best checkpoint: iteration {best.iteration}, dev accuracy {100 * best.dev_accuracy:.2f}% "
               f"-> {args.out}")
    out.record("eval", {"split": "dev", **report.to_dict()}, "\n[dev]\n" + report.summary())
    if test_set:
        test = evaluate(best.model, test_set)
        out.record("eval", {"split": "test", **test.to_dict()}, "\n[test]\n" + test.summary())
    return EXIT_OK


def cmd_eval(args, out: Output) -> int:
    model = archive.load_archive(args.model)
    samples = _load(args.data, args.format)
    report = evaluate(model, samples, fallback=args.fallback_unrestricted)
    out.record("eval", {"path": args.data, **report.to_dict()}, report.summary())
    return EXIT_OK


def cmd_predict(args, out: Output) -> int:
    model = archive.load_archive(args.model)
    pred = model.predict(args.text, args.index, fallback=args.fallback_unrestricted)
    probs = dict(sorted(pred.probs.items(), key=lambda kv: (-kv[1], kv[0])))
    lines = [f"{args.text[args.index]} -> {pred.phoneme}    (POS {pred.pos_tag})"]
    lines += [f"  {label:<8} {p:.6f}" for label, p in probs.items()]
    out.record("prediction", {"text": args.text, "index": args.index, "char": args.text[args.index],
                              "phoneme": pred.phoneme, "probs": probs, "pos": pred.pos_tag}, "\n".join(lines))
    return EXIT_OK


def cmd_ablate(args, out: Output) -> int:
    run = _run_config(args)
    train_set, dev_set, test_set = _datasets(args, run)
    grid = GRIDS[args.grid]

    def on_result(res):
        out.record("ablation", res.to_dict(),
                   f"{res.cell.name}: dev {100 * res.dev.accuracy:.2f}% (best iteration {res.best_iteration})")

    results = ablation_run(train_set, dev_set, test_set, grid, run.train, run.encoder, run.data,
                           lexicon_samples=train_set + dev_set, model_seed=run.train.seed, on_result=on_result)
    out.text("\n" + format_ablation_table(results))
    return EXIT_OK


def cmd_gradcheck(args, out: Output) -> int:
    if args.model:
        model = archive.load_archive(args.model)
        samples = _load(args.data, args.format) if args.data else None
        if samples is None:
            raise ConfigError("gradcheck on an archive needs --data")
    else:
        seed = 0 if args.seed is None else args.seed
        corpus = synth.make_synthetic_corpus(replace(synth.DEFAULT_SPEC, num_samples=200), seed)
        samples = _load(args.data, args.format) if args.data else corpus
        ecfg = EncoderConfig(num_layers=1, hidden_size=8, num_heads=2, ff_size=16, max_positions=34, dropout_rate=0)
        run = _run_config(args)
        model = init_model(samples, ecfg, run.head, run.data, seed=seed)
        rng = np.random.default_rng([seed, 1])
        for name, p in model.params.items():  # move away from the zero-initialized tables
            model.params[name] = p + rng.normal(0, 0.1, p.shape).astype(p.dtype)
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    picked = [samples[i] for i in sorted(rng.choice(len(samples), min(args.samples, len(samples)), replace=False))]
    report = gradient_check(model.astype(np.float64), picked, tolerance=args.tolerance,
                            max_entries=args.max_entries)
    for name, err in report.errors.items():
        out.record("gradcheck", {"tensor": name, "max_rel_error": err, "ok": err <= report.tolerance},
                   f"{name:<28} {err:.3e}  {'ok' if err <= report.tolerance else 'FAIL'}")
    out.record("gradcheck_summary", {"passed": report.passed, "max_rel_error": report.max_error,
                                     "tolerance": report.tolerance, "failing": report.failing},
               f"max relative error {report.max_error:.3e} (tolerance {report.tolerance:g}): "
               f"{'passed' if report.passed else 'FAILED ' + ', '.join(report.failing)}")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_make_synth(args, out: Output) -> int:
    spec = replace(synth.DEFAULT_SPEC, num_samples=args.num_samples)
    try:
        spec.validate()
    except PolyweightError as exc:
        raise ConfigError(str(exc)) from None
    samples = synth.make_synthetic_corpus(spec, 0 if args.seed is None else args.seed)
    save_dataset(samples, args.out)
    paths = {"corpus": args.out}
    if args.split:
        run = _run_config(args)
        stem, ext = os.path.splitext(args.out)
        for name, part in zip(("train", "dev", "test"), stratified_split(samples, run.data.split_ratio,
                                                                         run.data.shuffle_seed)):
            paths[name] = f"{stem}.{name}{ext or '.tsv'}"
            save_dataset(part, paths[name])
    out.record("synth", {"samples": len(samples), "paths": paths},
               f"wrote {len(samples)} samples: " + ", ".join(f"{k}={v}" for k, v in paths.items()))
    return EXIT_OK


def _common(suppress: bool) -> argparse.ArgumentParser:
    d = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d, help="overrides [train] seed and generator seeds")
    p.add_argument("--config", default=d, help="INI run configuration")
    p.add_argument("--format", choices=("native", "cpp"), default=d if suppress else "native",
                   help="dataset format (default native TSV)")
    p.add_argument("--paper-protocol", action="store_true", default=d if suppress else False,
                   help="use the full-scale optimization constants (lr 5e-5, batch 256, 10k iterations)")
    p.add_argument("--fallback-unrestricted", action="store_true", default=d if suppress else False,
                   help="let characters missing from the lexicon use an all-ones candidate mask")
    p.add_argument("--json", action="store_true", default=d if suppress else False,
                   help="emit line-delimited JSON records")
    p.add_argument("-v", "--verbose", action="count", default=d if suppress else 0)
    return p


def _data_args(p):
    p.add_argument("--data", help="single corpus, split with [data] split_ratio")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--test")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyweight", parents=[_common(False)],
                                     description="Polyphone disambiguation with a conditional weighted softmax.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common(True)

    p = sub.add_parser("train", parents=[common], help="train a model and write the best checkpoint")
    _data_args(p)
    p.add_argument("--out", required=True, help="archive path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate an archive on a dataset")
    p.add_argument("model")
    p.add_argument("data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="predict the reading of one character")
    p.add_argument("model")
    p.add_argument("text")
    p.add_argument("index", type=int, help="0-based character index of the target")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", parents=[common], help="train one model per grid cell")
    _data_args(p)
    p.add_argument("--grid", choices=sorted(GRIDS), default="contribution")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--model", help="archive to check (default: small random model)")
    p.add_argument("--data")
    p.add_argument("--samples", type=int, default=5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=None, help="entries sampled per tensor (default all)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("make-synth", parents=[common], help="write the synthetic rule corpus")
    p.add_argument("out")
    p.add_argument("--num-samples", type=int, default=synth.DEFAULT_SPEC.num_samples)
    p.add_argument("--split", action="store_true", help="also write .train/.dev/.test splits")
    p.set_defaults(func=cmd_make_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    out = Output(args.json)
    try:
        return args.func(args, out)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except UnknownCharacterError as exc:
        code, msg = EXIT_UNKNOWN_CHAR, f"unknown character: {exc} (use --fallback-unrestricted)"
    except (DataError, LexiconError) as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    except TrainingAborted as exc:
        code, msg = EXIT_ABORT, f"training aborted: {exc} (batch ids {exc.batch_ids})"
    except ArchiveError as exc:
        code, msg = EXIT_ARCHIVE, f"archive error: {exc}"
    except PolyweightError as exc:
        code, msg = EXIT_DATA, f"error: {exc}"
    print(f"polyweight: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
