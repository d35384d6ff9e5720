"""Batch command-line entry point: train, evaluate, ladder, inspect, synth.

All randomness flows from one top-level --seed, fanned out to the split,
weight initialization, and epoch shuffling with fixed derivations, so a
rerun with the same config and seed reproduces every JSON output byte for
byte (wall-clock fields live in a separate metadata block).

Exit codes: 0 success, 1 internal/training failure, 2 bad input/config.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import IngestStats, SplitSpec, read_events, split_train_test
from .errors import (
    ForgetCurveError,
    FormatError,
    ModelFormatError,
    NoDataError,
    TrainingDivergedError,
)
from .evaluation import (
    LADDER_KINDS,
    evaluate,
    export_hidden_weights,
    format_ladder_text,
    ladder_to_dict,
    run_ladder,
)
from .lexicons import LexiconBundle, load_lexicon
from .models import KINDS, NEURAL_KINDS, load_model, save_model, write_json_atomic
from .synth import SynthSpec, generate, write_synth_files
from .training import Hyperparameters, derive_seed, sgd_train, write_training_log


class ConfigError(ForgetCurveError):
    """The run configuration is unusable."""


@dataclass
class RunConfig:
    dataset: str | None = None
    learning_language: str = "en"
    lexicons: list[dict] = field(default_factory=list)
    model: str = "hlr"
    seed: int = 0
    limit: int = 0
    out: str = "runs/out"
    split: str = "random"
    train_fraction: float = 0.9
    lr: float = 0.001
    alpha: float = 0.01
    lambda_: float = 0.1
    epochs: int | None = None
    minibatch_size: int | None = None
    hidden_dim: int = 4
    neural_bias: bool = False
    adaptive: bool = False
    workers: int = 1

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(
            learning_rate=self.lr,
            alpha=self.alpha,
            lambda_=self.lambda_,
            epochs=self.epochs,
            minibatch_size=self.minibatch_size,
            seed=derive_seed(self.seed, "train"),
            hidden_dim=self.hidden_dim,
            neural_bias=self.neural_bias,
            adaptive=self.adaptive,
        )

    def split_spec(self) -> SplitSpec:
        return SplitSpec(
            train_fraction=self.train_fraction,
            seed=derive_seed(self.seed, "split"),
            mode=self.split,
        )

    def echo(self) -> dict:
        """Experiment description for reports. The output directory is
        environment, not experiment, so it lives in the metadata block."""
        payload = dataclasses.asdict(self)
        payload["lambda"] = payload.pop("lambda_")
        payload.pop("out")
        return payload


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} | {"lambda"}

# CLI flags that override the same-named config key when given.
_OVERRIDE_FIELDS = (
    "dataset",
    "learning_language",
    "model",
    "seed",
    "limit",
    "out",
    "split",
    "train_fraction",
    "lr",
    "alpha",
    "lambda_",
    "epochs",
    "minibatch_size",
    "hidden_dim",
    "neural_bias",
    "adaptive",
    "workers",
)


def _load_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(payload) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"config file {path} has unknown key(s): {', '.join(sorted(unknown))}")
    if "lambda" in payload:
        payload["lambda_"] = payload.pop("lambda")
    return payload


def build_run_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(_load_config_file(args.config))
    for name in _OVERRIDE_FIELDS:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    lexicons = list(values.get("lexicons", []))
    for kind, flag in (
        ("complexity", "complexity_lexicon"),
        ("concreteness_norms", "concreteness_lexicon"),
        ("subtlex", "subtlex_lexicon"),
    ):
        path = getattr(args, flag, None)
        if path:
            lexicons = [e for e in lexicons if e.get("kind") != kind]
            lexicons.append({"path": path, "kind": kind})
    values["lexicons"] = lexicons
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"bad run configuration: {exc}") from exc
    if cfg.limit < 0:
        raise ConfigError(f"limit must be >= 0, got {cfg.limit}")
    if cfg.model not in KINDS:
        raise ConfigError(f"unknown model kind {cfg.model!r}; choose from {', '.join(KINDS)}")
    if cfg.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {cfg.workers}")
    return cfg


def _load_dataset(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("no dataset path given (use --dataset or the config file)")
    if not os.path.exists(cfg.dataset):
        raise FileNotFoundError(f"dataset not found: {cfg.dataset}")
    stats = IngestStats()
    events = read_events(cfg.dataset, cfg.learning_language, cfg.limit, stats)
    return events, stats


def _load_bundle(cfg: RunConfig) -> LexiconBundle:
    lexicons = []
    for entry in cfg.lexicons:
        path = entry.get("path")
        kind = entry.get("kind")
        if not path or not kind:
            raise ConfigError(f"lexicon entries need 'path' and 'kind', got {entry}")
        if not os.path.exists(path):
            raise FileNotFoundError(f"lexicon file not found: {path}")
        lexicons.append(load_lexicon(path, kind, columns=entry.get("columns")))
    return LexiconBundle.from_lexicons(lexicons)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    events, ingest_stats = _load_dataset(cfg)
    bundle = _load_bundle(cfg)
    train_events, test_events = split_train_test(events, cfg.split_spec())
    state, logs = sgd_train(train_events, cfg.model, bundle, cfg.hyperparameters())

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.json"
    save_model(state, model_path)
    write_training_log(logs, out / "train_log.jsonl")
    train_report = evaluate(state, train_events, bundle, workers=cfg.workers)
    test_report = evaluate(state, test_events, bundle, workers=cfg.workers)
    write_json_atomic(
        {
            "train": train_report.to_dict(include_runtime=False),
            "test": test_report.to_dict(include_runtime=False),
            "metadata": {
                "created_unix": time.time(),
                "runtime_seconds": {
                    "train_eval": train_report.runtime_seconds,
                    "test_eval": test_report.runtime_seconds,
                },
            },
        },
        out / "eval.json",
    )
    print(f"model: {model_path}")
    print(
        f"ingested {ingest_stats.events_yielded} events "
        f"({ingest_stats.rows_skipped} skipped, {ingest_stats.rows_other_language} other-language)"
    )
    print(f"train mae: {train_report.mae:.4f} on {train_report.num_events} events")
    print(f"test mae: {test_report.mae:.4f} on {test_report.num_events} events")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    if not os.path.exists(args.model_path):
        raise FileNotFoundError(f"model file not found: {args.model_path}")
    state = load_model(args.model_path)
    events, _ = _load_dataset(cfg)
    bundle = _load_bundle(cfg)
    report = evaluate(state, events, bundle, workers=cfg.workers)
    payload = {
        **report.to_dict(include_runtime=False),
        "metadata": {"runtime_seconds": report.runtime_seconds},
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json_atomic(payload, out / "eval.json")
    return 0


def cmd_ladder(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    events, _ = _load_dataset(cfg)
    bundle = _load_bundle(cfg)
    train_events, test_events = split_train_test(events, cfg.split_spec())
    rows = run_ladder(
        train_events,
        test_events,
        bundle,
        cfg.hyperparameters(),
        kinds=LADDER_KINDS,
        workers=cfg.workers,
    )
    out = Path(cfg.out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    for row in rows:
        if row.state is not None and row.kind not in ("pimsleur", "leitner"):
            save_model(row.state, out / "models" / f"{row.kind}.json")
    document = ladder_to_dict(rows, metadata={"created_unix": time.time(), "out": str(out)})
    document["config"] = cfg.echo()
    write_json_atomic(document, out / "ladder.json")
    table = format_ladder_text(rows)
    with open(out / "ladder.txt", "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)
    if any(not row.ok for row in rows):
        print("one or more ladder rows failed", file=sys.stderr)
        return 1
    return 0


def cmd_inspect(args: argparse.Namespace) -> int:
    if not os.path.exists(args.model_path):
        raise FileNotFoundError(f"model file not found: {args.model_path}")
    state = load_model(args.model_path)
    if state.kind in NEURAL_KINDS:
        payload = {"kind": state.kind, "hidden_weights": export_hidden_weights(state).to_dict()}
    else:
        ranked = sorted(state.theta.items(), key=lambda kv: abs(kv[1]), reverse=True)
        payload = {
            "kind": state.kind,
            "num_weights": len(ranked),
            "top_weights": [
                {"feature": k, "weight": v} for k, v in ranked[: max(args.top, 0) or None]
            ],
        }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        num_users=args.users,
        num_words=args.words,
        events_per_pair=args.events_per_pair,
        kind=args.model or "hlr",
        delta_range=(args.delta_min, args.delta_max),
        noise=args.noise,
        session_seen_range=(args.session_min, args.session_max),
        seed=args.seed if args.seed is not None else 0,
    )
    result = generate(spec)
    paths = write_synth_files(result, args.out or "synth_out")
    print(f"generated {len(result.events)} events from a {spec.kind} ground truth")
    for name, path in sorted(paths.items()):
        print(f"{name}: {path}")
    return 0


def _add_common_flags(sub: argparse.ArgumentParser, with_training: bool = True) -> None:
    sub.add_argument("--config", help="JSON run-config file; flags override its values")
    sub.add_argument("--dataset", help="review-log CSV path")
    sub.add_argument("--language", dest="learning_language", help="learning-language filter (default en)")
    sub.add_argument("--limit", type=int, help="keep only the first N filtered events (0 = all)")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--seed", type=int, help="top-level random seed")
    sub.add_argument("--workers", type=int, help="parallel evaluation workers")
    sub.add_argument("--complexity-lexicon", help="word -> complexity score file")
    sub.add_argument("--concreteness-lexicon", help="word -> concreteness, percent-known file")
    sub.add_argument("--subtlex-lexicon", help="word -> corpus frequency count file")
    if with_training:
        sub.add_argument("--model", help=f"model kind ({', '.join(KINDS)})")
        sub.add_argument("--split", choices=["random", "chronological"], help="split mode")
        sub.add_argument("--train-fraction", type=float, dest="train_fraction")
        sub.add_argument("--epochs", type=int)
        sub.add_argument("--minibatch", type=int, dest="minibatch_size")
        sub.add_argument("--lr", type=float)
        sub.add_argument("--alpha", type=float)
        sub.add_argument("--lambda", type=float, dest="lambda_")
        sub.add_argument("--hidden-dim", type=int, dest="hidden_dim")
        sub.add_argument("--neural-bias", action=argparse.BooleanOptionalAction, dest="neural_bias")
        sub.add_argument("--adaptive", action=argparse.BooleanOptionalAction)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forgetcurve",
        description="Train and evaluate forgetting-curve models on spaced-repetition logs.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_train = subs.add_parser("train", help="train one model and report train/test MAE")
    _add_common_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = subs.add_parser("evaluate", help="score a serialized model on a dataset")
    p_eval.add_argument("model_path", help="model JSON produced by train/ladder")
    _add_common_flags(p_eval, with_training=False)
    p_eval.set_defaults(func=cmd_evaluate)

    p_ladder = subs.add_parser("ladder", help="train and compare every model kind on one split")
    _add_common_flags(p_ladder)
    p_ladder.set_defaults(func=cmd_ladder)

    p_inspect = subs.add_parser("inspect", help="summarize a serialized model's weights")
    p_inspect.add_argument("model_path", help="model JSON file")
    p_inspect.add_argument("--top", type=int, default=20, help="how many weights to list")
    p_inspect.set_defaults(func=cmd_inspect)

    p_synth = subs.add_parser("synth", help="generate a synthetic dataset with known ground truth")
    p_synth.add_argument("--users", type=int, default=50)
    p_synth.add_argument("--words", type=int, default=100)
    p_synth.add_argument("--events-per-pair", type=int, default=4, dest="events_per_pair")
    p_synth.add_argument("--model", help="ground-truth model kind (default hlr)")
    p_synth.add_argument("--noise", choices=["binomial", "deterministic"], default="binomial")
    p_synth.add_argument("--session-min", type=int, default=1, dest="session_min")
    p_synth.add_argument("--session-max", type=int, default=6, dest="session_max")
    p_synth.add_argument("--delta-min", type=float, default=0.01, dest="delta_min")
    p_synth.add_argument("--delta-max", type=float, default=60.0, dest="delta_max")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", default="synth_out")
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (
        FileNotFoundError,
        ConfigError,
        FormatError,
        NoDataError,
        ModelFormatError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ForgetCurveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
