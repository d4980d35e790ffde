"""Experiment runner: ``prepare``, ``run``, ``compare`` and ``report``.

Configuration is a flat ``key=value`` file (``--config``); ``--set KEY=VALUE``
and the dedicated flags override it. Every artifact lives under ``--out``::

    OUT/prepared/   splits as dataset records, vocab.tsv, manifest.json
    OUT/runs/STRATEGY/seed_N.result.jsonl, seed_N.pred.txt, seed_N*.ckpt, report.jsonl
    OUT/compare/A_vs_B.json

Exit codes: 0 success, 1 strategy/runtime failure, 2 input/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import (
    DataError,
    SplitSpec,
    documents,
    load_blitzer_processed,
    load_dataset,
    make_splits,
    save_dataset,
    synth_domain_shift,
    write_atomic,
)
from .eval import RunReport, accuracy, dumps_report, load_report, paired_bootstrap_test
from .features import build_vocab, save_vocab, vectorize_documents
from .model import TrainConfig, Vote, save_checkpoint
from .ssl import STRATEGIES, Fixed, LinearGrowth, SslConfig, dumps_result, run_strategy


SPLITS = ("labeled_source", "unlabeled_target", "validation_target", "test_target")

# split sizes for data=synthetic unless set explicitly; 500 target points remain for test
SYNTHETIC_DEFAULTS = {"n_labeled_source": "200", "n_unlabeled_target": "1000",
                      "n_validation_target": "200"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    source_domain: str = "source"
    target_domain: str = "target"
    data: str = "blitzer"  # or "synthetic"
    source_path: str = ""
    target_path: str = ""
    strategy: str = "src_only"
    n_seeds: int = 10
    seed: int = 0
    out: str = "out"
    # splits and features
    split_seed: int = 0
    n_labeled_source: int = 2000
    n_unlabeled_target: int = 2000
    n_validation_target: int = 200
    max_features: int = 5000
    # synthetic data
    synth_n_source: int = 200
    synth_n_target: int = 1700
    synth_rotation: float = 30.0
    synth_sigma: float = 0.3
    # bootstrapping
    tau: float = 0.9
    throttle_n: int = 800
    outer_epochs: int = 10
    pool_scheme: str = "fixed:10000"
    vote: str = "majority"
    hidden_dim: int = 50
    # base learner
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 5
    batch_size: int = 16
    gamma: float = 0.01
    init_scale: float = 0.1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.data not in ("blitzer", "synthetic"):
            raise ConfigError("data must be 'blitzer' or 'synthetic'")
        parse_pool_scheme(self.pool_scheme)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        if values.get("data") == "synthetic":
            values = {**SYNTHETIC_DEFAULTS, **values}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                kwargs[key] = int(raw) if kind == "int" else float(raw) if kind == "float" else str(raw)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None
        return cls(**kwargs)

    def ssl_config(self, seed: int) -> SslConfig:
        try:
            return SslConfig(
                tau=self.tau, throttle_n=self.throttle_n, outer_epochs=self.outer_epochs,
                pool_scheme=parse_pool_scheme(self.pool_scheme), vote=Vote(self.vote),
                seed=seed, hidden_dim=self.hidden_dim,
                train_cfg=TrainConfig(
                    learning_rate=self.learning_rate, max_epochs=self.max_epochs,
                    patience=self.patience, batch_size=self.batch_size, gamma=self.gamma,
                    init_scale=self.init_scale,
                ),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def split_spec(self) -> SplitSpec:
        try:
            return SplitSpec(self.n_labeled_source, self.n_unlabeled_target,
                             self.n_validation_target, self.split_seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def parse_pool_scheme(text: str) -> Fixed | LinearGrowth:
    """``fixed:SIZE`` or ``linear:BASE:RATE``."""
    kind, *args = text.split(":")
    try:
        if kind == "fixed" and len(args) == 1:
            return Fixed(int(args[0]))
        if kind == "linear" and len(args) == 2:
            return LinearGrowth(int(args[0]), int(args[1]))
    except ValueError:
        pass
    raise ConfigError(f"bad pool_scheme {text!r}; use fixed:SIZE or linear:BASE:RATE")


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        values[key.strip()] = value.strip()
    return values


# -- commands -------------------------------------------------------------------


def prepared_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / "prepared"


def runs_dir(cfg: ExperimentConfig, strategy: str) -> Path:
    return Path(cfg.out) / "runs" / strategy


def _paths(spec: str) -> list[str]:
    paths = [p for p in spec.split(",") if p]
    if not paths:
        raise ConfigError("source_path/target_path required for blitzer data")
    for p in paths:
        if not Path(p).is_file():
            raise FileNotFoundError(f"no such data file: {p}")
    return paths


def cmd_prepare(cfg: ExperimentConfig, force: bool = False) -> dict[str, int]:
    out = prepared_dir(cfg)
    if (out / "manifest.json").exists() and not force:
        raise ConfigError(f"{out} already holds prepared data; pass --force to overwrite")
    spec = cfg.split_spec()
    if cfg.data == "synthetic":
        source, target = synth_domain_shift(cfg.synth_n_source, cfg.synth_n_target,
                                            cfg.synth_rotation, cfg.synth_sigma, cfg.split_seed)
        splits = make_splits(source, target, spec)
    else:
        source = load_blitzer_processed(_paths(cfg.source_path), domain=cfg.source_domain)
        target = load_blitzer_processed(_paths(cfg.target_path), domain=cfg.target_domain)
        raw = make_splits(source, target, spec)
        docs = [documents(ds) for ds in raw]
        # vocabulary sees training text only, never validation/test
        vocab = build_vocab(docs[0] + docs[1], cfg.max_features)
        splits = tuple(
            vectorize_documents(d, vocab, None if ds.y is None else ds.y.tolist(),
                                ds.num_classes, ds.domain, ds.label_names)
            for d, ds in zip(docs, raw)
        )
        save_vocab(vocab, out / "vocab.tsv")
    sizes = {}
    for name, ds in zip(SPLITS, splits):
        save_dataset(ds, out / f"{name}.jsonl")
        sizes[name] = len(ds)
    manifest = {"sizes": sizes, "dimensionality": splits[0].dimensionality,
                "source_domain": cfg.source_domain, "target_domain": cfg.target_domain,
                "data": cfg.data, "split_seed": cfg.split_seed}
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for name in SPLITS:
        print(f"{name:>18}: {sizes[name]}")
    return sizes


def load_prepared(cfg: ExperimentConfig):
    out = prepared_dir(cfg)
    if not (out / "manifest.json").exists():
        raise FileNotFoundError(f"no prepared data under {out}; run 'prepare' first")
    return tuple(load_dataset(out / f"{name}.jsonl") for name in SPLITS)


def _run_seed(task):
    strategy, cfg, seed, splits = task
    L, U, dev, test = splits
    ssl_cfg = cfg.ssl_config(seed)
    try:
        result = run_strategy(strategy, L, U, dev, ssl_cfg)
    except Exception as exc:  # recorded per seed, reported by cmd_run
        return seed, None, f"{type(exc).__name__}: {exc}", traceback.format_exc()
    pred = result.predictor.predict(test)
    acc = accuracy(pred, test.y)
    out = runs_dir(cfg, strategy)
    write_atomic(out / f"seed_{seed}.result.jsonl", dumps_result(result, ssl_cfg, acc))
    write_atomic(out / f"seed_{seed}.pred.txt", "".join(f"{p}\n" for p in pred))
    nets = result.predictor.nets
    if len(nets) == 1:
        save_checkpoint(nets[0], out / f"seed_{seed}.ckpt")
    else:
        for i, net in enumerate(nets, 1):
            save_checkpoint(net, out / f"seed_{seed}.m{i}.ckpt")
    return seed, (acc, result.total_pseudo), None, None


def read_predictions(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing prediction file {path}")
    return np.array([int(x) for x in path.read_text().split()], dtype=np.int64)


def _median_p(base_dir: Path, cand_dir: Path, seeds, gold) -> float | None:
    ps = []
    for s in seeds:
        a, b = base_dir / f"seed_{s}.pred.txt", cand_dir / f"seed_{s}.pred.txt"
        if a.is_file() and b.is_file():
            ps.append(paired_bootstrap_test(read_predictions(b), read_predictions(a), gold, seed=s))
    return float(np.median(ps)) if ps else None


def cmd_run(cfg: ExperimentConfig, jobs: int = 1) -> RunReport:
    splits = load_prepared(cfg)
    seeds = list(range(cfg.seed, cfg.seed + cfg.n_seeds))
    tasks = [(cfg.strategy, cfg, s, splits) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_seed, tasks))
    else:
        outcomes = [_run_seed(t) for t in tasks]
    ok = [(s, r) for s, r, _, _ in outcomes if r is not None]
    failures = [(s, err) for s, r, err, _ in outcomes if r is None]
    for s, err in failures:
        print(f"seed {s} failed: {err}", file=sys.stderr)
    if not ok:
        raise RuntimeError(f"all {len(seeds)} seeds failed for strategy {cfg.strategy}")
    gold = splits[3].y
    p = None
    if cfg.strategy != "src_only":
        p = _median_p(runs_dir(cfg, "src_only"), runs_dir(cfg, cfg.strategy), [s for s, _ in ok], gold)
    report = RunReport(
        cfg.strategy,
        [r[0] for _, r in ok],
        [s for s, _ in ok],
        float(np.mean([r[1] for _, r in ok])),
        p,
    )
    text = dumps_report(report)
    text += "".join(json.dumps({"type": "failure", "seed": s, "error": e}) + "\n" for s, e in failures)
    write_atomic(runs_dir(cfg, cfg.strategy) / "report.jsonl", text)
    print(f"{cfg.strategy}: {100 * report.mean:.2f} ± {100 * report.std:.2f} "
          f"over {len(ok)} seed(s); mu_pseudo {report.mu_pseudo:.1f}")
    return report


def _resolve_run(cfg: ExperimentConfig, name: str) -> Path:
    path = Path(name)
    if not path.is_dir():
        path = runs_dir(cfg, name)
    if not (path / "report.jsonl").is_file():
        raise FileNotFoundError(f"no report under {path}")
    return path


def cmd_compare(cfg: ExperimentConfig, a: str, b: str, gold_path: str | None = None) -> dict:
    """Test per seed whether run ``b`` is more accurate than baseline run ``a``."""
    dir_a, dir_b = _resolve_run(cfg, a), _resolve_run(cfg, b)
    rep_a, _ = load_report(dir_a / "report.jsonl")
    rep_b, _ = load_report(dir_b / "report.jsonl")
    gold = (read_predictions(gold_path) if gold_path
            else load_dataset(prepared_dir(cfg) / "test_target.jsonl").y)
    seeds = sorted(set(rep_a.seeds) & set(rep_b.seeds))
    if not seeds:
        raise ConfigError("the two runs share no seeds")
    per_seed = {}
    for s in seeds:
        pa = read_predictions(dir_a / f"seed_{s}.pred.txt")
        pb = read_predictions(dir_b / f"seed_{s}.pred.txt")
        if not (len(pa) == len(pb) == len(gold)):
            raise ConfigError(f"seed {s}: prediction files do not match the test set")
        per_seed[s] = paired_bootstrap_test(pb, pa, gold, seed=s)
    record = {
        "baseline": rep_a.strategy, "candidate": rep_b.strategy,
        "baseline_mean": rep_a.mean, "candidate_mean": rep_b.mean,
        "per_seed_p": {str(s): p for s, p in per_seed.items()},
        "median_p": float(np.median(list(per_seed.values()))),
    }
    write_atomic(Path(cfg.out) / "compare" / f"{dir_a.name}_vs_{dir_b.name}.json",
                 json.dumps(record, indent=2, sort_keys=True) + "\n")
    for s, p in per_seed.items():
        print(f"seed {s}: p = {p:.4f}")
    print(f"{rep_b.strategy} vs {rep_a.strategy}: median p = {record['median_p']:.4f}")
    return record


def cmd_report(cfg: ExperimentConfig) -> list[RunReport]:
    root = Path(cfg.out) / "runs"
    reports = []
    for path in sorted(root.glob("*/report.jsonl")):
        reports.append(load_report(path)[0])
    if not reports:
        raise FileNotFoundError(f"no reports under {root}")
    print(f"{'strategy':<16}{'seeds':>6}{'mean':>9}{'std':>8}{'mu_pseudo':>11}{'p':>9}")
    for r in reports:
        p = "" if r.p_value_vs_baseline is None else f"{r.p_value_vs_baseline:.4f}"
        print(f"{r.strategy:<16}{len(r.per_seed_accuracy):>6}{100 * r.mean:>9.2f}"
              f"{100 * r.std:>8.2f}{r.mu_pseudo:>11.1f}{p:>9}")
    return reports


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key=value config file")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel seeds")
    common.add_argument("--force", action="store_true", help="overwrite prepared data")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")

    parser = argparse.ArgumentParser(prog="tritrain", parents=[common],
                                     description="Bootstrapping baselines for domain adaptation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="build splits (and vocabulary)")
    run = sub.add_parser("run", parents=[common], help="run one strategy over seeds")
    run.add_argument("--strategy", choices=STRATEGIES)
    run.add_argument("--n-seeds", type=int)
    cmp_ = sub.add_parser("compare", parents=[common],
                          help="paired bootstrap test of run B against baseline run A")
    cmp_.add_argument("a", help="baseline strategy name or run directory")
    cmp_.add_argument("b", help="candidate strategy name or run directory")
    cmp_.add_argument("--gold", help="gold labels file (default: prepared test split)")
    sub.add_parser("report", parents=[common], help="tabulate all run reports")
    return parser


def resolve_config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values[key.strip()] = value.strip()
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.out is not None:
        values["out"] = args.out
    if getattr(args, "strategy", None):
        values["strategy"] = args.strategy
    if getattr(args, "n_seeds", None) is not None:
        values["n_seeds"] = str(args.n_seeds)
    return ExperimentConfig.from_mapping(values)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "prepare":
            cmd_prepare(cfg, force=args.force)
        elif args.command == "run":
            cmd_run(cfg, jobs=args.jobs)
        elif args.command == "compare":
            cmd_compare(cfg, args.a, args.b, args.gold)
        else:
            cmd_report(cfg)
    except (ConfigError, DataError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
