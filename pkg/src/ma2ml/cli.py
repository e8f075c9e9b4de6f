"""Command-line front end: ``search``, ``compare``, ``certify`` and ``resume``.

A run directory holds::

    manifest.json    identity of the run (config hash, space fingerprint, seed, paths)
    pipelines.csv    one row per evaluated pipeline
    summary.csv      one row per iteration
    topk.json        decoded best pipelines
    checkpoint.json  full trainer state, written every ``checkpoint_every`` iterations
    run.log          log output

Exit codes: 0 success, 1 certification violation, 2 usage or config error, 3 aborted run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .critic import CriticDiverged
from .oracle import (MultiObjectiveSpec, coupled_oracle, external_command_oracle,
                     separable_oracle, tabular_oracle_load)
from .space import JointSpace, SpaceError, format_action, load_space
from .trainer import (VARIANTS, Hyperparams, IterationSummary, PipelineRecord, SearchAborted, Trainer,
                      compare_variants, substream)
from .verify import certify_monotone, random_table, write_report_csv

log = logging.getLogger("ma2ml")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE, EXIT_ABORTED = 0, 1, 2, 3

PIPELINE_FIELDS = ["iteration", "index", "reward", "accuracy", "cost", "action"]
SUMMARY_FIELDS = ["iteration", "evaluations", "batch_mean", "batch_max", "best_so_far", "topk_mean",
                  "entropy", "kl", "critic_loss", "failed"]


class ConfigError(ValueError):
    pass


# -- run configuration ---------------------------------------------------------

@dataclass
class RunConfig:
    space_ref: str
    oracle: dict
    variant: str = "ma2ml"
    hyperparams: dict = field(default_factory=dict)
    reward: dict | None = None
    logging: dict = field(default_factory=dict)
    checkpoint_every: int = 10

    def canonical(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical(), sort_keys=True).encode()).hexdigest()[:16]


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("ma2ml") / "configs" / name))


def resolve_ref(ref: str, base: Path | None) -> Path:
    """A path relative to ``base`` first, then as given, then a bundled config name."""
    for cand in ([base / ref] if base else []) + [Path(ref), bundled_config(ref)]:
        if cand.is_file():
            return cand.resolve()
    raise ConfigError(f"cannot find {ref!r}")


def parse_oracle_spec(spec) -> dict:
    """``separable`` | ``coupled`` | ``tabular:PATH`` | ``exec:CMD``, or a mapping with ``kind``."""
    if isinstance(spec, dict):
        if spec.get("kind") not in ("separable", "coupled", "tabular", "exec"):
            raise ConfigError(f"oracle.kind must be separable, coupled, tabular or exec, got {spec.get('kind')!r}")
        return dict(spec)
    if not isinstance(spec, str):
        raise ConfigError("oracle must be a string or a mapping")
    if spec in ("separable", "coupled"):
        return {"kind": spec}
    kind, _, arg = spec.partition(":")
    if kind == "tabular" and arg:
        return {"kind": "tabular", "path": arg}
    if kind == "exec" and arg:
        return {"kind": "exec", "cmd": arg}
    raise ConfigError(f"unrecognised oracle {spec!r}")


def load_run_config(path, overrides: argparse.Namespace | None = None) -> RunConfig:
    """Read a run config (or a bare space file) and apply command-line overrides."""
    path = Path(path)
    if not path.is_file():
        if path.parent != Path(".") or not bundled_config(str(path)).is_file():
            raise ConfigError(f"config file not found: {path}")
        path = bundled_config(str(path))
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    if "agents" in doc:  # a bare space file
        doc = {"space_ref": str(path.resolve()), "oracle": "coupled"}
    unknown = set(doc) - {"space_ref", "oracle", "variant", "hyperparams", "reward", "logging", "checkpoint_every"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "space_ref" not in doc:
        raise ConfigError("space_ref is required")
    cfg = RunConfig(
        space_ref=str(resolve_ref(str(doc["space_ref"]), path.resolve().parent)),
        oracle=parse_oracle_spec(doc.get("oracle", "coupled")),
        variant=str(doc.get("variant", "ma2ml")).lower(),
        hyperparams=dict(doc.get("hyperparams") or {}),
        reward=dict(doc["reward"]) if doc.get("reward") else None,
        logging=dict(doc.get("logging") or {}),
        checkpoint_every=int(doc.get("checkpoint_every", 10)),
    )
    if cfg.oracle["kind"] == "tabular":
        cfg.oracle["path"] = str(resolve_ref(cfg.oracle["path"], path.resolve().parent))
    if overrides is not None:
        apply_overrides(cfg, overrides)
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {cfg.variant!r}")
    if cfg.checkpoint_every < 1:
        raise ConfigError("checkpoint_every must be >= 1")
    try:
        Hyperparams.from_dict(cfg.hyperparams)
        reward_spec(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def apply_overrides(cfg: RunConfig, ns: argparse.Namespace) -> None:
    if getattr(ns, "variant", None):
        cfg.variant = ns.variant.lower()
    if getattr(ns, "seed", None) is not None:
        cfg.hyperparams["seed"] = ns.seed
    if getattr(ns, "max_iter", None) is not None:
        cfg.hyperparams["max_iter"] = ns.max_iter
    if getattr(ns, "oracle", None):
        cfg.oracle = parse_oracle_spec(ns.oracle)
    if getattr(ns, "checkpoint_every", None) is not None:
        cfg.checkpoint_every = ns.checkpoint_every
    w = getattr(ns, "w", None)
    fc = getattr(ns, "flops_constraint", None)
    if w is not None or fc is not None:
        cfg.reward = dict(cfg.reward or {})
        if w is not None:
            cfg.reward["w"] = w
        if fc is not None:
            cfg.reward["flops_constraint"] = fc


def reward_spec(cfg: RunConfig) -> MultiObjectiveSpec | None:
    if not cfg.reward:
        return None
    unknown = set(cfg.reward) - {"w", "flops_constraint"}
    if unknown:
        raise ConfigError(f"unknown reward keys: {sorted(unknown)}")
    return MultiObjectiveSpec(w=float(cfg.reward.get("w", -0.07)),
                              constraint=float(cfg.reward.get("flops_constraint", 600e6)))


def oracle_seed(root_seed: int) -> int:
    """Seed of the synthetic landscape for a run, derived from the root seed."""
    return int(substream(root_seed, "oracle").integers(2**31))


def build_oracle(cfg: RunConfig, space: JointSpace, root_seed: int):
    o = cfg.oracle
    kind = o["kind"]
    if kind in ("separable", "coupled"):
        seed = int(o.get("seed", oracle_seed(root_seed)))
        noise = float(o.get("noise", 0.0))
        if kind == "separable":
            return separable_oracle(space, seed, noise)
        return coupled_oracle(space, seed, float(o.get("coupling", 0.7)), int(o.get("buckets", 8)), noise)
    if kind == "tabular":
        return tabular_oracle_load(o["path"], space)
    return external_command_oracle(space, o["cmd"], float(o.get("timeout", 3600.0)), o.get("max_concurrent"))


# -- manifest and artifacts --------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    space_fingerprint: str
    seed: int
    variant: str
    started: str
    finished: str | None
    status: str
    paths: dict
    config: dict

    def write(self, out: Path) -> None:
        _atomic_write(out / "manifest.json", json.dumps(asdict(self), indent=2, sort_keys=True))

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def pipeline_row(p: PipelineRecord) -> list:
    acc = None if p.result.failed else p.result.accuracy
    cost = None if p.result.failed else p.result.cost
    return [p.iteration, p.index, _num(p.reward), _num(acc), _num(cost), format_action(p.action)]


def summary_row(s: IterationSummary) -> list:
    return [s.iteration, s.evaluations, _num(s.batch_mean), _num(s.batch_max), _num(s.best_so_far),
            _num(s.topk_mean), ";".join(_num(v) for v in s.entropy), ";".join(_num(v) for v in s.kl),
            _num(s.critic_loss), s.failed]


def truncate_csv(path: Path, header: list[str], before_iteration: int) -> None:
    """Keep the header and rows whose iteration is below ``before_iteration``."""
    rows = []
    if path.is_file():
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            rows = [r for r in reader if r and int(r[0]) < before_iteration]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class RunLogger:
    """Appends CSV rows after each iteration and writes periodic checkpoints."""

    def __init__(self, out: Path, config_hash: str, checkpoint_every: int):
        self.out = out
        self.config_hash = config_hash
        self.checkpoint_every = checkpoint_every

    def __call__(self, trainer: Trainer, batch: list[PipelineRecord], summary: IterationSummary) -> None:
        with open(self.out / "pipelines.csv", "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(pipeline_row(p) for p in batch)
        with open(self.out / "summary.csv", "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(summary_row(summary))
        if trainer.iteration % self.checkpoint_every == 0:
            self.checkpoint(trainer)

    def checkpoint(self, trainer: Trainer) -> None:
        state = trainer.state_dict()
        state["config_hash"] = self.config_hash
        _atomic_write(self.out / "checkpoint.json", json.dumps(state))


def write_topk(out: Path, trainer: Trainer) -> None:
    doc = {"topk": trainer.decoded_topk()}
    if trainer.record.final_topk is not None:
        doc["final_rewards"] = [r for _, r in trainer.record.final_topk]
    _atomic_write(out / "topk.json", json.dumps(doc, indent=2))


def _setup_logging(cfg: RunConfig, out: Path | None) -> None:
    level = getattr(logging, str(cfg.logging.get("level", "warning")).upper(), logging.WARNING)
    log.setLevel(logging.DEBUG)
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    stream = logging.StreamHandler(sys.stderr)
    stream.setLevel(level)
    log.addHandler(stream)
    if out is not None:
        fh = logging.FileHandler(out / "run.log")
        fh.setLevel(logging.INFO)
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        log.addHandler(fh)


def _build(cfg: RunConfig) -> tuple[JointSpace, Trainer]:
    space = load_space(cfg.space_ref)
    hp = Hyperparams.from_dict(cfg.hyperparams)
    oracle = build_oracle(cfg, space, hp.seed)
    return space, Trainer(space, oracle, hp, cfg.variant, reward_spec(cfg))


def _drive(trainer: Trainer, logger: RunLogger, manifest: RunManifest, out: Path, stop_after: int | None) -> int:
    trainer.on_iteration.append(logger)
    try:
        while trainer.iteration < trainer.hp.max_iter:
            if stop_after is not None and trainer.iteration >= stop_after:
                manifest.status = "interrupted"
                manifest.write(out)
                print(f"stopped after iteration {trainer.iteration}")
                return EXIT_OK
            trainer.run_iteration()
    except (SearchAborted, CriticDiverged) as exc:
        log.error("run aborted: %s", exc)
        logger.checkpoint(trainer)
        manifest.status, manifest.finished = "aborted", _now()
        manifest.write(out)
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    trainer.finalize()
    write_topk(out, trainer)
    logger.checkpoint(trainer)
    manifest.status, manifest.finished = "complete", _now()
    manifest.write(out)
    best = trainer.record.best()
    if best is not None:
        print(f"done: {trainer.record.evaluations} evaluations, best reward {best.reward:.6f} "
              f"({format_action(best.action)}), top-{trainer.hp.topk} mean {trainer.record.topk_mean():.6f}")
    return EXIT_OK


# -- commands -----------------------------------------------------------------------

def cmd_search(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.config, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(cfg, out)
    space, trainer = _build(cfg)
    manifest = RunManifest(
        config_hash=cfg.config_hash(), space_fingerprint=space.fingerprint(), seed=trainer.hp.seed,
        variant=cfg.variant, started=_now(), finished=None, status="running",
        paths={k: k + ext for k, ext in [("pipelines", ".csv"), ("summary", ".csv"), ("topk", ".json"),
                                         ("checkpoint", ".json")]} | {"log": "run.log"},
        config=cfg.canonical(),
    )
    manifest.write(out)
    truncate_csv(out / "pipelines.csv", PIPELINE_FIELDS, 0)
    truncate_csv(out / "summary.csv", SUMMARY_FIELDS, 0)
    (out / "checkpoint.json").unlink(missing_ok=True)
    log.info("search %s seed=%d space=%s", cfg.variant, trainer.hp.seed, manifest.space_fingerprint)
    return _drive(trainer, RunLogger(out, manifest.config_hash, cfg.checkpoint_every), manifest, out, args.stop_after)


def cmd_resume(args: argparse.Namespace) -> int:
    mpath = Path(args.manifest)
    if mpath.is_dir():
        mpath = mpath / "manifest.json"
    if not mpath.is_file():
        raise ConfigError(f"manifest not found: {mpath}")
    manifest = RunManifest.read(mpath)
    out = mpath.parent
    cfg = RunConfig(**manifest.config)
    if cfg.config_hash() != manifest.config_hash:
        raise ConfigError("manifest config does not match its hash")
    _setup_logging(cfg, out)
    space, trainer = _build(cfg)
    if space.fingerprint() != manifest.space_fingerprint:
        raise ConfigError(f"space {cfg.space_ref} changed since the run started "
                          f"({space.fingerprint()} != {manifest.space_fingerprint})")
    if manifest.status == "complete":
        print("run already complete; nothing to do")
        return EXIT_OK
    ckpt = out / "checkpoint.json"
    if ckpt.is_file():
        state = json.loads(ckpt.read_text())
        if state.get("config_hash") != manifest.config_hash:
            raise ConfigError("checkpoint belongs to a different config")
        try:
            trainer.load_state(state)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    truncate_csv(out / "pipelines.csv", PIPELINE_FIELDS, trainer.iteration)
    truncate_csv(out / "summary.csv", SUMMARY_FIELDS, trainer.iteration)
    manifest.status = "running"
    manifest.write(out)
    log.info("resuming at iteration %d", trainer.iteration)
    return _drive(trainer, RunLogger(out, manifest.config_hash, cfg.checkpoint_every), manifest, out, args.stop_after)


def cmd_compare(args: argparse.Namespace) -> int:
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    cfg = load_run_config(args.config, args)
    variants = [v.strip().lower() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if not variants or bad:
        raise ConfigError(f"--variants must list some of {VARIANTS}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(cfg, out)
    space = load_space(cfg.space_ref)
    hp = Hyperparams.from_dict(cfg.hyperparams)
    first = hp.seed
    seeds = list(range(first, first + args.seeds))

    def progress(v, s, rec):
        log.info("%s seed %d: top-k mean %.6f", v, s, rec.topk_mean())

    result = compare_variants(space, lambda s: build_oracle(cfg, space, s), hp, variants, seeds,
                              threshold=args.threshold, threshold_fraction=args.threshold_fraction,
                              reward_spec=reward_spec(cfg), progress=progress)
    curves = result.curve_rows()
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(curves[0]), lineterminator="\n")
        w.writeheader()
        w.writerows({k: (_num(v) if isinstance(v, float) else v) for k, v in r.items()} for r in curves)
    rows = result.summary_rows()
    with open(out / "compare_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    cols = list(rows[0])
    print("  ".join(f"{c:>22}" for c in cols))
    for r in rows:
        print("  ".join(f"{(f'{v:.4g}' if isinstance(v, float) else v):>22}" for v in r.values()))
    return EXIT_OK


def cmd_certify(args: argparse.Namespace) -> int:
    sizes = _parse_sizes(args.sizes)
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    reports = []
    for s in range(args.seeds):
        table = random_table(sizes, np.random.default_rng(s), args.table)
        reports.append(certify_monotone(table, args.lam, iterations=args.iterations, restarts=args.restarts, seed=s))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "certify.csv", "w", newline="") as fh:
        write_report_csv(reports, fh)
    failing = [r for r in reports if not r.monotone]
    converged = sum(r.converged for r in reports)
    near = sum(r.relative_gap <= 0.01 for r in reports)
    print(f"lambda={args.lam} sizes={sizes} seeds={args.seeds}: monotone {len(reports) - len(failing)}/{len(reports)}, "
          f"converged {converged}/{len(reports)}, within 1% of optimum {near}/{len(reports)}")
    if failing:
        with open(out / "certify_failures.csv", "w", newline="") as fh:
            write_report_csv(failing, fh)
        for r in failing:
            print("violation:", r.summary(), file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def _parse_sizes(text: str) -> list[int]:
    try:
        sizes = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--sizes must be comma-separated integers, got {text!r}") from exc
    if not sizes or min(sizes) < 1:
        raise ConfigError("--sizes entries must be positive")
    if math.prod(sizes) > 10**6:
        raise ConfigError("--sizes describes more than 10**6 joint actions")
    return sizes


# -- argument parsing -------------------------------------------------------------

def _env(name: str, default=None):
    return os.environ.get("MA2ML_" + name.upper().replace("-", "_"), default)


def _positive_lambda(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("lambda must be > 0 for certification")
    return v


def _run_flags(p: argparse.ArgumentParser, need_out: bool = True) -> None:
    p.add_argument("--config", default=_env("config"), required=_env("config") is None,
                   help="run config (YAML) or a bare space file")
    p.add_argument("--variant", choices=VARIANTS, type=str.lower, default=_env("variant"))
    p.add_argument("--seed", type=int, default=_env("seed"))
    p.add_argument("--max-iter", type=int, default=_env("max_iter"))
    p.add_argument("--out", default=_env("out", "runs/latest"))
    p.add_argument("--oracle", default=_env("oracle"), help="separable | coupled | tabular:PATH | exec:CMD")
    p.add_argument("--flops-constraint", type=float, default=_env("flops_constraint"))
    p.add_argument("--w", type=float, default=_env("w"))
    p.add_argument("--checkpoint-every", type=int, default=_env("checkpoint_every"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ma2ml", description="Multi-agent search over pipeline configurations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run one search")
    _run_flags(p)
    p.add_argument("--stop-after", type=int, default=_env("stop_after"),
                   help="stop after this many iterations without a final checkpoint (simulates a crash)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("compare", help="run several variants on paired seeds")
    _run_flags(p)
    p.add_argument("--variants", default=_env("variants", ",".join(VARIANTS)))
    p.add_argument("--seeds", type=int, default=_env("seeds", 20), help="number of paired seeds")
    p.add_argument("--threshold", type=float, default=_env("threshold"), help="absolute reward threshold")
    p.add_argument("--threshold-fraction", type=float, default=_env("threshold_fraction", 0.95),
                   help="threshold as a fraction of the brute-force optimum (used without --threshold)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("certify", help="audit divergence policy iteration on random reward tables")
    p.add_argument("--lam", type=_positive_lambda, default=_env("lam", 0.2))
    p.add_argument("--sizes", default=_env("sizes", "6,6,6"))
    p.add_argument("--seeds", type=int, default=_env("seeds", 50))
    p.add_argument("--iterations", type=int, default=_env("iterations", 200))
    p.add_argument("--restarts", type=int, default=_env("restarts", 16))
    p.add_argument("--table", choices=("normal", "uniform"), default=_env("table", "normal"))
    p.add_argument("--out", default=_env("out", "runs/certify"))
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("resume", help="continue an interrupted search")
    p.add_argument("manifest", help="manifest.json or its run directory")
    p.add_argument("--stop-after", type=int, default=None)
    p.set_defaults(func=cmd_resume)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, SpaceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
