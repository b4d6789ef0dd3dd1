"""``fuse`` command line: evaluate, optimize, analyze and synthesize datasets.

Exit status is 0 on success, 1 for usage or validation problems and 2 for
runtime failures. Every command writes a JSON report (embedding the fully
resolved configuration) into ``--out`` and prints a short summary.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bayesopt import BoConfig, run_bayesopt
from .cem import CemConfig, run_cem
from .dirichlet import DirichletParams
from .errors import FusionError, ParseError, ValidationError
from .fusion import WeightVector, load_weights, save_weights
from .ingest import (load_dataset, load_manifest, pad_channels, popularity_order, save_dataset,
                     validate_dataset)
from .metrics import (channel_user_rankings, coverage_for_weights, evaluate, jaccard_matrix,
                      rbo_pair)
from .policy import PgConfig, build_states, infer_weights, save_personalized, save_theta, train_pg
from .synth import PRESETS, SyntheticSpec, generate_benchmark, preset

__all__ = ["RunConfig", "main", "run_command", "build_parser"]

logger = logging.getLogger("mcfusion.cli")

SECTIONS = {"cem": CemConfig, "bayes": BoConfig, "pg": PgConfig}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


@dataclass
class RunConfig:
    data: str | None = None
    rankings: list | None = None
    truth: str | None = None
    embeddings: str | None = None
    train_truth: str | None = None
    L: int | None = None
    metric: str = "recall"
    seed: int = 0
    threads: int = 1
    bounds: list | None = None
    out: str = "fuse_out"
    sections: dict = field(default_factory=dict)
    config_dir: str = "."

    @classmethod
    def resolve(cls, args, config_path=None):
        """Merge defaults, the JSON config file and command-line flags (flags win)."""
        doc = {}
        base = Path(".")
        if config_path:
            try:
                doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read config {config_path}: {exc}") from None
            base = Path(config_path).parent
            for key in ("data", "truth", "embeddings", "train_truth", "out"):
                if isinstance(doc.get(key), str):
                    doc[key] = str(base / doc[key])
            if doc.get("rankings"):
                doc["rankings"] = [str(base / p) for p in doc["rankings"]]
        sections = {k: doc.pop(k) for k in list(doc) if k in SECTIONS}
        known = {f.name for f in fields(cls)} - {"sections", "config_dir"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**doc, sections=sections, config_dir=str(base))
        env = os.environ.get("FUSE_THREADS")
        if env and "threads" not in doc:
            try:
                cfg.threads = int(env)
            except ValueError:
                raise ValidationError(f"FUSE_THREADS must be an integer, got {env!r}") from None
        for key in ("data", "rankings", "truth", "embeddings", "train_truth", "L", "metric",
                    "seed", "threads", "out"):
            val = getattr(args, key, None)
            if val is not None:
                setattr(cfg, key, val)
        if cfg.L is not None and cfg.L < 1:
            raise ValidationError("L must be >= 1")
        if cfg.threads < 1:
            raise ValidationError("threads must be >= 1")
        return cfg

    def need_L(self):
        if self.L is None:
            raise ValidationError("the merged set size L is required (--L or config)")
        return self.L

    def load(self):
        if self.data:
            ds = load_manifest(self.data)
        elif self.rankings and self.truth:
            ds = load_dataset(self.rankings, self.truth, self.embeddings,
                              train_truth_path=self.train_truth)
        else:
            raise ValidationError("no dataset: give --data DIR or --rankings ... --truth FILE")
        for w in ds.report.warnings():
            logger.warning(w)
        C = ds.depth
        short = sum(len(x) < C for ch in ds.channels for x in ch.lists.values())
        if short:
            # ragged exports: top up from training-split popularity
            ds = pad_channels(ds, popularity_order(ds))
            logger.warning("padded %d short lists to depth %d from item popularity", short, C)
        return ds

    def path(self, p):
        """A path named inside the config file, taken relative to that file."""
        return str(Path(self.config_dir) / p)

    def to_dict(self):
        return asdict(self)


def _section(cls, doc, **overrides):
    doc = dict(doc or {})
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} fields {sorted(unknown)}")
    for k, v in overrides.items():
        if k in names and k not in doc:
            doc[k] = v
    if "bounds" in doc and doc["bounds"] is not None:
        doc["bounds"] = tuple(doc["bounds"])
    return cls(**doc)


def _weight_table(names, w):
    return [{"channel": n, "weight": float(x)} for n, x in zip(names, w)]


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _matrix_csv(path, names, M):
    _write_csv(path, ["channel", *names], [[n, *map(float, row)] for n, row in zip(names, M)])


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_eval(args):
    weights = load_weights(args.weights)
    cfg = RunConfig.resolve(args, args.config)
    ds = cfg.load()
    L = cfg.need_L()
    rep = evaluate(ds, weights, L, threads=cfg.threads)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"command": "eval", "config": cfg.to_dict(), "seed": cfg.seed, "weights_file": str(args.weights),
           "report": rep.to_dict(per_user=args.per_user)}
    if isinstance(weights, WeightVector):
        doc["weight_table"] = _weight_table(ds.channel_names, weights.w)
    _write_json(out / "eval_report.json", doc)
    if args.per_user:
        _write_csv(out / "eval_per_user.csv", ["user", "precision", "recall", "f1"],
                   [[u, *v] for u, v in rep.per_user.items()])
    print(f"users={rep.user_count} L={L} precision={rep.mean_precision:.6f} "
          f"recall={rep.mean_recall:.6f} f1={rep.mean_f1:.6f}")
    return 0


def _alpha_from(value):
    if isinstance(value, list):
        return DirichletParams(value)
    doc = json.loads(Path(value).read_text(encoding="utf-8"))
    for key in ("best_alpha", "alpha", "beta"):
        if key in doc:
            return DirichletParams(doc[key])
        if "state" in doc and key in doc["state"]:
            return DirichletParams(doc["state"][key])
    raise ValidationError(f"{value}: no Dirichlet parameters found")


def _cem(ds, cfg, section, out, resume=None):
    cem_cfg = _section(CemConfig, section, master_seed=cfg.seed, metric=cfg.metric,
                       threads=cfg.threads, bounds=cfg.bounds)
    state, w = run_cem(ds, cem_cfg, cfg.need_L(), checkpoint=out / "cem_checkpoint.json", resume=resume)
    return cem_cfg, state, w


def cmd_optimize(args):
    cfg = RunConfig.resolve(args, args.config)
    extra = set(cfg.sections) - {args.method}
    if extra:
        raise ValidationError(f"config holds optimizer sections {sorted(extra)}; "
                              f"exactly one ({args.method!r}) is allowed per run")
    section = dict(cfg.sections.get(args.method) or {})
    ds = cfg.load()
    L = cfg.need_L()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    names = ds.channel_names
    report = {"command": f"optimize {args.method}", "config": cfg.to_dict(), "seed": cfg.seed}

    if args.method == "cem":
        cem_cfg, state, w = _cem(ds, cfg, section, out, args.resume)
        state.write_history_csv(out / "cem_history.csv")
        score = state.best_score
        report.update(optimizer=asdict(cem_cfg), state=state.to_dict(), score=score,
                      weight_table=_weight_table(names, w.w))
        save_weights(out / "weights.json", w, names, "cem")
        summary = f"cem: {state.iter} iterations, best {cfg.metric}={score:.6f}"
    elif args.method == "bayes":
        alpha_src = section.pop("alpha_cem", None)
        if alpha_src is None:
            _, state, _ = _cem(ds, cfg, {}, out)
            alpha_cem = state.best_alpha
        else:
            alpha_cem = _alpha_from(alpha_src if isinstance(alpha_src, list) else cfg.path(alpha_src))
        bo_cfg = _section(BoConfig, section, master_seed=cfg.seed, metric=cfg.metric,
                          threads=cfg.threads, bounds=cfg.bounds)
        res = run_bayesopt(ds, alpha_cem, bo_cfg, L, checkpoint=out / "bayes_partial.json")
        _write_json(out / "bayes_trace.json", res.to_dict())
        report.update(optimizer=asdict(bo_cfg), alpha_cem=alpha_cem.alpha.tolist(), result=res.to_dict(),
                      score=res.best_score, weight_table=_weight_table(names, res.weights.w))
        save_weights(out / "weights.json", res.weights, names, "bayesopt", {"beta": res.beta.alpha.tolist()})
        summary = (f"bayes: {len(res.trace)} calls, {cfg.metric} {res.start_score:.6f} -> "
                   f"{res.best_score:.6f}")
    else:
        wg = section.pop("w_global", None)
        if wg is None:
            _, _, w = _cem(ds, cfg, {}, out)
            wg = w.w.tolist()
        elif isinstance(wg, str):
            loaded = load_weights(cfg.path(wg))
            if not isinstance(loaded, WeightVector):
                raise ValidationError("w_global must be a global weights file")
            wg = loaded.w.tolist()
        pg_cfg = _section(PgConfig, section, master_seed=cfg.seed, metric=cfg.metric,
                          threads=cfg.threads, w_global=wg)
        log = []
        theta = train_pg(ds, pg_cfg, L, log)
        pw = infer_weights(theta, ds, build_states(ds, m=pg_cfg.m))
        rep = evaluate(ds, pw, L, threads=cfg.threads)
        save_theta(out / "theta.json", theta, pg_cfg)
        save_personalized(out / "personalized_weights.jsonl", pw)
        _write_csv(out / "pg_epochs.csv", ["epoch", "loss", "reward", "validation", "distance_to_global"],
                   [[r["epoch"], r["loss"], r["reward"], r["validation"], r["distance_to_global"]]
                    for r in log])
        mean_w = np.mean(pw.matrix(ds.users), axis=0)
        report.update(optimizer=pg_cfg.to_dict(), epochs=log, score=rep.mean(cfg.metric),
                      evaluation=rep.to_dict(), weight_table=_weight_table(names, mean_w))
        summary = f"pg: {len(log)} epochs, validation {cfg.metric}={rep.mean(cfg.metric):.6f}"

    _write_json(out / f"{args.method}_report.json", report)
    print(summary)
    for row in report["weight_table"]:
        print(f"  {row['channel']:>12s}  {row['weight']:.4f}")
    return 0


def cmd_analyze(args):
    cfg = RunConfig.resolve(args, args.config)
    ds = cfg.load()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    names = ds.channel_names
    J = jaccard_matrix(ds)
    ranks = channel_user_rankings(ds)
    R = np.array([[rbo_pair(a, b, args.rbo_p, args.rbo_depth) for b in ranks] for a in ranks])
    doc = {"command": "analyze", "config": cfg.to_dict(), "seed": cfg.seed,
           "rbo_p": args.rbo_p, "rbo_depth": args.rbo_depth,
           "jaccard": J.tolist(), "rbo": R.tolist(), "channel_names": names}
    if cfg.L is not None:
        if ds.item_universe_size < 1:
            raise ValidationError("item coverage needs item_universe_size in the manifest")
        cov = {"equal": coverage_for_weights(ds, WeightVector.equal(ds.K), cfg.L, cfg.threads)}
        for k in range(ds.K):
            cov[f"only:{names[k]}"] = coverage_for_weights(ds, np.eye(ds.K)[k], cfg.L, cfg.threads)
        if args.weights:
            w = load_weights(args.weights)
            cov["weights"] = coverage_for_weights(ds, w, cfg.L, cfg.threads)
        doc["coverage"] = cov
    doc["validation"] = validate_dataset(ds).to_dict()
    _write_json(out / "analysis.json", doc)
    _matrix_csv(out / "jaccard.csv", names, J)
    _matrix_csv(out / "rbo.csv", names, R)
    off = J[~np.eye(ds.K, dtype=bool)]
    print(f"channels={ds.K} users={ds.N} mean pairwise jaccard={off.mean() if off.size else 1.0:.4f}")
    for k, v in doc.get("coverage", {}).items():
        print(f"  coverage {k}: {v:.4f}")
    return 0


def cmd_synth(args):
    if bool(args.spec) == bool(args.preset):
        raise ValidationError("give exactly one of --spec FILE or --preset NAME")
    if args.spec:
        spec = SyntheticSpec.from_json(args.spec)
        if args.seed is not None:
            spec = SyntheticSpec.from_dict({**spec.to_dict(), "master_seed": args.seed})
    else:
        spec = preset(args.preset, 0 if args.seed is None else args.seed)
    ds = generate_benchmark(spec)
    out = Path(args.out)
    manifest = save_dataset(ds, out)
    _write_json(out / "spec.json", spec.to_dict())
    print(f"wrote {ds.N} users x {ds.K} channels (depth {ds.depth}) to {manifest}")
    return 0


# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="fuse", description="Multi-channel retrieval fusion toolkit.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its fields")
    common.add_argument("--data", help="dataset directory or manifest.json")
    common.add_argument("--rankings", nargs="+", help="channel ranking JSONL files")
    common.add_argument("--truth", help="ground-truth JSONL")
    common.add_argument("--embeddings", help="embeddings JSONL")
    common.add_argument("--train-truth", dest="train_truth", help="training-split truth JSONL")
    common.add_argument("--L", type=int, help="merged set size")
    common.add_argument("--metric", choices=["recall", "precision", "f1"])
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker threads (default: $FUSE_THREADS or 1)")
    common.add_argument("--out", help="output directory (default fuse_out)")

    e = sub.add_parser("eval", parents=[common], help="merge with given weights and score")
    e.add_argument("--weights", required=True)
    e.add_argument("--per-user", action="store_true")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("optimize", parents=[common], help="optimize channel weights")
    o.add_argument("method", choices=sorted(SECTIONS))
    o.add_argument("--resume", help="CEM checkpoint to continue from")
    o.set_defaults(func=cmd_optimize)

    a = sub.add_parser("analyze", parents=[common], help="channel diversity diagnostics")
    a.add_argument("--weights")
    a.add_argument("--rbo-p", type=float, default=0.9)
    a.add_argument("--rbo-depth", type=int)
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="generate a synthetic benchmark")
    s.add_argument("--spec")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def run_command(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FusionError, OSError, ValueError, KeyError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main(argv=None):
    return run_command(argv)


if __name__ == "__main__":
    sys.exit(main())
