"""Command-line interface.

Subcommands: gen, normality, select, sweep, compare, classify.  Each
reads a JSON config (field names match ExperimentConfig), applies the
optional overrides, writes artifacts under the output directory, and
prints a one-line JSON summary to stdout.

Exit codes: 0 success, 1 configuration/usage error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import datagen, harness, selection
from .rng import spawn_seed
from .net import NumericOverflowError
from .selection import Psi

_EXPERIMENT_OF = {
    "gen": None,
    "normality": "normality",
    "select": None,
    "sweep": "fdr_sweep",
    "compare": "compare",
    "classify": "classification",
}


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mirror-select", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in _EXPERIMENT_OF:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--runs", type=int, help="override n_runs")
        p.add_argument("--alpha", type=float, help="override the nominal level")
        p.add_argument("--psi", choices=[k.value for k in Psi], help="override psi")
        p.add_argument("--out", help="override output_dir")
        p.add_argument("--paper-scale", action="store_true", help="paper-sized grids")
    return parser


def _load_config(args) -> harness.ExperimentConfig:
    path = Path(args.config)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = harness.load_config(path)
    updates = {}
    if args.seed is not None:
        updates["base_seed"] = args.seed
    if args.runs is not None:
        updates["n_runs"] = args.runs
    if args.alpha is not None:
        updates["alpha"] = args.alpha
    if args.psi is not None:
        updates["psi"] = Psi(args.psi)
    if args.out is not None:
        updates["output_dir"] = args.out
    if args.paper_scale:
        updates["paper_scale"] = True
        updates["n_runs"] = max(args.runs or cfg.n_runs, 20)
    if updates:
        cfg = replace(cfg, **updates)
    if cfg.paper_scale and cfg.experiment == "normality":
        shapes = cfg.normality_shapes or ((cfg.design.m, cfg.design.n),)
        if (100000, 1000) not in shapes:
            cfg = replace(cfg, normality_shapes=((100000, 1000),) + tuple(shapes))
    return cfg


def _cmd_gen(cfg: harness.ExperimentConfig) -> dict:
    seed = spawn_seed(cfg.base_seed, 0)
    ds = harness.build_dataset(cfg, cfg.design, seed)
    ds.meta.update({"family": cfg.design.family.value, "seed": seed})
    outdir = Path(cfg.output_dir) / "dataset"
    datagen.save_dataset(ds, outdir)
    return {"command": "gen", "output_dir": str(outdir), "m": ds.m, "n": ds.n}


def _cmd_select(cfg: harness.ExperimentConfig) -> dict:
    seed = spawn_seed(cfg.base_seed, 0)
    ds = harness.build_dataset(cfg, cfg.design, seed)
    cfg_t = replace(cfg.train, seed=seed)
    result = selection.select_features(
        ds, cfg.net, cfg_t, psi=cfg.psi, alpha=cfg.alpha, seed=seed
    )
    summary = selection.save_mirror_result(result, cfg.output_dir, signal=ds.signal)
    return {"command": "select", "output_dir": cfg.output_dir, **summary}


def _cmd_normality(cfg: harness.ExperimentConfig) -> dict:
    reports = harness.run_normality(cfg)
    return {
        "command": "normality",
        "output_dir": cfg.output_dir,
        "ks": {f"m{m}_n{n}": round(r.ks_stat, 6) for (m, n), r in reports.items()},
    }


def _cmd_sweep(cfg: harness.ExperimentConfig) -> dict:
    report = harness.run_fdr_sweep(cfg)
    term = report.terminal()
    return {
        "command": "sweep",
        "output_dir": cfg.output_dir,
        "terminal_iter": report.grid[-1],
        "fdr_mean": round(term["fdp"][0], 6),
        "power_mean": round(term["power"][0], 6),
    }


def _cmd_compare(cfg: harness.ExperimentConfig) -> dict:
    table = harness.run_compare(cfg)
    cells = {
        f"m{m}_{label}": {"fdr": round(v["fdr"][0], 6), "power": round(v["power"][0], 6)}
        for (m, label), v in table.items()
    }
    return {"command": "compare", "output_dir": cfg.output_dir, "table": cells}


def _cmd_classify(cfg: harness.ExperimentConfig) -> dict:
    report, sweep = harness.run_classification(cfg)
    term = sweep.terminal()
    return {
        "command": "classify",
        "output_dir": cfg.output_dir,
        "ks": round(report.ks_stat, 6),
        "fdr_mean": round(term["fdp"][0], 6),
        "power_mean": round(term["power"][0], 6),
    }


_DISPATCH = {
    "gen": _cmd_gen,
    "select": _cmd_select,
    "normality": _cmd_normality,
    "sweep": _cmd_sweep,
    "compare": _cmd_compare,
    "classify": _cmd_classify,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _load_config(args)
        expected = _EXPERIMENT_OF[args.command]
        if expected is not None and cfg.experiment != expected:
            raise ValueError(
                f"config declares experiment '{cfg.experiment}' "
                f"but the '{args.command}' command needs '{expected}'"
            )
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"mirror-select: config error: {exc}\n")
        return 1
    try:
        summary = _DISPATCH[args.command](cfg)
    except NumericOverflowError as exc:
        sys.stderr.write(f"mirror-select: numeric failure: {exc}\n")
        return 2
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
