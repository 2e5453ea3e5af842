"""Experiment orchestration: configs, seeded Monte-Carlo runs, CSV artifacts.

Each experiment fans its runs out over seeds derived from
``(base_seed, run_index)``, collects per-seed records, and writes CSV
files plus a manifest under ``output_dir``.  Artifact bytes are a pure
function of (config, base_seed); the manifest additionally records the
wall-clock duration and any runs that were replaced after a numeric
overflow (training at aggressive learning rates can tip; replacements
draw the next derived seed and are always listed in the manifest).

``MIRROR_SELECT_THREADS`` caps the worker pool (default: serial).
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, diag, selection
from .datagen import (
    ClassScoreParams,
    Dataset,
    DesignFamily,
    DesignSpec,
    Scale,
    gen_classification,
    gen_regression,
    make_signal_classification,
    make_signal_regression,
    sample_design,
    split_rows,
)
from .net import (
    Loss,
    NetworkSpec,
    NumericOverflowError,
    TrainConfig,
    init_params,
    input_sensitivity,
    train,
)
from .rng import spawn_seed
from .selection import Psi, evaluate, mirror_stats, selected_set

EXPERIMENTS = ("normality", "fdr_sweep", "compare", "classification")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    design: DesignSpec
    net: NetworkSpec
    train: TrainConfig
    q_star: int = 8
    noise_sd: float = 1.0
    class_score: ClassScoreParams = field(default_factory=ClassScoreParams)
    temperature: float = 1.0
    psi: Psi = Psi.MIN
    alpha: float = 0.1
    n_runs: int = 5
    base_seed: int = 0
    output_dir: str = "out"
    checkpoints: tuple | None = None
    normality_shapes: tuple = ()
    compare_sample_sizes: tuple = (2000, 1000, 500)
    classify_sweep_shape: tuple = (4000, 400)
    sweep_iterations: int | None = None
    sensitivity_output: str | int = "sum"
    overflow_retries: int = 4
    paper_scale: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        object.__setattr__(self, "psi", Psi(self.psi))
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("design", "net", "train", "class_score"):
            d[key] = {k: (v.value if hasattr(v, "value") else v) for k, v in d[key].items()}
        d["psi"] = self.psi.value
        if not callable(self.train.learning_rate):
            d["train"]["learning_rate"] = float(self.train.learning_rate)
        else:
            d["train"]["learning_rate"] = "<callable>"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["design"] = DesignSpec(**d["design"])
        d["net"] = NetworkSpec(**{**d["net"], "tail_widths": tuple(d["net"].get("tail_widths", ()))})
        d["train"] = TrainConfig(**d["train"])
        if "class_score" in d:
            d["class_score"] = ClassScoreParams(**d["class_score"])
        for key in ("checkpoints", "normality_shapes", "compare_sample_sizes", "classify_sweep_shape"):
            if d.get(key) is not None:
                d[key] = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in d[key])
        return cls(**d)


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Desk-scale presets for each experiment."""
    if experiment == "normality":
        base = dict(
            design=DesignSpec(DesignFamily.IID_GAUSSIAN, m=2000, n=1000),
            net=NetworkSpec(1000, 1024, (1024, 512, 256), dropout_rate=0.1),
            train=TrainConfig(Loss.SQUARED, 128, 3e-3, 10, reduction="mean"),
            normality_shapes=((2000, 1000), (10, 1000)),
            n_runs=5,
        )
    elif experiment == "fdr_sweep":
        base = dict(
            design=DesignSpec(DesignFamily.IID_GAUSSIAN, m=1600, n=400),
            net=NetworkSpec(400, 1024, (1024, 512, 256), dropout_rate=0.1),
            train=TrainConfig(Loss.SQUARED, 128, 3e-3, 500, reduction="mean", loss_every=10),
            n_runs=10,
        )
    elif experiment == "compare":
        base = dict(
            design=DesignSpec(
                DesignFamily.IID_GAUSSIAN, m=2000, n=500, scale=Scale.ONE_OVER_SQRT_N
            ),
            net=NetworkSpec(500, 1024, (1024, 512, 256), dropout_rate=0.1),
            train=TrainConfig(Loss.SQUARED, 128, 3e-3, 500, reduction="mean", loss_every=100),
            n_runs=5,
        )
    elif experiment == "classification":
        base = dict(
            design=DesignSpec(DesignFamily.IID_GAUSSIAN, m=2000, n=1000),
            net=NetworkSpec(1000, 1024, (1024, 512, 256), out_width=3, dropout_rate=0.1),
            train=TrainConfig(Loss.CROSS_ENTROPY, 128, 3e-3, 10, reduction="mean"),
            sweep_iterations=200,
            n_runs=5,
        )
    else:
        raise ValueError(f"experiment must be one of {EXPERIMENTS}")
    base.update(overrides)
    cfg = ExperimentConfig(experiment=experiment, **base)
    if cfg.paper_scale:
        cfg = replace(cfg, n_runs=max(cfg.n_runs, 20))
        if experiment == "normality":
            cfg = replace(cfg, normality_shapes=((100000, 1000),) + tuple(cfg.normality_shapes))
    return cfg


def _pool_map(fn, items):
    workers = int(os.environ.get("MIRROR_SELECT_THREADS", "1"))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _run_with_retries(cfg: ExperimentConfig, one_run, n_runs: int):
    """Collect ``n_runs`` completed records, replacing overflowed seeds.

    ``one_run(run_index, seed)`` either returns a record dict or raises
    NumericOverflowError.  Run i uses seed (base_seed, i); a failed run
    is retried on (base_seed, i, attempt).  Every replacement is
    reported in the returned events list.
    """
    events = []

    def attempt(i):
        for k in range(cfg.overflow_retries + 1):
            seed = spawn_seed(cfg.base_seed, i) if k == 0 else spawn_seed(cfg.base_seed, i, k)
            try:
                rec = one_run(i, seed)
                if k:
                    events.append(
                        {"run": i, "retries": k, "reason": "numeric overflow", "used_seed": seed}
                    )
                return rec
            except NumericOverflowError as exc:
                last = str(exc)
        raise NumericOverflowError(
            f"run {i} overflowed {cfg.overflow_retries + 1} times ({last})"
        )

    records = _pool_map(attempt, range(n_runs))
    return records, events


def _write_csv(path: Path, header: list, rows: list) -> None:
    def cell(v):
        if isinstance(v, float):
            return repr(v)
        return v

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([cell(v) for v in row])


def _write_manifest(out: Path, cfg: ExperimentConfig, t0: float, events, extra=None) -> None:
    manifest = {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "build": f"mirror-select {__version__}",
        "duration_s": round(time.time() - t0, 3),
        "events": events,
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _mean_std(values) -> tuple:
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def build_dataset(cfg: ExperimentConfig, design: DesignSpec, seed: int) -> Dataset:
    X = sample_design(design, seed)
    if cfg.experiment == "classification":
        signal = make_signal_classification(design.n, seed)
        return gen_classification(
            X, signal, seed, params=cfg.class_score, tau=cfg.temperature
        )
    signal = make_signal_regression(design.n, cfg.q_star, scale=design.scale)
    return gen_regression(X, signal, seed, noise_sd=cfg.noise_sd)


def default_checkpoint_grid(iterations: int) -> tuple:
    """1-2-5 decades up to and including the final iteration."""
    grid = []
    step, idx = 1, 0
    pattern = (1, 2, 5)
    while True:
        v = pattern[idx % 3] * (10 ** (idx // 3))
        if v >= iterations:
            break
        grid.append(v)
        idx += 1
    grid.append(iterations)
    return tuple(grid)


def run_normality(cfg: ExperimentConfig):
    """One unsplit training run per seed; pooled standardized-null report.

    Writes, per (m, n) shape, a ``shape_m{m}_n{n}/`` directory holding
    standardized.csv / qq.csv / hist.csv / summary.json plus a per-seed
    runs.csv; returns {shape: NormalityReport}.
    """
    t0 = time.time()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    shapes = cfg.normality_shapes or ((cfg.design.m, cfg.design.n),)
    reports = {}
    all_events = []
    for m, n in shapes:
        design = replace(cfg.design, m=m, n=n)
        net = replace(cfg.net, n_in=n)

        def one_run(i, seed, design=design, net=net):
            ds = build_dataset(cfg, design, seed)
            cfg_t = replace(cfg.train, seed=seed)
            trained, traj = train(
                init_params(net, seed), ds, cfg_t, dropout_rate=net.dropout_rate
            )
            xi = input_sensitivity(trained, ds.X, output=cfg.sensitivity_output)
            if not np.all(np.isfinite(xi)):
                raise NumericOverflowError("sensitivity overflowed")
            z = diag.standardized_null(xi, ds.signal)
            return {
                "run": i,
                "seed": seed,
                "z": z,
                "ks": diag.ks_statistic(z),
                "loss_final": traj[-1][1] if traj else float("nan"),
            }

        records, events = _run_with_retries(cfg, one_run, cfg.n_runs)
        all_events.extend({"shape": [m, n], **e} for e in events)
        pooled = np.concatenate([r["z"] for r in records])
        qs = 3 if cfg.experiment == "classification" else cfg.q_star
        report = diag.normality_report(
            pooled,
            meta={"m": m, "n": n, "q_star": qs, "t": cfg.train.iterations},
        )
        reports[(m, n)] = report
        shape_dir = out / f"shape_m{m}_n{n}"
        diag.save_normality_report(report, shape_dir)
        _write_csv(
            shape_dir / "runs.csv",
            ["run", "seed", "ks", "mean", "variance", "n_null", "loss_final"],
            [
                [
                    r["run"],
                    r["seed"],
                    float(r["ks"]),
                    float(np.mean(r["z"])),
                    float(np.var(r["z"], ddof=1)),
                    int(r["z"].size),
                    float(r["loss_final"]),
                ]
                for r in records
            ],
        )
    _write_manifest(out, cfg, t0, all_events)
    return reports


def _sweep_one_run(cfg: ExperimentConfig, design: DesignSpec, net: NetworkSpec,
                   iterations: int, grid: tuple, i: int, seed: int) -> dict:
    ds = build_dataset(cfg, design, seed)
    half1, half2 = split_rows(ds, seed)
    params0 = init_params(net, seed)
    cfg_t = replace(cfg.train, seed=seed, iterations=iterations)
    xi = {1: {}, 2: {}}
    losses = {}
    for h, half in ((1, half1), (2, half2)):
        def capture(t, params, h=h, half=half):
            v = input_sensitivity(params, half.X, output=cfg.sensitivity_output)
            if not np.all(np.isfinite(v)):
                raise NumericOverflowError("sensitivity overflowed")
            xi[h][t] = v

        if 0 in grid:
            capture(0, params0)
        _, traj = train(
            params0, half, cfg_t, dropout_rate=net.dropout_rate,
            checkpoints=[t for t in grid if t > 0], on_checkpoint=capture,
        )
        losses[h] = dict(traj)
    per_iter = {}
    for t in grid:
        M = mirror_stats(xi[1][t], xi[2][t], cfg.psi)
        tau = selection.cutoff(M, cfg.alpha)
        sel = selected_set(M, tau)
        result = selection.MirrorResult(
            xi1=xi[1][t], xi2=xi[2][t], M=M, tau=tau, selected=sel,
            alpha=cfg.alpha, psi=cfg.psi,
        )
        metrics = evaluate(result, ds.signal)
        loss_t = np.mean([losses[h][t] for h in (1, 2) if t in losses[h]]) if t > 0 else float("nan")
        per_iter[t] = {
            "fdp": metrics.fdp,
            "power": metrics.power,
            "tau": tau,
            "n_selected": metrics.n_selected,
            "loss": float(loss_t),
        }
    return {"run": i, "seed": seed, "per_iter": per_iter}


@dataclass
class RunReport:
    """Per-seed records plus (mean, std) aggregates at each checkpoint."""

    records: list
    grid: tuple
    aggregates: dict  # t -> {metric: (mean, std)}

    def terminal(self) -> dict:
        return self.aggregates[self.grid[-1]]


def _aggregate_sweep(records: list, grid: tuple) -> dict:
    agg = {}
    for t in grid:
        agg[t] = {
            "fdp": _mean_std([r["per_iter"][t]["fdp"] for r in records]),
            "power": _mean_std([r["per_iter"][t]["power"] for r in records]),
            "loss": _mean_std([r["per_iter"][t]["loss"] for r in records]),
        }
    return agg


def _write_sweep_artifacts(out: Path, records: list, grid: tuple) -> dict:
    agg = _aggregate_sweep(records, grid)
    _write_csv(
        out / "fdr_power_vs_iter.csv",
        ["iter", "fdr_mean", "fdr_std", "power_mean", "power_std", "loss_mean"],
        [
            [
                t,
                agg[t]["fdp"][0],
                agg[t]["fdp"][1],
                agg[t]["power"][0],
                agg[t]["power"][1],
                agg[t]["loss"][0],
            ]
            for t in grid
        ],
    )
    _write_csv(
        out / "runs.csv",
        ["run", "seed", "iter", "fdp", "power", "tau", "n_selected", "loss"],
        [
            [
                r["run"],
                r["seed"],
                t,
                r["per_iter"][t]["fdp"],
                r["per_iter"][t]["power"],
                r["per_iter"][t]["tau"],
                r["per_iter"][t]["n_selected"],
                r["per_iter"][t]["loss"],
            ]
            for r in records
            for t in grid
        ],
    )
    return agg


def run_fdr_sweep(cfg: ExperimentConfig) -> RunReport:
    """Split-train with checkpointing; FDR/power/loss curves vs iteration."""
    t0 = time.time()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    iterations = cfg.train.iterations
    grid = cfg.checkpoints or default_checkpoint_grid(iterations)
    grid = tuple(sorted(set(int(t) for t in grid)))
    if grid and grid[-1] > iterations:
        raise ValueError("checkpoint grid exceeds the iteration count")

    def one_run(i, seed):
        return _sweep_one_run(cfg, cfg.design, cfg.net, iterations, grid, i, seed)

    records, events = _run_with_retries(cfg, one_run, cfg.n_runs)
    agg = _write_sweep_artifacts(out, records, grid)
    _write_manifest(out, cfg, t0, events, extra={"checkpoints": list(grid)})
    return RunReport(records=records, grid=grid, aggregates=agg)


def run_compare(cfg: ExperimentConfig) -> dict:
    """Terminal-checkpoint FDR/power per (design family, sample size).

    Emits one CSV per sample size with columns
    method, design, fdr_mean, fdr_std, power_mean, power_std.
    """
    t0 = time.time()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    families = (
        (DesignFamily.IID_GAUSSIAN, "gaussian"),
        (DesignFamily.SCALED_T3, "t3"),
        (DesignFamily.SPIKED, "spiked"),
    )
    table = {}
    all_events = []
    all_rows = []
    for m in cfg.compare_sample_sizes:
        rows = []
        for family, label in families:
            design = replace(cfg.design, family=family, m=m, scale=Scale.ONE_OVER_SQRT_N)

            def one_run(i, seed, design=design):
                ds = build_dataset(cfg, design, seed)
                cfg_t = replace(cfg.train, seed=seed)
                result = selection.select_features(
                    ds, cfg.net, cfg_t, psi=cfg.psi, alpha=cfg.alpha, seed=seed
                )
                metrics = evaluate(result, ds.signal)
                return {"run": i, "seed": seed, "fdp": metrics.fdp, "power": metrics.power}

            records, events = _run_with_retries(cfg, one_run, cfg.n_runs)
            all_events.extend({"m": m, "design": label, **e} for e in events)
            fdr = _mean_std([r["fdp"] for r in records])
            power = _mean_std([r["power"] for r in records])
            rows.append(["mlp", label, fdr[0], fdr[1], power[0], power[1]])
            table[(m, label)] = {"fdr": fdr, "power": power}
            all_rows.extend(
                [m, label, r["run"], r["seed"], r["fdp"], r["power"]] for r in records
            )
        _write_csv(
            out / f"compare_m{m}.csv",
            ["method", "design", "fdr_mean", "fdr_std", "power_mean", "power_std"],
            rows,
        )
    _write_csv(
        out / "runs.csv",
        ["m", "design", "run", "seed", "fdp", "power"],
        all_rows,
    )
    _write_manifest(out, cfg, t0, all_events)
    return table


def run_classification(cfg: ExperimentConfig):
    """Cross-entropy variant: normality report plus an FDR/power sweep."""
    t0 = time.time()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    norm_cfg = replace(
        cfg,
        output_dir=str(out / "normality"),
        normality_shapes=((cfg.design.m, cfg.design.n),),
    )
    reports = run_normality(norm_cfg)
    report = reports[(cfg.design.m, cfg.design.n)]

    sweep_m, sweep_n = cfg.classify_sweep_shape
    iterations = cfg.sweep_iterations or cfg.train.iterations
    grid = cfg.checkpoints or default_checkpoint_grid(iterations)
    grid = tuple(sorted(set(int(t) for t in grid)))
    design = replace(cfg.design, m=sweep_m, n=sweep_n)
    net = replace(cfg.net, n_in=sweep_n)
    sweep_dir = out / "sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)

    def one_run(i, seed):
        return _sweep_one_run(cfg, design, net, iterations, grid, i, seed)

    records, events = _run_with_retries(cfg, one_run, cfg.n_runs)
    agg = _write_sweep_artifacts(sweep_dir, records, grid)
    _write_manifest(out, cfg, t0, events, extra={"checkpoints": list(grid)})
    return report, RunReport(records=records, grid=grid, aggregates=agg)
