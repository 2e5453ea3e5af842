"""Mirror statistics, the data-driven cutoff, and selection metrics.

The mirror statistic for feature j combines the sensitivities computed
on two independent halves of the data,

    M_j = sign(xi_j1 * xi_j2) * psi(|xi_j1|, |xi_j2|),

so that null features are symmetric around zero while consistently
important features land far on the positive side.  The cutoff is the
smallest threshold whose estimated false discovery proportion

    FDP_hat(u) = #{j : M_j < -u} / max(#{j : M_j > u}, 1)

drops to the nominal level.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import datagen
from .net import NetworkSpec, TrainConfig, init_params, input_sensitivity, train


class Psi(str, Enum):
    """Combination function psi; positively homogeneous of degree r."""

    MIN = "min"
    PRODUCT = "product"
    SUM = "sum"

    @property
    def degree(self) -> int:
        return 2 if self is Psi.PRODUCT else 1

    def combine(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self is Psi.MIN:
            return np.minimum(a, b)
        if self is Psi.PRODUCT:
            return a * b
        return a + b


def mirror_stats(xi1: np.ndarray, xi2: np.ndarray, psi: Psi = Psi.MIN) -> np.ndarray:
    """M_j = sign(xi_j1 xi_j2) psi(|xi_j1|, |xi_j2|), with sign(0) = 0."""
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    if xi1.shape != xi2.shape or xi1.ndim != 1:
        raise ValueError("xi1 and xi2 must be 1-d vectors of equal length")
    if not (np.all(np.isfinite(xi1)) and np.all(np.isfinite(xi2))):
        raise ValueError("sensitivities must be finite")
    return np.sign(xi1 * xi2) * Psi(psi).combine(np.abs(xi1), np.abs(xi2))


def fdp_hat(M: np.ndarray, u: float) -> float:
    """#{M_j < -u} / max(#{M_j > u}, 1) with strict inequalities."""
    if u <= 0:
        raise ValueError("u must be positive")
    M = np.asarray(M, dtype=float)
    return float((M < -u).sum()) / max(int((M > u).sum()), 1)


def cutoff(M: np.ndarray, alpha: float) -> float:
    """Smallest positive magnitude u of M with FDP_hat(u) <= alpha.

    FDP_hat is piecewise constant with breakpoints at the distinct
    magnitudes |M_j| > 0, so scanning them in ascending order finds the
    minimizer.  Returns +inf (empty selection) when no M_j is positive,
    or when no threshold qualifies.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    M = np.asarray(M, dtype=float)
    if not np.any(M > 0.0):
        return float("inf")
    for u in np.unique(np.abs(M[M != 0.0])):
        if fdp_hat(M, u) <= alpha:
            return float(u)
    return float("inf")


def selected_set(M: np.ndarray, tau: float) -> np.ndarray:
    """Indices with M_j strictly above tau (ties at tau are excluded)."""
    return np.flatnonzero(np.asarray(M, dtype=float) > tau)


@dataclass
class MirrorResult:
    xi1: np.ndarray
    xi2: np.ndarray
    M: np.ndarray
    tau: float
    selected: np.ndarray
    alpha: float
    psi: Psi

    def __post_init__(self):
        self.psi = Psi(self.psi)
        if np.isfinite(self.tau) and fdp_hat(self.M, self.tau) > self.alpha:
            raise ValueError("finite tau must satisfy FDP_hat(tau) <= alpha")


@dataclass(frozen=True)
class SelectionMetrics:
    fdp: float
    power: float
    n_selected: int


def select_features(
    ds: datagen.Dataset,
    netspec: NetworkSpec,
    cfg: TrainConfig,
    psi: Psi = Psi.MIN,
    alpha: float = 0.1,
    seed: int = 0,
) -> MirrorResult:
    """Full pipeline: split, train per half from one shared init, select.

    The initialization, learning-rate schedule, batch-index stream, and
    dropout-mask stream are shared by the two halves (they are functions
    of (netspec, cfg, seed) only); the halves differ only through their
    data, which is what makes the two sensitivities exchangeable under
    the null.
    """
    half1, half2 = datagen.split_rows(ds, seed)
    params0 = init_params(netspec, seed)
    trained1, _ = train(params0, half1, cfg, dropout_rate=netspec.dropout_rate)
    trained2, _ = train(params0, half2, cfg, dropout_rate=netspec.dropout_rate)
    xi1 = input_sensitivity(trained1, half1.X)
    xi2 = input_sensitivity(trained2, half2.X)
    M = mirror_stats(xi1, xi2, psi)
    tau = cutoff(M, alpha)
    return MirrorResult(
        xi1=xi1, xi2=xi2, M=M, tau=tau, selected=selected_set(M, tau),
        alpha=alpha, psi=Psi(psi),
    )


def evaluate(result: MirrorResult, signal: datagen.SignalMatrix) -> SelectionMetrics:
    """FDP and power of a selection against the known signal support."""
    sel = np.asarray(result.selected, dtype=int)
    if sel.size and (sel.min() < 0 or sel.max() >= signal.n):
        raise ValueError("selected indices out of range for this signal")
    null = set(signal.null_set.tolist())
    false = sum(1 for j in sel if j in null)
    true = sel.size - false
    n_signal = signal.n - signal.null_set.size
    fdp = false / max(sel.size, 1)
    power = true / n_signal if n_signal else 0.0
    return SelectionMetrics(fdp=float(fdp), power=float(power), n_selected=int(sel.size))


def save_mirror_result(
    result: MirrorResult,
    outdir: str | Path,
    signal: datagen.SignalMatrix | None = None,
) -> dict:
    """Write mirror_result.csv and summary.json; returns the summary dict."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    chosen = set(result.selected.tolist())
    with open(out / "mirror_result.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "xi1", "xi2", "M", "selected"])
        for j in range(result.M.size):
            w.writerow(
                [j, repr(float(result.xi1[j])), repr(float(result.xi2[j])),
                 repr(float(result.M[j])), int(j in chosen)]
            )
    summary = {
        "tau": result.tau if np.isfinite(result.tau) else "inf",
        "alpha": result.alpha,
        "psi": result.psi.value,
        "n_selected": int(result.selected.size),
    }
    if signal is not None:
        metrics = evaluate(result, signal)
        summary["fdp"] = metrics.fdp
        summary["power"] = metrics.power
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
