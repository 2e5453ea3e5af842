"""Normality diagnostics for standardized null sensitivities.

Under the data-generating assumptions, the standardized null coordinates
sqrt(n) * xi_j / ||P_perp xi|| (j in the null set, P_perp the projector
onto the orthogonal complement of the signal column space) approach a
standard normal as n grows.  This module computes that statistic and the
usual goodness-of-fit summaries: exact one-sample KS distance, QQ pairs,
and histogram data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from .datagen import SignalMatrix
from .linalg import orthonormal_columns
from .rng import substream


class DegenerateInputError(ValueError):
    """The statistic is undefined for this input (e.g. zero projection)."""


def project_complement(xi: np.ndarray, B) -> np.ndarray:
    """(I - B (B^T B)^+ B^T) xi, via an orthonormal basis Q of Col(B).

    ``B`` may be a SignalMatrix or a plain matrix; rank deficiency and
    the all-zero matrix are handled by the basis construction (a zero B
    projects onto everything, returning xi unchanged).
    """
    xi = np.asarray(xi, dtype=float)
    Bm = np.asarray(getattr(B, "B", B), dtype=float)
    if Bm.shape[0] != xi.shape[0]:
        raise ValueError("xi and B have mismatched dimensions")
    Q = orthonormal_columns(Bm)
    if Q.shape[1] == 0:
        return xi.copy()
    return xi - Q @ (Q.T @ xi)


def standardized_null(xi: np.ndarray, signal: SignalMatrix) -> np.ndarray:
    """sqrt(n) * xi_j / ||P_perp xi|| over the null indices, sorted by j."""
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (signal.n,):
        raise ValueError("xi must have one entry per feature")
    denom = float(np.linalg.norm(project_complement(xi, signal)))
    if denom == 0.0:
        raise DegenerateInputError("projected sensitivity norm is zero")
    return np.sqrt(signal.n) * xi[signal.null_set] / denom


def ks_statistic(sample: np.ndarray) -> float:
    """One-sample KS distance to N(0, 1), exact at the jump points:

    D = max_i max( i/N - Phi(x_(i)), Phi(x_(i)) - (i-1)/N ).
    """
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("sample must be nonempty")
    if np.any(np.isnan(x)):
        raise ValueError("sample contains NaN")
    xs = np.sort(x)
    cdf = ndtr(xs)
    i = np.arange(1, x.size + 1, dtype=float)
    d_plus = np.max(i / x.size - cdf)
    d_minus = np.max(cdf - (i - 1.0) / x.size)
    return float(max(d_plus, d_minus))


def qq_points(sample: np.ndarray) -> np.ndarray:
    """(theoretical, empirical) quantile pairs at positions (i - 0.5)/N."""
    xs = np.sort(np.asarray(sample, dtype=float).ravel())
    if xs.size == 0:
        raise ValueError("sample must be nonempty")
    theo = ndtri((np.arange(1, xs.size + 1) - 0.5) / xs.size)
    return np.column_stack([theo, xs])


def histogram_data(sample: np.ndarray, bins: int | None = None) -> np.ndarray:
    """(left edge, width, count) rows; Freedman-Diaconis bins by default."""
    x = np.asarray(sample, dtype=float).ravel()
    counts, edges = np.histogram(x, bins="fd" if bins is None else bins)
    return np.column_stack([edges[:-1], np.diff(edges), counts.astype(float)])


@dataclass
class NormalityReport:
    standardized: np.ndarray
    ks_stat: float
    qq: np.ndarray
    hist: np.ndarray
    mean: float
    variance: float
    meta: dict = field(default_factory=dict)


def normality_report(
    standardized: np.ndarray, bins: int | None = None, meta: dict | None = None
) -> NormalityReport:
    """Bundle KS / QQ / histogram summaries of a standardized sample."""
    z = np.asarray(standardized, dtype=float).ravel()
    return NormalityReport(
        standardized=z,
        ks_stat=ks_statistic(z),
        qq=qq_points(z),
        hist=histogram_data(z, bins=bins),
        mean=float(np.mean(z)),
        variance=float(np.var(z, ddof=1)) if z.size > 1 else 0.0,
        meta=dict(meta or {}),
    )


@dataclass(frozen=True)
class ProjectionCheck:
    mean: float
    max_abs_dev: float
    expected: float


def projection_norm_check(
    n: int, q_star: int, trials: int, seed: int = 0
) -> ProjectionCheck:
    """Concentration of ||P_perp z|| / sqrt(n) for z ~ N(0, I_n).

    P_perp projects onto the complement of a random q_star-dimensional
    column space; the statistic concentrates at sqrt((n - q*)/n).
    """
    if not 0 <= q_star <= n:
        raise ValueError("q_star must lie in [0, n]")
    rng = substream(seed, "projection")
    Q = orthonormal_columns(rng.standard_normal((n, q_star))) if q_star else None
    vals = np.empty(trials)
    for i in range(trials):
        z = rng.standard_normal(n)
        r = z if Q is None else z - Q @ (Q.T @ z)
        vals[i] = np.linalg.norm(r) / np.sqrt(n)
    expected = float(np.sqrt((n - q_star) / n))
    return ProjectionCheck(
        mean=float(vals.mean()),
        max_abs_dev=float(np.max(np.abs(vals - expected))),
        expected=expected,
    )


def save_normality_report(report: NormalityReport, outdir: str | Path) -> dict:
    """Write standardized.csv, qq.csv, hist.csv, summary.json."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "standardized.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value"])
        for v in report.standardized:
            w.writerow([repr(float(v))])
    with open(out / "qq.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theoretical", "empirical"])
        for t, e in report.qq:
            w.writerow([repr(float(t)), repr(float(e))])
    with open(out / "hist.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["left", "width", "count"])
        for left, width, count in report.hist:
            w.writerow([repr(float(left)), repr(float(width)), int(count)])
    summary = {
        "ks": report.ks_stat,
        "mean": report.mean,
        "variance": report.variance,
        "n_values": int(report.standardized.size),
        **report.meta,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
