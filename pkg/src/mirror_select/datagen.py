"""Synthetic data generation for the feature-selection experiments.

Provides signal matrices with a known null set, design matrices under
four random-matrix families, regression and classification responses
driven by low-dimensional projections of the features, and the
even-split utility used by the selection pipeline.

Conventions
-----------
- Design matrices X are (m, n): rows = observations, columns = features.
- Signal matrices B are (n, q_star): row j is feature j's loading; a
  feature is null exactly when its row of B is all zero.
- All sampling is driven by ``rng.substream(seed, label, ...)`` so every
  artifact is reproducible from (spec, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .linalg import orthonormal_columns
from .rng import substream


class DesignFamily(str, Enum):
    IID_GAUSSIAN = "iid_gaussian"
    SCALED_T3 = "scaled_t3"
    SPIKED = "spiked"
    AR1_GAUSSIAN = "ar1_gaussian"


class Scale(str, Enum):
    UNIT_VARIANCE = "unit_variance"
    ONE_OVER_SQRT_N = "one_over_sqrt_n"


class Dgp(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class SignalMatrix:
    """Loading matrix B (n, q_star) plus the index set of its zero rows."""

    B: np.ndarray
    null_set: np.ndarray  # sorted indices of all-zero rows of B

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim != 2:
            raise ValueError("B must be a 2-d matrix")
        object.__setattr__(self, "B", B)
        null = np.asarray(self.null_set, dtype=int)
        object.__setattr__(self, "null_set", null)
        zero_rows = np.flatnonzero(~np.any(B != 0.0, axis=1))
        if not np.array_equal(null, zero_rows):
            raise ValueError("null_set must be exactly the all-zero rows of B")
        if np.linalg.matrix_rank(B) != B.shape[1]:
            raise ValueError("B must have full column rank")

    @classmethod
    def from_matrix(cls, B: np.ndarray) -> "SignalMatrix":
        B = np.asarray(B, dtype=float)
        null = np.flatnonzero(~np.any(B != 0.0, axis=1))
        return cls(B=B, null_set=null)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def q_star(self) -> int:
        return self.B.shape[1]

    @property
    def signal_set(self) -> np.ndarray:
        """Indices of the non-null (nonzero-row) features, sorted."""
        mask = np.ones(self.n, dtype=bool)
        mask[self.null_set] = False
        return np.flatnonzero(mask)


@dataclass(frozen=True)
class DesignSpec:
    """Law of the design matrix X.

    ``scale`` switches the entry magnitude of the i.i.d. Gaussian family
    between variance 1 and variance 1/n.  The t(3) family is always
    entrywise t(3)/sqrt(n) (its printed form); set ``normalize_t`` to
    additionally divide by sqrt(3) for unit-variance marginals.  The
    spiked and AR(1) families fix their own scales (noise N(0, 1/n) and
    unit-variance rows, respectively).
    """

    family: DesignFamily
    m: int
    n: int
    rho: float = 0.0
    spike_rank: int = 2
    scale: Scale = Scale.UNIT_VARIANCE
    normalize_t: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family", DesignFamily(self.family))
        object.__setattr__(self, "scale", Scale(self.scale))
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if self.family is DesignFamily.AR1_GAUSSIAN and not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1) for the AR(1) family")
        if self.family is DesignFamily.SPIKED and not (
            1 <= self.spike_rank < min(self.m, self.n)
        ):
            raise ValueError("spike_rank must satisfy 1 <= r < min(m, n)")


@dataclass
class Dataset:
    """Observed (X, y) pair together with the generating signal."""

    X: np.ndarray
    y: np.ndarray
    signal: SignalMatrix
    dgp: Dgp
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.dgp = Dgp(self.dgp)
        if self.X.ndim != 2:
            raise ValueError("X must be (m, n)")
        if self.X.shape[1] != self.signal.n:
            raise ValueError("X and B disagree on the number of features")
        self.y = np.asarray(self.y)
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("y must have one entry per row of X")
        if self.dgp is Dgp.CLASSIFICATION:
            if not np.issubdtype(self.y.dtype, np.integer):
                raise ValueError("classification labels must be integers")
            if self.y.size and int(self.y.min()) < 0:
                raise ValueError("class labels must be non-negative")

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]


def make_signal_regression(
    n: int, q_star: int, scale: Scale = Scale.UNIT_VARIANCE
) -> SignalMatrix:
    """Signal matrix for the regression generator.

    Column 1 puts a constant c on the first n/2 features (c = 2/sqrt(n)
    under unit-variance designs, c = 2 under 1/sqrt(n)-scaled designs);
    columns k = 2..q_star are the standard basis vectors e_k.  The null
    set is the latter half of the features.
    """
    if n < 2 or n % 2 != 0:
        raise ValueError("n must be even and >= 2")
    if q_star < 1 or n < 2 * q_star:
        raise ValueError("q_star must satisfy 1 <= q_star <= n/2")
    c = 2.0 / np.sqrt(n) if Scale(scale) is Scale.UNIT_VARIANCE else 2.0
    B = np.zeros((n, q_star))
    B[: n // 2, 0] = c
    for k in range(2, q_star + 1):
        B[k - 1, k - 1] = 1.0
    return SignalMatrix.from_matrix(B)


def make_signal_classification(n: int, seed: int) -> SignalMatrix:
    """Orthonormal (n/2, 3) Gaussian loading embedded over a zero lower half.

    Draws an (n/2, 3) standard-Gaussian matrix, orthonormalizes its
    columns, and zero-fills the bottom n/2 rows.  A degenerate draw
    (rank < 3) is retried on the next substream, up to 8 attempts.
    """
    if n < 6 or n % 2 != 0:
        raise ValueError("n must be even and >= 6")
    half = n // 2
    for attempt in range(8):
        G = substream(seed, "signal", attempt).standard_normal((half, 3))
        if np.linalg.matrix_rank(G) < 3:
            continue
        Q = orthonormal_columns(G)
        B = np.zeros((n, 3))
        B[:half, :] = Q
        return SignalMatrix.from_matrix(B)
    raise RuntimeError("failed to draw a rank-3 loading matrix in 8 attempts")


def sample_design(spec: DesignSpec, seed: int) -> np.ndarray:
    """Draw an (m, n) design matrix under ``spec``.

    Families:
      - iid_gaussian: entries N(0, 1) or N(0, 1/n) depending on scale.
      - scaled_t3:    entries t(3)/sqrt(n), optionally /sqrt(3).
      - spiked:       V1 V2^T + E with Haar-orthonormal V1 (m, r),
                      V2 (n, r) and E entries N(0, 1/n).
      - ar1_gaussian: rows i.i.d. N(0, Sigma), Sigma_ij = rho^|i-j|,
                      via the recursion x_1 = z_1,
                      x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j.
    """
    low_rank, noise = _design_parts(spec, seed)
    return low_rank + noise if low_rank is not None else noise


def _design_parts(spec: DesignSpec, seed: int):
    """(low-rank part or None, remaining part) of a design draw."""
    rng = substream(seed, "design")
    m, n = spec.m, spec.n
    if spec.family is DesignFamily.IID_GAUSSIAN:
        sd = 1.0 if spec.scale is Scale.UNIT_VARIANCE else 1.0 / np.sqrt(n)
        return None, rng.standard_normal((m, n)) * sd
    if spec.family is DesignFamily.SCALED_T3:
        X = rng.standard_t(3, size=(m, n)) / np.sqrt(n)
        if spec.normalize_t:
            X /= np.sqrt(3.0)
        return None, X
    if spec.family is DesignFamily.SPIKED:
        r = spec.spike_rank
        V1 = orthonormal_columns(rng.standard_normal((m, r)))
        V2 = orthonormal_columns(rng.standard_normal((n, r)))
        if V1.shape[1] != r or V2.shape[1] != r:
            raise RuntimeError("degenerate Gaussian draw for spiked factors")
        E = rng.standard_normal((m, n)) / np.sqrt(n)
        return V1 @ V2.T, E
    if spec.family is DesignFamily.AR1_GAUSSIAN:
        Z = rng.standard_normal((m, n))
        X = np.empty_like(Z)
        X[:, 0] = Z[:, 0]
        s = np.sqrt(1.0 - spec.rho**2)
        for j in range(1, n):
            X[:, j] = spec.rho * X[:, j - 1] + s * Z[:, j]
        return None, X
    raise ValueError(f"unknown design family: {spec.family}")


def gen_regression(
    X: np.ndarray, signal: SignalMatrix, seed: int, noise_sd: float = 1.0
) -> Dataset:
    """Regression response under the multi-index generator.

    y_i = (b_1^T x_i - 2)^2
          + sum_{k=2..q*} max(b_k^T x_i, 0) * (b_{k-1}^T x_i)
          + noise_sd * eps_i,     eps_i ~ N(0, 1).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != signal.n:
        raise ValueError("X and signal matrix have mismatched feature counts")
    U = X @ signal.B  # (m, q_star)
    y = (U[:, 0] - 2.0) ** 2
    if signal.q_star >= 2:
        y = y + np.sum(np.maximum(U[:, 1:], 0.0) * U[:, :-1], axis=1)
    if noise_sd:
        y = y + noise_sd * substream(seed, "noise").standard_normal(X.shape[0])
    return Dataset(X=X, y=y, signal=signal, dgp=Dgp.REGRESSION)


@dataclass(frozen=True)
class ClassScoreParams:
    """Coefficients of the three class scores.

    h_k(x) = alpha_k sin(omega_k b_1^T x) + beta_k cos(nu_k b_2^T x)
             + gamma_k b_3^T x + bias_k
    """

    alpha: tuple = (1.5, -1.0, 0.5)
    beta: tuple = (1.0, 1.2, -0.8)
    gamma: tuple = (1.0, -0.5, 0.7)
    omega: tuple = (1.0, 2.0, 1.5)
    nu: tuple = (2.0, 1.0, 1.5)
    bias: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "omega", "nu", "bias"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != 3:
                raise ValueError(f"{name} must have 3 entries")
            object.__setattr__(self, name, vals)


def class_probabilities(
    X: np.ndarray,
    signal: SignalMatrix,
    params: ClassScoreParams = ClassScoreParams(),
    tau: float = 1.0,
) -> np.ndarray:
    """Per-row class probabilities softmax(h(x)/tau), shape (m, 3)."""
    if tau <= 0:
        raise ValueError("temperature tau must be positive")
    U = np.asarray(X, dtype=float) @ signal.B  # (m, 3)
    a = np.asarray(params.alpha)
    b = np.asarray(params.beta)
    g = np.asarray(params.gamma)
    w = np.asarray(params.omega)
    v = np.asarray(params.nu)
    bias = np.asarray(params.bias)
    H = (
        a[None, :] * np.sin(w[None, :] * U[:, [0]])
        + b[None, :] * np.cos(v[None, :] * U[:, [1]])
        + g[None, :] * U[:, [2]]
        + bias[None, :]
    )
    Z = H / tau
    Z -= Z.max(axis=1, keepdims=True)
    P = np.exp(Z)
    P /= P.sum(axis=1, keepdims=True)
    return P


def gen_classification(
    X: np.ndarray,
    signal: SignalMatrix,
    seed: int,
    params: ClassScoreParams = ClassScoreParams(),
    tau: float = 1.0,
) -> Dataset:
    """Sample 3-class labels from the softmax-with-temperature scores."""
    P = class_probabilities(X, signal, params=params, tau=tau)
    u = substream(seed, "labels").random(P.shape[0])
    cum = np.cumsum(P, axis=1)
    y = (u[:, None] > cum).sum(axis=1).astype(int)
    y = np.minimum(y, P.shape[1] - 1)  # guard u == 1.0 rounding
    return Dataset(X=np.asarray(X, dtype=float), y=y, signal=signal, dgp=Dgp.CLASSIFICATION)


def split_rows(ds: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Uniformly random partition of the rows into two equal halves.

    Both halves carry the same signal matrix; the partition is a pure
    function of (ds.m, seed).  Indices within each half are sorted so
    downstream row gathers are deterministic.
    """
    if ds.m % 2 != 0:
        raise ValueError("the sample size m must be even to split")
    perm = substream(seed, "split").permutation(ds.m)
    first = np.sort(perm[: ds.m // 2])
    second = np.sort(perm[ds.m // 2 :])
    mk = lambda idx: Dataset(
        X=ds.X[idx], y=ds.y[idx], signal=ds.signal, dgp=ds.dgp, meta=dict(ds.meta)
    )
    return mk(first), mk(second)


def save_dataset(ds: Dataset, outdir: str | Path) -> None:
    """Write X.csv / y.csv / B.csv (headerless) plus manifest.json."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "X.csv", ds.X, delimiter=",", fmt="%.17g")
    yfmt = "%d" if ds.dgp is Dgp.CLASSIFICATION else "%.17g"
    np.savetxt(out / "y.csv", ds.y, fmt=yfmt)
    np.savetxt(out / "B.csv", ds.signal.B, delimiter=",", fmt="%.17g")
    manifest = {
        "m": ds.m,
        "n": ds.n,
        "q_star": ds.signal.q_star,
        "family": ds.meta.get("family"),
        "seed": ds.meta.get("seed"),
        "dgp": ds.dgp.value,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_dataset(indir: str | Path) -> Dataset:
    """Inverse of :func:`save_dataset`; the null set is re-derived from B."""
    src = Path(indir)
    manifest = json.loads((src / "manifest.json").read_text())
    X = np.loadtxt(src / "X.csv", delimiter=",", ndmin=2)
    B = np.loadtxt(src / "B.csv", delimiter=",", ndmin=2)
    dgp = Dgp(manifest["dgp"])
    y = np.loadtxt(src / "y.csv")
    y = y.astype(int) if dgp is Dgp.CLASSIFICATION else np.atleast_1d(y)
    meta = {k: manifest.get(k) for k in ("family", "seed")}
    return Dataset(
        X=X, y=np.atleast_1d(y), signal=SignalMatrix.from_matrix(B), dgp=dgp, meta=meta
    )
