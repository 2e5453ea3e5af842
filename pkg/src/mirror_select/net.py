"""Feed-forward network with a dense first layer and exact backprop.

Layer layout: the input enters only through a0 = W1^T x (no first-layer
bias), then every tail layer applies ReLU -> inverted dropout (train
mode) -> affine; the last affine is the output, with no activation.
Because the input enters only through W1, the gradient of the output
with respect to x always factors as W1 @ (d out / d a0), which is what
the downstream sensitivity statistics rely on.

All arithmetic is float64 numpy; batches are (m, n) row-major.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .rng import substream

_CHUNK = 8192  # row block for full-data passes, keeps activations bounded


class NumericOverflowError(FloatingPointError):
    """A forward/backward/update produced a non-finite value."""

    def __init__(self, message: str, layer: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.iteration = iteration


class Init(str, Enum):
    HE_NORMAL = "he_normal"
    XAVIER_NORMAL = "xavier_normal"


class Loss(str, Enum):
    SQUARED = "squared"
    CROSS_ENTROPY = "cross_entropy"


class Sampling(str, Enum):
    WITH_REPLACEMENT = "with_replacement"
    WITHOUT_REPLACEMENT = "without_replacement"


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture: n_in -> first_width -> tail_widths... -> out_width."""

    n_in: int
    first_width: int
    tail_widths: tuple = ()
    out_width: int = 1
    dropout_rate: float = 0.0
    init: Init = Init.HE_NORMAL
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "tail_widths", tuple(int(w) for w in self.tail_widths))
        object.__setattr__(self, "init", Init(self.init))
        dims = (self.n_in, self.first_width, *self.tail_widths, self.out_width)
        if any(d < 1 for d in dims):
            raise ValueError("all widths must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.activation != "relu":
            raise ValueError("only the relu activation is supported")


@dataclass
class NetworkParams:
    """Trainable state: W1 (n_in, q) and tail [(W, b), ...]."""

    W1: np.ndarray
    tail: list  # [(W: (d_in, d_out), b: (d_out,)), ...]

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=float)
        if self.W1.ndim != 2:
            raise ValueError("W1 must be (n_in, q)")
        self.tail = [
            (np.asarray(W, dtype=float), np.asarray(b, dtype=float)) for W, b in self.tail
        ]
        d = self.W1.shape[1]
        for i, (W, b) in enumerate(self.tail):
            if W.ndim != 2 or W.shape[0] != d or b.shape != (W.shape[1],):
                raise ValueError(f"tail layer {i} breaks the shape chain")
            d = W.shape[1]
        if not all(np.all(np.isfinite(a)) for a in self.arrays()):
            raise ValueError("parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.W1.shape[0]

    @property
    def out_width(self) -> int:
        return self.tail[-1][0].shape[1] if self.tail else self.W1.shape[1]

    def arrays(self) -> list:
        out = [self.W1]
        for W, b in self.tail:
            out.extend((W, b))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            W1=self.W1.copy(), tail=[(W.copy(), b.copy()) for W, b in self.tail]
        )


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch SGD options.

    ``learning_rate`` may be a float or a callable t -> eta_t (t counts
    from 1); either way the schedule depends only on (config, seed),
    never on the data.  ``reduction`` chooses whether the update applies
    eta_t to the summed batch gradient ("sum", the bare update rule) or
    to the batch mean ("mean", the usual framework convention; equal to
    "sum" with eta_t / batch size).  ``weight_decay`` shrinks every
    parameter by (1 - eta_t * weight_decay) before each step.
    """

    loss: Loss = Loss.SQUARED
    batch_size: int = 128
    learning_rate: float | Callable[[int], float] = 1e-3
    iterations: int = 10
    sampling: Sampling = Sampling.WITH_REPLACEMENT
    seed: int = 0
    reduction: str = "mean"
    weight_decay: float = 0.0
    loss_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "loss", Loss(self.loss))
        object.__setattr__(self, "sampling", Sampling(self.sampling))
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.reduction not in ("sum", "mean"):
            raise ValueError("reduction must be 'sum' or 'mean'")
        if self.loss_every < 1:
            raise ValueError("loss_every must be >= 1")

    def eta(self, t: int) -> float:
        lr = self.learning_rate
        val = lr(t) if callable(lr) else float(lr)
        if val <= 0:
            raise ValueError(f"learning rate at iteration {t} must be positive")
        return val


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Gaussian init: He N(0, 2/fan_in) or Xavier N(0, 2/(fan_in+fan_out)).

    Biases start at zero.  Entrywise i.i.d. Gaussian W1 keeps its law
    invariant under left-orthogonal rotation, which the null statistics
    require.  Deterministic given (spec, seed).
    """
    rng = substream(seed, "init")

    def draw(shape, fan_in, fan_out):
        if spec.init is Init.HE_NORMAL:
            var = 2.0 / fan_in
        else:
            var = 2.0 / (fan_in + fan_out)
        return rng.standard_normal(shape) * np.sqrt(var)

    W1 = draw((spec.n_in, spec.first_width), spec.n_in, spec.first_width)
    dims = (spec.first_width, *spec.tail_widths, spec.out_width)
    tail = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        tail.append((draw((d_in, d_out), d_in, d_out), np.zeros(d_out)))
    return NetworkParams(W1=W1, tail=tail)


def _check_finite(a: np.ndarray, layer: int):
    if not np.all(np.isfinite(a)):
        raise NumericOverflowError(
            f"non-finite activation at layer {layer}", layer=layer
        )


def _forward_cached(
    params: NetworkParams,
    X: np.ndarray,
    train: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Forward pass returning (out, pre-activations, dropped activations, masks)."""
    # overflow surfaces as NumericOverflowError via the explicit checks
    with np.errstate(over="ignore", invalid="ignore"):
        act = X @ params.W1
        _check_finite(act, 0)
        pre = [act]  # inputs to each ReLU; pre[-1] ends as the output
        zs = []
        masks = []
        use_dropout = train and dropout_rate > 0.0
        if use_dropout and rng is None:
            raise ValueError("train-mode dropout needs a mask generator")
        for l, (W, b) in enumerate(params.tail):
            z = np.maximum(pre[-1], 0.0)
            if use_dropout:
                mask = (rng.random(z.shape) >= dropout_rate) / (1.0 - dropout_rate)
                z = z * mask
            else:
                mask = None
            zs.append(z)
            masks.append(mask)
            act = z @ W + b
            _check_finite(act, l + 1)
            pre.append(act)
        return pre[-1], pre, zs, masks


def forward(
    params: NetworkParams,
    x: np.ndarray,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Network output for a single input (n,) or a batch (m, n)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    out, *_ = _forward_cached(
        params, X, train=(mode == "train"), dropout_rate=dropout_rate, rng=rng
    )
    return out[0] if single else out


def _loss_output_grad(loss: Loss, out: np.ndarray, y: np.ndarray):
    """(per-row loss values, d loss / d out); loss (u, v) summed over rows."""
    if loss is Loss.SQUARED:
        resid = out - np.asarray(y, dtype=float).reshape(out.shape)
        return np.sum(resid**2, axis=1), 2.0 * resid
    # multiclass cross entropy: -log softmax(out)[y]
    labels = np.asarray(y).astype(int)
    shifted = out - out.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(out.shape[0])
    values = logz - shifted[rows, labels]
    probs = np.exp(shifted - logz[:, None])
    grad = probs
    grad[rows, labels] -= 1.0
    return values, grad


def _backward_from_output_grad(params, X, pre, zs, masks, gout):
    """Shared reverse pass: returns (grads per array, d/d a0)."""
    g = gout
    tail_grads = []
    for l in range(len(params.tail) - 1, -1, -1):
        W, _ = params.tail[l]
        dW = zs[l].T @ g
        db = g.sum(axis=0)
        tail_grads.append((dW, db))
        g = g @ W.T
        if masks[l] is not None:
            g = g * masks[l]
        g = np.where(pre[l] > 0.0, g, 0.0)  # ReLU subgradient, 0 at the kink
    tail_grads.reverse()
    dW1 = X.T @ g
    return dW1, tail_grads, g


def backward(
    params: NetworkParams,
    x: np.ndarray,
    y_target: np.ndarray,
    loss: Loss = Loss.SQUARED,
    mode: str = "eval",
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Exact gradients of sum_i loss(y_i, f(x_i)).

    Returns (param_grads, input_grad): param_grads is NetworkParams-shaped
    with gradients summed over the batch; input_grad has the shape of x
    (per-row gradients for a batch input).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    loss = Loss(loss)
    _, pre, zs, masks = _forward_cached(
        params, X, train=(mode == "train"), dropout_rate=dropout_rate, rng=rng
    )
    y = np.asarray(y_target)
    if y.ndim == 0:
        y = y[None]
    with np.errstate(over="ignore", invalid="ignore"):
        _, gout = _loss_output_grad(loss, pre[-1], y)
        dW1, tail_grads, g0 = _backward_from_output_grad(params, X, pre, zs, masks, gout)
        input_grad = g0 @ params.W1.T
        finite = np.all(np.isfinite(dW1)) and np.all(np.isfinite(input_grad))
        finite = finite and all(
            np.all(np.isfinite(W)) and np.all(np.isfinite(b)) for W, b in tail_grads
        )
    if not finite:
        raise NumericOverflowError("gradient overflowed")
    grads = NetworkParams(W1=dW1, tail=tail_grads)
    return grads, (input_grad[0] if single else input_grad)


def loss_value(
    params: NetworkParams, X: np.ndarray, y: np.ndarray, loss: Loss = Loss.SQUARED
) -> float:
    """Mean per-sample loss over (X, y), evaluated without dropout."""
    X = np.asarray(X, dtype=float)
    loss = Loss(loss)
    total = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for lo in range(0, X.shape[0], _CHUNK):
            hi = min(lo + _CHUNK, X.shape[0])
            out, *_ = _forward_cached(params, X[lo:hi])
            vals, _ = _loss_output_grad(loss, out, y[lo:hi])
            total += float(vals.sum())
    return total / X.shape[0]


def input_sensitivity(
    params: NetworkParams, X: np.ndarray, output: str | int = "sum"
) -> np.ndarray:
    """Per-feature sensitivity xi_j = sum_i d f(x_i) / d x_ij (eval mode).

    For multi-output networks, f is the sum of the output coordinates by
    default; pass an integer to differentiate a single output instead.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.n_in:
        raise ValueError("X must be (m, n_in)")
    g0_total = np.zeros(params.W1.shape[1])
    for lo in range(0, X.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, X.shape[0])
        Xc = X[lo:hi]
        out, pre, zs, masks = _forward_cached(params, Xc)
        gout = np.ones_like(out)
        if output != "sum":
            gout[:] = 0.0
            gout[:, int(output)] = 1.0
        _, _, g0 = _backward_from_output_grad(params, Xc, pre, zs, masks, gout)
        g0_total += g0.sum(axis=0)
    return params.W1 @ g0_total


def _batch_indices(cfg: TrainConfig, m: int, t: int) -> np.ndarray:
    """Indices of batch t (t >= 1); a pure function of (cfg.seed, t, m)."""
    if cfg.sampling is Sampling.WITH_REPLACEMENT:
        idx = substream(cfg.seed, "batch", t).integers(0, m, size=cfg.batch_size)
    else:
        per_epoch = -(-m // cfg.batch_size)  # ceil; last batch may be short
        epoch, pos = divmod(t - 1, per_epoch)
        perm = substream(cfg.seed, "shuffle", epoch).permutation(m)
        idx = perm[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
    return np.sort(idx)  # fixed row-ascending accumulation order


def train(
    params0: NetworkParams,
    ds,
    cfg: TrainConfig,
    dropout_rate: float = 0.0,
    checkpoints: Iterable[int] = (),
    on_checkpoint: Callable[[int, NetworkParams], None] | None = None,
):
    """Run T = cfg.iterations SGD updates on a private copy of params0.

    Update rule: W <- W * (1 - eta_t * weight_decay) - scale_t * G_t,
    where G_t is the gradient of the summed batch loss and scale_t is
    eta_t ("sum" reduction) or eta_t / |batch| ("mean").  The batch
    index stream, dropout masks, and learning rates depend only on
    (cfg, seed), so identical inputs replay bit-identical trajectories.

    Returns (trained params, [(t, full-data eval loss), ...]); the loss
    is recorded every ``cfg.loss_every`` updates and at t = T.  If
    ``checkpoints`` is given, ``on_checkpoint(t, live_params)`` fires at
    those iterations (0 means before any update); the callback must not
    mutate the params.
    """
    X, y = (ds.X, ds.y) if hasattr(ds, "X") else ds
    m = X.shape[0]
    if cfg.sampling is Sampling.WITHOUT_REPLACEMENT and cfg.batch_size > m:
        raise ValueError("batch_size cannot exceed m without replacement")
    params = params0.copy()
    marks = set(int(c) for c in checkpoints)
    if 0 in marks and on_checkpoint is not None:
        on_checkpoint(0, params)
    trajectory: list[tuple[int, float]] = []
    for t in range(1, cfg.iterations + 1):
        idx = _batch_indices(cfg, m, t)
        eta = cfg.eta(t)
        try:
            grads, _ = backward(
                params,
                X[idx],
                y[idx],
                loss=cfg.loss,
                mode="train",
                dropout_rate=dropout_rate,
                rng=substream(cfg.seed, "dropout", t),
            )
        except NumericOverflowError as exc:
            exc.iteration = t
            raise
        scale = eta / len(idx) if cfg.reduction == "mean" else eta
        decay = 1.0 - eta * cfg.weight_decay
        with np.errstate(over="ignore", invalid="ignore"):
            for p, g in zip(params.arrays(), grads.arrays()):
                if cfg.weight_decay:
                    p *= decay
                p -= scale * g
                if not np.all(np.isfinite(p)):
                    raise NumericOverflowError(
                        f"parameters overflowed at iteration {t}", iteration=t
                    )
        if t % cfg.loss_every == 0 or t == cfg.iterations or t in marks:
            trajectory.append((t, loss_value(params, X, y, cfg.loss)))
        if t in marks and on_checkpoint is not None:
            on_checkpoint(t, params)
    return params, trajectory


def save_params(
    params: NetworkParams,
    outdir: str | Path,
    spec: NetworkSpec | None = None,
    seed: int | None = None,
) -> None:
    """Checkpoint: manifest.json + one little-endian float64 .bin per array."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    entries = [("W1", params.W1)]
    for i, (W, b) in enumerate(params.tail):
        entries.append((f"tail_{i}_W", W))
        entries.append((f"tail_{i}_b", b))
    manifest = {
        "dtype": "<f8",
        "order": "C",
        "arrays": {name: list(a.shape) for name, a in entries},
        "n_tail_layers": len(params.tail),
        "spec": None
        if spec is None
        else {
            "n_in": spec.n_in,
            "first_width": spec.first_width,
            "tail_widths": list(spec.tail_widths),
            "out_width": spec.out_width,
            "dropout_rate": spec.dropout_rate,
            "init": spec.init.value,
        },
        "seed": seed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for name, a in entries:
        (out / f"{name}.bin").write_bytes(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(indir: str | Path) -> NetworkParams:
    src = Path(indir)
    manifest = json.loads((src / "manifest.json").read_text())
    shapes = manifest["arrays"]

    def read(name):
        raw = (src / f"{name}.bin").read_bytes()
        return np.frombuffer(raw, dtype="<f8").reshape(shapes[name]).copy()

    tail = [
        (read(f"tail_{i}_W"), read(f"tail_{i}_b"))
        for i in range(manifest["n_tail_layers"])
    ]
    return NetworkParams(W1=read("W1"), tail=tail)
