"""Numerical kernel shared by both forecasters.

Dense, GRU and 1-D convolution layers with hand-derived gradients, the
activations and normalizations the models need, Adam, and a central
finite-difference gradient checker. All arrays are float64; batched layers
carry the batch on axis 0.
"""

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import correlate1d
from scipy.special import expit

from .exceptions import InputError

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]

KERNEL_WIDTH = 5
POOL_SIZE = 2


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def parameter_count(params: Params) -> int:
    return int(sum(p.size for p in params.values()))


# ---------------------------------------------------------------- dense


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = W x + b for a vector x, or row-wise for a batch of shape (B, in)."""
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise InputError(f"Dense weights {W.shape} and bias {b.shape} do not match")
    if x.shape[-1] != W.shape[1]:
        raise InputError(f"Dense input has {x.shape[-1]} features, weights expect {W.shape[1]}")
    return x @ W.T + b


def dense_backward(
    dy: np.ndarray, x: np.ndarray, W: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dW, db)."""
    dx = dy @ W
    if x.ndim == 1:
        return dx, np.outer(dy, x), dy.copy()
    return dx, dy.T @ x, dy.sum(axis=0)


# ---------------------------------------------------------------- activations


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Divide each row (last axis) by its Euclidean norm; zero rows stay zero."""
    return l2_normalize_cached(x)[0]


def l2_normalize_cached(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    y = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    return y, norms


def l2_normalize_backward(dy: np.ndarray, y: np.ndarray, norms: np.ndarray) -> np.ndarray:
    proj = np.sum(y * dy, axis=-1, keepdims=True)
    return np.divide(dy - y * proj, norms, out=np.zeros_like(dy), where=norms > 0)


# ---------------------------------------------------------------- GRU

GRU_FIELDS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


@dataclass
class GruLayerParams:
    """Weights of one GRU layer: input weights W_*, recurrent weights U_*, biases b_*."""

    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        hidden, inputs = self.W_z.shape
        for gate in "zrh":
            W, U, b = (getattr(self, f"{kind}_{gate}") for kind in "WUb")
            if W.shape != (hidden, inputs) or U.shape != (hidden, hidden) or b.shape != (hidden,):
                raise InputError(
                    f"GRU gate {gate} has inconsistent shapes {W.shape}, {U.shape}, {b.shape}"
                )

    @property
    def hidden_size(self) -> int:
        return self.b_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "GruLayerParams":
        arrays = {}
        for gate in "zrh":
            arrays[f"W_{gate}"] = glorot_uniform(
                rng, (hidden_size, input_size), input_size, hidden_size
            )
            arrays[f"U_{gate}"] = glorot_uniform(
                rng, (hidden_size, hidden_size), hidden_size, hidden_size
            )
            arrays[f"b_{gate}"] = np.zeros(hidden_size)
        return cls(**arrays)

    @classmethod
    def from_params(cls, params: Params, prefix: str) -> "GruLayerParams":
        # shares the arrays, so in-place optimizer updates are visible here
        return cls(**{name: params[prefix + name] for name in GRU_FIELDS})

    def to_params(self, prefix: str) -> Params:
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class GruCache:
    x: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray


def gru_cell_forward(
    x: np.ndarray, h_prev: np.ndarray, p: GruLayerParams
) -> Tuple[np.ndarray, GruCache]:
    if x.shape != (p.input_size,) or h_prev.shape != (p.hidden_size,):
        raise InputError(
            f"GRU step got x{x.shape}, h{h_prev.shape}; expected "
            f"({p.input_size},), ({p.hidden_size},)"
        )
    z = expit(p.W_z @ x + p.U_z @ h_prev + p.b_z)
    r = expit(p.W_r @ x + p.U_r @ h_prev + p.b_r)
    h_tilde = np.tanh(p.W_h @ x + p.U_h @ (r * h_prev) + p.b_h)
    h = (1.0 - z) * h_prev + z * h_tilde
    return h, GruCache(x, h_prev, z, r, h_tilde)


def gru_cell_step(x: np.ndarray, h_prev: np.ndarray, p: GruLayerParams) -> np.ndarray:
    """One GRU step: h' = (1 - z) * h_prev + z * tanh(W_h x + U_h (r * h_prev) + b_h)."""
    return gru_cell_forward(x, h_prev, p)[0]


def gru_cell_backward(
    dh: np.ndarray, cache: GruCache, p: GruLayerParams
) -> Tuple[np.ndarray, np.ndarray, Params]:
    """Returns (dx, dh_prev, grads keyed by GRU_FIELDS)."""
    x, h_prev, z, r, h_tilde = cache.x, cache.h_prev, cache.z, cache.r, cache.h_tilde
    grads = {}

    dz = dh * (h_tilde - h_prev)
    dh_tilde = dh * z
    dh_prev = dh * (1.0 - z)

    da_h = dh_tilde * (1.0 - h_tilde * h_tilde)
    grads["W_h"] = np.outer(da_h, x)
    grads["b_h"] = da_h
    rh = r * h_prev
    grads["U_h"] = np.outer(da_h, rh)
    drh = p.U_h.T @ da_h
    dx = p.W_h.T @ da_h
    dh_prev += drh * r
    dr = drh * h_prev

    da_z = dz * z * (1.0 - z)
    grads["W_z"] = np.outer(da_z, x)
    grads["U_z"] = np.outer(da_z, h_prev)
    grads["b_z"] = da_z
    dx += p.W_z.T @ da_z
    dh_prev += p.U_z.T @ da_z

    da_r = dr * r * (1.0 - r)
    grads["W_r"] = np.outer(da_r, x)
    grads["U_r"] = np.outer(da_r, h_prev)
    grads["b_r"] = da_r
    dx += p.W_r.T @ da_r
    dh_prev += p.U_r.T @ da_r

    return dx, dh_prev, grads


# ---------------------------------------------------------------- convolution


@dataclass
class Conv1dParams:
    """K filters of width 5 sliding over rows, fully connected across input channels."""

    kernels: np.ndarray  # (K, C_in, width)
    biases: np.ndarray  # (K,)

    def __post_init__(self):
        if self.kernels.ndim != 3 or self.kernels.shape[2] != KERNEL_WIDTH:
            raise InputError(
                f"Convolution kernels must have shape (K, C_in, {KERNEL_WIDTH}), "
                f"got {self.kernels.shape}"
            )
        if self.biases.shape != (self.kernels.shape[0],):
            raise InputError(f"Convolution biases {self.biases.shape} do not match kernels")

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @classmethod
    def init(cls, in_channels: int, out_channels: int, rng: np.random.Generator) -> "Conv1dParams":
        kernels = glorot_uniform(
            rng,
            (out_channels, in_channels, KERNEL_WIDTH),
            in_channels * KERNEL_WIDTH,
            out_channels * KERNEL_WIDTH,
        )
        return cls(kernels, np.zeros(out_channels))


def _batched(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise InputError(f"Expected an (S, C) matrix or a (B, S, C) batch, got shape {x.shape}")


def conv1d_forward_cached(x: np.ndarray, p: Conv1dParams) -> Tuple[np.ndarray, np.ndarray]:
    xb, single = _batched(x)
    if xb.shape[1] < 1:
        raise InputError("Convolution input needs at least one row")
    if xb.shape[2] != p.in_channels:
        raise InputError(
            f"Convolution input has {xb.shape[2]} channels, kernels expect {p.in_channels}"
        )
    pad = KERNEL_WIDTH // 2
    padded = np.pad(xb, ((0, 0), (pad, pad), (0, 0)))
    windows = sliding_window_view(padded, KERNEL_WIDTH, axis=1)  # (B, S, C_in, width)
    y = np.einsum("bscw,kcw->bsk", windows, p.kernels) + p.biases
    return (y[0] if single else y), windows


def conv1d_forward(x: np.ndarray, p: Conv1dParams) -> np.ndarray:
    """Same-length correlation along rows with 2 zero rows of padding at each end."""
    return conv1d_forward_cached(x, p)[0]


def conv1d_backward(
    dy: np.ndarray, windows: np.ndarray, p: Conv1dParams
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (dx, dkernels, dbiases)."""
    dyb, single = _batched(dy)
    dkernels = np.einsum("bsk,bscw->kcw", dyb, windows)
    dbiases = dyb.sum(axis=(0, 1))
    dwindows = np.einsum("bsk,kcw->bscw", dyb, p.kernels)
    batch, rows, _ = dyb.shape
    pad = KERNEL_WIDTH // 2
    dpadded = np.zeros((batch, rows + 2 * pad, p.in_channels))
    for j in range(KERNEL_WIDTH):
        dpadded[:, j : j + rows, :] += dwindows[..., j]
    dx = dpadded[:, pad : pad + rows, :]
    return (dx[0] if single else dx), dkernels, dbiases


def maxpool_rows_cached(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    xb, single = _batched(x)
    batch, rows, channels = xb.shape
    if rows < 1:
        raise InputError("Max pooling needs at least one row")
    if rows % POOL_SIZE:
        tail = np.full((batch, POOL_SIZE - rows % POOL_SIZE, channels), -np.inf)
        xb = np.concatenate([xb, tail], axis=1)
    grouped = xb.reshape(batch, -1, POOL_SIZE, channels)
    idx = grouped.argmax(axis=2)
    y = np.take_along_axis(grouped, idx[:, :, None, :], axis=2)[:, :, 0, :]
    return (y[0] if single else y), idx


def maxpool_rows(x: np.ndarray) -> np.ndarray:
    """Non-overlapping max over pairs of rows; an odd last row passes through."""
    return maxpool_rows_cached(x)[0]


def maxpool_backward(dy: np.ndarray, idx: np.ndarray, rows: int) -> np.ndarray:
    dyb, single = _batched(dy)
    batch, pooled, channels = dyb.shape
    grouped = np.zeros((batch, pooled, POOL_SIZE, channels))
    np.put_along_axis(grouped, idx[:, :, None, :], dyb[:, :, None, :], axis=2)
    dx = grouped.reshape(batch, pooled * POOL_SIZE, channels)[:, :rows, :]
    return dx[0] if single else dx


def pooled_rows(rows: int) -> int:
    return -(-rows // POOL_SIZE)


# ---------------------------------------------------------------- smoothing


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian weights over [-ceil(3 sigma), ceil(3 sigma)]."""
    if sigma <= 0:
        raise InputError(f"Gaussian sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    weights = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return weights / weights.sum()


def gaussian_filter_columns(Y: np.ndarray, sigma: float) -> np.ndarray:
    """Smooth every column of an (S, C) matrix, replicating the edge rows."""
    if Y.ndim != 2:
        raise InputError(f"Expected an (S, C) matrix, got shape {Y.shape}")
    values = np.asarray(Y, dtype=np.float64)
    return correlate1d(values, gaussian_kernel(sigma), axis=0, mode="nearest")


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls(
            lr=lr,
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
            **kwargs,
        )


def adam_step(params: Params, grads: Params, state: AdamState) -> Tuple[Params, AdamState]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InputError(f"Gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


# ---------------------------------------------------------------- gradient check

LossAndGrads = Callable[[Params], Tuple[float, Params]]


@dataclass
class GradCheckReport:
    errors: Dict[str, float]
    non_finite: List[str]
    tolerance: float

    @property
    def worst(self) -> Tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    @property
    def passed(self) -> bool:
        return not self.non_finite and all(e < self.tolerance for e in self.errors.values())


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> np.ndarray:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    loss_and_grads: LossAndGrads,
    params: Params,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """
    Compare analytic gradients with central finite differences.

    Args:
        loss_and_grads: returns (loss, grads) for a parameter dict
        params: parameters to perturb; restored before returning
        tolerance: pass threshold on the max relative error per block
        step: finite-difference step
        max_entries: check at most this many random entries per block
        rng: generator used to pick entries when max_entries is set

    Returns:
        GradCheckReport with the max relative error per parameter block
    """
    _, analytic = loss_and_grads(params)
    rng = rng or np.random.default_rng(0)
    errors = {}
    non_finite = []
    for name, p in params.items():
        flat = p.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(entries.size)
        for k, i in enumerate(entries):
            original = flat[i]
            flat[i] = original + step
            plus = loss_and_grads(params)[0]
            flat[i] = original - step
            minus = loss_and_grads(params)[0]
            flat[i] = original
            numeric[k] = (plus - minus) / (2.0 * step)
        exact = analytic[name].reshape(-1)[entries]
        if not (np.all(np.isfinite(exact)) and np.all(np.isfinite(numeric))):
            non_finite.append(name)
            errors[name] = float("inf")
            continue
        errors[name] = float(relative_error(exact, numeric).max()) if entries.size else 0.0
        logger.debug(f"grad check {name}: max relative error {errors[name]:.3e}")
    return GradCheckReport(errors, non_finite, tolerance)
