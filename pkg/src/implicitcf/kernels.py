"""Dense and sparse numerical primitives.

Everything here operates on float64 numpy arrays: 2-D arrays are matrices
(row-major), 1-D arrays are vectors.  Dense layer kernels accept either a
single vector or a batch laid out as rows of a 2-D array.  All stochastic
functions take an explicit ``numpy.random.Generator`` so that a fixed seed
reproduces results bit-for-bit on a single thread.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)

# Saturation bounds keeping sigmoid outputs strictly inside (0, 1).
_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


def gaussian_init(rows: int, cols: int, mean: float, stddev: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Draw a ``rows x cols`` matrix of i.i.d. normal(mean, stddev) entries."""
    if rows <= 0 or cols <= 0:
        raise ValueError(f"matrix dimensions must be positive, got {rows}x{cols}")
    if stddev <= 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    return rng.normal(mean, stddev, size=(rows, cols))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class DenseLayer:
    """One perceptron layer: ``activation(x @ weight + bias)``.

    ``weight`` has shape (in_dim, out_dim); ``bias`` has shape (out_dim,).
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str = RELU

    def __post_init__(self) -> None:
        if self.weight.ndim != 2:
            raise ValueError("weight must be a 2-D matrix")
        if self.bias.ndim != 1 or self.bias.shape[0] != self.weight.shape[1]:
            raise ValueError(
                f"bias length {self.bias.shape} does not match weight columns "
                f"{self.weight.shape[1]}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class DenseCache:
    """Forward-pass residuals needed to compute exact gradients."""

    inputs: np.ndarray
    pre_activation: np.ndarray


def dense_forward(layer: DenseLayer, x: np.ndarray) -> tuple[np.ndarray, DenseCache]:
    """Apply one dense layer to a vector or a batch of row vectors."""
    if x.shape[-1] != layer.in_dim:
        raise ValueError(
            f"input width {x.shape[-1]} does not match layer in_dim {layer.in_dim}")
    pre = x @ layer.weight + layer.bias
    out = relu(pre) if layer.activation == RELU else pre
    return out, DenseCache(inputs=x, pre_activation=pre)


def dense_backward(layer: DenseLayer, cache: DenseCache,
                   grad_output: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Chain-rule gradients (w.r.t. input, weight, bias) for one dense layer.

    ReLU passes gradient only where the cached pre-activation is > 0; the
    subgradient at exactly 0 is taken as 0.
    """
    if grad_output.shape != cache.pre_activation.shape:
        raise ValueError(
            f"grad_output shape {grad_output.shape} does not match forward "
            f"output shape {cache.pre_activation.shape}")
    if cache.inputs.shape[-1] != layer.in_dim:
        raise ValueError("cache does not belong to this layer")
    if layer.activation == RELU:
        grad_pre = np.where(cache.pre_activation > 0, grad_output, 0.0)
    else:
        grad_pre = grad_output
    if grad_pre.ndim == 1:
        grad_weight = np.outer(cache.inputs, grad_pre)
        grad_bias = grad_pre.copy()
    else:
        grad_weight = cache.inputs.T @ grad_pre
        grad_bias = grad_pre.sum(axis=0)
    grad_input = grad_pre @ layer.weight.T
    return grad_input, grad_weight, grad_bias


def _check_active_indices(indices: np.ndarray, num_rows: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ValueError("active indices must be a flat index list")
    if indices.size:
        if indices[0] < 0 or indices[-1] >= num_rows:
            raise ValueError(
                f"active index out of range [0, {num_rows}): "
                f"[{indices[0]}, {indices[-1]}]")
        if np.any(np.diff(indices) <= 0):
            raise ValueError("active indices must be strictly increasing")
    return indices


def sparse_project_forward(weight: np.ndarray, active_indices: np.ndarray) -> np.ndarray:
    """Sum the active rows of ``weight``: the product ``weight.T @ y`` for a
    binary vector ``y`` whose ones sit at ``active_indices``, without ever
    materializing ``y``.
    """
    idx = _check_active_indices(active_indices, weight.shape[0])
    if idx.size == 0:
        return np.zeros(weight.shape[1])
    return weight[idx].sum(axis=0)


@dataclass
class SparseRowGrad:
    """Gradient touching only ``rows`` of a matrix: dense[rows[k]] += values[k]."""

    rows: np.ndarray
    values: np.ndarray

    def to_dense(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape)
        scatter_add_rows(out, self.rows, self.values)
        return out


def sparse_project_backward(grad_output: np.ndarray,
                            active_indices: np.ndarray,
                            num_rows: int) -> SparseRowGrad:
    """Adjoint of :func:`sparse_project_forward`: every active row receives
    ``grad_output``; all other rows receive exactly zero.
    """
    idx = _check_active_indices(active_indices, num_rows)
    values = np.broadcast_to(grad_output, (idx.size, grad_output.shape[0])).copy()
    return SparseRowGrad(rows=idx, values=values)


def segment_sums(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Sum consecutive row segments of ``values``; empty segments sum to zero.

    Each segment is reduced independently, so a segment's sum does not depend
    on its position in the batch.
    """
    out = np.zeros((lengths.shape[0], values.shape[1]))
    nonempty = lengths > 0
    if values.shape[0] == 0 or not nonempty.any():
        return out
    starts = (np.cumsum(lengths) - lengths)[nonempty]
    out[nonempty] = np.add.reduceat(values, starts, axis=0)
    return out


def sparse_project_forward_batch(weight: np.ndarray, concat_indices: np.ndarray,
                                 lengths: np.ndarray) -> np.ndarray:
    """Batched row-gather-and-sum: one projection per index segment.

    ``concat_indices`` is the concatenation of the per-instance active-index
    lists and ``lengths`` their sizes.  Index lists are assumed already
    validated (rows of an interaction matrix are sorted at construction).
    """
    if concat_indices.size == 0:
        return np.zeros((lengths.shape[0], weight.shape[1]))
    return segment_sums(weight[concat_indices], lengths)


def scatter_add_rows(out: np.ndarray, rows: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``out[rows[k]] += values[k]`` with duplicate rows accumulated."""
    if rows.size == 0:
        return out
    order = np.argsort(rows, kind="stable")
    sorted_rows = rows[order]
    sorted_values = values[order]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(sorted_rows)) + 1))
    out[sorted_rows[starts]] += np.add.reduceat(sorted_values, starts, axis=0)
    return out


def sparse_project_backward_batch(out: np.ndarray, grad_output: np.ndarray,
                                  concat_indices: np.ndarray,
                                  lengths: np.ndarray) -> np.ndarray:
    """Accumulate the batched adjoint of the sparse projection into ``out``."""
    if concat_indices.size == 0:
        return out
    expanded = np.repeat(grad_output, lengths, axis=0)
    return scatter_add_rows(out, concat_indices, expanded)


def elementwise_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def sigmoid(logit):
    """Numerically stable logistic function, strictly inside (0, 1).

    Computed via the exp-of-negative-magnitude branch so it never overflows;
    saturation is clamped one ULP inside the open interval.
    """
    x = np.asarray(logit, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    np.divide(1.0, 1.0 + np.exp(-x, where=pos, out=np.ones_like(x)), out=out, where=pos)
    ex = np.exp(x, where=~pos, out=np.ones_like(x))
    np.divide(ex, 1.0 + ex, out=out, where=~pos)
    out = np.clip(out, _SIGMOID_LO, _SIGMOID_HI)
    if np.isscalar(logit) or np.ndim(logit) == 0:
        return float(out)
    return out


@dataclass
class AdamState:
    """First/second-moment accumulators for every named parameter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scratch: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()},
                   step=0, beta1=beta1, beta2=beta2, eps=eps)


def _check_shapes(params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ValueError(
                f"gradient for {name!r} missing or shape-mismatched: "
                f"{None if g is None else g.shape} vs {p.shape}")


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update with bias-corrected moments, in place.

    Moment updates and the step ``lr * m_hat / (sqrt(v_hat) + eps)`` run
    through a per-parameter scratch buffer so large models do not allocate
    inside the hot loop.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    _check_shapes(params, grads)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    m_corr = 1.0 - b1 ** t
    v_corr = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        buf = state.scratch.get(name)
        if buf is None:
            buf = state.scratch[name] = np.empty_like(p)
        m *= b1
        np.multiply(g, 1.0 - b1, out=buf)
        m += buf
        v *= b2
        np.multiply(g, g, out=buf)
        buf *= 1.0 - b2
        v += buf
        np.divide(v, v_corr, out=buf)
        np.sqrt(buf, out=buf)
        buf += state.eps
        np.divide(m, buf, out=buf)
        buf *= lr / m_corr
        p -= buf
    return params, state


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> dict[str, np.ndarray]:
    """Plain gradient descent: ``p -= lr * g``, in place."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    _check_shapes(params, grads)
    for name, p in params.items():
        p -= lr * grads[name]
    return params


def central_difference(f, tensors: dict[str, np.ndarray],
                       h: float = 1e-5) -> dict[str, np.ndarray]:
    """Numeric gradient of scalar ``f(tensors)`` by central differences.

    Perturbs every entry of every tensor in place (restoring it afterwards),
    so it only ever exercises the forward path.  Intended for small fixtures.
    """
    grads = {}
    for name, tensor in tensors.items():
        grad = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(tensors)
            flat[i] = orig - h
            f_minus = f(tensors)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = grad
    return grads
