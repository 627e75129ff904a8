"""Model variants over interaction-matrix inputs.

Three architectures share one parameter container:

* ``rl`` — dual towers: each side projects its sparse interaction vector and
  passes it through ReLU layers; the two latent vectors combine by
  element-wise product under a weighted output layer.
* ``ml`` — linear embeddings of both interaction vectors, concatenated and
  fed to a ReLU MLP whose last activation feeds the output layer.
* ``fused`` — both branches run to their predictive vectors, which are
  concatenated under a joint output layer.

All heads are bias-free and end in a sigmoid.  Forward/backward operate on
batches of instances; each instance is a (user row, item column) pair of
sorted index arrays taken from the training matrix.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .kernels import (
    RELU,
    DenseCache,
    DenseLayer,
    dense_backward,
    dense_forward,
    sigmoid,
)

VARIANT_RL = "rl"
VARIANT_ML = "ml"
VARIANT_FUSED = "fused"
VARIANTS = (VARIANT_RL, VARIANT_ML, VARIANT_FUSED)


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor.

    Tower/MLP tuples list layer output widths; an empty tuple means the
    projection (or concatenated embedding) feeds the head directly.
    """

    variant: str
    num_users: int
    num_items: int
    user_proj_dim: int = 0
    user_hidden: tuple[int, ...] = ()
    item_proj_dim: int = 0
    item_hidden: tuple[int, ...] = ()
    embed_dim: int = 0
    mlp_hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.num_users < 1 or self.num_items < 1:
            raise ValueError("num_users and num_items must be >= 1")
        if self.has_rl:
            if self.user_proj_dim < 1 or self.item_proj_dim < 1:
                raise ValueError("tower projection widths must be >= 1")
            if any(d < 1 for d in self.user_hidden + self.item_hidden):
                raise ValueError("tower layer widths must be >= 1")
            if self.rl_predictive_dim != (self.item_hidden[-1] if self.item_hidden
                                          else self.item_proj_dim):
                raise ValueError("user and item towers must end at the same width")
        if self.has_ml:
            if self.embed_dim < 1:
                raise ValueError("embedding width must be >= 1")
            if any(d < 1 for d in self.mlp_hidden):
                raise ValueError("MLP layer widths must be >= 1")

    @property
    def has_rl(self) -> bool:
        return self.variant in (VARIANT_RL, VARIANT_FUSED)

    @property
    def has_ml(self) -> bool:
        return self.variant in (VARIANT_ML, VARIANT_FUSED)

    @property
    def rl_predictive_dim(self) -> int:
        return self.user_hidden[-1] if self.user_hidden else self.user_proj_dim

    @property
    def ml_predictive_dim(self) -> int:
        return self.mlp_hidden[-1] if self.mlp_hidden else 2 * self.embed_dim

    @property
    def head_dim(self) -> int:
        """Width of the output weight vector."""
        if self.variant == VARIANT_RL:
            return self.rl_predictive_dim
        if self.variant == VARIANT_ML:
            return self.ml_predictive_dim
        return self.rl_predictive_dim + self.ml_predictive_dim

    @classmethod
    def default(cls, variant: str, num_users: int, num_items: int,
                factors: int) -> "ArchSpec":
        """Standard sizing from the predictive width ``factors`` (= d): towers
        project to 4d then narrow 2d -> d; embeddings are 2d wide with an MLP
        narrowing their 4d concatenation 2d -> d."""
        if factors < 1:
            raise ValueError("factors must be >= 1")
        d = factors
        kwargs = dict(variant=variant, num_users=num_users, num_items=num_items)
        if variant in (VARIANT_RL, VARIANT_FUSED):
            kwargs.update(user_proj_dim=4 * d, user_hidden=(2 * d, d),
                          item_proj_dim=4 * d, item_hidden=(2 * d, d))
        if variant in (VARIANT_ML, VARIANT_FUSED):
            kwargs.update(embed_dim=2 * d, mlp_hidden=(2 * d, d))
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "num_users": self.num_users,
            "num_items": self.num_items,
            "user_proj_dim": self.user_proj_dim,
            "user_hidden": list(self.user_hidden),
            "item_proj_dim": self.item_proj_dim,
            "item_hidden": list(self.item_hidden),
            "embed_dim": self.embed_dim,
            "mlp_hidden": list(self.mlp_hidden),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(variant=d["variant"], num_users=d["num_users"],
                   num_items=d["num_items"], user_proj_dim=d["user_proj_dim"],
                   user_hidden=tuple(d["user_hidden"]),
                   item_proj_dim=d["item_proj_dim"],
                   item_hidden=tuple(d["item_hidden"]),
                   embed_dim=d["embed_dim"], mlp_hidden=tuple(d["mlp_hidden"]))


def expected_tensor_shapes(arch: ArchSpec) -> dict[str, tuple[int, ...]]:
    """Canonical parameter names and shapes, in declaration order.

    This order fixes initialization draws and the checkpoint layout.
    """
    shapes: dict[str, tuple[int, ...]] = {}
    if arch.has_rl:
        shapes["rl.user.proj"] = (arch.num_items, arch.user_proj_dim)
        prev = arch.user_proj_dim
        for k, dim in enumerate(arch.user_hidden):
            shapes[f"rl.user.l{k}.w"] = (prev, dim)
            shapes[f"rl.user.l{k}.b"] = (dim,)
            prev = dim
        shapes["rl.item.proj"] = (arch.num_users, arch.item_proj_dim)
        prev = arch.item_proj_dim
        for k, dim in enumerate(arch.item_hidden):
            shapes[f"rl.item.l{k}.w"] = (prev, dim)
            shapes[f"rl.item.l{k}.b"] = (dim,)
            prev = dim
    if arch.has_ml:
        shapes["ml.user_embed"] = (arch.num_items, arch.embed_dim)
        shapes["ml.item_embed"] = (arch.num_users, arch.embed_dim)
        prev = 2 * arch.embed_dim
        for k, dim in enumerate(arch.mlp_hidden):
            shapes[f"ml.l{k}.w"] = (prev, dim)
            shapes[f"ml.l{k}.b"] = (dim,)
            prev = dim
    shapes["out"] = (arch.head_dim,)
    return shapes


@dataclass
class ModelParams:
    """All weights of one model; ``tensors`` preserves canonical order."""

    arch: ArchSpec
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))


def init_params(arch: ArchSpec, rng: np.random.Generator,
                stddev: float = 0.01) -> ModelParams:
    """Gaussian(0, stddev) weights in canonical order; biases start at zero.

    Zero biases keep ReLU units input-driven at small scales, where random
    biases would dominate the near-zero activations and leave units dead for
    every input.
    """
    if stddev <= 0:
        raise ValueError("stddev must be positive")
    tensors = {}
    for name, shape in expected_tensor_shapes(arch).items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.normal(0.0, stddev, size=shape)
    return ModelParams(arch=arch, tensors=tensors)


@dataclass
class Prediction:
    """A single matching score: probability = sigmoid(logit)."""

    probability: float
    logit: float


class BatchSide:
    """Selection matrix for one input side of a batch.

    Row b of the CSR matrix holds ones at instance b's active indices, so
    ``project(W) = S @ W`` sums the active rows of ``W`` per instance and
    ``scatter(G) = S.T @ G`` is its adjoint (a dense gradient whose inactive
    rows are exactly zero).  Each output row is reduced independently, so
    results do not depend on batch position.
    """

    def __init__(self, index_lists, num_valid: int):
        lengths = np.fromiter((np.asarray(a).size for a in index_lists),
                              dtype=np.int64, count=len(index_lists))
        if lengths.sum() == 0:
            concat = np.empty(0, dtype=np.int64)
        else:
            concat = np.concatenate([np.asarray(a, dtype=np.int64)
                                     for a in index_lists])
            if concat.min() < 0 or concat.max() >= num_valid:
                raise ValueError(f"active index out of range [0, {num_valid})")
            if concat.size > 1:
                diffs = np.diff(concat)
                seg_start = np.zeros(concat.size, dtype=bool)
                offsets = np.cumsum(lengths[:-1])
                seg_start[offsets[offsets < concat.size]] = True
                if np.any((diffs <= 0) & ~seg_start[1:]):
                    raise ValueError(
                        "active indices must be strictly increasing per instance")
        indptr = np.zeros(lengths.size + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        self.select = scipy.sparse.csr_array(
            (np.ones(concat.size), concat, indptr),
            shape=(lengths.size, num_valid))

    def project(self, weight: np.ndarray) -> np.ndarray:
        return self.select @ weight

    def scatter(self, grad_out: np.ndarray) -> np.ndarray:
        return self.select.T @ grad_out


@dataclass
class ForwardCache:
    """Intermediate activations retained for the backward pass."""

    user_side: BatchSide
    item_side: BatchSide
    pv: np.ndarray                              # head input, (B, head_dim)
    logits: np.ndarray
    rl_user_caches: list[DenseCache] | None = None
    rl_item_caches: list[DenseCache] | None = None
    rl_p: np.ndarray | None = None
    rl_q: np.ndarray | None = None
    ml_a0: np.ndarray | None = None
    ml_caches: list[DenseCache] | None = None


def _dense_stack(tensors: dict, prefix: str, n_layers: int) -> list[DenseLayer]:
    return [DenseLayer(tensors[f"{prefix}.l{k}.w"], tensors[f"{prefix}.l{k}.b"], RELU)
            for k in range(n_layers)]


def _stack_forward(layers: list[DenseLayer], x: np.ndarray):
    caches = []
    for layer in layers:
        x, cache = dense_forward(layer, x)
        caches.append(cache)
    return x, caches


def _stack_backward(layers: list[DenseLayer], caches: list[DenseCache],
                    grad_out: np.ndarray, grads: dict, prefix: str) -> np.ndarray:
    for k in range(len(layers) - 1, -1, -1):
        grad_out, grad_w, grad_b = dense_backward(layers[k], caches[k], grad_out)
        grads[f"{prefix}.l{k}.w"] = grad_w
        grads[f"{prefix}.l{k}.b"] = grad_b
    return grad_out


def forward(params: ModelParams, user_rows, item_cols):
    """Batched forward pass.

    ``user_rows[b]`` / ``item_cols[b]`` are the sorted active-index arrays of
    instance b.  Returns (probabilities, logits, cache), each length B.
    """
    if len(user_rows) != len(item_cols):
        raise ValueError("user_rows and item_cols must have equal length")
    arch, t = params.arch, params.tensors
    user_side = BatchSide(user_rows, arch.num_items)
    item_side = BatchSide(item_cols, arch.num_users)

    cache = ForwardCache(user_side=user_side, item_side=item_side,
                         pv=None, logits=None)
    parts = []
    if arch.has_rl:
        p, cache.rl_user_caches = _stack_forward(
            _dense_stack(t, "rl.user", len(arch.user_hidden)),
            user_side.project(t["rl.user.proj"]))
        q, cache.rl_item_caches = _stack_forward(
            _dense_stack(t, "rl.item", len(arch.item_hidden)),
            item_side.project(t["rl.item.proj"]))
        cache.rl_p, cache.rl_q = p, q
        parts.append(p * q)
    if arch.has_ml:
        a0 = np.hstack([user_side.project(t["ml.user_embed"]),
                        item_side.project(t["ml.item_embed"])])
        cache.ml_a0 = a0
        aY, cache.ml_caches = _stack_forward(
            _dense_stack(t, "ml", len(arch.mlp_hidden)), a0)
        parts.append(aY)
    pv = parts[0] if len(parts) == 1 else np.hstack(parts)
    logits = pv @ t["out"]
    cache.pv = pv
    cache.logits = logits
    return sigmoid(logits), logits, cache


def forward_single(params: ModelParams, user_row, item_col):
    """Forward pass for one (user row, item column) pair."""
    probs, logits, cache = forward(params, [np.asarray(user_row, dtype=np.int64)],
                                   [np.asarray(item_col, dtype=np.int64)])
    return Prediction(probability=float(probs[0]), logit=float(logits[0])), cache


def backward(params: ModelParams, cache: ForwardCache,
             dlogits) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter.

    ``dlogits[b]`` is the loss gradient at instance b's logit.  Projection and
    embedding matrices receive dense gradient arrays whose inactive rows are
    exactly zero.
    """
    arch, t = params.arch, params.tensors
    dlogits = np.atleast_1d(np.asarray(dlogits, dtype=np.float64))
    if dlogits.shape != cache.logits.shape:
        raise ValueError("dlogits does not match the cached batch")
    grads: dict[str, np.ndarray] = {}
    grads["out"] = cache.pv.T @ dlogits
    dpv = dlogits[:, None] * t["out"][None, :]
    offset = 0
    if arch.has_rl:
        d = arch.rl_predictive_dim
        d_rl = dpv[:, :d]
        offset = d
        dp = d_rl * cache.rl_q
        dq = d_rl * cache.rl_p
        da_u = _stack_backward(_dense_stack(t, "rl.user", len(arch.user_hidden)),
                               cache.rl_user_caches, dp, grads, "rl.user")
        grads["rl.user.proj"] = cache.user_side.scatter(da_u)
        da_i = _stack_backward(_dense_stack(t, "rl.item", len(arch.item_hidden)),
                               cache.rl_item_caches, dq, grads, "rl.item")
        grads["rl.item.proj"] = cache.item_side.scatter(da_i)
    if arch.has_ml:
        d_ml = dpv[:, offset:]
        da0 = _stack_backward(_dense_stack(t, "ml", len(arch.mlp_hidden)),
                              cache.ml_caches, d_ml, grads, "ml")
        e = arch.embed_dim
        grads["ml.user_embed"] = cache.user_side.scatter(da0[:, :e])
        grads["ml.item_embed"] = cache.item_side.scatter(da0[:, e:])
    return grads


def scores_for_user(params: ModelParams, user_row, item_cols) -> np.ndarray:
    """Probabilities for one user against many candidate items.

    The user-side pathway is computed once and broadcast over the candidates;
    results match independent single-pair forwards.
    """
    arch, t = params.arch, params.tensors
    user_side = BatchSide([np.asarray(user_row, np.int64)], arch.num_items)
    item_side = BatchSide(item_cols, arch.num_users)
    n = len(item_cols)
    parts = []
    if arch.has_rl:
        p, _ = _stack_forward(_dense_stack(t, "rl.user", len(arch.user_hidden)),
                              user_side.project(t["rl.user.proj"]))
        q, _ = _stack_forward(_dense_stack(t, "rl.item", len(arch.item_hidden)),
                              item_side.project(t["rl.item.proj"]))
        parts.append(p * q)
    if arch.has_ml:
        pu = user_side.project(t["ml.user_embed"])
        qi = item_side.project(t["ml.item_embed"])
        a0 = np.hstack([np.repeat(pu, n, axis=0), qi])
        aY, _ = _stack_forward(_dense_stack(t, "ml", len(arch.mlp_hidden)), a0)
        parts.append(aY)
    pv = parts[0] if len(parts) == 1 else np.hstack(parts)
    return sigmoid(pv @ t["out"])


def fuse_pretrained(rl_params: ModelParams, ml_params: ModelParams,
                    alpha: float = 0.5) -> ModelParams:
    """Assemble a fused model from pre-trained branches.

    Branch bodies are copied; the joint output weight is
    ``[alpha * out_rl ; (1 - alpha) * out_ml]``, so alpha=1 reproduces the
    tower branch exactly and alpha=0 the MLP branch.
    """
    if rl_params.arch.variant != VARIANT_RL or ml_params.arch.variant != VARIANT_ML:
        raise ValueError("fuse_pretrained expects an 'rl' and an 'ml' model")
    ra, ma = rl_params.arch, ml_params.arch
    if (ra.num_users, ra.num_items) != (ma.num_users, ma.num_items):
        raise ValueError("branch models were built for different datasets")
    arch = ArchSpec(variant=VARIANT_FUSED, num_users=ra.num_users,
                    num_items=ra.num_items, user_proj_dim=ra.user_proj_dim,
                    user_hidden=ra.user_hidden, item_proj_dim=ra.item_proj_dim,
                    item_hidden=ra.item_hidden, embed_dim=ma.embed_dim,
                    mlp_hidden=ma.mlp_hidden)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in expected_tensor_shapes(arch).items():
        if name == "out":
            tensors[name] = np.concatenate([alpha * rl_params.tensors["out"],
                                            (1.0 - alpha) * ml_params.tensors["out"]])
        elif name.startswith("rl."):
            tensors[name] = rl_params.tensors[name].copy()
        else:
            tensors[name] = ml_params.tensors[name].copy()
        if tensors[name].shape != shape:
            raise ValueError(f"fused tensor {name} has shape {tensors[name].shape}, "
                             f"expected {shape}")
    return ModelParams(arch=arch, tensors=tensors)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"implicitcf-checkpoint\n"
_CKPT_VERSION = 1


def save_checkpoint(params: ModelParams, path: str | os.PathLike) -> None:
    """Write magic, version, architecture header and raw float64 tensors."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(f"version {_CKPT_VERSION}\n".encode())
        fh.write(b"arch " + json.dumps(params.arch.to_dict(),
                                       sort_keys=True).encode() + b"\n")
        fh.write(f"tensors {len(params.tensors)}\n".encode())
        for name, tensor in params.tensors.items():
            dims = " ".join(str(d) for d in tensor.shape)
            fh.write(f"tensor {name} {tensor.ndim} {dims}\n".encode())
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path: str | os.PathLike) -> ModelParams:
    """Read a checkpoint, validating version and every tensor shape."""
    with open(path, "rb") as fh:
        if fh.readline() != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version_line = fh.readline().decode().split()
        if len(version_line) != 2 or version_line[0] != "version":
            raise CheckpointError(f"{path}: malformed version line")
        if int(version_line[1]) != _CKPT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version_line[1]}")
        arch_line = fh.readline().decode()
        if not arch_line.startswith("arch "):
            raise CheckpointError(f"{path}: missing architecture header")
        arch = ArchSpec.from_dict(json.loads(arch_line[len("arch "):]))
        count_line = fh.readline().decode().split()
        expected = expected_tensor_shapes(arch)
        if len(count_line) != 2 or int(count_line[1]) != len(expected):
            raise CheckpointError(f"{path}: wrong tensor count")
        tensors: dict[str, np.ndarray] = {}
        for exp_name, exp_shape in expected.items():
            header = fh.readline().decode().split()
            if len(header) < 3 or header[0] != "tensor":
                raise CheckpointError(f"{path}: malformed tensor header")
            name = header[1]
            ndim = int(header[2])
            shape = tuple(int(d) for d in header[3:3 + ndim])
            if name != exp_name or shape != exp_shape:
                raise CheckpointError(
                    f"{path}: tensor {name} with shape {shape} does not match "
                    f"expected {exp_name} {exp_shape}")
            n_bytes = 8 * int(np.prod(shape))
            buf = fh.read(n_bytes)
            if len(buf) != n_bytes:
                raise CheckpointError(f"{path}: truncated tensor data for {name}")
            tensors[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return ModelParams(arch=arch, tensors=tensors)
