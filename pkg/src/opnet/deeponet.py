"""Branch-trunk operator networks and the concatenation baseline.

A model predicts G(u)(y) as sum_k b_k(u) t_k(y) + b0: the branch maps the m
sensor readings of u to coefficients b, the trunk maps the query location y
to basis values t (activation applied on its last layer too), and the merge
is the dot product plus an optional scalar offset.

Two variants share that merge. The stacked form keeps p independent
scalar-output branch networks; the unstacked form uses one p-output branch.
stacked_to_unstacked_embed converts the former into the latter exactly via
block-diagonal weights. In the bias-free form both the branch final-layer
bias and b0 are absent; the flags toggle them together elsewhere.

Gradients are exact reverse-mode through the merge and both sub-networks,
with a factorized path for datasets where many records share an input
function or query point. FnnBaseline is a single dense network on the
concatenated (sensor values, y) vector.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn

MODEL_MAGIC = b"OPMD1"

VARIANTS = ("stacked", "unstacked")


@dataclass
class DeepONetModel:
    variant: str
    m: int
    dim_y: int
    p: int
    trunk: nn.MlpParams
    branches: list[nn.MlpParams]  # p scalar-output nets, or one p-output net
    branch_bias_enabled: bool = True
    b0_enabled: bool = True
    b0: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.trunk.spec.in_dim != self.dim_y:
            raise ValueError(
                f"trunk expects {self.trunk.spec.in_dim}-d queries, model says {self.dim_y}"
            )
        if self.trunk.spec.out_dim != self.p:
            raise ValueError(f"trunk outputs {self.trunk.spec.out_dim}, need p={self.p}")
        if not self.trunk.spec.final_activation:
            raise ValueError("trunk must apply an activation on its last layer")
        if self.variant == "stacked":
            if len(self.branches) != self.p:
                raise ValueError(f"{len(self.branches)} branch nets for p={self.p}")
            out_dims = {b.spec.out_dim for b in self.branches}
            if out_dims != {1}:
                raise ValueError(f"stacked branches must be scalar-output, got {out_dims}")
        else:
            if len(self.branches) != 1:
                raise ValueError("unstacked variant has exactly one branch net")
            if self.branches[0].spec.out_dim != self.p:
                raise ValueError(
                    f"branch outputs {self.branches[0].spec.out_dim}, need p={self.p}"
                )
        for b in self.branches:
            if b.spec.in_dim != self.m:
                raise ValueError(f"branch expects {b.spec.in_dim} sensors, model says {self.m}")
            if b.spec.final_bias != self.branch_bias_enabled:
                raise ValueError("branch final-bias flag disagrees with model flag")
            if b.spec.final_activation:
                raise ValueError("branch final layer must stay linear")

    def copy(self) -> "DeepONetModel":
        return DeepONetModel(
            self.variant,
            self.m,
            self.dim_y,
            self.p,
            self.trunk.copy(),
            [b.copy() for b in self.branches],
            self.branch_bias_enabled,
            self.b0_enabled,
            self.b0,
        )

    def parameter_count(self) -> int:
        total = self.trunk.parameter_count() + sum(b.parameter_count() for b in self.branches)
        return total + (1 if self.b0_enabled else 0)


@dataclass
class DeepONetGrads:
    trunk: nn.MlpGrads
    branches: list[nn.MlpGrads]
    b0: float


def build_deeponet(variant: str, m: int, dim_y: int, seed,
                   branch_hidden: tuple[int, ...] = (40,),
                   trunk_hidden: tuple[int, ...] = (40, 40, 40),
                   branch_activation: str = "relu",
                   trunk_activation: str = "tanh",
                   use_bias: bool = True) -> DeepONetModel:
    """Initialize a model; p equals the last trunk width.

    Hidden tuples list layer widths after the input: the default trunk
    (40, 40, 40) is depth 3, and the branch (40,) is depth 2 counting its
    output layer. use_bias toggles the branch final-layer bias and b0
    together; hidden biases always exist.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if not trunk_hidden:
        raise ValueError("trunk needs at least one layer")
    p = trunk_hidden[-1]
    trunk_spec = nn.MlpSpec((dim_y, *trunk_hidden), trunk_activation, final_activation=True)
    trunk = nn.mlp_init(trunk_spec, _child_seed(seed, 0))
    if variant == "stacked":
        spec = nn.MlpSpec((m, *branch_hidden, 1), branch_activation, final_bias=use_bias)
        branches = [nn.mlp_init(spec, _child_seed(seed, 1 + k)) for k in range(p)]
    else:
        spec = nn.MlpSpec((m, *branch_hidden, p), branch_activation, final_bias=use_bias)
        branches = [nn.mlp_init(spec, _child_seed(seed, 1))]
    return DeepONetModel(
        variant, m, dim_y, p, trunk, branches,
        branch_bias_enabled=use_bias, b0_enabled=use_bias, b0=0.0,
    )


def _child_seed(seed, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(index,))


def merge_outputs(branch_out: np.ndarray, trunk_out: np.ndarray, b0: float) -> np.ndarray:
    """Row-wise dot product of coefficients and basis values, plus offset."""
    if branch_out.shape != trunk_out.shape:
        raise ValueError(f"branch {branch_out.shape} vs trunk {trunk_out.shape}")
    return np.einsum("ij,ij->i", branch_out, trunk_out) + b0


def branch_outputs(model: DeepONetModel, u_batch: np.ndarray) -> np.ndarray:
    """Coefficients b for a batch of sensor vectors, shape (n, p)."""
    if model.variant == "unstacked":
        return nn.mlp_forward(model.branches[0], u_batch)
    cols = [nn.mlp_forward(b, u_batch)[:, 0] for b in model.branches]
    return np.column_stack(cols)


def trunk_outputs(model: DeepONetModel, y_batch: np.ndarray) -> np.ndarray:
    """Basis values t for a batch of query locations, shape (n, p)."""
    return nn.mlp_forward(model.trunk, y_batch)


def _as_2d(arr, dim: int, what: str) -> np.ndarray:
    out = np.atleast_1d(np.asarray(arr, dtype=np.float64))
    if out.ndim == 1:
        out = out[None, :] if out.size == dim else out[:, None]
    if out.ndim != 2 or out.shape[1] != dim:
        raise ValueError(f"{what} shape {np.shape(arr)} incompatible with dim {dim}")
    return out


def deeponet_forward(model: DeepONetModel, u_sensors, y):
    """Predicted operator values; scalar for a single (u, y), else (n,)."""
    single = np.asarray(u_sensors).ndim == 1 and np.asarray(y, dtype=np.float64).ndim <= 1
    U = _as_2d(u_sensors, model.m, "sensor batch")
    Y = _as_2d(y, model.dim_y, "query batch")
    if single and U.shape[0] == 1 and Y.shape[0] != 1:
        U = np.repeat(U, Y.shape[0], axis=0)
    if U.shape[0] != Y.shape[0]:
        raise ValueError(f"{U.shape[0]} sensor rows vs {Y.shape[0]} query rows")
    out = merge_outputs(branch_outputs(model, U), trunk_outputs(model, Y),
                        model.b0 if model.b0_enabled else 0.0)
    return float(out[0]) if single and out.size == 1 else out


def deeponet_gradients(model: DeepONetModel, u_batch, y_batch,
                       targets) -> tuple[DeepONetGrads, float, np.ndarray]:
    """MSE loss gradients over a batch of records.

    Returns (grads, loss, predictions). Exact reverse-mode: the merge
    contributes dB = g t and dT = g b per record with g the MSE upstream.
    """
    U = _as_2d(u_batch, model.m, "sensor batch")
    Y = _as_2d(y_batch, model.dim_y, "query batch")
    t = np.asarray(targets, dtype=np.float64).ravel()
    n = t.size
    if n == 0:
        raise ValueError("empty batch")
    if U.shape[0] != n or Y.shape[0] != n:
        raise ValueError(f"batch sizes differ: {U.shape[0]} u rows, {Y.shape[0]} y rows, "
                         f"{n} targets")
    iu = iy = np.arange(n)
    return _gradients_factorized(model, U, Y, iu, iy, t)


def deeponet_gradients_indexed(model: DeepONetModel, u_unique, y_unique, iu, iy,
                               targets) -> tuple[DeepONetGrads, float, np.ndarray]:
    """Gradients when records share inputs: record r pairs u_unique[iu[r]]
    with y_unique[iy[r]].

    Evaluates each distinct sensor vector and query once; gradients are
    identical to the per-record route up to summation order.
    """
    U = _as_2d(u_unique, model.m, "sensor batch")
    Y = _as_2d(y_unique, model.dim_y, "query batch")
    iu = np.asarray(iu, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    t = np.asarray(targets, dtype=np.float64).ravel()
    if iu.shape != t.shape or iy.shape != t.shape:
        raise ValueError("index arrays and targets must have equal length")
    if t.size == 0:
        raise ValueError("empty batch")
    if iu.min() < 0 or iu.max() >= U.shape[0] or iy.min() < 0 or iy.max() >= Y.shape[0]:
        raise ValueError("record index out of range")
    return _gradients_factorized(model, U, Y, iu, iy, t)


def _gradients_factorized(model, U, Y, iu, iy, targets):
    n = targets.size
    n_u, n_y = U.shape[0], Y.shape[0]
    # forward with caches
    t_out, t_acts, t_zs = nn._forward_cached(model.trunk, Y)
    if model.variant == "unstacked":
        b_out, b_acts, b_zs = nn._forward_cached(model.branches[0], U)
        branch_caches = [(b_acts, b_zs)]
    else:
        cols, branch_caches = [], []
        for net in model.branches:
            out_k, acts_k, zs_k = nn._forward_cached(net, U)
            cols.append(out_k[:, 0])
            branch_caches.append((acts_k, zs_k))
        b_out = np.column_stack(cols)
    b0 = model.b0 if model.b0_enabled else 0.0
    if n_u == n_y == n and np.array_equal(iu, iy):
        pred = np.einsum("ij,ij->i", b_out, t_out) + b0
        g = 2.0 * (pred - targets) / n
        d_b = g[:, None] * t_out
        d_t = g[:, None] * b_out
    elif n_y == n and np.array_equal(iy, np.arange(n)):
        # one query row per record (typical sampled-query training set):
        # the trunk upstream is direct and only the branch needs reduction
        b_rows = b_out[iu]
        pred = np.einsum("ij,ij->i", b_rows, t_out) + b0
        g = 2.0 * (pred - targets) / n
        d_t = g[:, None] * b_rows
        g_t = g[:, None] * t_out
        d_b = np.empty_like(b_out)
        for k in range(b_out.shape[1]):
            d_b[:, k] = np.bincount(iu, weights=g_t[:, k], minlength=n_u)
    else:
        cross = t_out @ b_out.T  # (n_y, n_u) all pairings, records gather from it
        pred = cross[iy, iu] + b0
        g = 2.0 * (pred - targets) / n
        # scatter per-record upstream into the (y, u) incidence table
        s = np.bincount(iy * n_u + iu, weights=g, minlength=n_y * n_u).reshape(n_y, n_u)
        d_t = s @ b_out
        d_b = s.T @ t_out
    loss = float(np.mean((pred - targets) ** 2))
    trunk_grads, _ = nn._backward_from_cache(model.trunk, t_acts, t_zs, d_t)
    if model.variant == "unstacked":
        acts, zs = branch_caches[0]
        branch_grads = [nn._backward_from_cache(model.branches[0], acts, zs, d_b)[0]]
    else:
        branch_grads = []
        for k, net in enumerate(model.branches):
            acts, zs = branch_caches[k]
            branch_grads.append(nn._backward_from_cache(net, acts, zs, d_b[:, k : k + 1])[0])
    b0_grad = float(np.sum(g)) if model.b0_enabled else 0.0
    return DeepONetGrads(trunk_grads, branch_grads, b0_grad), loss, pred


def model_arrays(model: DeepONetModel) -> list[np.ndarray]:
    """Trainable arrays in fixed order: trunk, branches, then b0 if enabled."""
    arrays = model.trunk.arrays()
    for b in model.branches:
        arrays = arrays + b.arrays()
    if model.b0_enabled:
        arrays = arrays + [np.array([model.b0])]
    return arrays


def grad_arrays(model: DeepONetModel, grads: DeepONetGrads) -> list[np.ndarray]:
    arrays = grads.trunk.arrays()
    for g in grads.branches:
        arrays = arrays + g.arrays()
    if model.b0_enabled:
        arrays = arrays + [np.array([grads.b0])]
    return arrays


def apply_arrays(model: DeepONetModel, arrays: list[np.ndarray]) -> DeepONetModel:
    """Rebuild a model from the flat array list produced by model_arrays."""
    out = model.copy()
    it = iter(arrays)

    def fill(params: nn.MlpParams):
        for i in range(len(params.weights)):
            params.weights[i] = next(it)
            if params.biases[i] is not None:
                params.biases[i] = next(it)

    fill(out.trunk)
    for b in out.branches:
        fill(b)
    if out.b0_enabled:
        out.b0 = float(next(it)[0])
    return out


def stacked_to_unstacked_embed(model: DeepONetModel) -> DeepONetModel:
    """Merge p scalar-output branches into one p-output branch exactly.

    Hidden layers become block-diagonal (width p times the original), the
    output layer keeps each branch's row in its own column block, so the
    forward map is unchanged up to roundoff.
    """
    if model.variant != "stacked":
        raise ValueError("embedding applies to stacked models")
    specs = {b.spec for b in model.branches}
    if len(specs) != 1:
        raise ValueError(f"branches must share one shape, got {len(specs)}")
    spec = model.branches[0].spec
    p = model.p
    sizes = spec.layer_sizes
    merged_sizes = (sizes[0],) + tuple(p * s for s in sizes[1:-1]) + (p,)
    merged_spec = nn.MlpSpec(merged_sizes, spec.activation, spec.final_activation,
                             spec.final_bias)
    weights, biases = [], []
    n_layers = spec.n_layers
    for i in range(n_layers):
        first, last = i == 0, i == n_layers - 1
        blocks_w = [b.weights[i] for b in model.branches]
        if first:
            # shared input: each branch's rows become their own output block
            w = np.vstack(blocks_w)
        elif last:
            w = np.zeros((p, p * sizes[i]))
            for k, wk in enumerate(blocks_w):
                w[k, k * sizes[i] : (k + 1) * sizes[i]] = wk[0]
        else:
            w = np.zeros((p * sizes[i + 1], p * sizes[i]))
            for k, wk in enumerate(blocks_w):
                w[k * sizes[i + 1] : (k + 1) * sizes[i + 1],
                  k * sizes[i] : (k + 1) * sizes[i]] = wk
        weights.append(w)
        if model.branches[0].biases[i] is None:
            biases.append(None)
        else:
            biases.append(np.concatenate([b.biases[i] for b in model.branches]))
    merged = nn.MlpParams(merged_spec, weights, biases)
    merged.validate()
    return DeepONetModel(
        "unstacked", model.m, model.dim_y, p, model.trunk.copy(), [merged],
        model.branch_bias_enabled, model.b0_enabled, model.b0,
    )


# ---------------------------------------------------------------------------
# Concatenation baseline
# ---------------------------------------------------------------------------


@dataclass
class FnnBaseline:
    """Plain dense network on the concatenated (u sensors, y) vector."""

    m: int
    dim_y: int
    net: nn.MlpParams

    def __post_init__(self):
        if self.net.spec.in_dim != self.m + self.dim_y:
            raise ValueError(
                f"net expects {self.net.spec.in_dim} inputs, "
                f"m + dim_y = {self.m + self.dim_y}"
            )
        if self.net.spec.out_dim != 1:
            raise ValueError("baseline output must be scalar")

    def parameter_count(self) -> int:
        return self.net.parameter_count()

    def copy(self) -> "FnnBaseline":
        return FnnBaseline(self.m, self.dim_y, self.net.copy())


def build_fnn(m: int, dim_y: int, hidden: tuple[int, ...], seed,
              activation: str = "relu") -> FnnBaseline:
    spec = nn.MlpSpec((m + dim_y, *hidden, 1), activation)
    return FnnBaseline(m, dim_y, nn.mlp_init(spec, _child_seed(seed, 0)))


def fnn_forward(baseline: FnnBaseline, u_sensors, y):
    single = np.asarray(u_sensors).ndim == 1
    U = _as_2d(u_sensors, baseline.m, "sensor batch")
    Y = _as_2d(y, baseline.dim_y, "query batch")
    if U.shape[0] != Y.shape[0]:
        raise ValueError(f"{U.shape[0]} sensor rows vs {Y.shape[0]} query rows")
    out = nn.mlp_forward(baseline.net, np.hstack([U, Y]))[:, 0]
    return float(out[0]) if single and out.size == 1 else out


def fnn_gradients(baseline: FnnBaseline, u_batch, y_batch,
                  targets) -> tuple[nn.MlpGrads, float, np.ndarray]:
    """MSE gradients for the baseline; returns (grads, loss, predictions)."""
    U = _as_2d(u_batch, baseline.m, "sensor batch")
    Y = _as_2d(y_batch, baseline.dim_y, "query batch")
    t = np.asarray(targets, dtype=np.float64).ravel()
    if t.size == 0:
        raise ValueError("empty batch")
    x = np.hstack([U, Y])
    out, acts, zs = nn._forward_cached(baseline.net, x)
    pred = out[:, 0]
    g = (2.0 * (pred - t) / t.size)[:, None]
    grads, _ = nn._backward_from_cache(baseline.net, acts, zs, g)
    return grads, float(np.mean((pred - t) ** 2)), pred


# ---------------------------------------------------------------------------
# Checkpoints: "OPMD1" wrapper around OPNT1 sub-network blocks
# ---------------------------------------------------------------------------
#
# Layout (little-endian):
#   magic "OPMD1"
#   uint8 variant (0 stacked, 1 unstacked)
#   uint32 m, uint32 dim_y, uint32 p
#   uint8 branch_bias_enabled, uint8 b0_enabled, float64 b0
#   uint32 sub-network count; per network uint64 length + OPNT1 blob
#   (trunk first, then branches in order)


def save_model(model: DeepONetModel, path) -> None:
    model.validate()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<B", VARIANTS.index(model.variant)))
        f.write(struct.pack("<III", model.m, model.dim_y, model.p))
        f.write(struct.pack("<BBd", int(model.branch_bias_enabled),
                            int(model.b0_enabled), model.b0))
        nets = [model.trunk] + model.branches
        f.write(struct.pack("<I", len(nets)))
        for net in nets:
            blob = nn.params_to_bytes(net)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)


def load_model(path) -> DeepONetModel:
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError("truncated OPMD1 container")
        out = blob[off : off + n]
        off += n
        return out

    if take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise ValueError("not an OPMD1 model container")
    (variant_code,) = struct.unpack("<B", take(1))
    if variant_code >= len(VARIANTS):
        raise ValueError(f"unknown variant code {variant_code}")
    m, dim_y, p = struct.unpack("<III", take(12))
    bb, b0e, b0 = struct.unpack("<BBd", take(10))
    (count,) = struct.unpack("<I", take(4))
    nets = []
    for _ in range(count):
        (length,) = struct.unpack("<Q", take(8))
        nets.append(nn.params_from_bytes(take(length)))
    if off != len(blob):
        raise ValueError(f"{len(blob) - off} trailing bytes in OPMD1 container")
    if not nets:
        raise ValueError("model container holds no networks")
    return DeepONetModel(
        VARIANTS[variant_code], m, dim_y, p, nets[0], nets[1:],
        branch_bias_enabled=bool(bb), b0_enabled=bool(b0e), b0=b0,
    )
