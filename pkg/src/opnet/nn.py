"""Minimal dense-network engine in plain numpy.

Provides fully-connected networks (forward pass, exact reverse-mode
gradients), the Adam optimizer, MSE loss, a finite-difference gradient
checker, and a small versioned binary container for parameters. All
arithmetic is float64; operations are pure functions that return new
objects, so concurrent use on disjoint data is safe.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh")

PARAMS_MAGIC = b"OPNT1"


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer step receives NaN or infinite gradients."""


@dataclass(frozen=True)
class MlpSpec:
    """Shape and activation of a fully-connected network.

    layer_sizes lists (input dim, hidden dims..., output dim); there is one
    weight layer between consecutive sizes. When final_activation is set the
    activation is applied after the last weight layer as well. final_bias
    controls whether the last weight layer carries a bias vector (hidden
    layers always do).
    """

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"
    final_activation: bool = False
    final_bias: bool = True

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(f"need at least 2 layer sizes, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass
class MlpParams:
    """Weights and biases of one network.

    weights[i] has shape (fan_out, fan_in); biases[i] has shape (fan_out,).
    biases[-1] is None when spec.final_bias is False.
    """

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray | None]

    def validate(self) -> None:
        sizes = self.spec.layer_sizes
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise ValueError("layer count does not match spec")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ValueError(
                    f"layer {i}: weight shape {w.shape}, expected {(sizes[i + 1], sizes[i])}"
                )
            if b is None:
                if i != self.spec.n_layers - 1 or self.spec.final_bias:
                    raise ValueError(f"layer {i}: missing bias")
            elif b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i}: bias shape {b.shape}, expected {(sizes[i + 1],)}")
            if not np.all(np.isfinite(w)) or (b is not None and not np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameter")

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.spec,
            [w.copy() for w in self.weights],
            [None if b is None else b.copy() for b in self.biases],
        )

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (weights and present biases)."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    def parameter_count(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class MlpGrads:
    """Gradient arrays mirroring MlpParams (None where a bias is absent)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray | None]

    def arrays(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            if b is not None:
                out.append(b)
        return out

    @staticmethod
    def zeros_like(params: MlpParams) -> "MlpGrads":
        return MlpGrads(
            [np.zeros_like(w) for w in params.weights],
            [None if b is None else np.zeros_like(b) for b in params.biases],
        )


def mlp_init(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases.

    Deterministic given (spec, seed).
    """
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    weights = []
    biases: list[np.ndarray | None] = []
    for i in range(spec.n_layers):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        last = i == spec.n_layers - 1
        biases.append(None if (last and not spec.final_bias) else np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def _apply_act(z: np.ndarray, name: str) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _as_batch(batch, in_dim: int) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != in_dim:
        raise ValueError(f"batch shape {np.shape(batch)} incompatible with input dim {in_dim}")
    return x


def _forward_cached(params: MlpParams, batch: np.ndarray):
    spec = params.spec
    a = _as_batch(batch, spec.in_dim)
    acts = [a]
    zs = []
    n = spec.n_layers
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T
        if b is not None:
            z += b
        zs.append(z)
        activated = i < n - 1 or spec.final_activation
        a = _apply_act(z, spec.activation) if activated else z
        acts.append(a)
    return a, acts, zs


def mlp_forward(params: MlpParams, batch) -> np.ndarray:
    """Row-wise evaluation of the network on a batch (n, in_dim) -> (n, out_dim)."""
    out, _, _ = _forward_cached(params, batch)
    return out


def _backward_from_cache(params, acts, zs, upstream: np.ndarray):
    spec = params.spec
    n = spec.n_layers
    d_weights: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    d_biases: list[np.ndarray | None] = [None] * n
    grad = upstream
    for i in range(n - 1, -1, -1):
        activated = i < n - 1 or spec.final_activation
        if not activated:
            dz = grad
        elif spec.activation == "relu":
            # float * bool casts on the fly; relu' at 0 stays 0
            dz = grad * (zs[i] > 0.0)
        else:
            # same per-element arithmetic as grad * (1 - a*a), without the
            # two extra full-size temporaries (grad may alias caller data,
            # so the in-place work happens in the fresh buffer)
            dz = np.multiply(acts[i + 1], acts[i + 1])
            np.subtract(1.0, dz, out=dz)
            np.multiply(grad, dz, out=dz)
        d_weights[i] = dz.T @ acts[i]
        if params.biases[i] is not None:
            d_biases[i] = dz.sum(axis=0)
        grad = dz @ params.weights[i]
    return MlpGrads(d_weights, d_biases), grad


def mlp_backward(params: MlpParams, batch, upstream_grad) -> tuple[MlpGrads, np.ndarray]:
    """Exact reverse-mode gradients of mlp_forward under an upstream gradient.

    Returns (parameter gradients, gradient w.r.t. the input batch).
    """
    out, acts, zs = _forward_cached(params, batch)
    upstream = np.asarray(upstream_grad, dtype=np.float64)
    if upstream.ndim == 1:
        upstream = upstream[None, :]
    if upstream.shape != out.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {out.shape}")
    return _backward_from_cache(params, acts, zs, upstream)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam accumulators over a flat list of parameter arrays."""

    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(arrays: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step_arrays(state: AdamState, values: list[np.ndarray],
                     grads: list[np.ndarray]) -> tuple[AdamState, list[np.ndarray]]:
    """One bias-corrected Adam step on a flat list of arrays."""
    if len(values) != len(state.m) or len(grads) != len(values):
        raise ValueError("values/grads do not match optimizer state")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                f"non-finite gradient in array {i} (shape {g.shape}, "
                f"max |g| over finite entries "
                f"{np.max(np.abs(g[np.isfinite(g)])) if np.any(np.isfinite(g)) else 'n/a'})"
            )
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_m, new_v, new_vals = [], [], []
    for val, g, m, v in zip(values, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        new_m.append(m)
        new_v.append(v)
        new_vals.append(val - update)
    return AdamState(t, new_m, new_v, state.lr, b1, b2, state.eps), new_vals


def adam_step(state: AdamState, params: MlpParams,
              grads: MlpGrads) -> tuple[AdamState, MlpParams]:
    """Adam step on a whole MlpParams; returns updated (state, params)."""
    state, new_arrays = adam_step_arrays(state, params.arrays(), grads.arrays())
    out = params.copy()
    it = iter(new_arrays)
    for i in range(len(out.weights)):
        out.weights[i] = next(it)
        if out.biases[i] is not None:
            out.biases[i] = next(it)
    return state, out


# ---------------------------------------------------------------------------
# Loss and verification
# ---------------------------------------------------------------------------


def mse(pred, target) -> float:
    """Mean squared error between two equal-length vectors."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("mse of empty vectors is undefined")
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    d = p - t
    return float(d @ d / d.size)


def gradient_check(params: MlpParams, loss_closure, eps: float = 1e-5) -> float:
    """Compare analytic gradients with central finite differences.

    loss_closure(params) must return (loss, MlpGrads). Returns the maximum
    over all parameters of |analytic - fd| / max(1, |analytic|).
    """
    if eps <= 0:
        raise ValueError("finite-difference step must be positive")
    work = params.copy()
    _, grads = loss_closure(work)
    max_rel = 0.0
    for val, g in zip(work.arrays(), grads.arrays()):
        flat_v = val.reshape(-1)
        flat_g = g.reshape(-1)
        for j in range(flat_v.size):
            orig = flat_v[j]
            flat_v[j] = orig + eps
            lp = loss_closure(work)[0]
            flat_v[j] = orig - eps
            lm = loss_closure(work)[0]
            flat_v[j] = orig
            fd = (lp - lm) / (2.0 * eps)
            rel = abs(flat_g[j] - fd) / max(1.0, abs(flat_g[j]))
            if rel > max_rel:
                max_rel = rel
    return max_rel


# ---------------------------------------------------------------------------
# Serialization: "OPNT1" container
# ---------------------------------------------------------------------------
#
# Layout (all little-endian):
#   magic "OPNT1"
#   uint32 number of layer sizes, then that many uint32 sizes
#   uint8 activation (0=relu, 1=tanh), uint8 final_activation, uint8 final_bias
#   per weight layer: W as float64 row-major (fan_out x fan_in),
#                     then bias float64 (fan_out,) unless absent


def save_params(params: MlpParams, path) -> None:
    params.validate()
    with open(path, "wb") as f:
        f.write(params_to_bytes(params))


def params_to_bytes(params: MlpParams) -> bytes:
    spec = params.spec
    chunks = [PARAMS_MAGIC]
    chunks.append(struct.pack("<I", len(spec.layer_sizes)))
    chunks.append(struct.pack(f"<{len(spec.layer_sizes)}I", *spec.layer_sizes))
    chunks.append(
        struct.pack(
            "<BBB",
            ACTIVATIONS.index(spec.activation),
            int(spec.final_activation),
            int(spec.final_bias),
        )
    )
    for w, b in zip(params.weights, params.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        if b is not None:
            chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(chunks)


def load_params(path) -> MlpParams:
    with open(path, "rb") as f:
        return params_from_bytes(f.read())


def params_from_bytes(blob: bytes) -> MlpParams:
    if blob[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise ValueError("not an OPNT1 parameter container")
    off = len(PARAMS_MAGIC)

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError("truncated OPNT1 container")
        out = blob[off : off + n]
        off += n
        return out

    (n_sizes,) = struct.unpack("<I", take(4))
    if n_sizes < 2 or n_sizes > 10_000:
        raise ValueError(f"implausible layer count {n_sizes}")
    sizes = struct.unpack(f"<{n_sizes}I", take(4 * n_sizes))
    act_code, final_act, final_bias = struct.unpack("<BBB", take(3))
    if act_code >= len(ACTIVATIONS):
        raise ValueError(f"unknown activation code {act_code}")
    spec = MlpSpec(sizes, ACTIVATIONS[act_code], bool(final_act), bool(final_bias))
    weights, biases = [], []
    for i in range(spec.n_layers):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        w = np.frombuffer(take(8 * fan_in * fan_out), dtype="<f8").reshape(fan_out, fan_in)
        weights.append(w.astype(np.float64))
        last = i == spec.n_layers - 1
        if last and not spec.final_bias:
            biases.append(None)
        else:
            biases.append(np.frombuffer(take(8 * fan_out), dtype="<f8").astype(np.float64))
    if off != len(blob):
        raise ValueError(f"{len(blob) - off} trailing bytes in OPNT1 container")
    params = MlpParams(spec, weights, biases)
    params.validate()
    return params
