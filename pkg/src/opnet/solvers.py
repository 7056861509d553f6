"""Reference solvers that define the target operators.

ODE side: an adaptive Dormand-Prince 5(4) integrator with PI step-size
control and cubic Hermite dense output, plus an exact quadrature routine for
the antiderivative operator that serves as an independent accuracy oracle.
Three systems are built in: the plain antiderivative s' = u, a scalar
nonlinear system s' = -s^2 + u whose solutions can blow up, and a forced
pendulum (s1' = s2, s2' = -k sin s1 + u).

PDE side: s_t = D s_xx + k s^2 + u(x) with zero initial and boundary
conditions on the unit square, discretized by Crank-Nicolson in time and
second-order central differences in space; the weak quadratic reaction is
lagged one time level (a single Picard sweep per step).

Blow-ups are never exceptions: trajectories carry a `diverged` flag so the
dataset builder can drop them and report counts.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .function_spaces import InputFunction

ODE_NAMES = ("antiderivative", "riccati", "pendulum")

# Dormand-Prince 5(4) tableau. Row 7 of A equals the 5th-order weights
# (first-same-as-last), so each accepted step costs six fresh evaluations.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
        [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
    ]
)
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_DP_E = _DP_B5 - _DP_B4


@dataclass(frozen=True)
class OdeSystem:
    """One of the built-in first-order systems s' = g(s, u(x), x) on [a, b]."""

    name: str
    dim: int
    s0: tuple[float, ...]
    domain: tuple[float, float]
    k: float = 0.0

    def __post_init__(self):
        if self.name not in ODE_NAMES:
            raise ValueError(f"unknown system {self.name!r}")
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")
        if len(self.s0) != self.dim or not np.all(np.isfinite(self.s0)):
            raise ValueError(f"bad initial state {self.s0}")
        a, b = self.domain
        if not a < b:
            raise ValueError(f"empty domain [{a}, {b}]")

    def rhs(self, x: float, s: np.ndarray, u_val: float) -> np.ndarray:
        if self.name == "antiderivative":
            return np.array([u_val])
        if self.name == "riccati":
            return np.array([u_val - s[0] * s[0]])
        return np.array([s[1], u_val - self.k * np.sin(s[0])])

    def with_initial_state(self, s0) -> "OdeSystem":
        return dataclasses.replace(self, s0=tuple(float(v) for v in s0))


def antiderivative_system(domain: tuple[float, float] = (0.0, 1.0)) -> OdeSystem:
    return OdeSystem("antiderivative", 1, (0.0,), domain)


def riccati_system(domain: tuple[float, float] = (0.0, 1.0)) -> OdeSystem:
    return OdeSystem("riccati", 1, (0.0,), domain)


def pendulum_system(k: float = 1.0, horizon: float = 1.0) -> OdeSystem:
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    return OdeSystem("pendulum", 2, (0.0, 0.0), (0.0, float(horizon)), k=float(k))


@dataclass
class OdeTrajectory:
    """Accepted integration nodes plus cubic Hermite interpolation between them."""

    system: OdeSystem
    xs: np.ndarray  # (n,) accepted step endpoints, increasing
    ys: np.ndarray  # (n, dim) states at the nodes
    fs: np.ndarray  # (n, dim) derivatives at the nodes
    diverged: bool = False
    reason: str = ""
    n_accepted: int = 0
    n_rejected: int = 0

    @property
    def span(self) -> tuple[float, float]:
        return float(self.xs[0]), float(self.xs[-1])

    def eval(self, x) -> np.ndarray:
        """Dense-output states at x (scalar or array); shape (..., dim)."""
        xq = np.asarray(x, dtype=np.float64)
        lo, hi = self.span
        if np.any(xq < lo - 1e-12) or np.any(xq > hi + 1e-12):
            raise ValueError(f"query outside integrated span [{lo}, {hi}]")
        flat = np.atleast_1d(np.clip(xq, lo, hi))
        seg = np.clip(np.searchsorted(self.xs, flat, side="right") - 1, 0, len(self.xs) - 2)
        x0, x1 = self.xs[seg], self.xs[seg + 1]
        h = (x1 - x0)[:, None]
        t = ((flat - x0) / (x1 - x0))[:, None]
        y0, y1 = self.ys[seg], self.ys[seg + 1]
        f0, f1 = self.fs[seg], self.fs[seg + 1]
        t2, t3 = t * t, t * t * t
        out = (
            (2 * t3 - 3 * t2 + 1) * y0
            + (t3 - 2 * t2 + t) * h * f0
            + (-2 * t3 + 3 * t2) * y1
            + (t3 - t2) * h * f1
        )
        return out[0] if xq.ndim == 0 else out.reshape(xq.shape + (self.system.dim,))

    def component(self, index: int = 0):
        """Scalar dense output for one state component."""
        return lambda x: self.eval(x)[..., index]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["x"] + [f"s{i + 1}" for i in range(self.system.dim)])
            for xi, yi in zip(self.xs, self.ys):
                writer.writerow([repr(float(xi))] + [repr(float(v)) for v in yi])


def _initial_step(f, a: float, y0: np.ndarray, f0: np.ndarray, span: float,
                  rtol: float, atol: float) -> float:
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = f(a + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def solve_ode_rk45(system: OdeSystem, u: InputFunction, rtol: float = 1e-8,
                   atol: float = 1e-10, max_steps: int = 200_000,
                   blowup_threshold: float = 1e6) -> OdeTrajectory:
    """Adaptive Dormand-Prince 5(4) integration of system forced by u.

    Deterministic. Blow-ups (step underflow, state beyond blowup_threshold,
    step budget exhausted) return a trajectory flagged diverged covering the
    part of the domain that was integrated.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    a, b = system.domain
    ua, ub = u.domain
    if ua > a + 1e-12 or ub < b - 1e-12:
        raise ValueError(f"input defined on [{ua}, {ub}] does not cover [{a}, {b}]")
    ux, uv = u.x, u.values

    def f(x: float, s: np.ndarray) -> np.ndarray:
        return system.rhs(x, s, np.interp(x, ux, uv))

    span = b - a
    x = a
    y = np.array(system.s0, dtype=np.float64)
    k1 = f(x, y)
    h = _initial_step(f, a, y, k1, span, rtol, atol)
    xs, ys, fs = [x], [y], [k1]
    stages = np.empty((7, system.dim))
    accepted = rejected = 0
    err_prev = 1.0
    diverged, reason = False, ""
    # PI controller exponents for a 4th-order error estimate
    alpha, beta, safety = 0.7 / 5.0, 0.4 / 5.0, 0.9
    while x < b - 1e-14 * span:
        if accepted + rejected >= max_steps:
            diverged, reason = True, f"step budget {max_steps} exhausted at x={x:.6g}"
            break
        if h < 1e-14 * span:
            diverged, reason = True, f"step underflow at x={x:.6g}"
            break
        h = min(h, b - x)
        stages[0] = k1
        for i in range(1, 6):
            yi = y + h * (_DP_A[i, :i] @ stages[:i])
            stages[i] = f(x + _DP_C[i] * h, yi)
        y_new = y + h * (_DP_B5[:6] @ stages[:6])
        if not np.all(np.isfinite(y_new)) or np.max(np.abs(y_new)) > blowup_threshold:
            diverged, reason = True, f"state blow-up near x={x:.6g}"
            break
        k_new = f(x + h, y_new)
        stages[6] = k_new
        err_vec = h * (_DP_E @ stages)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if err <= 1.0:
            x += h
            y, k1 = y_new, k_new
            xs.append(x)
            ys.append(y)
            fs.append(k1)
            accepted += 1
            if err == 0.0:
                factor = 10.0
            else:
                factor = safety * err ** (-alpha) * err_prev**beta
            h *= min(10.0, max(0.2, factor))
            err_prev = err if err > 1e-10 else 1e-10
        else:
            rejected += 1
            h *= min(1.0, max(0.2, safety * err ** (-0.2)))
    return OdeTrajectory(
        system,
        np.array(xs),
        np.array(ys),
        np.array(fs),
        diverged=diverged,
        reason=reason,
        n_accepted=accepted,
        n_rejected=rejected,
    )


def antiderivative_exact(u: InputFunction, x):
    """Integral of u from the left domain endpoint to x (scalar or array).

    Exact for the piecewise-linear fine-grid representation of u (composite
    trapezoid over whole cells plus the exact partial cell), which is the
    same function the ODE integrator sees. Independent of solve_ode_rk45.
    """
    xq = np.asarray(x, dtype=np.float64)
    a, b = u.domain
    if np.any(xq < a - 1e-12) or np.any(xq > b + 1e-12):
        raise ValueError(f"query outside domain [{a}, {b}]")
    flat = np.atleast_1d(np.clip(xq, a, b))
    ux, uv = u.x, u.values
    cell = 0.5 * (uv[1:] + uv[:-1]) * np.diff(ux)
    cum = np.concatenate([[0.0], np.cumsum(cell)])
    j = np.clip(np.searchsorted(ux, flat, side="right") - 1, 0, ux.size - 2)
    dx = flat - ux[j]
    slope = (uv[j + 1] - uv[j]) / (ux[j + 1] - ux[j])
    partial = uv[j] * dx + 0.5 * slope * dx * dx
    out = cum[j] + partial
    return float(out[0]) if xq.ndim == 0 else out.reshape(xq.shape)


def pendulum_solve(u: InputFunction, k: float, horizon: float, rtol: float = 1e-8,
                   atol: float = 1e-10) -> OdeTrajectory:
    """Forced pendulum from rest on [0, horizon]."""
    return solve_ode_rk45(pendulum_system(k, horizon), u, rtol=rtol, atol=atol)


# ---------------------------------------------------------------------------
# Diffusion-reaction PDE
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PdeConfig:
    """Grid and coefficients for s_t = D s_xx + k s^2 + source on [0,1]^2."""

    diffusion: float = 0.01
    reaction: float = 0.01
    nx: int = 100
    nt: int = 100
    blowup_threshold: float = 1e3

    def __post_init__(self):
        if self.diffusion <= 0:
            raise ValueError(f"diffusion coefficient must be positive, got {self.diffusion}")
        if self.nx < 3 or self.nt < 3:
            raise ValueError(f"grid sizes must be at least 3, got {self.nx}x{self.nt}")


@dataclass
class PdeTrajectory:
    """Solution values on the full space-time grid, s[i, j] = s(x_j, t_i)."""

    x: np.ndarray
    t: np.ndarray
    s: np.ndarray
    diverged: bool = False
    reason: str = ""

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["x", "t", "s"])
            for i, ti in enumerate(self.t):
                for j, xj in enumerate(self.x):
                    writer.writerow([repr(float(xj)), repr(float(ti)), repr(float(self.s[i, j]))])


def _crank_nicolson(source_at, cfg: PdeConfig) -> PdeTrajectory:
    """CN time stepping with the quadratic reaction lagged one level.

    source_at(x_interior, t) returns forcing values at the interior nodes;
    it is averaged between consecutive time levels like the diffusion term.
    """
    x = np.linspace(0.0, 1.0, cfg.nx)
    t = np.linspace(0.0, 1.0, cfg.nt)
    hx = x[1] - x[0]
    dt = t[1] - t[0]
    r = cfg.diffusion * dt / (2.0 * hx * hx)
    n_int = cfg.nx - 2
    # banded form of I - r*Lxx (tridiagonal, diffusively dominant)
    band = np.zeros((3, n_int))
    band[0, 1:] = -r
    band[1, :] = 1.0 + 2.0 * r
    band[2, :-1] = -r
    xi = x[1:-1]
    s = np.zeros((cfg.nt, cfg.nx))
    cur = np.zeros(n_int)
    f_old = np.asarray(source_at(xi, t[0]), dtype=np.float64)
    diverged, reason = False, ""
    for n in range(1, cfg.nt):
        f_new = np.asarray(source_at(xi, t[n]), dtype=np.float64)
        lap = np.zeros(n_int)
        lap[1:-1] = cur[:-2] - 2.0 * cur[1:-1] + cur[2:]
        lap[0] = -2.0 * cur[0] + cur[1]
        lap[-1] = cur[-2] - 2.0 * cur[-1]
        rhs = cur + r * lap + dt * (cfg.reaction * cur * cur + 0.5 * (f_old + f_new))
        cur = solve_banded((1, 1), band, rhs)
        if not np.all(np.isfinite(cur)) or np.max(np.abs(cur)) > cfg.blowup_threshold:
            diverged, reason = True, f"state blow-up at t={t[n]:.6g}"
            s[n:, 1:-1] = s[n - 1, 1:-1]
            break
        s[n, 1:-1] = cur
        f_old = f_new
    return PdeTrajectory(x, t, s, diverged=diverged, reason=reason)


def diffusion_reaction_solve(u: InputFunction, cfg: PdeConfig = PdeConfig()) -> PdeTrajectory:
    """Solve s_t = D s_xx + k s^2 + u(x), zero initial and boundary values."""
    ua, ub = u.domain
    if ua > 1e-12 or ub < 1.0 - 1e-12:
        raise ValueError(f"input defined on [{ua}, {ub}] does not cover [0, 1]")
    ux, uv = u.x, u.values

    def source_at(xi, _t):
        return np.interp(xi, ux, uv)

    return _crank_nicolson(source_at, cfg)
