"""Triplet datasets: build from solvers, split by input function, serialize.

A record is (u at the shared sensors, query location y, target G(u)(y)).
Many records share one input function, so sensor vectors are stored once per
distinct u and records point at them by id; the logical view is still one
triplet per record. Query locations are drawn uniformly for the ODE
problems and as a without-replacement subset of the solution grid for the
PDE. Divergent trajectories are dropped at build time and counted.

On disk: a small versioned binary container ("OPDS1") with a JSON config
block for provenance, the sensor grid, the distinct-u block, and packed
little-endian records. CSV export exists for inspection.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import solvers
from .function_spaces import InputFunction, SensorGrid, restrict_to_sensors, space_from_config

DATASET_MAGIC = b"OPDS1"

ODE_PROBLEMS = ("antiderivative", "riccati", "pendulum")
PDE_PROBLEM = "diffusion_reaction"


@dataclass(frozen=True)
class Triplet:
    """One record: sensor readings of u, query location, operator value."""

    u_sensors: np.ndarray
    y: tuple[float, ...]
    target: float
    u_id: int


@dataclass
class Dataset:
    """Records over a shared sensor grid, with distinct-u storage.

    u_values[k] holds the sensor vector of the distinct input with id
    u_ids_distinct[k]; records reference rows through u_index. y has one
    column for ODE problems (location x) and two for the PDE (x, t).
    """

    problem: str
    sensors: SensorGrid
    u_ids_distinct: np.ndarray  # (n_u,) int64, strictly increasing
    u_values: np.ndarray  # (n_u, m)
    u_index: np.ndarray  # (n_records,) int64 row index into u_values
    y: np.ndarray  # (n_records, dy)
    targets: np.ndarray  # (n_records,)
    config: dict = field(default_factory=dict)
    n_dropped: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        m = self.sensors.count
        if self.u_values.ndim != 2 or self.u_values.shape[1] != m:
            raise ValueError(
                f"sensor vectors have {self.u_values.shape[1:]} values for {m} sensors"
            )
        n_u = self.u_values.shape[0]
        if self.u_ids_distinct.shape != (n_u,):
            raise ValueError("distinct-u ids do not match sensor-vector rows")
        if n_u and not np.all(np.diff(self.u_ids_distinct) > 0):
            raise ValueError("distinct-u ids must be strictly increasing")
        n = self.u_index.shape[0]
        if self.y.ndim != 2 or self.y.shape[0] != n or self.targets.shape != (n,):
            raise ValueError("record columns have inconsistent lengths")
        if n and (self.u_index.min() < 0 or self.u_index.max() >= n_u):
            raise ValueError("record references a missing input function")
        for name, arr in (("u", self.u_values), ("y", self.y), ("target", self.targets)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name} values")

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    @property
    def m(self) -> int:
        return self.sensors.count

    @property
    def dim_y(self) -> int:
        return int(self.y.shape[1])

    @property
    def n_distinct_u(self) -> int:
        return int(self.u_values.shape[0])

    def record(self, i: int) -> Triplet:
        k = int(self.u_index[i])
        return Triplet(
            self.u_values[k],
            tuple(float(v) for v in self.y[i]),
            float(self.targets[i]),
            int(self.u_ids_distinct[k]),
        )

    def records(self):
        return (self.record(i) for i in range(len(self)))

    def u_ids(self) -> np.ndarray:
        """Per-record u identifier."""
        return self.u_ids_distinct[self.u_index]


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def _stream(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass
class OdePool:
    """Solved trajectories for a batch of sampled inputs, reusable across
    sensor counts and query draws."""

    problem: str
    domain: tuple[float, float]
    us: list[InputFunction]
    trajectories: list[solvers.OdeTrajectory]
    seed: object
    config: dict

    @property
    def n_divergent(self) -> int:
        return sum(t.diverged for t in self.trajectories)


def _ode_system(problem: str, domain: tuple[float, float], k: float) -> solvers.OdeSystem:
    if problem == "antiderivative":
        return solvers.antiderivative_system(domain)
    if problem == "riccati":
        return solvers.riccati_system(domain)
    if problem == "pendulum":
        return solvers.pendulum_system(k=k, horizon=domain[1])
    raise ValueError(f"unknown ODE problem {problem!r}; expected one of {ODE_PROBLEMS}")


def solve_ode_pool(problem: str, space, n_u: int, seed,
                   domain: tuple[float, float] = (0.0, 1.0), k: float = 1.0,
                   rtol: float = 1e-8, atol: float = 1e-10,
                   fine_n: int = 1001) -> OdePool:
    """Sample n_u inputs and integrate each once.

    Input i comes from child stream (seed, i); solving is deterministic, so
    the pool is a pure function of its arguments.
    """
    if n_u < 1:
        raise ValueError("need at least one input sample")
    system = _ode_system(problem, domain, k)
    fine = SensorGrid.uniform(domain[0], domain[1], fine_n)
    us = space.sample_many(fine, n_u, seed)
    trajectories = [solvers.solve_ode_rk45(system, u, rtol=rtol, atol=atol) for u in us]
    config = {
        "problem": problem,
        **space.config(),
        "n_u": n_u,
        "seed": seed,
        "domain": list(domain),
        "k": k,
        "rtol": rtol,
        "atol": atol,
        "fine_n": fine_n,
    }
    return OdePool(problem, domain, us, trajectories, seed, config)


def dataset_from_pool(pool: OdePool, m: int, y_per_u: int) -> Dataset:
    """Draw y_per_u query points per trajectory and assemble records.

    Query locations for input i come from child stream (seed, i, 1), so they
    do not depend on m and a sensor-count sweep sees identical targets.
    Divergent trajectories contribute no records; their count is reported in
    the dataset config and n_dropped. Pendulum targets are the angle
    component s1.
    """
    if m < 2:
        raise ValueError("need at least 2 sensors")
    if y_per_u < 1:
        raise ValueError("need at least one query per input")
    a, b = pool.domain
    sensors = SensorGrid.uniform(a, b, m)
    ids, u_rows, u_idx_col, y_col, t_col = [], [], [], [], []
    dropped = 0
    for i, (u, traj) in enumerate(zip(pool.us, pool.trajectories)):
        if traj.diverged:
            dropped += y_per_u
            continue
        ys = _stream(pool.seed, i, 1).uniform(a, b, size=y_per_u)
        vals = traj.eval(ys)[:, 0]
        row = len(ids)
        ids.append(i)
        u_rows.append(restrict_to_sensors(u, sensors))
        u_idx_col.append(np.full(y_per_u, row, dtype=np.int64))
        y_col.append(ys)
        t_col.append(vals)
    if not ids:
        raise ValueError(
            f"all {len(pool.us)} trajectories diverged "
            f"(first reason: {pool.trajectories[0].reason})"
        )
    config = dict(pool.config, m=m, y_per_u=y_per_u, n_dropped=dropped)
    return Dataset(
        problem=pool.problem,
        sensors=sensors,
        u_ids_distinct=np.array(ids, dtype=np.int64),
        u_values=np.vstack(u_rows),
        u_index=np.concatenate(u_idx_col),
        y=np.concatenate(y_col)[:, None],
        targets=np.concatenate(t_col),
        config=config,
        n_dropped=dropped,
    )


def build_ode_dataset(problem: str, space, m: int, n_u: int, y_per_u: int, seed,
                      domain: tuple[float, float] = (0.0, 1.0), k: float = 1.0,
                      rtol: float = 1e-8, atol: float = 1e-10) -> Dataset:
    """Sample n_u inputs, solve each once, draw y_per_u queries per input."""
    pool = solve_ode_pool(problem, space, n_u, seed, domain=domain, k=k, rtol=rtol, atol=atol)
    return dataset_from_pool(pool, m, y_per_u)


def build_pde_dataset(space, m: int, n_u: int, P: int, seed,
                      cfg: solvers.PdeConfig = solvers.PdeConfig()) -> Dataset:
    """Diffusion-reaction records: P grid points per solved input.

    The P locations are drawn without replacement from the full nx x nt
    solution grid, independently per input (stream (seed, i, 1)).
    """
    if m < 2:
        raise ValueError("need at least 2 sensors")
    if n_u < 1:
        raise ValueError("need at least one input sample")
    grid_size = cfg.nx * cfg.nt
    if not 1 <= P <= grid_size:
        raise ValueError(f"P must be in [1, {grid_size}], got {P}")
    fine = SensorGrid.uniform(0.0, 1.0, 1001)
    sensors = SensorGrid.uniform(0.0, 1.0, m)
    us = space.sample_many(fine, n_u, seed)
    ids, u_rows, u_idx_col, y_col, t_col = [], [], [], [], []
    dropped = 0
    for i, u in enumerate(us):
        sol = solvers.diffusion_reaction_solve(u, cfg)
        if sol.diverged:
            dropped += P
            continue
        flat = _stream(seed, i, 1).choice(grid_size, size=P, replace=False)
        ti, xi = np.divmod(flat, cfg.nx)
        row = len(ids)
        ids.append(i)
        u_rows.append(restrict_to_sensors(u, sensors))
        u_idx_col.append(np.full(P, row, dtype=np.int64))
        y_col.append(np.column_stack([sol.x[xi], sol.t[ti]]))
        t_col.append(sol.s[ti, xi])
    if not ids:
        raise ValueError(f"all {n_u} solutions diverged")
    config = {
        "problem": PDE_PROBLEM,
        **space.config(),
        "m": m,
        "n_u": n_u,
        "P": P,
        "seed": seed,
        "nx": cfg.nx,
        "nt": cfg.nt,
        "diffusion": cfg.diffusion,
        "reaction": cfg.reaction,
        "n_dropped": dropped,
    }
    return Dataset(
        problem=PDE_PROBLEM,
        sensors=sensors,
        u_ids_distinct=np.array(ids, dtype=np.int64),
        u_values=np.vstack(u_rows),
        u_index=np.concatenate(u_idx_col),
        y=np.vstack(y_col),
        targets=np.concatenate(t_col),
        config=config,
        n_dropped=dropped,
    )


def split_by_u(pool: Dataset, train_u: int, test_u: int) -> tuple[Dataset, Dataset]:
    """Partition records into splits with disjoint input functions.

    The first train_u distinct ids (ascending) go to train, the next test_u
    to test; deterministic for a given pool.
    """
    if train_u < 0 or test_u < 0:
        raise ValueError("split sizes must be nonnegative")
    if train_u + test_u > pool.n_distinct_u:
        raise ValueError(
            f"split needs {train_u}+{test_u} distinct inputs, pool has {pool.n_distinct_u}"
        )

    def subset(row_lo: int, row_hi: int, role: str) -> Dataset:
        mask = (pool.u_index >= row_lo) & (pool.u_index < row_hi)
        return Dataset(
            problem=pool.problem,
            sensors=pool.sensors,
            u_ids_distinct=pool.u_ids_distinct[row_lo:row_hi].copy(),
            u_values=pool.u_values[row_lo:row_hi].copy(),
            u_index=pool.u_index[mask] - row_lo,
            y=pool.y[mask].copy(),
            targets=pool.targets[mask].copy(),
            config=dict(pool.config, split=role, split_train_u=train_u, split_test_u=test_u),
            n_dropped=pool.n_dropped,
        )

    return subset(0, train_u, "train"), subset(train_u, train_u + test_u, "test")


# ---------------------------------------------------------------------------
# Serialization: "OPDS1" container
# ---------------------------------------------------------------------------
#
# Layout (little-endian):
#   magic "OPDS1"
#   uint32 problem-tag length, utf-8 tag
#   uint32 m, uint32 dy, uint64 n_distinct_u, uint64 n_records,
#   uint32 n_dropped
#   uint32 config length, config JSON (utf-8)
#   float64 domain lo, hi; m float64 sensor points
#   distinct-u block: per row uint64 id then m float64 sensor values
#   record block: per record uint64 u row index, dy float64 y, float64 target


def save_dataset(ds: Dataset, path) -> None:
    ds.validate()
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        tag = ds.problem.encode()
        f.write(struct.pack("<I", len(tag)))
        f.write(tag)
        f.write(struct.pack("<IIQQ", ds.m, ds.dim_y, ds.n_distinct_u, len(ds)))
        f.write(struct.pack("<I", ds.n_dropped))
        cfg = json.dumps(ds.config, sort_keys=True).encode()
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<dd", *ds.sensors.domain))
        f.write(np.ascontiguousarray(ds.sensors.points, dtype="<f8").tobytes())
        f.write(
            b"".join(
                struct.pack("<Q", int(uid)) + np.ascontiguousarray(row, dtype="<f8").tobytes()
                for uid, row in zip(ds.u_ids_distinct, ds.u_values)
            )
        )
        rec = np.empty((len(ds), 2 + ds.dim_y))
        rec[:, 0] = ds.u_index
        rec[:, 1 : 1 + ds.dim_y] = ds.y
        rec[:, -1] = ds.targets
        f.write(np.ascontiguousarray(rec, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        blob = f.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ValueError("truncated OPDS1 container")
        out = blob[off : off + n]
        off += n
        return out

    if take(len(DATASET_MAGIC)) != DATASET_MAGIC:
        raise ValueError("not an OPDS1 dataset container")
    (tag_len,) = struct.unpack("<I", take(4))
    problem = take(tag_len).decode()
    m, dy, n_u, n_rec = struct.unpack("<IIQQ", take(24))
    (n_dropped,) = struct.unpack("<I", take(4))
    (cfg_len,) = struct.unpack("<I", take(4))
    config = json.loads(take(cfg_len).decode())
    domain = struct.unpack("<dd", take(16))
    sensor_pts = np.frombuffer(take(8 * m), dtype="<f8").astype(np.float64)
    sensors = SensorGrid(domain, sensor_pts)
    ids = np.empty(n_u, dtype=np.int64)
    u_values = np.empty((n_u, m))
    for r in range(n_u):
        (ids[r],) = struct.unpack("<Q", take(8))
        u_values[r] = np.frombuffer(take(8 * m), dtype="<f8")
    rec = np.frombuffer(take(8 * n_rec * (2 + dy)), dtype="<f8").reshape(n_rec, 2 + dy)
    if off != len(blob):
        raise ValueError(f"{len(blob) - off} trailing bytes in OPDS1 container")
    u_index = rec[:, 0].astype(np.int64)
    if not np.array_equal(rec[:, 0], u_index):
        raise ValueError("corrupt record block: non-integer u references")
    return Dataset(
        problem=problem,
        sensors=sensors,
        u_ids_distinct=ids,
        u_values=u_values,
        u_index=u_index,
        y=rec[:, 1 : 1 + dy].copy(),
        targets=rec[:, -1].copy(),
        config=config,
        n_dropped=n_dropped,
    )


def dataset_to_csv(ds: Dataset, path) -> None:
    """Inspection export: one row per record, sensors inlined."""
    y_names = ["y"] if ds.dim_y == 1 else ["y_x", "y_t"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"u_{j + 1}" for j in range(ds.m)] + y_names + ["target"])
        for i in range(len(ds)):
            row = ds.u_values[ds.u_index[i]]
            writer.writerow(
                [repr(float(v)) for v in row]
                + [repr(float(v)) for v in ds.y[i]]
                + [repr(float(ds.targets[i]))]
            )


def space_from_dataset(ds: Dataset):
    """Sampler space recorded in a dataset's provenance config."""
    return space_from_config(ds.config)
