"""Synthetic ODE datasets, CSV trajectory I/O and per-dimension normalization."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .integrate import IntegrationError, rk4_step
from .rng import substream

log = logging.getLogger(__name__)


class SimulationError(FloatingPointError):
    pass


class SchemaError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass
class Trajectory:
    id: str
    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.mask is None:
            self.mask = np.ones(len(self.times), dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.validate()

    def validate(self) -> None:
        if self.times.ndim != 1 or len(self.times) == 0:
            raise ValidationError(f"trajectory {self.id}: times must be a non-empty vector")
        if len(self.values) != len(self.times) or len(self.mask) != len(self.times):
            raise ValidationError(f"trajectory {self.id}: times/values/mask lengths differ")
        d = np.diff(self.times)
        if np.any(d <= 0):
            i = int(np.flatnonzero(d <= 0)[0])
            raise ValidationError(
                f"trajectory {self.id}: times not strictly increasing at index {i + 1} "
                f"({self.times[i]!r} -> {self.times[i + 1]!r})")
        if not np.all(np.isfinite(self.values)) or not np.all(np.isfinite(self.times)):
            raise ValidationError(f"trajectory {self.id}: non-finite values")

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass
class Dataset:
    trajectories: list
    n: int
    grid: dict = field(default_factory=dict)
    stats: dict | None = None
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def subset(self, idx) -> "Dataset":
        return replace(self, trajectories=[self.trajectories[i] for i in idx])


# ---------------------------------------------------------------- vector fields

def spiral_field(x: np.ndarray) -> np.ndarray:
    return np.array([-0.1 * x[0] - x[1], x[0] - 0.1 * x[1]])


def glycolytic_field(x: np.ndarray) -> np.ndarray:
    q = x[0] * x[1] ** 2
    return np.array([0.75 - 0.1 * x[0] - q, 0.1 * x[0] - x[1] + q])


def lotka_field(x: np.ndarray) -> np.ndarray:
    return np.array([0.1 * x[0] - 0.02 * x[0] * x[1], 0.01 * x[0] * x[1] - 0.3 * x[1]])


def spiral_closed_form(x0, t) -> np.ndarray:
    """exp(t * [[-0.1, -1], [1, -0.1]]) x0."""
    t = np.asarray(t, dtype=np.float64)
    c, s, e = np.cos(t), np.sin(t), np.exp(-0.1 * t)
    x0 = np.asarray(x0, dtype=np.float64)
    return np.stack([e * (c * x0[0] - s * x0[1]), e * (s * x0[0] + c * x0[1])], axis=-1)


FIELDS = {"spiral": spiral_field, "glycolytic": glycolytic_field, "lotka": lotka_field}

# kind -> (count, steps, dt)
GRIDS = {"spiral": (80, 60, 0.1), "glycolytic": (100, 200, 0.1), "lotka": (100, 200, 0.5)}

GLYCOLYTIC_FIXED_POINT = (0.75 / 0.6625, 0.75)
LOTKA_FIXED_POINT = (30.0, 5.0)


def simulate_ode(field_fn, x0, n_steps: int, dt: float, t0: float = 0.0, traj_id: str = "0") -> Trajectory:
    if dt <= 0:
        raise ValueError(f"simulate_ode: dt must be positive, got {dt}")
    x = np.asarray(x0, dtype=np.float64)
    out = np.empty((n_steps + 1, x.size))
    out[0] = x
    for i in range(n_steps):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                x = rk4_step(lambda z, _t: field_fn(z), x, t0 + i * dt, dt)
        except IntegrationError:
            x = np.full_like(x, np.nan)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"simulate_ode: non-finite state at step {i + 1}")
        out[i + 1] = x
    return Trajectory(traj_id, t0 + dt * np.arange(n_steps + 1), out)


def _initial_conditions(kind: str, count: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "spiral":
        r = np.sqrt(rng.uniform(1.5 ** 2, 2.5 ** 2, size=count))
        phi = rng.uniform(0.0, 2 * np.pi, size=count)
        return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    if kind == "glycolytic":
        return rng.uniform(0.2, 2.0, size=(count, 2))
    return np.stack([rng.uniform(10.0, 50.0, size=count), rng.uniform(2.0, 8.0, size=count)], axis=1)


def gen_dataset(kind: str, seed: int) -> Dataset:
    if kind not in FIELDS:
        raise ValueError(f"unknown dataset kind {kind!r}; choose from {sorted(FIELDS)}")
    count, steps, dt = GRIDS[kind]
    x0s = _initial_conditions(kind, count, substream(seed, "data"))
    trajs = []
    for i, x0 in enumerate(x0s):
        tr = simulate_ode(FIELDS[kind], x0, steps, dt, traj_id=str(i))
        if kind != "spiral" and np.any(tr.values <= 0):
            raise SimulationError(f"{kind} trajectory {i} left the positive quadrant")
        trajs.append(tr)
    return Dataset(trajs, 2, grid={"steps": steps, "dt": dt, "t0": 0.0},
                   provenance={"generator": kind, "seed": int(seed), "count": count,
                               "initial_conditions": _IC_DOC[kind]})


_IC_DOC = {
    "spiral": "area-uniform on annulus 1.5 <= |x0| <= 2.5",
    "glycolytic": "uniform in [0.2, 2.0]^2",
    "lotka": "uniform in [10, 50] x [2, 8]",
}


# ---------------------------------------------------------------- CSV

def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_csv(ds: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory_id", "time"] + [f"x{i + 1}" for i in range(ds.n)] + ["observed"])
        for tr in ds.trajectories:
            for t, row, ob in zip(tr.times, tr.values, tr.mask):
                w.writerow([tr.id, f"{t:.17g}"] + [f"{v:.17g}" for v in row] + [int(ob)])
    meta = {
        "dimension": ds.n,
        "trajectories": len(ds),
        "points": int(sum(len(t.times) for t in ds.trajectories)),
        "grid": ds.grid,
        "provenance": ds.provenance,
        "stats": None if ds.stats is None else {k: np.asarray(v).tolist() for k, v in ds.stats.items()},
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_csv(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: line 1: empty file (header required)")
    header = [h.strip() for h in rows[0]]
    n = len(header) - 3
    expected = ["trajectory_id", "time"] + [f"x{i + 1}" for i in range(n)] + ["observed"]
    if n < 1 or header != expected:
        raise SchemaError(f"{path}: line 1: header must be {','.join(expected) if n >= 1 else 'trajectory_id,time,x1,...,xn,observed'}")
    groups: dict[str, list] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            t = float(row[1])
            vals = [float(v) for v in row[2:-1]]
        except ValueError as exc:
            raise SchemaError(f"{path}: line {lineno}: {exc}") from None
        if row[-1] not in ("0", "1"):
            raise SchemaError(f"{path}: line {lineno}: observed must be 0 or 1, got {row[-1]!r}")
        groups.setdefault(row[0], []).append((t, vals, row[-1] == "1", lineno))
    if not groups:
        raise SchemaError(f"{path}: no data rows")
    trajs = []
    for tid, items in groups.items():
        times = np.array([it[0] for it in items])
        bad = np.flatnonzero(np.diff(times) <= 0)
        if bad.size:
            raise ValidationError(
                f"{path}: line {items[bad[0] + 1][3]}: trajectory {tid} times not strictly increasing")
        trajs.append(Trajectory(tid, times, np.array([it[1] for it in items]),
                                np.array([it[2] for it in items])))
    meta = {}
    if sidecar_path(path).exists():
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
    stats = meta.get("stats")
    if stats is not None:
        stats = {k: np.asarray(v, dtype=np.float64) for k, v in stats.items()}
    return Dataset(trajs, n, grid=meta.get("grid", {}), stats=stats,
                   provenance=meta.get("provenance", {"source": str(path)}))


# ---------------------------------------------------------------- normalization

def compute_stats(ds: Dataset) -> dict:
    allv = np.concatenate([t.values for t in ds.trajectories])
    mean = allv.mean(axis=0)
    std = allv.std(axis=0)
    for i in np.flatnonzero(std == 0):
        log.warning("dimension x%d is constant; passing through unscaled", i + 1)
    std = np.where(std == 0, 1.0, std)
    return {"mean": mean, "std": std}


def normalize(ds: Dataset, stats: dict) -> Dataset:
    mean, std = stats["mean"], stats["std"]
    trajs = [replace(t, values=(t.values - mean) / std) for t in ds.trajectories]
    return replace(ds, trajectories=trajs, stats=stats)


def denormalize_values(values: np.ndarray, stats: dict) -> np.ndarray:
    return values * stats["std"] + stats["mean"]


def denormalize(ds: Dataset, stats: dict) -> Dataset:
    trajs = [replace(t, values=denormalize_values(t.values, stats)) for t in ds.trajectories]
    return replace(ds, trajectories=trajs)


def split_indices(count: int, frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(count)
    k = int(round(frac * count))
    return np.sort(perm[:k]), np.sort(perm[k:])
