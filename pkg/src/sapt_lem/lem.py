"""Desk-scale landscape evolution model.

Stream-power incision on a D8 (lowest-neighbour) drainage network, linear
hillslope/marine diffusion and block uplift. The model is deliberately
small so that tens of thousands of runs fit inside one sampling job; it
plays the role of the expensive forward model.

Units follow the usual LEM conventions: elevations in metres, time in
years, rainfall in m/a, uplift in mm/a, diffusion coefficients in m^2/a.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import NamedTuple, Optional

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import ConfigError, DimensionMismatch, NumericalOverflow, UnknownKind
from .proposals import PriorBounds

PARAMETER_ORDER = ("rainfall", "erodibility", "m_exponent", "n_exponent",
                   "c_marine", "c_surface", "uplift")

# Synthetic-Mountain / Continental-Margin true values and prior ranges
TRUE_VALUES = {
    "mountain": dict(rainfall=1.5, erodibility=5.0e-6, m_exponent=0.5,
                     n_exponent=1.0, uplift=1.0),
    "margin": dict(rainfall=1.5, erodibility=5.0e-6, m_exponent=0.5,
                   n_exponent=1.0, c_marine=0.5, c_surface=0.8),
}
PRIOR_RANGES = {
    "mountain": dict(rainfall=(0.0, 3.0), erodibility=(3.0e-6, 7.0e-6),
                     m_exponent=(0.0, 2.0), n_exponent=(0.0, 2.0),
                     uplift=(0.1, 1.7)),
    "margin": dict(rainfall=(0.0, 3.0), erodibility=(3.0e-6, 7.0e-6),
                   m_exponent=(0.0, 2.0), n_exponent=(0.0, 2.0),
                   c_marine=(0.3, 0.7), c_surface=(0.6, 1.0)),
}

_DROW = np.array([-1, -1, -1, 0, 0, 1, 1, 1])
_DCOL = np.array([-1, 0, 1, -1, 1, -1, 0, 1])


@dataclass
class GridTopography:
    elevation: np.ndarray
    cell_size: float = 1000.0
    sea_level: float = 0.0

    def __post_init__(self):
        self.elevation = np.array(self.elevation, dtype=float)
        if self.elevation.ndim != 2 or min(self.elevation.shape) < 2:
            raise ConfigError("elevation must be a 2-D grid with at least 2 rows and 2 columns")
        if not np.all(np.isfinite(self.elevation)):
            raise ConfigError("elevations must be finite")
        if not self.cell_size > 0:
            raise ConfigError("cell_size must be positive")

    @property
    def shape(self):
        return self.elevation.shape

    def copy(self) -> "GridTopography":
        return GridTopography(self.elevation.copy(), self.cell_size, self.sea_level)

    def with_elevation(self, elevation) -> "GridTopography":
        return GridTopography(elevation, self.cell_size, self.sea_level)


@dataclass(frozen=True)
class ParameterVector:
    """Model parameters; absent optional processes are ``None``."""

    rainfall: float
    erodibility: float
    m_exponent: float
    n_exponent: float
    c_marine: Optional[float] = None
    c_surface: Optional[float] = None
    uplift: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not np.isfinite(v):
                raise ConfigError(f"parameter {f.name} must be finite")

    @property
    def names(self) -> tuple:
        return tuple(k for k in PARAMETER_ORDER if getattr(self, k) is not None)

    def to_array(self, names=None) -> np.ndarray:
        names = self.names if names is None else names
        return np.array([getattr(self, k) for k in names], dtype=float)

    @classmethod
    def from_array(cls, names, values) -> "ParameterVector":
        values = np.asarray(values, dtype=float)
        if len(names) != values.size:
            raise DimensionMismatch("one value per parameter name expected")
        return cls(**{k: float(v) for k, v in zip(names, values)})

    def to_dict(self):
        return {k: getattr(self, k) for k in self.names}


def default_sites(shape, count=10):
    """Evenly spaced sites along the interior main diagonal."""
    n = min(shape) - 2
    idx = np.round(np.linspace(1, n, count)).astype(int)
    return [(int(i), int(i)) for i in idx]


@dataclass
class LemConfig:
    duration: float = 1.0e6
    time_step: float = 2000.0
    n_checkpoints: int = 4
    sediment_sites: list = field(default_factory=list)
    boundary: str = "open"

    def __post_init__(self):
        if self.time_step <= 0 or self.duration < 0:
            raise ConfigError("time_step must be > 0 and duration >= 0")
        steps = self.duration / self.time_step
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("duration must be a whole number of time steps")
        if self.n_checkpoints < 1:
            raise ConfigError("need at least one checkpoint")
        if self.boundary != "open":
            raise ConfigError("only the open (fixed-edge) boundary is supported")
        self.sediment_sites = [tuple(int(v) for v in s) for s in self.sediment_sites]

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.time_step))

    @property
    def checkpoint_steps(self) -> np.ndarray:
        k = np.arange(1, self.n_checkpoints + 1)
        return np.round(k * self.n_steps / self.n_checkpoints).astype(np.int64)

    @property
    def checkpoint_times(self) -> np.ndarray:
        return self.checkpoint_steps * self.time_step

    def validate(self, shape):
        if not self.sediment_sites:
            raise ConfigError("at least one sediment site is required")
        for r, c in self.sediment_sites:
            if not (0 <= r < shape[0] and 0 <= c < shape[1]):
                raise ConfigError(f"site {(r, c)} lies outside the grid")
        if self.n_steps > 0 and np.any(np.diff(self.checkpoint_steps) <= 0):
            raise ConfigError("checkpoint times must be strictly increasing")


@dataclass
class SimulationOutput:
    final_topography: GridTopography
    sediment: np.ndarray  # sites x checkpoints, deposition positive


@dataclass
class Problem:
    name: str
    kind: str
    initial_topography: GridTopography
    ground_truth: SimulationOutput
    true_parameters: ParameterVector
    prior_bounds: PriorBounds
    lem_config: LemConfig

    @property
    def names(self) -> tuple:
        return self.prior_bounds.names


class FlowField(NamedTuple):
    receivers: np.ndarray  # flat receiver index, same shape as the grid
    area: np.ndarray       # drainage area in m^2
    distance: np.ndarray   # distance to receiver (0 for self-receivers)


# ---------------------------------------------------------------- kernels


@njit(cache=True)
def _receivers(z, dx, rcv, dist):
    nr, nc = z.shape
    diag = dx * np.sqrt(2.0)
    for r in range(nr):
        for c in range(nc):
            i = r * nc + c
            best = z[r, c]
            rcv[i] = i
            dist[i] = 0.0
            for k in range(8):
                rr = r + _DROW[k]
                cc = c + _DCOL[k]
                if rr < 0 or rr >= nr or cc < 0 or cc >= nc:
                    continue
                if z[rr, cc] < best:
                    best = z[rr, cc]
                    rcv[i] = rr * nc + cc
                    dist[i] = diag if (_DROW[k] != 0 and _DCOL[k] != 0) else dx


@njit(cache=True)
def _accumulate(rcv, ndon, queue, count):
    """Drainage area in cells, visiting every donor before its receiver."""
    n = rcv.size
    ndon[:] = 0
    count[:] = 1
    for i in range(n):
        if rcv[i] != i:
            ndon[rcv[i]] += 1
    tail = 0
    for i in range(n):
        if ndon[i] == 0:
            queue[tail] = i
            tail += 1
    head = 0
    while head < tail:
        i = queue[head]
        head += 1
        r = rcv[i]
        if r != i:
            count[r] += count[i]
            ndon[r] -= 1
            if ndon[r] == 0:
                queue[tail] = r
                tail += 1


@njit(cache=True)
def _discharge_power(rain, cell_area, m, n_cells):
    # (rain * k * cell_area) ** m for k = 0..n_cells
    tab = np.empty(n_cells + 1)
    for k in range(n_cells + 1):
        tab[k] = (rain * cell_area * k) ** m
    return tab


class _Work(NamedTuple):
    rcv: np.ndarray
    dist: np.ndarray
    ndon: np.ndarray
    queue: np.ndarray
    count: np.ndarray
    old: np.ndarray


def _work(shape):
    n = shape[0] * shape[1]
    i64 = np.int64
    return _Work(np.empty(n, i64), np.empty(n), np.empty(n, i64), np.empty(n, i64),
                 np.empty(n, i64), np.empty(shape))


@njit(cache=True)
def _step_inplace(z, dx, qpow, kero, n, sea, cmar, csurf, uplift_m, dt, do_diff,
                  rcv, dist, ndon, queue, count, old):
    nr, nc = z.shape
    if uplift_m != 0.0:
        for r in range(1, nr - 1):
            for c in range(1, nc - 1):
                z[r, c] += uplift_m * dt
    _receivers(z, dx, rcv, dist)
    _accumulate(rcv, ndon, queue, count)
    old[:, :] = z
    flat = old.ravel()
    for r in range(1, nr - 1):
        for c in range(1, nc - 1):
            i = r * nc + c
            j = rcv[i]
            if j == i:
                continue
            drop = flat[i] - flat[j]
            slope = drop / dist[i]
            if slope <= 0.0:
                continue
            e = kero * qpow[count[i]] * dt
            if n != 0.0:
                e *= slope if n == 1.0 else np.exp(n * np.log(slope))
            if not (e < drop):
                e = drop
            z[r, c] = flat[i] - e
    if do_diff:
        inv = dt / (dx * dx)
        old[:, :] = z
        for r in range(1, nr - 1):
            for c in range(1, nc - 1):
                h = old[r, c]
                coef = csurf if h >= sea else cmar
                lap = old[r - 1, c] + old[r + 1, c] + old[r, c - 1] + old[r, c + 1] - 4.0 * h
                z[r, c] = h + coef * inv * lap
    for r in range(nr):
        for c in range(nc):
            if not np.isfinite(z[r, c]):
                return False
    return True


@njit(cache=True)
def _simulate(z0, dx, sea, rain, kero, m, n, cmar, csurf, uplift_m, dt,
              nsteps, ckpt_steps, site_r, site_c, do_diff,
              rcv, dist, ndon, queue, count, old):
    z = z0.copy()
    qpow = _discharge_power(rain, dx * dx, m, z.size)
    sed = np.zeros((site_r.size, ckpt_steps.size))
    k = 0
    for s in range(1, nsteps + 1):
        if not _step_inplace(z, dx, qpow, kero, n, sea, cmar, csurf, uplift_m, dt, do_diff,
                             rcv, dist, ndon, queue, count, old):
            return z, sed, False
        while k < ckpt_steps.size and ckpt_steps[k] == s:
            t = s * dt
            for j in range(site_r.size):
                a = site_r[j]
                b = site_c[j]
                sed[j, k] = z[a, b] - (z0[a, b] + uplift_m * t)
            k += 1
    return z, sed, True


# ------------------------------------------------------------- public API


def _as_grid(topo, cell_size):
    if isinstance(topo, GridTopography):
        return topo.elevation, topo.cell_size
    z = np.atleast_2d(np.asarray(topo, dtype=float))
    return z, float(cell_size)


def flow_route(topo, cell_size=1.0) -> FlowField:
    """Route flow to the lowest strictly-lower 8-neighbour and accumulate area.

    Accepts a :class:`GridTopography` or a bare elevation array (for which
    ``cell_size`` is used); bare arrays may be a single row.
    """
    z, dx = _as_grid(topo, cell_size)
    w = _work(z.shape)
    _receivers(z, dx, w.rcv, w.dist)
    _accumulate(w.rcv, w.ndon, w.queue, w.count)
    area = w.count.reshape(z.shape) * (dx * dx)
    return FlowField(w.rcv.reshape(z.shape), area, w.dist.reshape(z.shape))


def _process_values(params: ParameterVector):
    cm = params.c_marine or 0.0
    cs = params.c_surface or 0.0
    uplift_m = (params.uplift or 0.0) * 1e-3
    return cm, cs, uplift_m, (cm != 0.0 or cs != 0.0)


def step(topo: GridTopography, params: ParameterVector, dt: float, sea_level=None) -> GridTopography:
    """Advance one time step: uplift, stream-power erosion, diffusion."""
    if not dt > 0:
        raise ConfigError("time step must be positive")
    sea = topo.sea_level if sea_level is None else sea_level
    cm, cs, uplift_m, diff = _process_values(params)
    z = topo.elevation.copy()
    dx = topo.cell_size
    qpow = _discharge_power(params.rainfall, dx * dx, params.m_exponent, z.size)
    ok = _step_inplace(z, dx, qpow, params.erodibility, params.n_exponent, sea,
                       cm, cs, uplift_m, dt, diff, *_work(z.shape))
    if not ok:
        raise NumericalOverflow("non-finite elevation after one step")
    return GridTopography(z, topo.cell_size, topo.sea_level)


def simulate(initial: GridTopography, params: ParameterVector, config: LemConfig) -> SimulationOutput:
    """Run the model for ``config.duration`` years.

    The sediment record at site ``s`` and checkpoint ``t`` is the elevation
    change since the start with the imposed uplift removed, so net erosion
    is negative and net deposition positive.
    """
    config.validate(initial.shape)
    cm, cs, uplift_m, diff = _process_values(params)
    sites = np.asarray(config.sediment_sites, dtype=np.int64).reshape(-1, 2)
    ckpt = config.checkpoint_steps if config.n_steps > 0 else np.zeros(0, np.int64)
    z, sed, ok = _simulate(initial.elevation, initial.cell_size, initial.sea_level,
                           params.rainfall, params.erodibility, params.m_exponent,
                           params.n_exponent, cm, cs, uplift_m, config.time_step,
                           config.n_steps, ckpt, sites[:, 0].copy(), sites[:, 1].copy(), diff,
                           *_work(initial.shape))
    if not ok:
        raise NumericalOverflow("forward model diverged (non-finite elevation)")
    if config.n_steps == 0:
        sed = np.zeros((len(sites), config.n_checkpoints))
    return SimulationOutput(initial.with_elevation(z), sed)


def _margin_surface(n, cell_size, rng):
    rows = np.linspace(1.0, 0.0, n)[:, None]
    ramp = -250.0 + 600.0 * rows * np.ones((1, n))
    noise = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma=2.0, mode="nearest")
    noise *= 40.0 / max(noise.std(), 1e-12)
    return ramp + noise


def make_synthetic_problem(kind: str, grid_size: int = 32, seed: int = 0,
                           cell_size: float = 1000.0, config: Optional[LemConfig] = None) -> Problem:
    """Build a noise-free synthetic inversion problem.

    ``mountain`` starts flat and is shaped by uplift (5 free parameters);
    ``margin`` starts from a seeded, sloping coastal surface that crosses
    sea level and has marine/surface diffusion but no uplift (6 parameters).
    """
    if kind not in TRUE_VALUES:
        raise UnknownKind(f"unknown problem kind {kind!r}; expected 'mountain' or 'margin'")
    if grid_size < 8:
        raise ConfigError("grid_size must be at least 8")
    rng = np.random.default_rng(seed)
    if kind == "mountain":
        elev = np.zeros((grid_size, grid_size))
    else:
        elev = _margin_surface(grid_size, cell_size, rng)
    initial = GridTopography(elev, cell_size, 0.0)
    if config is None:
        config = LemConfig(sediment_sites=default_sites(initial.shape))
    truth = ParameterVector(**TRUE_VALUES[kind])
    bounds = PriorBounds.from_dict(PRIOR_RANGES[kind])
    assert bounds.names == truth.names
    out = simulate(initial, truth, config)
    name = {"mountain": "synthetic-mountain", "margin": "continental-margin"}[kind]
    return Problem(name, kind, initial, out, truth, bounds, config)
