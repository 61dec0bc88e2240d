"""Truncated Euler-Maruyama simulation of single islands and island systems.

Stepping rule: coefficients are evaluated at the clamped previous state and
the updated state is clamped back into [0, upper].  Both coefficients vanish
at 0, so a state that reaches 0 with no inflow stays exactly 0.

Boundary handling at 0 comes in two modes.  System simulations use the plain
clamp ("clip"): with migration or immigration present, 0 is not absorbing
and the clamp error is a garden-variety discretization error.  For a single
island 0 IS absorbing, and the clamp is disastrously biased there: paths
that ought to die keep getting reflected up (at dt = 1e-3 this inflates the
mean excursion area from level 1e-3 by roughly +80%).  Single-island ops
therefore default to "bridge": the Gaussian step is left unclamped below 0
(instant kill), and a surviving step from v to w is additionally killed with
the Brownian-bridge crossing probability exp(-2 v w / (sigma2(v) dt)), the
standard boundary correction for absorbed diffusions.  Level crossings used
as stopping events get the matching bridge up-crossing correction.

Noise layout.  Object-level ops (those returning Path/SystemPath) draw one
noise stream per island (and per level in the decomposed systems), keyed by
(seed, purpose, island, level).  Adding an island or raising the level cap
therefore never perturbs the noise any existing component sees.  The batch
Monte Carlo engines trade that for throughput: replicates are processed in
fixed-size chunks, each chunk fed by its own (seed, tag, chunk) stream, so
results are reproducible and independent of worker count but not invariant
to the chunk size (a documented constant).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .coefficients import CoefficientSpec
from .exceptions import ConfigError, DomainError

DEFAULT_DT = 1e-3
CHUNK = 8192  # fixed batch chunk; results depend on it, never on worker count


# ---------------------------------------------------------------------------
# time grid and path containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0, t0+dt, ..., t0 + n_steps*dt = horizon."""

    t0: float
    horizon: float
    dt: float

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.horizon <= self.t0:
            raise ConfigError("horizon must exceed t0")
        n = (self.horizon - self.t0) / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ConfigError("(horizon - t0) must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round((self.horizon - self.t0) / self.dt))

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def node_of(self, t: float) -> int:
        """Nearest node index for t (must lie on the grid within 1e-9 dt)."""
        k = (t - self.t0) / self.dt
        if abs(k - round(k)) > 1e-6:
            raise ConfigError(f"t={t} is not on the grid")
        k = int(round(k))
        if not 0 <= k <= self.n_steps:
            raise ConfigError(f"t={t} outside the grid")
        return k


@dataclass(frozen=True)
class Path:
    """Single trajectory on a grid."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (self.grid.n_steps + 1,):
            raise ConfigError("values must have one entry per grid node")

    def value_at(self, t: float) -> float:
        return float(np.interp(t, self.grid.times(), self.values))

    def area(self) -> float:
        return float(np.trapezoid(self.values, dx=self.grid.dt))

    def peak(self) -> float:
        return float(np.max(self.values))

    def extinction_time(self) -> float | None:
        hit = np.nonzero(self.values == 0.0)[0]
        return float(self.grid.times()[hit[0]]) if hit.size else None


@dataclass(frozen=True)
class SystemPath:
    """Trajectories of a finite island system; values[node, island]."""

    grid: TimeGrid
    values: np.ndarray

    def total(self) -> np.ndarray:
        return self.values.sum(axis=1)

    @property
    def n_islands(self) -> int:
        return self.values.shape[1]

    def island(self, i: int) -> Path:
        return Path(self.grid, self.values[:, i])


@dataclass(frozen=True)
class LevelSystemPath:
    """Level-decomposed system; values[node, level, island].

    dropped_mass is the time integral of the would-be inflow into the first
    truncated level (mass the cap threw away).  `experimental` marks runs
    whose diffusion family makes the level split approximate rather than
    exact in law.
    """

    grid: TimeGrid
    values: np.ndarray
    dropped_mass: float
    experimental: bool

    @property
    def k_max(self) -> int:
        return self.values.shape[1] - 1

    @property
    def n_islands(self) -> int:
        return self.values.shape[2]

    def level_totals(self) -> np.ndarray:
        """Sum over islands; shape (nodes, levels)."""
        return self.values.sum(axis=2)

    def unsplit(self) -> SystemPath:
        """Sum over levels, recovering the plain system view."""
        return SystemPath(self.grid, self.values.sum(axis=1))


# ---------------------------------------------------------------------------
# migration and immigration inputs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MigrationMatrix:
    """Substochastic routing: entries[j, i] is the rate share j -> i."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError("migration matrix must be square")
        if np.any(m < 0):
            raise ConfigError("migration entries must be nonnegative")
        if np.any(m.sum(axis=1) > 1.0 + 1e-12):
            raise ConfigError("migration row sums must not exceed 1")
        object.__setattr__(self, "entries", m)

    @classmethod
    def uniform(cls, n: int) -> "MigrationMatrix":
        return cls(np.full((n, n), 1.0 / n))

    @property
    def n_islands(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class ImmigrationProfile:
    """Inflow rate zeta(t) >= 0 for a single island with immigration."""

    kind: str
    value: float = 0.0
    table: np.ndarray | None = None
    path: Path | None = None
    scale: float = 1.0

    @classmethod
    def constant(cls, c: float) -> "ImmigrationProfile":
        if c < 0:
            raise ConfigError("immigration rate must be nonnegative")
        return cls(kind="constant", value=c)

    @classmethod
    def from_table(cls, values) -> "ImmigrationProfile":
        arr = np.asarray(values, dtype=float)
        if np.any(arr < 0):
            raise ConfigError("immigration rates must be nonnegative")
        return cls(kind="table", table=arr)

    @classmethod
    def from_path(cls, path: Path, scale: float = 1.0) -> "ImmigrationProfile":
        if scale < 0:
            raise ConfigError("scale must be nonnegative")
        return cls(kind="path", path=path, scale=scale)

    def rates(self, grid: TimeGrid) -> np.ndarray:
        """zeta at the step-start nodes (length n_steps)."""
        n = grid.n_steps
        if self.kind == "constant":
            return np.full(n, self.value)
        if self.kind == "table":
            if len(self.table) not in (n, n + 1):
                raise ConfigError("table length must match the grid")
            return np.asarray(self.table[:n], dtype=float)
        src = self.path.grid
        if abs(src.dt - grid.dt) > 1e-12:
            raise ConfigError("path immigration requires matching dt")
        off = src.node_of(grid.t0)
        if off + n > src.n_steps + 1:
            raise ConfigError("immigration path does not cover the grid")
        return self.scale * self.path.values[off:off + n]


# ---------------------------------------------------------------------------
# noise layout for object-level ops
# ---------------------------------------------------------------------------

def _noise_columns(seed: int, purpose: int, n_steps: int, keys) -> np.ndarray:
    """Stack per-key streams into columns: shape (n_steps, len(keys))."""
    cols = [rngmod.substream(seed, purpose, *k).standard_normal(n_steps) for k in keys]
    return np.stack(cols, axis=1) if cols else np.empty((n_steps, 0))


def _check_x0(spec: CoefficientSpec, x0) -> None:
    if not spec.domain.contains(x0):
        raise DomainError("initial state outside the domain")


# ---------------------------------------------------------------------------
# object-level simulation ops
# ---------------------------------------------------------------------------

def simulate_single(spec: CoefficientSpec, x0: float, grid: TimeGrid,
                    seed: int, boundary: str = "exact") -> Path:
    """One island, no inflow: dY = (-Y + mu(Y)) dt + sqrt(sigma2(Y)) dB.

    0 is absorbing here; `boundary` selects its handling as in
    `single_batch_stats` ("exact" hybrid default, "bridge", or "clip").
    """
    _check_x0(spec, x0)
    if boundary not in ("exact", "bridge", "clip"):
        raise ConfigError("boundary must be 'exact', 'bridge' or 'clip'")
    n = grid.n_steps
    noise = _noise_columns(seed, rngmod.SINGLE, n, [(0,)])[:, 0]
    aux = rngmod.substream(seed, rngmod.SINGLE, 0, 1)
    kill_u = aux.random(n) if boundary != "clip" else None
    upper = spec.domain.upper
    dt = grid.dt
    sdt = math.sqrt(dt)
    y_switch = switch_level(dt, None, upper) if boundary == "exact" else 0.0
    out = np.empty(n + 1)
    out[0] = v = float(x0)
    one = np.ones(1)
    for k in range(n):
        if 0.0 < v < y_switch:
            v = float(_exact_substep(aux, v * one,
                                     float(spec.mu_over_x(v)) * one,
                                     float(spec.sigma2_over_x(v)) * one, dt)[0])
            v = min(v, upper)
            if v == 0.0:
                out[k + 1:] = 0.0
                return Path(grid, out)
        else:
            s2 = float(spec.sigma2(v))
            w = v + (-v + float(spec.mu(v))) * dt + math.sqrt(s2) * sdt * noise[k]
            if kill_u is not None and v > 0.0:
                if w <= 0.0 or (s2 > 0.0
                                and kill_u[k] < math.exp(-2.0 * v * w / (s2 * dt))):
                    out[k + 1:] = 0.0
                    return Path(grid, out)
                v = min(w, upper)
            else:
                v = min(max(w, 0.0), upper)
        out[k + 1] = v
    return Path(grid, out)


def simulate_with_immigration(spec: CoefficientSpec, profile: ImmigrationProfile,
                              x0: float, grid: TimeGrid, seed: int) -> Path:
    """One island with inflow: dY = (zeta(t) - Y + mu(Y)) dt + sqrt(sigma2) dB."""
    _check_x0(spec, x0)
    n = grid.n_steps
    zeta = profile.rates(grid)
    noise = _noise_columns(seed, rngmod.IMMIGRATION, n, [(0,)])[:, 0]
    upper = spec.domain.upper
    sdt = math.sqrt(grid.dt)
    out = np.empty(n + 1)
    out[0] = v = float(x0)
    for k in range(n):
        v = v + (zeta[k] - v + float(spec.mu(v))) * grid.dt \
            + math.sqrt(float(spec.sigma2(v))) * sdt * noise[k]
        v = min(max(v, 0.0), upper)
        out[k + 1] = v
    return Path(grid, out)


def simulate_system(spec: CoefficientSpec, migration: MigrationMatrix,
                    x0, grid: TimeGrid, seed: int) -> SystemPath:
    """Finite system with substochastic migration.

    dX(i) = [sum_j X(j) m(j,i) - X(i) + mu(X(i))] dt + sqrt(sigma2(X(i))) dB(i)
    """
    m = migration.entries
    N = migration.n_islands
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N,):
        raise ConfigError("x0 must have one entry per island")
    _check_x0(spec, x0)
    n = grid.n_steps
    noise = _noise_columns(seed, rngmod.SYSTEM, n, [(i,) for i in range(N)])
    upper = spec.domain.upper
    dt = grid.dt
    out = np.empty((n + 1, N))
    out[0] = v = x0.copy()
    for k in range(n):
        inflow = v @ m
        v = v + (inflow - v + spec.mu(v)) * dt \
            + np.sqrt(spec.sigma2(v) * dt) * noise[k]
        v = np.clip(v, 0.0, upper)
        out[k + 1] = v
    return SystemPath(grid, out)


def simulate_uniform_system(spec: CoefficientSpec, n_islands: int, theta: float,
                            x0, grid: TimeGrid, seed: int) -> SystemPath:
    """Mean-field system of N islands with immigration theta/N per island.

    dX(i) = [mean_j X(j) + theta/N - X(i) + mu(X(i))] dt + sqrt(sigma2(X(i))) dB(i)
    """
    N = int(n_islands)
    if N < 1:
        raise ConfigError("need at least one island")
    if theta < 0:
        raise ConfigError("theta must be nonnegative")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N,):
        raise ConfigError("x0 must have one entry per island")
    _check_x0(spec, x0)
    n = grid.n_steps
    noise = _noise_columns(seed, rngmod.SYSTEM, n, [(i,) for i in range(N)])
    upper = spec.domain.upper
    dt = grid.dt
    imm = theta / N
    out = np.empty((n + 1, N))
    out[0] = v = x0.copy()
    for k in range(n):
        inflow = v.mean() + imm
        v = v + (inflow - v + spec.mu(v)) * dt \
            + np.sqrt(spec.sigma2(v) * dt) * noise[k]
        v = np.clip(v, 0.0, upper)
        out[k + 1] = v
    return SystemPath(grid, out)


def _level_coeffs(spec: CoefficientSpec, v: np.ndarray):
    """Reaction drift and squared diffusion for a level-decomposed state.

    v has shape (..., levels, islands).  Each level's coefficients are the
    total-mass coefficients shared out proportionally:
        drift_k = (v_k / tot) mu(tot),  diff2_k = (v_k / tot) sigma2(tot),
    extended by 0 where the island total vanishes.
    """
    tot = v.sum(axis=-2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(tot > 0.0, v / np.where(tot > 0.0, tot, 1.0), 0.0)
    return frac * spec.mu(tot), frac * spec.sigma2(tot)


def simulate_level_system(spec: CoefficientSpec, n_islands: int, theta: float,
                          x0, k_max: int, grid: TimeGrid, seed: int) -> LevelSystemPath:
    """Uniform system decomposed by immigration level.

    Level 0 receives the external immigration theta/N; level k >= 1 receives
    the mean of level k-1.  Reaction terms are the total-mass coefficients
    shared proportionally (exact in law for the linear diffusion family;
    marked experimental otherwise).  Initial mass sits entirely in level 0.
    """
    N, L = int(n_islands), int(k_max)
    if N < 1 or L < 0:
        raise ConfigError("need n_islands >= 1 and k_max >= 0")
    if theta < 0:
        raise ConfigError("theta must be nonnegative")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N,):
        raise ConfigError("x0 must have one entry per island")
    _check_x0(spec, x0)
    n = grid.n_steps
    if (n + 1) * (L + 1) * N * 8 > 2**28:
        raise ConfigError("grid too large for full storage; use the batch engines")
    keys = [(i, k) for k in range(L + 1) for i in range(N)]
    noise = _noise_columns(seed, rngmod.LEVELS, n, keys).reshape(n, L + 1, N)
    upper = spec.domain.upper
    dt = grid.dt
    from .coefficients import LinearDiffusion
    experimental = not isinstance(spec.diffusion, LinearDiffusion)

    out = np.empty((n + 1, L + 1, N))
    v = np.zeros((L + 1, N))
    v[0] = x0
    out[0] = v
    dropped = 0.0
    inflow = np.empty((L + 1, N))
    for k in range(n):
        lvl_mean = v.mean(axis=1)
        inflow[0, :] = theta / N
        inflow[1:, :] = lvl_mean[:-1, None]
        dropped += lvl_mean[L] * N * dt
        mu_k, s2_k = _level_coeffs(spec, v)
        v = v + (inflow - v + mu_k) * dt + np.sqrt(s2_k * dt) * noise[k]
        v = np.clip(v, 0.0, upper)
        out[k + 1] = v
    return LevelSystemPath(grid, out, dropped_mass=dropped, experimental=experimental)


def simulate_loop_free(spec: CoefficientSpec, topology, theta: float, x0,
                       k_max: int, grid: TimeGrid, seed: int) -> LevelSystemPath:
    """Loop-free hierarchy: level k is fed by level k-1 but runs its own
    reaction terms, so no mass ever returns to the level it came from.

    dZ^k(i) = [inflow_k(i) - Z^k(i) + mu(Z^k(i))] dt + sqrt(sigma2(Z^k(i))) dB^k(i)

    topology: either an island count (uniform routing, inflow_k = mean of
    level k-1 plus theta/N at level 0) or a MigrationMatrix.
    """
    if isinstance(topology, MigrationMatrix):
        m, N, uniform = topology.entries, topology.n_islands, False
    else:
        N, uniform = int(topology), True
        if N < 1:
            raise ConfigError("need at least one island")
    L = int(k_max)
    if theta < 0:
        raise ConfigError("theta must be nonnegative")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N,):
        raise ConfigError("x0 must have one entry per island")
    _check_x0(spec, x0)
    n = grid.n_steps
    if (n + 1) * (L + 1) * N * 8 > 2**28:
        raise ConfigError("grid too large for full storage; use the batch engines")
    keys = [(i, k) for k in range(L + 1) for i in range(N)]
    noise = _noise_columns(seed, rngmod.LOOP_FREE, n, keys).reshape(n, L + 1, N)
    upper = spec.domain.upper
    dt = grid.dt

    out = np.empty((n + 1, L + 1, N))
    v = np.zeros((L + 1, N))
    v[0] = x0
    out[0] = v
    dropped = 0.0
    inflow = np.empty((L + 1, N))
    for k in range(n):
        if uniform:
            lvl_mean = v.mean(axis=1)
            inflow[0, :] = theta / N
            inflow[1:, :] = lvl_mean[:-1, None]
            dropped += lvl_mean[L] * N * dt
        else:
            inflow[0, :] = theta / N
            inflow[1:, :] = v[:-1] @ m
            dropped += float((v[L] @ m).sum()) * dt
        v = v + (inflow - v + spec.mu(v)) * dt + np.sqrt(spec.sigma2(v) * dt) * noise[k]
        v = np.clip(v, 0.0, upper)
        out[k + 1] = v
    return LevelSystemPath(grid, out, dropped_mass=dropped, experimental=False)


# ---------------------------------------------------------------------------
# batch Monte Carlo engines (streaming, chunked)
# ---------------------------------------------------------------------------

def _exact_substep(gen: np.random.Generator, old: np.ndarray, mu_x: np.ndarray,
                   s2_x: np.ndarray, dt: float) -> np.ndarray:
    """One exact step of the locally linearized diffusion from `old`.

    Freezing the ratios mu(y)/y and sigma2(y)/y at the previous state gives
    dY = -b Y dt + sqrt(c Y) dB with b = 1 - mu_x, c = s2_x, whose transition
    is a scaled zero-df noncentral chi-square: Y' = Gamma(K, 2f) with
    K ~ Poisson(old e^{-b dt} / (2f)), f = c (1 - e^{-b dt}) / (4b).
    K = 0 is exact absorption at 0.  Rows with c <= 0 decay deterministically.
    """
    b = 1.0 - mu_x
    c = s2_x
    bdt = np.clip(b * dt, -50.0, 50.0)
    em = -np.expm1(-bdt)  # 1 - e^{-b dt}, sign matches b
    small = np.abs(bdt) < 1e-10
    f = np.where(small, c * dt * 0.25 * (1.0 - 0.5 * bdt),
                 c * em / np.where(small, 1.0, 4.0 * b))
    decay = old * np.exp(-bdt)
    ok = (c > 0.0) & (old > 0.0)
    lam_half = np.where(ok, decay / np.where(ok, 2.0 * f, 1.0), 0.0)
    k = gen.poisson(lam_half)
    new = gen.gamma(k.astype(float), 2.0 * np.where(ok, f, 1.0))
    return np.where(ok, new, decay)


def _exact_inflow_substep(gen: np.random.Generator, old: np.ndarray,
                          inflow: np.ndarray, mu_x: np.ndarray,
                          s2_x: np.ndarray, dt: float) -> np.ndarray:
    """Exact step of the locally linearized diffusion with constant inflow.

    Freezing mu(y)/y, sigma2(y)/y and the inflow a over the step gives
    dY = (a - b Y) dt + sqrt(c Y) dB, a square-root process whose transition
    is a scaled noncentral chi-square: Y' = f * X with
    X ~ chi'^2(4a/c, old e^{-b dt}/f), f = c (1 - e^{-b dt}) / (4b),
    sampled as Gamma(2a/c + K, 2f), K ~ Poisson(old e^{-b dt} / (2f)).
    a = 0 reduces to `_exact_substep` (0 absorbing); a > 0 makes 0 an
    entrance point, with no clipping bias.  Rows with c <= 0 follow the
    drift ODE.
    """
    b = 1.0 - mu_x
    c = s2_x
    bdt = np.clip(b * dt, -50.0, 50.0)
    em = -np.expm1(-bdt)
    small = np.abs(bdt) < 1e-10
    f = np.where(small, c * dt * 0.25 * (1.0 - 0.5 * bdt),
                 c * em / np.where(small, 1.0, 4.0 * b))
    decay = old * np.exp(-bdt)
    # ODE fallback value: a/b + (old - a/b) e^{-b dt}, stable form
    ode = decay + inflow * np.where(small, dt * (1.0 - 0.5 * bdt),
                                    em / np.where(small, 1.0, b))
    ok = c > 0.0
    f_safe = np.where(ok, f, 1.0)
    lam_half = np.where(ok, decay / (2.0 * f_safe), 0.0)
    k = gen.poisson(lam_half)
    shape = np.where(ok, 2.0 * inflow / np.where(ok, c, 1.0), 0.0) + k
    new = gen.gamma(shape, 2.0 * f_safe)
    return np.where(ok, new, ode)


def _hybrid_matrix_step(gen: np.random.Generator, v: np.ndarray,
                        inflow, spec: CoefficientSpec, dt: float,
                        upper: float, y_switch: float) -> np.ndarray:
    """One step of a component array: Euler above y_switch, exact below.

    v and inflow broadcast to a common shape; values below y_switch advance
    with `_exact_inflow_substep`, the rest with plain Euler clamped to the
    domain.  Draw order (normals first, then Poisson/Gamma) is fixed, so a
    chunk's stream is reproducible.
    """
    flat = v.ravel()
    a = np.broadcast_to(inflow, v.shape).ravel()
    lo = flat < y_switch
    out = np.empty_like(flat)
    if not lo.all():
        hi = ~lo
        vh = flat[hi]
        noise = gen.standard_normal(vh.size)
        nh = vh + (a[hi] - vh + spec.mu(vh)) * dt \
            + np.sqrt(spec.sigma2(vh) * dt) * noise
        out[hi] = np.clip(nh, 0.0, upper)
    if lo.any():
        vl = flat[lo]
        nl = _exact_inflow_substep(gen, vl, a[lo], spec.mu_over_x(vl),
                                   spec.sigma2_over_x(vl), dt)
        out[lo] = np.minimum(nl, upper)
    return out.reshape(v.shape)


def _bridge_dead(u: np.ndarray, old: np.ndarray, new: np.ndarray,
                 denom: np.ndarray) -> np.ndarray:
    """Absorption test at 0 for one Euler step from old to new.

    denom = sigma2(old) * dt.  A step ending at new <= 0 is dead outright;
    a step staying positive is killed with the Brownian-bridge touch
    probability exp(-2 old new / denom), compared against the uniform u.
    """
    safe = np.where(denom > 0.0, denom, 1.0)
    p = np.where((denom > 0.0) & (new > 0.0) & (old > 0.0),
                 np.exp(-2.0 * old * np.maximum(new, 0.0) / safe), 0.0)
    return (new <= 0.0) | (u < p)


def _bridge_crossed(u: np.ndarray, old: np.ndarray, new: np.ndarray,
                    level: float, denom: np.ndarray) -> np.ndarray:
    """Up-crossing test of `level` for one Euler step from old (< level)."""
    safe = np.where(denom > 0.0, denom, 1.0)
    p = np.where((denom > 0.0) & (new < level),
                 np.exp(-2.0 * (level - old) * (level - new) / safe), 0.0)
    return (new >= level) | (u < p)


@dataclass
class SingleBatchStats:
    """Per-path statistics from `single_batch_stats` (concatenated chunks)."""

    area: np.ndarray
    peak: np.ndarray
    hit: np.ndarray
    censored: int


def switch_level(dt: float, stop_level: float | None = None,
                 upper: float = math.inf) -> float:
    """Level below which the exact local kernel takes over in hybrid mode.

    High enough (40 dt) that Euler steps from above almost never reach 0 in
    one move, low enough that the local linearization of mu/y and sigma2/y is
    tight and a stopping level stays out of one-step reach.
    """
    lvl = 40.0 * dt
    if stop_level is not None:
        lvl = min(lvl, 0.5 * stop_level)
    if math.isfinite(upper):
        lvl = min(lvl, 0.25 * upper)
    return lvl


def single_batch_stats(spec: CoefficientSpec, x0: float, dt: float, seed: int,
                       replicates: int, tag: int, max_steps: int,
                       stop_level: float | None = None,
                       boundary: str = "exact",
                       chunk: int = CHUNK) -> SingleBatchStats:
    """Simulate `replicates` independent single islands from x0 until each is
    absorbed at 0, reaches stop_level (recorded in `hit`, then stopped), or
    exhausts max_steps (counted as censored).

    boundary modes:
      "exact" (default): below `switch_level(dt, ...)` the step is drawn from
        the exact transition of the locally linearized model (absorption is
        its atom at 0); above it, Euler with the bridge corrections.
      "bridge": Euler everywhere with Brownian-bridge corrections for
        absorption and (when stop_level is set) intra-step up-crossings.
      "clip": the plain clamp scheme, node-only crossing detection.
    For paths stopped at stop_level, `hit` is authoritative; their recorded
    peak and area stop at the detection step.
    """
    _check_x0(spec, x0)
    if boundary not in ("exact", "bridge", "clip"):
        raise ConfigError("boundary must be 'exact', 'bridge' or 'clip'")
    upper = spec.domain.upper
    y_switch = switch_level(dt, stop_level, upper) if boundary == "exact" else 0.0

    areas, peaks, hits = [], [], []
    censored = 0
    n_chunks = (replicates + chunk - 1) // chunk
    for ci in range(n_chunks):
        b = min(chunk, replicates - ci * chunk)
        gen = rngmod.substream(seed, rngmod.EXPERIMENT, tag, ci)
        area = np.zeros(b)
        peak = np.full(b, float(x0))
        hit = np.zeros(b, dtype=bool)
        idx = np.arange(b)
        cur_v = np.full(b, float(x0))
        steps = 0
        while idx.size and steps < max_steps:
            old = cur_v
            lo = old < y_switch  # all False unless hybrid mode
            hi = np.nonzero(~lo)[0]
            lo = np.nonzero(lo)[0]
            new = np.empty_like(old)
            crossed = None
            if hi.size:
                oh = old[hi]
                s2dt = spec.sigma2(oh) * dt
                nh = oh + (-oh + spec.mu(oh)) * dt \
                    + np.sqrt(s2dt) * gen.standard_normal(hi.size)
                nh = np.minimum(nh, upper)
                if boundary == "clip":
                    nh = np.maximum(nh, 0.0)
                    ch = (nh >= stop_level) if stop_level is not None else None
                else:
                    # One uniform serves both boundary tests: the 0- and
                    # stop_level-adjacent regions where either probability
                    # is non-negligible are never both one step away.
                    u = gen.random(hi.size)
                    if stop_level is not None:
                        ch = _bridge_crossed(u, oh, nh, stop_level, s2dt)
                        dead = ~ch & _bridge_dead(u, oh, nh, s2dt)
                    else:
                        ch = None
                        dead = _bridge_dead(u, oh, nh, s2dt)
                    nh = np.where(dead, 0.0, np.maximum(nh, 0.0))
                if ch is not None:
                    crossed = np.zeros(old.size, dtype=bool)
                    crossed[hi] = ch
                new[hi] = nh
            if lo.size:
                ol = old[lo]
                nl = _exact_substep(gen, ol, spec.mu_over_x(ol),
                                    spec.sigma2_over_x(ol), dt)
                nl = np.minimum(nl, upper)
                if stop_level is not None:
                    cl = nl >= stop_level
                    if cl.any():
                        if crossed is None:
                            crossed = np.zeros(old.size, dtype=bool)
                        crossed[lo] = cl
                new[lo] = nl
            if crossed is not None and crossed.any():
                hit[idx] |= crossed
                new = np.where(crossed, 0.0, new)
            area[idx] += 0.5 * (old + new) * dt
            np.maximum(peak[idx], new, out=peak[idx])
            cur_v = new
            steps += 1
            if steps % 64 == 0:
                alive = cur_v > 0.0
                if not alive.all():
                    keep = np.nonzero(alive)[0]
                    idx = idx[keep]
                    cur_v = cur_v[keep]
            elif not (cur_v > 0.0).any():
                idx = idx[:0]
        if idx.size:
            censored += int((cur_v > 0.0).sum())
        areas.append(area)
        peaks.append(peak)
        hits.append(hit)
    return SingleBatchStats(
        area=np.concatenate(areas), peak=np.concatenate(peaks),
        hit=np.concatenate(hits), censored=censored)


def sample_system_stats(spec: CoefficientSpec, topology, theta: float, x0,
                        grid: TimeGrid, seed: int, replicates: int,
                        report_nodes, reducers, tag: int,
                        mode: str = "unsplit", k_max: int = 0,
                        boundary: str = "exact",
                        chunk: int = 256) -> dict:
    """Streaming replicated system simulation with per-report-node reduction.

    topology: island count (uniform routing) or MigrationMatrix.
    reducers: mapping name -> callable taking the per-island state block,
    shape (r, islands), and returning one number per replicate.  In the
    'levels' and 'loop_free' modes the block passed is the sum over levels.
    Returns {name: array (n_report_nodes, replicates)} plus '_dropped_mass'
    (mean over replicates of the mass lost to the level cap).

    boundary "exact" (default) steps components below `switch_level` with
    the inflow-aware local kernel; small masses otherwise pick up a clamp
    bias that inflates the whole system.  "clip" is plain truncated Euler.
    """
    if isinstance(topology, MigrationMatrix):
        m, N, uniform = topology.entries, topology.n_islands, False
    else:
        N, uniform = int(topology), True
        m = None
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (N,):
        raise ConfigError("x0 must have one entry per island")
    _check_x0(spec, x0)
    if mode not in ("unsplit", "levels", "loop_free"):
        raise ConfigError(f"unknown mode {mode!r}")
    if boundary not in ("exact", "clip"):
        raise ConfigError(f"unknown boundary scheme {boundary!r}")
    report_nodes = sorted(int(k) for k in report_nodes)
    if report_nodes and (report_nodes[0] < 0 or report_nodes[-1] > grid.n_steps):
        raise ConfigError("report nodes outside the grid")
    upper = spec.domain.upper
    dt = grid.dt
    n = grid.n_steps
    L = int(k_max)
    y_switch = switch_level(dt, None, upper) if boundary == "exact" else 0.0
    out = {name: np.empty((len(report_nodes), replicates)) for name in reducers}
    dropped_total = 0.0

    purpose = {"unsplit": 1, "levels": 2, "loop_free": 3}[mode]
    n_chunks = (replicates + chunk - 1) // chunk
    for ci in range(n_chunks):
        r0 = ci * chunk
        r = min(chunk, replicates - r0)
        gen = rngmod.substream(seed, rngmod.EXPERIMENT, tag, purpose, ci)
        if mode == "unsplit":
            v = np.broadcast_to(x0, (r, N)).copy()
        else:
            v = np.zeros((r, L + 1, N))
            v[:, 0, :] = x0
        report_set = {node: j for j, node in enumerate(report_nodes)}

        def record(node, state):
            j = report_set.get(node)
            if j is None:
                return
            block = state if mode == "unsplit" else state.sum(axis=1)
            for name, fn in reducers.items():
                out[name][j, r0:r0 + r] = fn(block)

        record(0, v)
        for k in range(n):
            if mode == "unsplit":
                if uniform:
                    inflow = v.mean(axis=1, keepdims=True) + theta / N
                else:
                    inflow = v @ m + theta / N
                if boundary == "exact":
                    v = _hybrid_matrix_step(gen, v, inflow, spec, dt, upper,
                                            y_switch)
                else:
                    noise = gen.standard_normal((r, N))
                    v = v + (inflow - v + spec.mu(v)) * dt \
                        + np.sqrt(spec.sigma2(v) * dt) * noise
                    v = np.clip(v, 0.0, upper)
            else:
                lvl_in = np.empty_like(v)
                if uniform:
                    lvl_mean = v.mean(axis=2)
                    lvl_in[:, 0, :] = theta / N
                    lvl_in[:, 1:, :] = lvl_mean[:, :-1, None]
                    dropped_total += float(lvl_mean[:, L].sum()) * N * dt / replicates
                else:
                    lvl_in[:, 0, :] = theta / N
                    lvl_in[:, 1:, :] = v[:, :-1, :] @ m
                    dropped_total += float((v[:, L, :] @ m).sum()) * dt / replicates
                if mode == "levels":
                    if boundary == "exact":
                        # per-level proportional coefficient sharing matches
                        # the linear-ratio form the local kernel freezes
                        tot = v.sum(axis=1, keepdims=True)
                        mu_xt = np.broadcast_to(spec.mu_over_x(tot), v.shape)
                        s2_xt = np.broadcast_to(spec.sigma2_over_x(tot),
                                                v.shape)
                        flat = _exact_inflow_substep(
                            gen, v.ravel(), lvl_in.ravel(), mu_xt.ravel(),
                            s2_xt.ravel(), dt)
                        v = np.minimum(flat.reshape(v.shape), upper)
                    else:
                        noise = gen.standard_normal((r, L + 1, N))
                        mu_k, s2_k = _level_coeffs(spec, v)
                        v = v + (lvl_in - v + mu_k) * dt + np.sqrt(s2_k * dt) * noise
                        v = np.clip(v, 0.0, upper)
                else:
                    if boundary == "exact":
                        v = _hybrid_matrix_step(gen, v, lvl_in, spec, dt,
                                                upper, y_switch)
                    else:
                        noise = gen.standard_normal((r, L + 1, N))
                        v = v + (lvl_in - v + spec.mu(v)) * dt \
                            + np.sqrt(spec.sigma2(v) * dt) * noise
                        v = np.clip(v, 0.0, upper)
            record(k + 1, v)
    out["_dropped_mass"] = dropped_total
    return out


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def export_path_csv(obj, fname: str) -> None:
    """Write t,island,level,value rows; level -1 carries the unsplit view."""
    times = [float(t) for t in obj.grid.times()]
    with open(fname, "w") as fh:
        fh.write("t,island,level,value\n")
        if isinstance(obj, Path):
            for t, v in zip(times, obj.values):
                fh.write(f"{t!r},0,-1,{float(v)!r}\n")
        elif isinstance(obj, SystemPath):
            for k, t in enumerate(times):
                for i in range(obj.n_islands):
                    fh.write(f"{t!r},{i},-1,{float(obj.values[k, i])!r}\n")
        elif isinstance(obj, LevelSystemPath):
            unsplit = obj.values.sum(axis=1)
            for k, t in enumerate(times):
                for i in range(obj.n_islands):
                    fh.write(f"{t!r},{i},-1,{float(unsplit[k, i])!r}\n")
                    for lev in range(obj.k_max + 1):
                        fh.write(f"{t!r},{i},{lev},"
                                 f"{float(obj.values[k, lev, i])!r}\n")
        else:
            raise ConfigError(f"cannot export {type(obj).__name__}")
