"""Reproducible Monte Carlo oracle for every probability in the engine.

Default times are sampled by inverting integrated intensities at independent
unit-exponential thresholds.  Randomness comes from counter-based Philox
streams keyed by (seed, block, variable): replications are processed in
fixed blocks of ``BLOCK_SIZE``, each variable of each block owns its own
counter segment, and per-block results are reduced in block order.  The same
(model, generator, n, seed) therefore produces bit-identical estimates no
matter how many worker threads execute the blocks, and a single replication
can be regenerated in isolation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import ndtri

from .model import (
    Estimate,
    IntensityCurve,
    MarketModel,
    StatePath,
    compile_intensity,
    constant_rate,
)
from .pathwise import FrozenModel

__all__ = [
    "BLOCK_SIZE",
    "ConstantState",
    "DrawnTimes",
    "FrozenPath",
    "MeanReverting",
    "PathGenerator",
    "estimate_catastrophic",
    "estimate_failure_prob",
    "estimate_failure_prob_stratified",
    "estimate_instantaneous_rate",
    "estimate_joint_survival",
    "expected_over_paths",
    "sample_default_times",
    "sweep_K",
]

BLOCK_SIZE = 1 << 14  # replications per counter block; part of the stream layout

_MASK64 = (1 << 64) - 1
_VAR_PATH = 0  # variable index of the state-path draws; threshold i uses 1 + i


def _stream(seed: int, block: int, var: int) -> np.random.Generator:
    counter = ((block & _MASK64) << 128) | ((var & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=seed & _MASK64, counter=counter))


def _uniforms(seed: int, block: int, var: int, count: int) -> np.ndarray:
    return _stream(seed, block, var).random(count)


def _exponentials(seed: int, block: int, var: int, count: int) -> np.ndarray:
    return -np.log1p(-_uniforms(seed, block, var, count))


def _normals(seed: int, block: int, var: int, count: int) -> np.ndarray:
    u = _uniforms(seed, block, var, count)
    return ndtri(np.clip(u, 5e-324, 1.0 - 1e-16))


# ---------------------------------------------------------------------------
# Path generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrozenPath:
    """Always returns one fixed, externally supplied path."""

    path: StatePath

    is_random = False

    def fixed_path(self) -> StatePath:
        return self.path


@dataclass(frozen=True)
class ConstantState:
    """State pinned at x0 forever."""

    x0: tuple
    horizon: float = 1.0

    def __init__(self, x0, horizon=1.0):
        object.__setattr__(self, "x0", tuple(float(v) for v in x0))
        object.__setattr__(self, "horizon", float(horizon))

    is_random = False

    def fixed_path(self) -> StatePath:
        return StatePath([0.0, self.horizon], [self.x0, self.x0])


@dataclass(frozen=True)
class MeanReverting:
    """Euler scheme x += speed (mean - x) dt + vol sqrt(dt) N, floored at 0."""

    x0: tuple
    mean: tuple
    speed: float
    vol: float
    horizon: float
    dt: Optional[float] = None

    def __init__(self, x0, mean, speed, vol, horizon, dt=None):
        object.__setattr__(self, "x0", tuple(float(v) for v in x0))
        object.__setattr__(self, "mean", tuple(float(v) for v in mean))
        object.__setattr__(self, "speed", float(speed))
        object.__setattr__(self, "vol", float(vol))
        object.__setattr__(self, "horizon", float(horizon))
        object.__setattr__(self, "dt", None if dt is None else float(dt))
        if len(self.x0) != len(self.mean):
            raise ValueError("x0 and mean must share one dimension")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be > 0")
        if self.dt is not None and self.dt <= 0.0:
            raise ValueError("dt must be > 0")

    is_random = True

    def step_size(self) -> float:
        return self.horizon / 1024.0 if self.dt is None else self.dt

    def grid(self) -> np.ndarray:
        dt = self.step_size()
        steps = max(1, int(round(self.horizon / dt)))
        return np.linspace(0.0, steps * dt, steps + 1)

    def sample_states(self, seed: int, block: int, rows: int) -> np.ndarray:
        """(rows, steps+1, d) Euler paths for the leading rows of a block."""
        grid = self.grid()
        steps = grid.size - 1
        d = len(self.x0)
        dt = float(grid[1] - grid[0])
        z = _normals(seed, block, _VAR_PATH, rows * steps * d).reshape(rows, steps, d)
        out = np.empty((rows, steps + 1, d))
        out[:, 0, :] = self.x0
        mean = np.asarray(self.mean)
        scale = self.vol * math.sqrt(dt)
        for k in range(steps):
            x = out[:, k, :]
            out[:, k + 1, :] = np.maximum(x + self.speed * (mean - x) * dt + scale * z[:, k, :], 0.0)
        return out


PathGenerator = Union[FrozenPath, ConstantState, MeanReverting]


# ---------------------------------------------------------------------------
# Threshold inversion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DrawnTimes:
    """One replication: thresholds inverted to etas (stress first) and taus."""

    etas: tuple
    taus: tuple


def _fixed_curves(model: MarketModel, gen: PathGenerator):
    path = gen.fixed_path() if not gen.is_random else None
    if model.requires_path and path is None:
        return None
    stress = compile_intensity(model.stress_intensity, path)
    banks = [compile_intensity(s, path) for s in model.bank_intensities]
    return (stress, *banks)


def _alpha_zeros(model: MarketModel, gen: PathGenerator) -> np.ndarray:
    """alpha_i at the initial state for the atom-at-zero shift, stress first."""
    if gen.is_random:
        path = StatePath([0.0, 1.0], [gen.x0, gen.x0])
    else:
        path = gen.fixed_path()
    return FrozenModel(model, path).alpha_at_zero(model.initial_state)


def _etas_block(model: MarketModel, gen: PathGenerator, seed: int,
                block: int, rows: int) -> np.ndarray:
    """(rows, K+1) threshold crossing times; column 0 is the stress event."""
    K = model.K
    z = np.empty((rows, K + 1))
    for i in range(K + 1):
        z[:, i] = _exponentials(seed, block, 1 + i, rows)
    if model.atom_at_zero:
        z -= _alpha_zeros(model, gen)[None, :]

    curves = _fixed_curves(model, gen)
    etas = np.empty((rows, K + 1))
    if curves is not None:
        for i, curve in enumerate(curves):
            etas[:, i] = curve.inverse(np.maximum(z[:, i], 0.0))
    else:
        states = gen.sample_states(seed, block, rows)
        grid = gen.grid()
        specs = (model.stress_intensity, *model.bank_intensities)
        for i, spec in enumerate(specs):
            alphas = _alpha_on_grid(spec, grid, states)
            etas[:, i] = _invert_on_grid(grid, alphas, np.maximum(z[:, i], 0.0))
    if model.atom_at_zero:
        etas[z <= 0.0] = 0.0
    return etas


def _alpha_on_grid(spec, grid: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Intensity values (rows, len(grid)) along simulated state paths."""
    from .model import AffineState, Constant, DestructiveCompetition, PiecewiseDeterministic

    rows = states.shape[0]
    if isinstance(spec, Constant):
        return np.full((rows, grid.size), spec.rate)
    if isinstance(spec, PiecewiseDeterministic):
        vals = np.interp(grid, spec.grid, spec.values)
        return np.broadcast_to(vals, (rows, grid.size)).copy()
    if isinstance(spec, AffineState):
        return states @ np.asarray(spec.betas)
    if isinstance(spec, DestructiveCompetition):
        return _alpha_on_grid(spec.base, grid, states) + math.log(spec.K)
    raise TypeError(f"unknown intensity spec {type(spec).__name__}")


def _invert_on_grid(grid: np.ndarray, alphas: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Rowwise inf{s : A(s) >= z} with trapezoid A and linear alpha per cell."""
    dt = np.diff(grid)
    cum = np.concatenate(
        (np.zeros((alphas.shape[0], 1)), np.cumsum(0.5 * (alphas[:, :-1] + alphas[:, 1:]) * dt, axis=1)),
        axis=1,
    )
    idx = (cum < z[:, None]).sum(axis=1)  # first index with cum >= z, in 1..S; S+... means tail
    out = np.empty(z.shape)
    tail = idx == grid.size
    if np.any(tail):
        rate = alphas[tail, -1]
        with np.errstate(divide="ignore", invalid="ignore"):
            extra = (z[tail] - cum[tail, -1]) / rate
        extra[~np.isfinite(extra)] = np.inf
        out[tail] = grid[-1] + extra
    inner = ~tail
    if np.any(inner):
        take = np.flatnonzero(inner)
        j = idx[take]
        v = alphas[take, j - 1]
        lo = grid[j - 1]
        w = z[take] - cum[take, j - 1]
        slope = (alphas[take, j] - v) / dt[j - 1]
        disc = np.sqrt(np.maximum(v * v + 2.0 * slope * w, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            u = 2.0 * w / (v + disc)
        u[w == 0.0] = 0.0
        out[take] = lo + u
    return out


def sample_default_times(model: MarketModel, gen: PathGenerator,
                         seed: int, replicate_index: int) -> DrawnTimes:
    """Regenerate one replication's default times from its substreams."""
    if replicate_index < 0:
        raise ValueError("replicate_index must be >= 0")
    block, row = divmod(replicate_index, BLOCK_SIZE)
    etas = _etas_block(model, gen, seed, block, row + 1)[row]
    taus = np.minimum(etas[0], etas[1:])
    return DrawnTimes(tuple(etas), tuple(taus))


# ---------------------------------------------------------------------------
# Block-parallel estimators
# ---------------------------------------------------------------------------


def _blocks(n: int) -> Iterable[Tuple[int, int]]:
    full, rem = divmod(n, BLOCK_SIZE)
    for b in range(full):
        yield b, BLOCK_SIZE
    if rem:
        yield full, rem


def _run_blocks(n: int, block_fn: Callable[[int, int], tuple], workers: int) -> list:
    jobs = list(_blocks(n))
    if workers <= 1:
        return [block_fn(b, rows) for b, rows in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda br: block_fn(*br), jobs))


def _binomial_estimate(count: int, n: int, seed: int) -> Estimate:
    p = count / n
    return Estimate(p, math.sqrt(max(p * (1.0 - p), 0.0) / n), n, seed)


def _taus_of(etas: np.ndarray) -> np.ndarray:
    return np.minimum(etas[:, :1], etas[:, 1:])


def _failure_rows(taus: np.ndarray, epsilon: float) -> np.ndarray:
    order = np.sort(taus, axis=1)
    with np.errstate(invalid="ignore"):
        gaps = np.diff(order, axis=1)
        hit = (gaps < epsilon) | (gaps == 0.0)  # ties count even at epsilon = 0
    return hit.any(axis=1)


def estimate_failure_prob(model: MarketModel, gen: PathGenerator, epsilon: float,
                          n: int, seed: int, workers: int = 1) -> Estimate:
    """Frequency of min_{i<j} |tau_i - tau_j| < epsilon (ties always count)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if model.K < 2:
        raise ValueError("market failure needs K >= 2 banks")

    def block_fn(b: int, rows: int) -> tuple:
        taus = _taus_of(_etas_block(model, gen, seed, b, rows))
        return (int(_failure_rows(taus, epsilon).sum()),)

    counts = _run_blocks(n, block_fn, workers)
    return _binomial_estimate(sum(c for (c,) in counts), n, seed)


def estimate_catastrophic(model: MarketModel, gen: PathGenerator, epsilon: float,
                          n: int, seed: int, workers: int = 1) -> Estimate:
    """Frequency of max_i tau_i <= epsilon."""
    if n < 1:
        raise ValueError("n must be >= 1")

    def block_fn(b: int, rows: int) -> tuple:
        taus = _taus_of(_etas_block(model, gen, seed, b, rows))
        return (int((taus.max(axis=1) <= epsilon).sum()),)

    counts = _run_blocks(n, block_fn, workers)
    return _binomial_estimate(sum(c for (c,) in counts), n, seed)


def estimate_joint_survival(model: MarketModel, gen: PathGenerator,
                            t_vec: Sequence[float], n: int, seed: int,
                            workers: int = 1) -> Estimate:
    """Frequency of tau_i > t_i for every bank."""
    t = np.asarray(t_vec, dtype=float)
    if t.shape != (model.K,):
        raise ValueError(f"need {model.K} times")
    if n < 1:
        raise ValueError("n must be >= 1")

    def block_fn(b: int, rows: int) -> tuple:
        taus = _taus_of(_etas_block(model, gen, seed, b, rows))
        return (int((taus > t[None, :]).all(axis=1).sum()),)

    counts = _run_blocks(n, block_fn, workers)
    return _binomial_estimate(sum(c for (c,) in counts), n, seed)


def estimate_instantaneous_rate(model: MarketModel, gen: PathGenerator, t: float,
                                epsilon: float, n: int, seed: int,
                                banks: Tuple[int, int] = (0, 1),
                                workers: int = 1) -> Estimate:
    """Conditional co-default frequency over (t, t+eps], divided by eps.

    The standard error is the delta-method binomial error of the conditional
    frequency, scaled by 1/eps.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0")
    i, j = banks
    cols = np.array([i, j])

    def block_fn(b: int, rows: int) -> tuple:
        taus = _taus_of(_etas_block(model, gen, seed, b, rows))[:, cols]
        alive = (taus > t).all(axis=1)
        both = alive & (taus <= t + epsilon).all(axis=1)
        return int(both.sum()), int(alive.sum())

    parts = _run_blocks(n, block_fn, workers)
    num = sum(p[0] for p in parts)
    den = sum(p[1] for p in parts)
    if den == 0:
        raise ValueError("no replication survived the conditioning time t")
    p = num / den
    return Estimate(p / epsilon, math.sqrt(max(p * (1.0 - p), 0.0) / den) / epsilon, n, seed)


def estimate_failure_prob_stratified(model: MarketModel, epsilon: float,
                                     n: int, seed: int, workers: int = 1) -> Estimate:
    """Variance-reduced failure estimator for all-constant models.

    Conditional on the bank thresholds, the stress time enters the failure
    event only through eta_0 < min(eta_(K), eta_(K-1) + eps) when the banks
    themselves are separated; that probability has a closed form, so each
    replication contributes it exactly instead of a rare indicator.
    """
    a0 = constant_rate(model.stress_intensity)
    rates = [constant_rate(s) for s in model.bank_intensities]
    if a0 is None or any(r is None or r <= 0.0 for r in rates):
        raise ValueError("stratified estimator needs constant rates (banks > 0)")
    if model.K < 2:
        raise ValueError("market failure needs K >= 2 banks")
    rates_arr = np.asarray(rates)

    def block_fn(b: int, rows: int) -> tuple:
        etas = np.empty((rows, model.K))
        for i in range(model.K):
            etas[:, i] = _exponentials(seed, b, 2 + i, rows) / rates_arr[i]
        order = np.sort(etas, axis=1)
        gaps = np.diff(order, axis=1)
        clustered = ((gaps < epsilon) | (gaps == 0.0)).any(axis=1)
        cut = np.minimum(order[:, -1], order[:, -2] + epsilon)
        p = np.where(clustered, 1.0, -np.expm1(-a0 * cut))
        return float(p.sum()), float(np.dot(p, p))

    parts = _run_blocks(n, block_fn, workers)
    total = math.fsum(p[0] for p in parts)
    total_sq = math.fsum(p[1] for p in parts)
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * (n / max(n - 1, 1))
    return Estimate(mean, math.sqrt(var / n), n, seed)


def expected_over_paths(model: MarketModel, gen: PathGenerator,
                        fn: Callable[[FrozenModel], float],
                        n_paths: int, seed: int, workers: int = 1) -> Estimate:
    """Mean of a path-conditional functional over generated state paths."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if not gen.is_random:
        value = fn(FrozenModel(model, gen.fixed_path()))
        return Estimate(value, 0.0, n_paths, seed)
    grid = gen.grid()

    def block_fn(b: int, rows: int) -> tuple:
        states = gen.sample_states(seed, b, rows)
        vals = np.empty(rows)
        for r in range(rows):
            path = StatePath(grid, states[r], horizon=float(grid[-1]))
            vals[r] = fn(FrozenModel(model, path))
        return float(vals.sum()), float(np.dot(vals, vals))

    parts = _run_blocks(n_paths, block_fn, workers)
    total = math.fsum(p[0] for p in parts)
    total_sq = math.fsum(p[1] for p in parts)
    mean = total / n_paths
    var = max(total_sq / n_paths - mean * mean, 0.0) * (n_paths / max(n_paths - 1, 1))
    return Estimate(mean, math.sqrt(var / n_paths), n_paths, seed)


def sweep_K(base_model: MarketModel, K_range: Sequence[int], gen: PathGenerator,
            epsilon: float, n: int, seed: int, destructive: bool = False,
            workers: int = 1) -> list:
    """Failure-probability estimates per K, recycling the base bank specs.

    With ``destructive`` the bank intensities become ln(K) + base so each
    bank's risk grows with the number of banks; otherwise the intensity
    functions stay fixed as banks are appended.
    """
    from .model import DestructiveCompetition

    pool = base_model.bank_intensities
    out = []
    for K in K_range:
        if K < 2:
            raise ValueError("sweep needs K >= 2")
        banks = [pool[i % len(pool)] for i in range(K)]
        if destructive:
            banks = [DestructiveCompetition(_strip_dc(s), K) for s in banks]
        m = MarketModel(banks, base_model.stress_intensity, base_model.epsilon,
                        initial_state=base_model.initial_state,
                        atom_at_zero=base_model.atom_at_zero)
        out.append((K, estimate_failure_prob(m, gen, epsilon, n, seed, workers)))
    return out


def _strip_dc(spec):
    from .model import DestructiveCompetition

    return spec.base if isinstance(spec, DestructiveCompetition) else spec
