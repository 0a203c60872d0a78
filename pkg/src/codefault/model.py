"""Domain types shared by every backend.

A scenario consists of K bank default intensities, one market-wide stress
intensity, and a co-default window ``epsilon``.  Each intensity is a
nonnegative function of time (possibly through a realized state path); its
running integral drives default times via unit-exponential thresholds:

    eta = inf{s : A(s) >= Z},   A(s) = integral of alpha over [0, s],
    tau_i = min(eta_0, eta_i).

This module owns the intensity specifications, the compiled piecewise-linear
``IntensityCurve`` (integral, inverse, pointwise evaluation), state paths,
scenario validation, and the small result containers used for reporting.
All types are immutable after construction; operations are pure functions.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "AffineState",
    "Constant",
    "DestructiveCompetition",
    "Estimate",
    "IntensityCurve",
    "IntensitySpec",
    "MarketModel",
    "PathRequiredError",
    "PiecewiseDeterministic",
    "ProbabilityReport",
    "Quantity",
    "StatePath",
    "ValidationReport",
    "compile_intensity",
    "constant_rate",
    "integrated_intensity",
    "inverse_integrated_intensity",
    "validate",
]


class PathRequiredError(ValueError):
    """A state-dependent intensity was evaluated without a state path."""


def _as_float_tuple(xs) -> tuple:
    return tuple(float(x) for x in xs)


# ---------------------------------------------------------------------------
# Intensity specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """Time-constant intensity: alpha(t) = rate."""

    rate: float

    def __post_init__(self):
        if not (self.rate >= 0.0) or not math.isfinite(self.rate):
            raise ValueError(f"constant intensity must be finite and >= 0, got {self.rate}")

    requires_path = False


@dataclass(frozen=True)
class PiecewiseDeterministic:
    """Intensity given as values on a time grid, interpolated linearly.

    The grid must start at 0 and be strictly increasing.  Beyond the last
    grid point the intensity is frozen at its final value so the integral
    keeps growing (default times stay almost-surely finite).
    """

    grid: tuple
    values: tuple

    def __init__(self, grid, values):
        object.__setattr__(self, "grid", _as_float_tuple(grid))
        object.__setattr__(self, "values", _as_float_tuple(values))
        if len(self.grid) != len(self.values):
            raise ValueError("grid and values must have the same length")
        if len(self.grid) == 0:
            raise ValueError("grid must be nonempty")
        if self.grid[0] != 0.0:
            raise ValueError("grid must start at 0")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly increasing")
        if any(v < 0.0 or not math.isfinite(v) for v in self.values):
            raise ValueError("intensity values must be finite and >= 0")

    requires_path = False


@dataclass(frozen=True)
class AffineState:
    """Intensity linear in the state vector: alpha(X_r) = sum_j betas[j] * x_j(r)."""

    betas: tuple

    def __init__(self, betas):
        object.__setattr__(self, "betas", _as_float_tuple(betas))
        if len(self.betas) == 0:
            raise ValueError("betas must be nonempty")
        if any(b < 0.0 or not math.isfinite(b) for b in self.betas):
            raise ValueError("betas must be finite and >= 0 (intensity must be nonnegative)")

    requires_path = True


@dataclass(frozen=True)
class DestructiveCompetition:
    """Per-bank risk that grows with the number of banks: alpha = ln(K) + base."""

    base: "IntensitySpec"
    K: int

    def __post_init__(self):
        if not isinstance(self.K, int) or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")

    @property
    def requires_path(self) -> bool:
        return self.base.requires_path


IntensitySpec = Union[Constant, PiecewiseDeterministic, AffineState, DestructiveCompetition]


def constant_rate(spec: IntensitySpec) -> Optional[float]:
    """Effective constant rate of a time-invariant spec, else None."""
    if isinstance(spec, Constant):
        return spec.rate
    if isinstance(spec, DestructiveCompetition):
        base = constant_rate(spec.base)
        if base is not None:
            return math.log(spec.K) + base
    return None


# ---------------------------------------------------------------------------
# State paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatePath:
    """A realized trajectory of the economy vector on a time grid.

    ``values[k]`` is the d-dimensional state at ``grid[k]``.  Everything
    path-conditional takes one of these; beyond ``horizon`` the state (and
    hence any state-dependent intensity) is frozen at its final value.
    """

    grid: tuple
    values: tuple  # tuple of d-tuples
    horizon: float = 0.0

    def __init__(self, grid, values, horizon=None):
        grid = _as_float_tuple(grid)
        values = tuple(_as_float_tuple(v if isinstance(v, (list, tuple, np.ndarray)) else (v,)) for v in values)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if len(grid) == 0 or len(grid) != len(values):
            raise ValueError("grid and values must be nonempty and of equal length")
        if grid[0] != 0.0:
            raise ValueError("path grid must start at 0")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("path grid must be strictly increasing")
        d = len(values[0])
        if d < 1 or any(len(v) != d for v in values):
            raise ValueError("state vectors must share one dimension d >= 1")
        horizon = float(grid[-1]) if horizon is None else float(horizon)
        if horizon < grid[-1]:
            raise ValueError("horizon must not precede the last grid point")
        object.__setattr__(self, "horizon", horizon)

    @property
    def dimension(self) -> int:
        return len(self.values[0])

    def state_at_zero(self) -> tuple:
        return self.values[0]


# ---------------------------------------------------------------------------
# Market model and result containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketModel:
    """Full scenario: K bank intensities, one stress intensity, window epsilon.

    ``atom_at_zero`` selects the modified default-time definition where the
    threshold comparison starts at alpha(X_0) instead of 0, giving a positive
    probability of an instantaneous default at t = 0 (used by the
    comparative-statics machinery).
    """

    bank_intensities: tuple
    stress_intensity: IntensitySpec
    epsilon: float
    initial_state: Optional[tuple] = None
    atom_at_zero: bool = False

    def __init__(self, bank_intensities, stress_intensity, epsilon,
                 initial_state=None, atom_at_zero=False):
        object.__setattr__(self, "bank_intensities", tuple(bank_intensities))
        object.__setattr__(self, "stress_intensity", stress_intensity)
        object.__setattr__(self, "epsilon", float(epsilon))
        if initial_state is not None:
            initial_state = _as_float_tuple(initial_state)
        object.__setattr__(self, "initial_state", initial_state)
        object.__setattr__(self, "atom_at_zero", bool(atom_at_zero))
        if len(self.bank_intensities) < 1:
            raise ValueError("at least one bank intensity is required")
        if not (self.epsilon > 0.0):
            raise ValueError("epsilon must be > 0")

    @property
    def K(self) -> int:
        return len(self.bank_intensities)

    @property
    def all_constant(self) -> bool:
        return (constant_rate(self.stress_intensity) is not None
                and all(constant_rate(s) is not None for s in self.bank_intensities))

    @property
    def requires_path(self) -> bool:
        return (self.stress_intensity.requires_path
                or any(s.requires_path for s in self.bank_intensities))


class Quantity(enum.Enum):
    MARKET_FAILURE = "MarketFailure"
    CATASTROPHIC = "Catastrophic"
    JOINT_SURVIVAL = "JointSurvival"
    INSTANT_RATE = "InstantRate"
    COMPARATIVE_STATIC = "ComparativeStatic"


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo result: point estimate, standard error, count, seed."""

    mean: float
    std_error: float
    replications: int
    seed: int

    def __post_init__(self):
        if self.std_error < 0.0:
            raise ValueError("std_error must be >= 0")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")


_SANDWICH_SLACK = 1e-10


@dataclass(frozen=True)
class ProbabilityReport:
    """Bundled exact value / bounds / MC estimate for one target quantity."""

    quantity: Quantity
    exact: Optional[float] = None
    lower_bound: Optional[float] = None
    upper_bound: Optional[float] = None
    mc: Optional[Estimate] = None

    def __post_init__(self):
        if self.exact is not None and self.lower_bound is not None and self.upper_bound is not None:
            if not (self.lower_bound - _SANDWICH_SLACK <= self.exact <= self.upper_bound + _SANDWICH_SLACK):
                raise ValueError(
                    f"bound sandwich violated for {self.quantity.value}: "
                    f"{self.lower_bound!r} <= {self.exact!r} <= {self.upper_bound!r} fails"
                )


# ---------------------------------------------------------------------------
# Compiled intensity curves
# ---------------------------------------------------------------------------


class IntensityCurve:
    """A nonnegative piecewise-linear intensity with exact integral and inverse.

    Between knots the intensity is linear, so the integral is quadratic per
    segment and both the integral and its generalized inverse
    inf{s : A(s) >= z} have closed forms.  Beyond the last knot the intensity
    is frozen at its final value.  Instances are immutable; all evaluators
    accept scalars or arrays.
    """

    __slots__ = ("knots", "vals", "cum", "_slopes", "tail_rate")

    def __init__(self, knots, vals):
        knots = np.asarray(knots, dtype=float)
        vals = np.asarray(vals, dtype=float)
        if knots.ndim != 1 or knots.shape != vals.shape or knots.size == 0:
            raise ValueError("knots and vals must be equal-length 1-D arrays")
        if knots[0] != 0.0 or (knots.size > 1 and np.any(np.diff(knots) <= 0)):
            raise ValueError("knots must start at 0 and increase strictly")
        if np.any(vals < 0.0) or not np.all(np.isfinite(vals)):
            raise ValueError("intensity values must be finite and >= 0")
        self.knots = knots
        self.vals = vals
        if knots.size > 1:
            dt = np.diff(knots)
            self._slopes = np.diff(vals) / dt
            self.cum = np.concatenate(([0.0], np.cumsum(0.5 * (vals[:-1] + vals[1:]) * dt)))
        else:
            self._slopes = np.zeros(0)
            self.cum = np.zeros(1)
        self.tail_rate = float(vals[-1])
        if self.tail_rate == 0.0 and knots.size > 1:
            # an explicitly zero constant intensity is intentional; a curve
            # that decays to zero probably is not
            warnings.warn(
                "intensity ends at 0; its integral stays bounded beyond the horizon "
                "and the matching default time may be infinite",
                stacklevel=2,
            )

    def alpha(self, t):
        """Intensity value at time t (frozen at the final value beyond the grid)."""
        return np.interp(t, self.knots, self.vals)

    def integral(self, t):
        """A(t), the exact integral of the interpolated intensity over [0, t]."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < 0.0):
            raise ValueError("t must be >= 0")
        out = np.empty_like(t)
        last = self.knots[-1]
        tail = t >= last
        with np.errstate(invalid="ignore"):
            out[tail] = self.cum[-1] + self.tail_rate * (t[tail] - last)
        if self.tail_rate == 0.0:
            out[tail] = self.cum[-1]
        out[np.isposinf(t)] = np.inf if self.tail_rate > 0.0 else self.cum[-1]
        inner = ~tail
        if np.any(inner):
            ti = t[inner]
            idx = np.searchsorted(self.knots, ti, side="right") - 1
            u = ti - self.knots[idx]
            out[inner] = self.cum[idx] + self.vals[idx] * u + 0.5 * self._slopes[idx] * u * u
        return float(out[0]) if scalar else out

    def inverse(self, z):
        """inf{s : A(s) >= z}; +inf where the integral never reaches z."""
        z = np.asarray(z, dtype=float)
        scalar = z.ndim == 0
        z = np.atleast_1d(z)
        if np.any(z < 0.0):
            raise ValueError("z must be >= 0")
        out = np.zeros_like(z)
        tail = z > self.cum[-1]
        if self.tail_rate > 0.0:
            out[tail] = self.knots[-1] + (z[tail] - self.cum[-1]) / self.tail_rate
        else:
            out[tail] = np.inf
        inner = ~tail & (z > 0.0)
        if np.any(inner):
            zi = z[inner]
            j = np.searchsorted(self.cum, zi, side="left")  # first knot with cum >= z, j >= 1
            v = self.vals[j - 1]
            s = self._slopes[j - 1]
            w = zi - self.cum[j - 1]
            # root of v*u + s*u^2/2 = w in the stable 2w / (v + sqrt(...)) form
            disc = np.sqrt(np.maximum(v * v + 2.0 * s * w, 0.0))
            out[inner] = self.knots[j - 1] + 2.0 * w / (v + disc)
        return float(out[0]) if scalar else out

    @classmethod
    def merge(cls, curves: Sequence["IntensityCurve"]) -> "IntensityCurve":
        """Curve whose intensity is the pointwise sum (exact on the union grid)."""
        knots = np.unique(np.concatenate([c.knots for c in curves]))
        vals = np.zeros_like(knots)
        for c in curves:
            vals += c.alpha(knots)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(knots, vals)


def compile_intensity(spec: IntensitySpec, path: Optional[StatePath] = None) -> IntensityCurve:
    """Turn an intensity spec (plus path where needed) into an IntensityCurve."""
    if isinstance(spec, Constant):
        return IntensityCurve([0.0], [spec.rate])
    if isinstance(spec, PiecewiseDeterministic):
        return IntensityCurve(spec.grid, spec.values)
    if isinstance(spec, AffineState):
        if path is None:
            raise PathRequiredError("AffineState intensity needs a state path")
        states = np.asarray(path.values, dtype=float)
        betas = np.asarray(spec.betas, dtype=float)
        if states.shape[1] != betas.size:
            raise ValueError(
                f"betas dimension {betas.size} does not match state dimension {states.shape[1]}"
            )
        return IntensityCurve(path.grid, states @ betas)
    if isinstance(spec, DestructiveCompetition):
        base = compile_intensity(spec.base, path)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return IntensityCurve(base.knots, base.vals + math.log(spec.K))
    raise TypeError(f"unknown intensity spec {type(spec).__name__}")


def integrated_intensity(spec: IntensitySpec, path: Optional[StatePath], t: float) -> float:
    """A(t) for one spec; the path may be omitted for path-free specs."""
    if t < 0.0:
        raise ValueError("t must be >= 0")
    return compile_intensity(spec, path).integral(float(t))


def inverse_integrated_intensity(spec: IntensitySpec, path: Optional[StatePath], z: float) -> float:
    """inf{s : A(s) >= z}; returns math.inf when the integral never reaches z."""
    if z < 0.0:
        raise ValueError("z must be >= 0")
    return compile_intensity(spec, path).inverse(float(z))


# ---------------------------------------------------------------------------
# Scenario validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple
    backends: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def _spec_violations(label: str, spec: IntensitySpec, d: Optional[int]) -> list:
    problems = []
    if isinstance(spec, AffineState) and d is not None and len(spec.betas) != d:
        problems.append(f"{label}: betas dimension {len(spec.betas)} does not match state dimension {d}")
    if isinstance(spec, DestructiveCompetition):
        problems.extend(_spec_violations(f"{label}.base", spec.base, d))
    return problems


def validate(model: MarketModel, path: Optional[StatePath] = None) -> ValidationReport:
    """Check scenario invariants; returns violations rather than raising.

    Also reports which backends the intensity kinds make eligible:
    ``analytic`` needs every intensity time-constant, ``pathwise`` needs a
    path whenever any intensity is state-dependent, ``mc`` accepts anything.
    """
    violations = []
    if model.K < 2:
        violations.append("K >= 2 required for market failure")
    d = None
    if path is not None:
        d = path.dimension
    elif model.initial_state is not None:
        d = len(model.initial_state)
    for i, spec in enumerate(model.bank_intensities):
        violations.extend(_spec_violations(f"banks[{i}]", spec, d))
    violations.extend(_spec_violations("stress", model.stress_intensity, d))
    if model.atom_at_zero and model.initial_state is None and path is None:
        violations.append("atom_at_zero model needs initial_state or a state path")

    backends = ["simulate"]
    if model.all_constant:
        backends.append("analytic")
    if not model.requires_path or path is not None:
        backends.append("pathwise")
    return ValidationReport(tuple(violations), tuple(sorted(backends)))
