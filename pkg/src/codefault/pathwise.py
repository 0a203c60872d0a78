"""Path-conditional probabilities by nested quadrature.

Conditioning on a realized state path freezes every intensity into a
deterministic function of time, so each quantity reduces to iterated
integrals of densities f_i(x) = alpha_i(x) exp(-A_i(x)).  The separation
probability for a fixed bank ordering is a (K-1)-fold nested tail integral

    int_0^inf f_{j_1}(x_1) int_{x_1+eps}^inf f_{j_2}(x_2) ...
        exp(-A_{j_K}(x_{K-1}+eps) - A_0(x_{K-1}+eps)) dx_{K-1} ... dx_1,

which this module evaluates bottom-up: the innermost tail integral is
tabulated on a kink-aligned composite Gauss-Legendre grid, interpolated with
a cubic Hermite spline (its derivative is the known integrand), and fed into
the next level as an ordinary 1-D integrand.  The whole ladder is repeated
on a doubled grid until successive values agree within tolerance.

Integrands are truncated where the combined integrated intensity reaches
``TAIL_EXPONENT`` (remaining mass below e^-40), which is folded into the
error budget.
"""

from __future__ import annotations

import itertools
import math
import warnings
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .model import (
    AffineState,
    Constant,
    DestructiveCompetition,
    IntensityCurve,
    MarketModel,
    PathRequiredError,
    PiecewiseDeterministic,
    StatePath,
    compile_intensity,
)
from .analytic import position_factor_permanent

__all__ = [
    "FrozenModel",
    "QUAD_LIMIT",
    "QuadratureError",
    "bounds_path",
    "catastrophic_prob_path",
    "comparative_static_path",
    "density_normalization",
    "failure_prob_path",
    "instantaneous_rate_path",
    "joint_survival_path",
    "pairwise_separation_prob",
    "perm_integral",
]

QUAD_LIMIT = 4          # K! nested ladders; beyond this Monte Carlo wins
TAIL_EXPONENT = 40.0    # truncate where total integrated intensity hits this
_BASE_CELLS = 512
_MAX_CELLS = 32768
_GL_ORDER = 10

_gl_x, _gl_w = np.polynomial.legendre.leggauss(_GL_ORDER)
_GL_X01 = 0.5 * (_gl_x + 1.0)
_GL_W01 = 0.5 * _gl_w


class QuadratureError(RuntimeError):
    """Quadrature failed to converge; carries the achieved error estimate."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error estimate {achieved:.3e})")
        self.achieved = achieved


class FrozenModel:
    """A market model with every intensity compiled along one state path."""

    def __init__(self, model: MarketModel, path: Optional[StatePath] = None):
        if model.requires_path and path is None:
            raise PathRequiredError("model has state-dependent intensities; a path is required")
        self.model = model
        self.path = path
        self.curves = tuple(compile_intensity(s, path) for s in model.bank_intensities)
        self.stress = compile_intensity(model.stress_intensity, path)

    @property
    def K(self) -> int:
        return self.model.K

    @property
    def epsilon(self) -> float:
        return self.model.epsilon

    @property
    def all_constant(self) -> bool:
        return all(c.knots.size == 1 for c in (*self.curves, self.stress))

    def default_tol(self) -> float:
        return 1e-8 if self.all_constant else 1e-6

    def initial_state(self) -> Optional[tuple]:
        if self.model.initial_state is not None:
            return self.model.initial_state
        if self.path is not None:
            return self.path.state_at_zero()
        return None

    def alpha_at_zero(self, initial_state=None) -> np.ndarray:
        """alpha_i evaluated at the initial state, stress first.

        ``initial_state`` overrides the model's initial state without
        touching the compiled curves; only state-dependent specs react,
        which is exactly the dependence the comparative statics perturb.
        """
        x0 = self.initial_state() if initial_state is None else np.asarray(initial_state, float)
        out = np.empty(self.K + 1)
        specs = (self.model.stress_intensity, *self.model.bank_intensities)
        conv = (self.stress, *self.curves)
        for idx, (spec, curve) in enumerate(zip(specs, conv)):
            out[idx] = _alpha_spec_at_zero(spec, x0, curve)
        return out

    def gradients_at_zero(self, ell: int) -> np.ndarray:
        """d alpha_i(X_0) / d x_ell(0) for every intensity, stress first."""
        specs = (self.model.stress_intensity, *self.model.bank_intensities)
        return np.array([_alpha_spec_gradient(s, ell) for s in specs])


def _alpha_spec_at_zero(spec, x0, curve: IntensityCurve) -> float:
    if isinstance(spec, AffineState):
        if x0 is None:
            raise ValueError("affine intensity needs an initial state")
        return float(np.dot(spec.betas, np.asarray(x0, float)))
    if isinstance(spec, DestructiveCompetition):
        inner = IntensityCurve(curve.knots, np.maximum(curve.vals - math.log(spec.K), 0.0))
        return math.log(spec.K) + _alpha_spec_at_zero(spec.base, x0, inner)
    return float(curve.vals[0])


def _alpha_spec_gradient(spec, ell: int) -> float:
    if isinstance(spec, AffineState):
        if not 0 <= ell < len(spec.betas):
            raise IndexError(f"coordinate {ell} out of range for d={len(spec.betas)}")
        return spec.betas[ell]
    if isinstance(spec, DestructiveCompetition):
        return _alpha_spec_gradient(spec.base, ell)
    return 0.0


def freeze(model: MarketModel, path: Optional[StatePath] = None) -> FrozenModel:
    return FrozenModel(model, path)


# ---------------------------------------------------------------------------
# Composite quadrature grid
# ---------------------------------------------------------------------------


class _Grid:
    """Kink-aligned composite Gauss-Legendre grid on [0, T]."""

    def __init__(self, boundaries: np.ndarray):
        self.boundaries = boundaries
        widths = np.diff(boundaries)
        self.nodes = (boundaries[:-1, None] + widths[:, None] * _GL_X01[None, :]).ravel()
        self.weights = (widths[:, None] * _GL_W01[None, :]).ravel()
        self.ncells = widths.size

    def integrate(self, g_nodes: np.ndarray) -> float:
        return float(np.dot(g_nodes, self.weights))

    def tails(self, g_nodes: np.ndarray) -> np.ndarray:
        """int_{b_i}^{T} g for every boundary b_i (zero at the last)."""
        cell = (g_nodes * self.weights).reshape(self.ncells, _GL_ORDER).sum(axis=1)
        return np.concatenate((np.cumsum(cell[::-1])[::-1], [0.0]))


def _truncation_time(fm: FrozenModel) -> float:
    """Time past which every level of every ladder has tail mass < e^-TAIL_EXPONENT.

    The slowest-decaying integrand is the innermost one of some ordering,
    whose exponent is a bank pair plus the stress intensity, so the cut must
    let the weakest such combination reach the tail exponent.
    """
    t_star = 0.0
    for i in range(fm.K):
        for j in range(i + 1, fm.K):
            merged = IntensityCurve.merge((fm.curves[i], fm.curves[j], fm.stress))
            t_pair = merged.inverse(TAIL_EXPONENT)
            if math.isinf(t_pair):
                # bounded hazard: the densities vanish beyond the last knot
                t_pair = float(merged.knots[-1] + (fm.K + 1) * fm.epsilon + 1.0)
            t_star = max(t_star, float(t_pair))
    if fm.K == 1:
        merged = IntensityCurve.merge((fm.curves[0], fm.stress))
        t_star = merged.inverse(TAIL_EXPONENT)
        if math.isinf(t_star):
            t_star = float(merged.knots[-1] + 2 * fm.epsilon + 1.0)
    return t_star


def _make_grid(fm: FrozenModel, epsilon: float, n_cells: int) -> _Grid:
    t_end = max(_truncation_time(fm), epsilon, 1e-12)
    kinks = [c.knots for c in (*fm.curves, fm.stress)]
    shifted = [k - r * epsilon for k in kinks for r in range(fm.K + 1)]
    pts = np.concatenate([np.linspace(0.0, t_end, n_cells + 1), *shifted])
    pts = np.unique(pts[(pts >= 0.0) & (pts <= t_end)])
    if pts[0] != 0.0:
        pts = np.concatenate(([0.0], pts))
    return _Grid(pts)


class _Tables:
    """Per-curve evaluations reused across permutations and ladder levels."""

    def __init__(self, fm: FrozenModel, epsilon: float, grid: _Grid):
        self.grid = grid
        x, b = grid.nodes, grid.boundaries
        xs, bs = x + epsilon, b + epsilon
        self.f_nodes = [c.alpha(x) * np.exp(-c.integral(x)) for c in fm.curves]
        self.f_bnd = [c.alpha(b) * np.exp(-c.integral(b)) for c in fm.curves]
        self.surv_shift_nodes = [np.exp(-c.integral(xs)) for c in fm.curves]
        self.surv_shift_bnd = [np.exp(-c.integral(bs)) for c in fm.curves]
        self.stress_shift_nodes = np.exp(-fm.stress.integral(xs))
        self.stress_shift_bnd = np.exp(-fm.stress.integral(bs))
        self.t_end = b[-1]
        self.eps = epsilon


def _perm_ladder(tab: _Tables, perm: Sequence[int]) -> float:
    """One ordering's nested tail integral on the prepared grid."""
    grid = tab.grid
    K = len(perm)
    g_nodes = tab.f_nodes[perm[-2]] * tab.surv_shift_nodes[perm[-1]] * tab.stress_shift_nodes
    g_bnd = tab.f_bnd[perm[-2]] * tab.surv_shift_bnd[perm[-1]] * tab.stress_shift_bnd
    for m in range(K - 3, -1, -1):
        spline = CubicHermiteSpline(grid.boundaries, grid.tails(g_nodes), -g_bnd)
        shifted_n = grid.nodes + tab.eps
        shifted_b = grid.boundaries + tab.eps
        h_nodes = np.where(shifted_n <= tab.t_end, spline(np.minimum(shifted_n, tab.t_end)), 0.0)
        h_bnd = np.where(shifted_b <= tab.t_end, spline(np.minimum(shifted_b, tab.t_end)), 0.0)
        g_nodes = tab.f_nodes[perm[m]] * h_nodes
        g_bnd = tab.f_bnd[perm[m]] * h_bnd
    return grid.integrate(g_nodes)


def _survival_sum_once(fm: FrozenModel, epsilon: float,
                       perms: Sequence[Sequence[int]], n_cells: int) -> float:
    grid = _make_grid(fm, epsilon, n_cells)
    tab = _Tables(fm, epsilon, grid)
    return math.fsum(_perm_ladder(tab, p) for p in perms)


def _converge(evaluate, tol: float, what: str) -> Tuple[float, float]:
    """Double the cell count until successive values agree within tol/2."""
    n = _BASE_CELLS
    prev = evaluate(n)
    while n < _MAX_CELLS:
        n *= 2
        cur = evaluate(n)
        err = abs(cur - prev)
        if err <= 0.5 * tol:
            return cur, err
        prev = cur
    raise QuadratureError(f"{what} did not converge below {tol:.1e}", abs(cur - prev))


def _survival_sum(fm: FrozenModel, epsilon: float, quad_tol: Optional[float],
                  perms: Optional[Sequence[Sequence[int]]] = None) -> float:
    if perms is None:
        perms = list(itertools.permutations(range(fm.K)))
    tol = fm.default_tol() if quad_tol is None else quad_tol
    value, _ = _converge(lambda n: _survival_sum_once(fm, epsilon, perms, n),
                         tol, "separation-probability quadrature")
    return value


# ---------------------------------------------------------------------------
# Path-conditional operations
# ---------------------------------------------------------------------------


def joint_survival_path(fm: FrozenModel, times: Sequence[float]) -> float:
    """exp(-sum_i A_i(t_i) - A_0(max t)) along the frozen path.

    In the atom-at-zero model every exponent additionally carries the
    time-zero intensity, so surviving past any positive time also prices in
    escaping the instantaneous default.
    """
    t = np.asarray(times, dtype=float)
    if t.shape != (fm.K,):
        raise ValueError(f"need {fm.K} times, got shape {t.shape}")
    if np.any(t < 0.0):
        raise ValueError("times must be >= 0")
    expo = sum(c.integral(ti) for c, ti in zip(fm.curves, t))
    expo += fm.stress.integral(float(t.max()))
    if fm.model.atom_at_zero:
        expo += float(fm.alpha_at_zero().sum())
    return math.exp(-expo)


def failure_prob_path(fm: FrozenModel, epsilon: Optional[float] = None,
                      quad_tol: Optional[float] = None,
                      initial_state: Optional[Sequence[float]] = None) -> float:
    """Probability that some pair of default times falls within epsilon.

    For an ``atom_at_zero`` model the separation probability additionally
    carries the factor exp(-sum_i alpha_i(X_0)) from the instantaneous
    defaults; ``initial_state`` overrides X_0 in that factor only (the
    compiled path is left alone), which is the dependence the comparative
    statics differentiate.
    """
    eps = fm.epsilon if epsilon is None else float(epsilon)
    if eps < 0.0:
        raise ValueError("epsilon must be >= 0")
    if not 2 <= fm.K <= QUAD_LIMIT:
        raise ValueError(f"pathwise failure probability needs 2 <= K <= {QUAD_LIMIT}")
    surv = _survival_sum(fm, eps, quad_tol)
    if fm.model.atom_at_zero:
        surv *= math.exp(-float(fm.alpha_at_zero(initial_state).sum()))
    return 1.0 - surv


def perm_integral(fm: FrozenModel, perm: Sequence[int], epsilon: Optional[float] = None,
                  quad_tol: Optional[float] = None) -> float:
    """The nested tail integral of a single bank ordering."""
    eps = fm.epsilon if epsilon is None else float(epsilon)
    if sorted(perm) != list(range(fm.K)):
        raise ValueError(f"perm must order all {fm.K} banks, got {perm}")
    return _survival_sum(fm, eps, quad_tol, perms=[tuple(perm)])


def catastrophic_prob_path(fm: FrozenModel, epsilon: Optional[float] = None) -> float:
    """P(max tau_i <= eps) = 1 + e^{-A_0(eps)} (prod_i (1 - e^{-A_i(eps)}) - 1).

    Atom-at-zero models shift every integrated intensity by the time-zero
    value, which keeps the identity exact under the modified default times.
    """
    eps = fm.epsilon if epsilon is None else float(epsilon)
    if eps < 0.0:
        raise ValueError("epsilon must be >= 0")
    shift = fm.alpha_at_zero() if fm.model.atom_at_zero else np.zeros(fm.K + 1)
    expos = [s + c.integral(eps) for s, c in zip(shift[1:], fm.curves)]
    log_prod = sum(math.log(-math.expm1(-e)) if e > 0.0 else -math.inf for e in expos)
    prod = math.exp(log_prod) if math.isfinite(log_prod) else 0.0
    return 1.0 + math.exp(-(shift[0] + fm.stress.integral(eps))) * (prod - 1.0)


def pairwise_separation_prob(fm: FrozenModel, i: int, j: int,
                             epsilon: Optional[float] = None,
                             quad_tol: Optional[float] = None) -> float:
    """P(|tau_i - tau_j| >= eps) via two one-dimensional tail integrals."""
    if i == j:
        raise ValueError("need two distinct banks")
    eps = fm.epsilon if epsilon is None else float(epsilon)
    tol = fm.default_tol() if quad_tol is None else quad_tol

    def evaluate(n: int) -> float:
        grid = _make_grid(fm, eps, n)
        x = grid.nodes
        stress = np.exp(-fm.stress.integral(x + eps))
        total = 0.0
        for a, b in ((i, j), (j, i)):
            ca, cb = fm.curves[a], fm.curves[b]
            g = ca.alpha(x) * np.exp(-ca.integral(x) - cb.integral(x + eps)) * stress
            total += grid.integrate(g)
        return total

    value, _ = _converge(evaluate, tol, "pairwise-separation quadrature")
    return value


def bounds_path(fm: FrozenModel, epsilon: Optional[float] = None,
                subset: Optional[Sequence[Sequence[int]]] = None,
                quad_tol: Optional[float] = None) -> Tuple[float, float]:
    """(lower, upper) enclosure of the path-conditional failure probability.

    Upper: min of the pairwise union bound (C(K,2) minus all separation
    integrals) and one minus a partial ordering sum (any subset of orderings
    under-counts the separation probability).  Lower: max of the spacing
    bound (consecutive gaps of eps pushed into the integrated intensities)
    and the best single-pair bound.  Values are not clamped to [0, 1].

    For an atom-at-zero model the separation integrals all scale by the
    no-instant-default factor, enclosing the same modified-measure value
    that failure_prob_path reports (every ordering integral lies below each
    pairwise one, so the scaled bounds remain valid).
    """
    eps = fm.epsilon if epsilon is None else float(epsilon)
    K = fm.K
    if K < 2:
        raise ValueError("bounds need K >= 2")
    atom = math.exp(-float(fm.alpha_at_zero().sum())) if fm.model.atom_at_zero else 1.0
    seps = {(i, j): pairwise_separation_prob(fm, i, j, eps, quad_tol)
            for i in range(K) for j in range(i + 1, K)}
    upper_pairwise = K * (K - 1) / 2.0 - atom * math.fsum(seps.values())
    if subset is None:
        subset = [tuple(range(K))]
    upper_partial = 1.0 - atom * math.fsum(perm_integral(fm, p, eps, quad_tol) for p in subset)

    # G[p, b] = exp(-A_b(p * eps)): slot weights grow inward from 0
    G = np.exp(-np.array([[c.integral(p * eps) for c in fm.curves] for p in range(K)]))
    lower_spacing = 1.0 - atom * math.exp(-fm.stress.integral((K - 1) * eps)) \
        * position_factor_permanent(G)
    lower_pairwise = 1.0 - atom * min(seps.values())
    return max(lower_spacing, lower_pairwise), min(upper_pairwise, upper_partial)


def comparative_static_path(fm: FrozenModel, ell: int,
                            grad_alphas: Optional[Sequence[float]] = None,
                            epsilon: Optional[float] = None,
                            quad_tol: Optional[float] = None) -> float:
    """d/dx_ell(0) of the failure probability in the atom-at-zero model.

    Equals (sum_i d alpha_i(X_0)/d x_ell) * exp(-sum_i alpha_i(X_0)) times
    the ordering-sum of nested integrals; gradients default to the affine
    loadings (state-independent intensities contribute zero).
    """
    if not fm.model.atom_at_zero:
        raise ValueError("comparative statics need an atom_at_zero model")
    eps = fm.epsilon if epsilon is None else float(epsilon)
    if grad_alphas is None:
        grads = fm.gradients_at_zero(ell)
    else:
        grads = np.asarray(grad_alphas, dtype=float)
        if grads.shape != (fm.K + 1,):
            raise ValueError(f"need K+1={fm.K + 1} gradients (stress first)")
    surv = _survival_sum(fm, eps, quad_tol)
    atom = math.exp(-float(fm.alpha_at_zero().sum()))
    return float(grads.sum()) * atom * surv


def instantaneous_rate_path(fm: FrozenModel, t: float, eps_seq: Sequence[float],
                            banks: Tuple[int, int] = (0, 1)) -> np.ndarray:
    """Exact finite-window conditional co-default rates for two banks.

    Each entry is P(both in (t, t+eps] | both > t) / eps on the frozen path,
    which converges to alpha_0(X_t) as eps -> 0.
    """
    i, j = banks
    if i == j:
        raise ValueError("need two distinct banks")
    out = np.empty(len(eps_seq))
    ci, cj, c0 = fm.curves[i], fm.curves[j], fm.stress
    ai, aj, a0 = ci.integral(t), cj.integral(t), c0.integral(t)
    for idx, eps in enumerate(eps_seq):
        if eps <= 0.0:
            raise ValueError("windows must be > 0")
        di = ci.integral(t + eps) - ai
        dj = cj.integral(t + eps) - aj
        d0 = c0.integral(t + eps) - a0
        num = -math.expm1(-(dj + d0)) + math.exp(-(di + d0)) * math.expm1(-dj)
        out[idx] = num / eps
    return out


def density_normalization(fm: FrozenModel, i: int, quad_tol: Optional[float] = None) -> float:
    """int_0^inf alpha_i(x) e^{-A_i(x)} dx, which must be 1 for a proper density."""
    curve = fm.curves[i]
    t_end = curve.inverse(TAIL_EXPONENT)
    if math.isinf(t_end):
        warnings.warn("density is improper (bounded integrated intensity)", stacklevel=2)
        t_end = curve.knots[-1] + 1.0
    tol = fm.default_tol() if quad_tol is None else quad_tol

    def evaluate(n: int) -> float:
        pts = np.unique(np.concatenate([np.linspace(0.0, t_end, n + 1), curve.knots]))
        grid = _Grid(pts[pts <= t_end])
        x = grid.nodes
        return grid.integrate(curve.alpha(x) * np.exp(-curve.integral(x)))

    value, _ = _converge(evaluate, tol, "density normalization")
    return value
