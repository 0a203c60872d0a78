"""Exact closed forms for scenarios where every intensity is time-constant.

With constant rates the bank default thresholds reduce to independent
exponentials, and the probability that all default times are separated by at
least ``epsilon`` is a sum over bank orderings of products

    prod_{i=1}^{K-1}  a_{j_i} / (a_0 + S_i) * exp(-eps * (a_0 + S_{i+1})),

where S_i is the suffix sum of the ordered rates.  The K!-term sum is
evaluated either by direct enumeration (small K) or by a subset dynamic
program: each factor depends on the ordering only through the suffix *set*,
so orderings collapse onto the 2^K subset lattice.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .model import MarketModel, constant_rate

__all__ = [
    "ConstRates",
    "PERM_LIMIT",
    "DP_LIMIT",
    "marginal_survival",
    "joint_survival",
    "failure_prob_perm",
    "failure_prob_dp",
    "failure_prob_iid",
    "catastrophic_prob",
    "failure_bounds",
    "bound_components",
    "pairwise_separation",
    "position_factor_permanent",
    "spacing_bound_sum",
    "instantaneous_rate",
    "instantaneous_rate_finite",
    "linear_comparative_static",
]

PERM_LIMIT = 9    # 9! = 362,880 enumerated orderings
DP_LIMIT = 20     # 2^20 subset states


class LimitExceededError(ValueError):
    """K is too large for the requested exact evaluation path."""


@dataclass(frozen=True)
class ConstRates:
    """Constant stress rate plus the K constant bank rates.

    Bank rates must be strictly positive (the default-time densities must be
    proper); the stress rate may be zero, which models the absence of a
    market-wide shock.
    """

    alpha0: float
    alphas: tuple

    def __init__(self, alpha0, alphas):
        object.__setattr__(self, "alpha0", float(alpha0))
        object.__setattr__(self, "alphas", tuple(float(a) for a in alphas))
        if not (self.alpha0 >= 0.0) or not math.isfinite(self.alpha0):
            raise ValueError("alpha0 must be finite and >= 0")
        if any(a <= 0.0 or not math.isfinite(a) for a in self.alphas):
            raise ValueError("bank rates must be finite and > 0")

    @property
    def K(self) -> int:
        return len(self.alphas)

    @classmethod
    def from_model(cls, model: MarketModel) -> "ConstRates":
        a0 = constant_rate(model.stress_intensity)
        banks = [constant_rate(s) for s in model.bank_intensities]
        if a0 is None or any(a is None for a in banks):
            raise ValueError("analytic backend needs every intensity to be time-constant")
        return cls(a0, banks)


def marginal_survival(rates: ConstRates, i: int, t: float) -> float:
    """P(tau_i > t) = exp(-(alpha0 + alpha_i) t).  Bank index i is 0-based."""
    if not 0 <= i < rates.K:
        raise IndexError(f"bank index {i} out of range for K={rates.K}")
    if t < 0.0:
        raise ValueError("t must be >= 0")
    return math.exp(-(rates.alpha0 + rates.alphas[i]) * t)


def joint_survival(rates: ConstRates, times: Sequence[float]) -> float:
    """P(tau_1 > t_1, ..., tau_K > t_K) = exp(-sum a_i t_i - a_0 max t)."""
    t = np.asarray(times, dtype=float)
    if t.shape != (rates.K,):
        raise ValueError(f"need {rates.K} times, got shape {t.shape}")
    if np.any(t < 0.0):
        raise ValueError("times must be >= 0")
    a = np.asarray(rates.alphas)
    return float(math.exp(-(a @ t) - rates.alpha0 * t.max()))


# ---------------------------------------------------------------------------
# Market failure probability
# ---------------------------------------------------------------------------


def _check_failure_args(rates: ConstRates, epsilon: float) -> None:
    if rates.K < 2:
        raise ValueError("market failure needs K >= 2 banks")
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")


def _perm_survival_terms(rates: ConstRates, epsilon: float) -> np.ndarray:
    """One separation-probability term per ordering of the banks."""
    K = rates.K
    a = np.asarray(rates.alphas)
    perms = np.array(list(itertools.permutations(range(K))), dtype=np.intp)
    ap = a[perms]                                        # (K!, K)
    suffix = np.cumsum(ap[:, ::-1], axis=1)[:, ::-1]     # S_i = sum_{k >= i}
    denom = rates.alpha0 + suffix[:, :-1]
    expo = np.exp(-epsilon * (rates.alpha0 + suffix[:, 1:]))
    return np.prod(ap[:, :-1] / denom * expo, axis=1)


def failure_prob_perm(rates: ConstRates, epsilon: float) -> float:
    """Failure probability by enumerating all K! bank orderings."""
    _check_failure_args(rates, epsilon)
    if rates.K > PERM_LIMIT:
        raise LimitExceededError(f"K={rates.K} exceeds the enumeration limit {PERM_LIMIT}; "
                                 "use failure_prob_dp")
    terms = _perm_survival_terms(rates, epsilon)
    if rates.K >= 8:
        terms = np.sort(terms)
    return 1.0 - math.fsum(terms)


def _popcount(values: np.ndarray) -> np.ndarray:
    return np.bitwise_count(values)


def _subset_layers(K: int) -> list:
    """Subsets of {0..K-1} as ints, grouped by population count 1..K."""
    subsets = np.arange(1, 1 << K, dtype=np.uint64)
    pc = _popcount(subsets)
    order = np.argsort(pc, kind="stable")
    bounds = np.searchsorted(pc[order], np.arange(2, K + 1))
    return np.split(subsets[order], bounds)


def _subset_rate_sums(alphas: np.ndarray) -> np.ndarray:
    K = alphas.size
    sums = np.zeros(1 << K)
    for b in range(K):
        lo = 1 << b
        sums[lo:2 * lo] = sums[:lo] + alphas[b]
    return sums


def failure_prob_dp(rates: ConstRates, epsilon: float) -> float:
    """Failure probability via dynamic programming over bank subsets.

    Orderings are built from the innermost position outward.  The partial
    sum W(T) aggregates every ordering of subset T occupying the last |T|
    positions; prepending bank b multiplies by
    a_b / (a_0 + A(T)) * exp(-eps (a_0 + A(T) - a_b)), which depends only on
    T and b.  Work is O(K 2^K) instead of O(K K!); agreement with the
    enumeration is pinned by tests rather than assumed.
    """
    _check_failure_args(rates, epsilon)
    K = rates.K
    if K > DP_LIMIT:
        raise LimitExceededError(f"K={rates.K} exceeds the subset-DP limit {DP_LIMIT}")
    a = np.asarray(rates.alphas)
    asum = _subset_rate_sums(a)
    layers = _subset_layers(K)
    W = np.zeros(1 << K)
    W[np.asarray(layers[0], dtype=np.intp)] = 1.0  # singletons: empty product
    for layer in layers[1:]:
        T = np.asarray(layer, dtype=np.intp)
        acc = np.zeros(T.size)
        for b in range(K):
            bit = 1 << b
            has = (T & bit) != 0
            Tb = T[has]
            denom = rates.alpha0 + asum[Tb]
            acc[has] += a[b] / denom * np.exp(-epsilon * (denom - a[b])) * W[Tb ^ bit]
        W[T] = acc
    return 1.0 - float(W[(1 << K) - 1])


def failure_prob_iid(alpha0: float, alpha: float, K: int, epsilon: float) -> float:
    """Failure probability when all K bank rates equal ``alpha``.

    Every ordering contributes the same term, so the permutation sum is K!
    times one representative product; evaluated in log space so large K does
    not overflow.
    """
    if K < 2:
        raise ValueError("market failure needs K >= 2 banks")
    if alpha <= 0.0 or alpha0 < 0.0 or epsilon < 0.0:
        raise ValueError("need alpha > 0, alpha0 >= 0, epsilon >= 0")
    log_surv = 0.0
    for m in range(2, K + 1):  # m = number of banks still unplaced, innermost first
        log_surv += math.log(m * alpha) - math.log(alpha0 + m * alpha)
        log_surv += -epsilon * (alpha0 + (m - 1) * alpha)
    return 1.0 - math.exp(log_surv)


# ---------------------------------------------------------------------------
# Catastrophic failure, bounds, rate limits
# ---------------------------------------------------------------------------


def catastrophic_prob(rates: ConstRates, epsilon: float) -> float:
    """P(max tau_i <= eps) = 1 + e^{-a0 eps} (prod_i (1 - e^{-a_i eps}) - 1)."""
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")
    prod = np.prod(-np.expm1(-np.asarray(rates.alphas) * epsilon))
    return float(1.0 + math.exp(-rates.alpha0 * epsilon) * (prod - 1.0))


def pairwise_separation(rates: ConstRates, i: int, j: int, epsilon: float) -> float:
    """P(|tau_i - tau_j| >= eps) = e^{-a0 eps}(a_i e^{-a_j eps} + a_j e^{-a_i eps})/(a_i+a_j+a0)."""
    if i == j:
        raise ValueError("need two distinct banks")
    ai, aj, a0 = rates.alphas[i], rates.alphas[j], rates.alpha0
    return (math.exp(-a0 * epsilon)
            * (ai * math.exp(-aj * epsilon) + aj * math.exp(-ai * epsilon))
            / (ai + aj + a0))


def position_factor_permanent(G: np.ndarray) -> float:
    """sum over orderings j of prod_p G[p, j_p], by subset dynamic programming.

    Each factor depends only on the slot index p and the bank placed there,
    so orderings collapse onto the subset lattice: filling slots innermost
    first, a subset T of banks always occupies the last |T| slots.
    """
    G = np.asarray(G, dtype=float)
    K = G.shape[0]
    if G.shape != (K, K):
        raise ValueError("G must be square (slots x banks)")
    if K > DP_LIMIT:
        raise LimitExceededError(f"K={K} exceeds the subset-DP limit {DP_LIMIT}")
    V = np.zeros(1 << K)
    V[0] = 1.0
    for layer in _subset_layers(K):
        T = np.asarray(layer, dtype=np.intp)
        size = int(_popcount(layer[:1])[0])
        slot = K - size  # 0-based index of the slot being filled
        acc = np.zeros(T.size)
        for b in range(K):
            bit = 1 << b
            has = (T & bit) != 0
            acc[has] += G[slot, b] * V[T[has] ^ bit]
        V[T] = acc
    return float(V[(1 << K) - 1])


def spacing_bound_sum(rates: ConstRates, epsilon: float) -> float:
    """sum over orderings of exp(-eps * sum_{i=1}^{K-1} i * a_{j_{i+1}}).

    The bank in slot p (0-based) contributes weight p, so this is a
    position-factor permanent with G[p, b] = exp(-eps * p * a_b).
    """
    K = rates.K
    a = np.asarray(rates.alphas)
    G = np.exp(-epsilon * np.arange(K)[:, None] * a[None, :])
    return position_factor_permanent(G)


def bound_components(rates: ConstRates, epsilon: float,
                     subset: Optional[Sequence[Sequence[int]]] = None) -> dict:
    """The four Theorem-style bound values, unclamped.

    ``subset`` is the collection of orderings for the partial-sum upper
    bound; any nonempty subset of orderings is valid and the default is the
    identity ordering alone.
    """
    _check_failure_args(rates, epsilon)
    K = rates.K
    a = np.asarray(rates.alphas)

    sep_sum = sum(pairwise_separation(rates, i, j, epsilon)
                  for i in range(K) for j in range(i + 1, K))
    upper_pairwise = K * (K - 1) / 2.0 - sep_sum

    if subset is None:
        subset = [tuple(range(K))]
    partial = 0.0
    for perm in subset:
        ap = a[np.asarray(perm, dtype=np.intp)]
        suffix = np.cumsum(ap[::-1])[::-1]
        denom = rates.alpha0 + suffix[:-1]
        partial += float(np.prod(ap[:-1] / denom
                                 * np.exp(-epsilon * (rates.alpha0 + suffix[1:]))))
    upper_partial = 1.0 - partial

    lower_spacing = 1.0 - (math.exp(-rates.alpha0 * epsilon * (K - 1))
                           * spacing_bound_sum(rates, epsilon))
    lower_pairwise = 1.0 - min(pairwise_separation(rates, i, j, epsilon)
                               for i in range(K) for j in range(i + 1, K))
    return {
        "upper_pairwise": upper_pairwise,
        "upper_partial": upper_partial,
        "lower_spacing": lower_spacing,
        "lower_pairwise": lower_pairwise,
    }


def failure_bounds(rates: ConstRates, epsilon: float,
                   subset: Optional[Sequence[Sequence[int]]] = None) -> Tuple[float, float]:
    """(lower, upper) enclosure of the failure probability, unclamped."""
    c = bound_components(rates, epsilon, subset)
    return (max(c["lower_spacing"], c["lower_pairwise"]),
            min(c["upper_pairwise"], c["upper_partial"]))


def instantaneous_rate(rates: ConstRates) -> float:
    """eps -> 0 limit of the conditional co-default rate; alpha0 exactly."""
    return rates.alpha0


def instantaneous_rate_finite(rates: ConstRates, epsilon: float,
                              i: int = 0, j: int = 1) -> float:
    """Exact finite-window conditional co-default probability over epsilon.

    P(tau_i, tau_j both in (t, t+eps] | both > t) / eps for constant rates
    (t drops out); evaluated with expm1 so the alpha0-sized difference
    survives cancellation at tiny eps.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be > 0")
    ai, aj, a0 = rates.alphas[i], rates.alphas[j], rates.alpha0
    # 1 - e^{-(aj+a0)e} - e^{-(ai+a0)e} + e^{-(ai+aj+a0)e}
    num = -math.expm1(-(aj + a0) * epsilon) + math.exp(-(ai + a0) * epsilon) * math.expm1(-aj * epsilon)
    return num / epsilon


def linear_comparative_static(betas, ell: int, survival_complement: float) -> float:
    """(sum_i betas[i][ell]) * P(all default times >= eps apart).

    ``betas`` has K+1 rows (stress first) by d columns of nonnegative
    loadings of the affine intensities on the state coordinates.
    """
    b = np.asarray(betas, dtype=float)
    if b.ndim != 2:
        raise ValueError("betas must be a (K+1) x d matrix")
    if not 0 <= ell < b.shape[1]:
        raise IndexError(f"coordinate {ell} out of range for d={b.shape[1]}")
    if np.any(b < 0.0):
        raise ValueError("betas must be nonnegative")
    if not 0.0 <= survival_complement <= 1.0:
        raise ValueError("survival_complement must be a probability")
    return float(b[:, ell].sum() * survival_complement)
