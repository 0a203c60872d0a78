"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.  Tolerances are pinned here, not configurable.
"""

import csv
import itertools
import math
import time

import numpy as np
import pytest

from codefault import analytic, pathwise, simulate
from codefault.analytic import ConstRates
from codefault.cli import main
from codefault.model import (
    AffineState,
    Constant,
    DestructiveCompetition,
    MarketModel,
    PiecewiseDeterministic,
    StatePath,
)
from codefault.pathwise import FrozenModel
from codefault.simulate import ConstantState, FrozenPath


def _announce(num, name, detail=""):
    def decorator(fn):
        def wrapper(*args, **kwargs):
            start = time.monotonic()
            try:
                extra = fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {num:02d} {name}: FAIL")
                raise
            elapsed = time.monotonic() - start
            suffix = f" [{extra}]" if extra else ""
            print(f"ACCEPTANCE {num:02d} {name}: PASS ({elapsed:.1f}s){suffix}")

        wrapper.__name__ = fn.__name__
        return wrapper

    return decorator


def _hand_failure(alpha0, alphas, eps):
    """Ordering-by-ordering hand evaluation of the constant-rate formula."""
    terms = []
    for perm in itertools.permutations(range(len(alphas))):
        prod = 1.0
        for i in range(len(alphas) - 1):
            suffix = alpha0 + sum(alphas[k] for k in perm[i:])
            tail = alpha0 + sum(alphas[k] for k in perm[i + 1:])
            prod *= alphas[perm[i]] / suffix * math.exp(-eps * tail)
        terms.append(prod)
    return 1.0 - math.fsum(sorted(terms))


@_announce(1, "figure-1 reproduction")
def test_criterion_01_figure1(tmp_path):
    out = tmp_path / "fig1.csv"
    start = time.monotonic()
    code = main(["--command", "figure1", "--seed", "1234",
                 "--grid-points", "20", "--out", str(out)])
    elapsed = time.monotonic() - start
    assert code == 0
    assert elapsed < 1.0, f"figure1 took {elapsed:.2f}s, limit 1s"
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 60
    for series in ("0", "1", "2"):
        sub = [r for r in rows if r["series"] == series]
        probs = [float(r["failure_prob"]) for r in sub]
        assert all(b > a for a, b in zip(probs, probs[1:])), "not strictly increasing"
        for r in (sub[0], sub[-1]):  # endpoint formula fidelity
            alphas = [float(r["alpha_1"]), float(r["alpha_2"]), float(r["alpha_3"])]
            hand = _hand_failure(float(r["alpha0"]), alphas, 1.0)
            assert abs(float(r["failure_prob"]) - hand) <= 1e-12 * abs(hand)
    return f"runtime {elapsed * 1e3:.0f}ms"


@_announce(2, "closed-form vs Monte Carlo oracle")
def test_criterion_02_mc_agreement():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    gen = ConstantState([1.0])
    hits = 0
    for k in range(50):
        K = int(rng.integers(2, 7))
        rates = ConstRates(rng.uniform(0.002, 0.05), rng.uniform(0.02, 0.3, K))
        eps = float(rng.uniform(0.2, 2.0))
        model = MarketModel([Constant(a) for a in rates.alphas],
                            Constant(rates.alpha0), eps)
        est = simulate.estimate_failure_prob(model, gen, eps, 10**6, seed=1000 + k)
        if abs(est.mean - analytic.failure_prob_dp(rates, eps)) <= 4.0 * est.std_error:
            hits += 1
    elapsed = time.monotonic() - start
    assert hits >= 48, f"only {hits}/50 within 4 SE"
    assert elapsed < 120.0, f"took {elapsed:.0f}s, limit 120s"
    return f"{hits}/50 within 4 SE"


@_announce(3, "enumeration vs subset-DP equivalence")
def test_criterion_03_dp_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(100):
        K = int(rng.integers(2, 9))
        rates = ConstRates(rng.uniform(0.0, 0.2), rng.uniform(0.01, 0.6, K))
        eps = float(rng.uniform(0.0, 2.0))
        a = analytic.failure_prob_perm(rates, eps)
        b = analytic.failure_prob_dp(rates, eps)
        worst = max(worst, abs(a - b) / max(abs(a), 1e-300)) if a else worst
        assert abs(a - b) <= 1e-12 * max(abs(a), 1e-300)
    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"took {elapsed:.0f}s, limit 60s"
    return f"worst relative gap {worst:.2e}"


@_announce(4, "bound sandwich")
def test_criterion_04_bounds():
    rng = np.random.default_rng(44)
    for _ in range(500):
        K = int(rng.integers(2, 7))
        rates = ConstRates(rng.uniform(0.0, 0.3), rng.uniform(0.01, 0.8, K))
        eps = float(rng.uniform(0.0, 2.0))
        exact = analytic.failure_prob_dp(rates, eps)
        lower, upper = analytic.failure_bounds(rates, eps)
        assert lower - 1e-10 <= exact <= upper + 1e-10
    for _ in range(100):  # two banks: the pairwise lower bound is the value itself
        rates = ConstRates(rng.uniform(0.0, 0.3), rng.uniform(0.01, 0.8, 2))
        eps = float(rng.uniform(0.0, 2.0))
        exact = analytic.failure_prob_perm(rates, eps)
        lower, _ = analytic.failure_bounds(rates, eps)
        assert abs(lower - exact) <= 1e-10
    return None


@_announce(5, "quadrature vs analytic and Monte Carlo")
def test_criterion_05_quadrature():
    start = time.monotonic()
    rng = np.random.default_rng(55)
    for K in (2, 3, 4):
        for _ in range(3):
            rates = ConstRates(rng.uniform(0.002, 0.1), rng.uniform(0.02, 0.4, K))
            eps = float(rng.uniform(0.2, 1.5))
            fm = FrozenModel(MarketModel([Constant(a) for a in rates.alphas],
                                         Constant(rates.alpha0), eps))
            gap = abs(pathwise.failure_prob_path(fm) - analytic.failure_prob_dp(rates, eps))
            assert gap <= 1e-8, f"K={K}: quadrature off by {gap:.2e}"
    model = MarketModel(
        [PiecewiseDeterministic([0, 1, 3, 6], [0.2, 0.5, 0.1, 0.3]),
         PiecewiseDeterministic([0, 2, 4], [0.4, 0.05, 0.25]),
         PiecewiseDeterministic([0, 2], [0.3, 0.15])],
        PiecewiseDeterministic([0, 1.5], [0.02, 0.08]), 0.5)
    exact = pathwise.failure_prob_path(FrozenModel(model))
    est = simulate.estimate_failure_prob(
        model, FrozenPath(StatePath([0.0, 1.0], [[1.0], [1.0]])), 0.5, 10**7, seed=5)
    gap_se = abs(est.mean - exact) / est.std_error
    assert gap_se <= 4.0, f"piecewise MC off by {gap_se:.1f} SE"
    elapsed = time.monotonic() - start
    assert elapsed < 300.0, f"took {elapsed:.0f}s, limit 300s"
    return f"piecewise gap {gap_se:.2f} SE"


@_announce(6, "catastrophic failure")
def test_criterion_06_catastrophic():
    # single bank: min of two exponentials
    both = ConstRates(0.013, [0.21])
    assert analytic.catastrophic_prob(both, 0.7) == pytest.approx(
        -math.expm1(-(0.013 + 0.21) * 0.7), rel=1e-12)
    # Monte Carlo agreement at K=3
    rates = ConstRates(0.01, [0.05, 0.06, 0.07])
    model = MarketModel([Constant(a) for a in rates.alphas], Constant(0.01), 1.0)
    est = simulate.estimate_catastrophic(model, ConstantState([1.0]), 1.0, 10**6, seed=6)
    assert abs(est.mean - analytic.catastrophic_prob(rates, 1.0)) <= 4.0 * est.std_error
    # many identical banks: only the common shock can fell them all at once
    iid = ConstRates(0.01, [0.05] * 200)
    assert abs(analytic.catastrophic_prob(iid, 1.0) - (-math.expm1(-0.01))) <= 1e-3
    # competition-driven intensities approach the shock probability from above
    b = PiecewiseDeterministic([0, 0.3, 2.0], [0.25, 0.4, 0.35])
    stress = PiecewiseDeterministic([0, 1.5], [0.02, 0.08])
    eps = 0.5
    vals = []
    for K in (10, 100, 1000):
        fm = FrozenModel(MarketModel([DestructiveCompetition(b, K)] * K, stress, eps))
        vals.append(pathwise.catastrophic_prob_path(fm))
    limit = -math.expm1(-FrozenModel(MarketModel([b], stress, eps)).stress.integral(eps))
    assert vals[0] > vals[1] > vals[2] > limit
    assert vals[2] - limit < 1e-9
    return None


@_announce(7, "monotonicity and limit in the number of banks")
def test_criterion_07_monotonicity():
    rng = np.random.default_rng(77)
    for _ in range(100):
        K = int(rng.integers(2, 8))
        alphas = rng.uniform(0.02, 0.5, K)
        alpha0 = float(rng.uniform(0.0, 0.2))
        eps = float(rng.uniform(0.05, 1.5))
        extra = float(rng.uniform(0.02, 0.5))
        assert (analytic.failure_prob_dp(ConstRates(alpha0, np.append(alphas, extra)), eps)
                > analytic.failure_prob_dp(ConstRates(alpha0, alphas), eps))
    threshold_K = None
    for K in range(2, 501):
        if analytic.failure_prob_iid(0.01, 0.05, K, 1.0) > 0.99:
            threshold_K = K
            break
    assert threshold_K is not None, "no K <= 500 exceeded 0.99"
    return f"iid failure exceeds 0.99 from K={threshold_K}"


@_announce(8, "vanishing-window co-default rate")
def test_criterion_08_rate_limit():
    rates = ConstRates(0.01, [0.05, 0.05])
    got = analytic.instantaneous_rate_finite(rates, 1e-6)
    assert abs(got - 0.01) / 0.01 <= 1e-4
    model = MarketModel(
        [PiecewiseDeterministic([0, 1, 3, 6], [0.2, 0.5, 0.1, 0.3]),
         PiecewiseDeterministic([0, 2, 4], [0.4, 0.05, 0.25])],
        PiecewiseDeterministic([0, 1.5], [0.02, 0.08]), 1.0)
    fm = FrozenModel(model)
    t = 0.8
    seq = pathwise.instantaneous_rate_path(fm, t, [1e-1, 1e-2, 1e-3, 1e-4])
    target = fm.stress.alpha(t)
    assert abs(seq[-1] - target) / target <= 0.01
    return f"pathwise rate gap {abs(seq[-1] - target) / target:.2e}"


@_announce(9, "comparative statics")
def test_criterion_09_comparative_statics():
    h = 1e-6
    for K in (2, 3):
        betas = [[0.01, 0.02], [0.05, 0.03], [0.02, 0.08], [0.06, 0.01]][: K + 1]
        x0 = [1.2, 0.7]
        path = StatePath([0.0, 50.0], [x0, x0])
        model = MarketModel([AffineState(b) for b in betas[1:]], AffineState(betas[0]),
                            0.8, initial_state=x0, atom_at_zero=True)
        fm = FrozenModel(model, path)
        complement = 1.0 - pathwise.failure_prob_path(fm)
        for ell in (0, 1):
            deriv = pathwise.comparative_static_path(fm, ell)
            up = list(x0)
            dn = list(x0)
            up[ell] += h
            dn[ell] -= h
            fd = (pathwise.failure_prob_path(fm, initial_state=up)
                  - pathwise.failure_prob_path(fm, initial_state=dn)) / (2.0 * h)
            assert abs(deriv - fd) / max(abs(deriv), abs(fd)) <= 1e-3
            # affine loadings on a constant path reproduce the product form exactly
            linear = analytic.linear_comparative_static(betas, ell, complement)
            assert deriv == pytest.approx(linear, rel=1e-10)
    return None


@_announce(10, "byte-identical reproducibility")
def test_criterion_10_reproducibility(tmp_path):
    scenario = tmp_path / "scenario.yaml"
    scenario.write_text(
        "epsilon: 1.0\n"
        "banks:\n"
        "  - {kind: constant, rate: 0.05}\n"
        "  - {kind: constant, rate: 0.06}\n"
        "  - {kind: constant, rate: 0.07}\n"
        "stress: {kind: constant, rate: 0.01}\n")
    outputs = []
    for tag, workers in (("a", "1"), ("b", "4"), ("c", "1")):
        out = tmp_path / f"report_{tag}.csv"
        code = main(["--scenario", str(scenario), "--command", "report",
                     "--n", "200000", "--seed", "99", "--workers", workers,
                     "--out", str(out)])
        assert code == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
    f1, f2 = tmp_path / "fig_a.csv", tmp_path / "fig_b.csv"
    assert main(["--command", "figure1", "--seed", "7", "--out", str(f1)]) == 0
    assert main(["--command", "figure1", "--seed", "7", "--out", str(f2)]) == 0
    assert f1.read_bytes() == f2.read_bytes()
    return None
