"""Command-line front door: parse a scenario, dispatch to backends, emit CSV.

Commands
    report    one CSV row per quantity (exact / bounds / Monte Carlo)
    figure1   failure probability vs stress rate for three seeded rate draws
    ksweep    failure probability and bounds as banks are appended
    bounds    the four raw bound values (plus clamped copies) and the exact value
    cstatics  initial-state sensitivities vs central finite differences
    validate  scenario invariants and backend eligibility

Every run is reproducible byte-for-byte given (scenario, seed, flags); the
exit code is 0 only when all requested quantities were computed and every
internal bound-sandwich check passed.  Floats are printed in scientific
notation with 12 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import math
import sys
from typing import Optional, Sequence

import numpy as np

from . import analytic, pathwise, simulate
from .analytic import ConstRates
from .config import ConfigError, Scenario, load_scenario
from .model import Estimate, MarketModel, ProbabilityReport, Quantity, validate
from .pathwise import FrozenModel

__all__ = ["main"]

_FLOAT_FMT = "{:.11e}"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _FLOAT_FMT.format(float(value))


def _write_csv(out: Optional[str], header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _choose_backend(scn: Scenario, forced: str) -> str:
    if forced != "auto":
        return forced
    if scn.model.all_constant:
        return "analytic"
    if (not scn.model.requires_path or scn.state_path is not None) \
            and scn.model.K <= pathwise.QUAD_LIMIT:
        return "pathwise"
    return "mc"


def _subset_perms(K: int, size: Optional[int], seed: int) -> list:
    """Orderings for the partial-sum upper bound: identity, or seeded draws."""
    if size is None or size <= 1:
        return [tuple(range(K))]
    total = math.factorial(K)
    size = min(size, total)
    rng = np.random.Generator(np.random.Philox(key=seed, counter=(1 << 64)))
    chosen = {tuple(range(K))}
    while len(chosen) < size:
        chosen.add(tuple(int(v) for v in rng.permutation(K)))
    return sorted(chosen)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args, scn: Scenario) -> int:
    problems = validate(scn.model, scn.state_path)
    if not problems.ok:
        for v in problems.violations:
            print(f"invalid scenario: {v}", file=sys.stderr)
        return 2
    backend = _choose_backend(scn, args.backend)
    model, gen = scn.model, scn.generator
    eps = model.epsilon
    subset = _subset_perms(model.K, args.subset_size, args.seed)

    exact_f = lower = upper = exact_c = exact_j = exact_r = None
    if backend == "analytic":
        rates = ConstRates.from_model(model)
        exact_f = analytic.failure_prob_dp(rates, eps)
        lower, upper = analytic.failure_bounds(rates, eps, subset)
        exact_c = analytic.catastrophic_prob(rates, eps)
        exact_j = analytic.joint_survival(rates, [eps] * model.K)
        exact_r = analytic.instantaneous_rate_finite(rates, eps)
    elif backend == "pathwise":
        fm = FrozenModel(model, scn.state_path)
        if model.K > pathwise.QUAD_LIMIT:
            print(f"pathwise backend needs K <= {pathwise.QUAD_LIMIT}", file=sys.stderr)
            return 2
        exact_f = pathwise.failure_prob_path(fm)
        lower, upper = pathwise.bounds_path(fm, subset=subset)
        exact_c = pathwise.catastrophic_prob_path(fm)
        exact_j = pathwise.joint_survival_path(fm, [eps] * model.K)
        exact_r = float(pathwise.instantaneous_rate_path(fm, 0.0, [eps])[0])
    elif backend != "mc":
        print(f"unknown backend {backend!r}", file=sys.stderr)
        return 2

    n, seed, workers = args.n, args.seed, args.workers
    mc_f = simulate.estimate_failure_prob(model, gen, eps, n, seed, workers)
    mc_c = simulate.estimate_catastrophic(model, gen, eps, n, seed, workers)
    mc_j = simulate.estimate_joint_survival(model, gen, [eps] * model.K, n, seed, workers)
    mc_r = simulate.estimate_instantaneous_rate(model, gen, 0.0, eps, n, seed, workers=workers)

    try:
        reports = [
            ProbabilityReport(Quantity.MARKET_FAILURE, exact_f, lower, upper, mc_f),
            ProbabilityReport(Quantity.CATASTROPHIC, exact_c, mc=mc_c),
            ProbabilityReport(Quantity.JOINT_SURVIVAL, exact_j, mc=mc_j),
            ProbabilityReport(Quantity.INSTANT_RATE, exact_r, mc=mc_r),
        ]
    except ValueError as exc:
        print(f"internal sandwich check failed: {exc}", file=sys.stderr)
        return 1

    header = ["quantity", "exact", "lower", "upper", "mc_mean", "mc_se", "n", "seed", "backend"]
    rows = [
        [r.quantity.value, r.exact, r.lower_bound, r.upper_bound,
         r.mc.mean, r.mc.std_error, r.mc.replications, r.mc.seed, backend]
        for r in reports
    ]
    _write_csv(args.out, header, rows)
    return 0


# ---------------------------------------------------------------------------
# figure1
# ---------------------------------------------------------------------------


def cmd_figure1(args, scn: Optional[Scenario]) -> int:
    eps = args.epsilon if args.epsilon is not None else (
        scn.model.epsilon if scn is not None else 1.0)
    gp = args.grid_points
    if gp < 2:
        print("--grid-points must be >= 2", file=sys.stderr)
        return 2
    rng = np.random.Generator(np.random.Philox(key=args.seed, counter=0))
    alpha_sets = rng.uniform(4e-5, 6e-5, size=(3, 3))
    alpha0_grid = np.linspace(5e-6, 1e-5, gp)

    header = ["series", "alpha_1", "alpha_2", "alpha_3", "alpha0", "failure_prob"]
    if args.mc_check:
        header += ["mc_mean", "mc_se"]
    rows = []
    ok = True
    for s, alphas in enumerate(alpha_sets):
        prev = -math.inf
        for a0 in alpha0_grid:
            rates = ConstRates(float(a0), alphas)
            p = analytic.failure_prob_dp(rates, eps)
            row = [s, *alphas, a0, p]
            if args.mc_check:
                est = simulate.estimate_failure_prob_stratified(
                    MarketModel([_const(a) for a in alphas], _const(a0), eps),
                    eps, args.n, args.seed, args.workers)
                row += [est.mean, est.std_error]
            rows.append(row)
            if not p > prev:
                ok = False
            prev = p
    _write_csv(args.out, header, rows)
    if not ok:
        print("figure1: failure probability not strictly increasing in alpha0",
              file=sys.stderr)
        return 1
    return 0


def _const(rate: float):
    from .model import Constant

    return Constant(float(rate))


# ---------------------------------------------------------------------------
# ksweep
# ---------------------------------------------------------------------------


def cmd_ksweep(args, scn: Scenario) -> int:
    from .model import DestructiveCompetition

    model, gen = scn.model, scn.generator
    eps = model.epsilon
    pool = model.bank_intensities
    header = ["K", "backend", "failure_prob", "mc_se", "lower", "upper", "catastrophic"]
    rows = []
    for K in range(args.k_min, args.k_max + 1):
        banks = [pool[i % len(pool)] for i in range(K)]
        if args.destructive:
            banks = [DestructiveCompetition(simulate._strip_dc(s), K) for s in banks]
        mk = MarketModel(banks, model.stress_intensity, eps,
                         initial_state=model.initial_state)
        lower = upper = cat = None
        if mk.all_constant and K <= analytic.DP_LIMIT:
            rates = ConstRates.from_model(mk)
            p = analytic.failure_prob_dp(rates, eps)
            lower, upper = analytic.failure_bounds(rates, eps)
            cat = analytic.catastrophic_prob(rates, eps)
            if not (lower - 1e-10 <= p <= upper + 1e-10):
                print(f"ksweep: bound sandwich failed at K={K}", file=sys.stderr)
                return 1
            rows.append([K, "analytic", p, None, lower, upper, cat])
        else:
            est = simulate.estimate_failure_prob(mk, gen, eps, args.n, args.seed, args.workers)
            if not mk.requires_path or scn.state_path is not None:
                cat = pathwise.catastrophic_prob_path(FrozenModel(mk, scn.state_path))
            rows.append([K, "mc", est.mean, est.std_error, None, None, cat])
    _write_csv(args.out, header, rows)
    return 0


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def cmd_bounds(args, scn: Scenario) -> int:
    model = scn.model
    eps = model.epsilon
    subset = _subset_perms(model.K, args.subset_size, args.seed)
    if model.all_constant:
        rates = ConstRates.from_model(model)
        comp = analytic.bound_components(rates, eps, subset)
        exact = analytic.failure_prob_dp(rates, eps) if model.K <= analytic.DP_LIMIT else None
        backend = "analytic"
    else:
        fm = FrozenModel(model, scn.state_path)
        seps = {(i, j): pathwise.pairwise_separation_prob(fm, i, j)
                for i in range(model.K) for j in range(i + 1, model.K)}
        K = model.K
        G = np.exp(-np.array([[c.integral(p * eps) for c in fm.curves] for p in range(K)]))
        comp = {
            "upper_pairwise": K * (K - 1) / 2.0 - math.fsum(seps.values()),
            "upper_partial": 1.0 - math.fsum(pathwise.perm_integral(fm, p) for p in subset),
            "lower_spacing": 1.0 - math.exp(-fm.stress.integral((K - 1) * eps))
                             * analytic.position_factor_permanent(G),
            "lower_pairwise": 1.0 - min(seps.values()),
        }
        exact = pathwise.failure_prob_path(fm) if model.K <= pathwise.QUAD_LIMIT else None
        backend = "pathwise"

    lower = max(comp["lower_spacing"], comp["lower_pairwise"])
    upper = min(comp["upper_pairwise"], comp["upper_partial"])
    header = ["name", "value", "clamped", "backend"]
    rows = [[name, comp[name], _clamp(comp[name]), backend] for name in
            ("lower_spacing", "lower_pairwise", "upper_partial", "upper_pairwise")]
    rows.append(["lower", lower, _clamp(lower), backend])
    rows.append(["upper", upper, _clamp(upper), backend])
    if exact is not None:
        rows.append(["exact", exact, _clamp(exact), backend])
    _write_csv(args.out, header, rows)
    if exact is not None and not (lower - 1e-10 <= exact <= upper + 1e-10):
        print("bounds: sandwich check failed", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# cstatics
# ---------------------------------------------------------------------------


def cmd_cstatics(args, scn: Scenario) -> int:
    model = scn.model
    if not model.atom_at_zero:
        print("cstatics needs `atom_at_zero: true` in the scenario", file=sys.stderr)
        return 2
    if model.initial_state is None:
        print("cstatics needs `initial_state` in the scenario", file=sys.stderr)
        return 2
    if model.K > pathwise.QUAD_LIMIT:
        print(f"cstatics needs K <= {pathwise.QUAD_LIMIT}", file=sys.stderr)
        return 2
    fm = FrozenModel(model, scn.state_path)
    x0 = np.asarray(model.initial_state, dtype=float)
    h = args.fd_step
    header = ["coordinate", "analytic", "finite_diff", "rel_gap"]
    rows = []
    worst = 0.0
    for ell in range(x0.size):
        deriv = pathwise.comparative_static_path(fm, ell)
        up, dn = x0.copy(), x0.copy()
        up[ell] += h
        dn[ell] -= h
        fd = (pathwise.failure_prob_path(fm, initial_state=up)
              - pathwise.failure_prob_path(fm, initial_state=dn)) / (2.0 * h)
        gap = abs(deriv - fd) / max(abs(deriv), abs(fd), 1e-300)
        if deriv == 0.0 and abs(fd) < 1e-9:
            gap = 0.0
        worst = max(worst, gap)
        rows.append([ell, deriv, fd, gap])
    _write_csv(args.out, header, rows)
    if worst > 1e-3:
        print(f"cstatics: finite-difference gap {worst:.2e} exceeds 1e-3", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args, scn: Scenario) -> int:
    report = validate(scn.model, scn.state_path)
    if report.ok:
        print("ok")
    for v in report.violations:
        print(f"violation: {v}")
    print(f"backends: {', '.join(report.backends)}")
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="codefault",
        description="Co-default probability engine: exact, quadrature and Monte Carlo backends.",
    )
    p.add_argument("--scenario", help="scenario YAML file (optional for figure1)")
    p.add_argument("--command", required=True,
                   choices=["report", "figure1", "ksweep", "bounds", "cstatics", "validate"])
    p.add_argument("--seed", type=int, default=0, help="64-bit Monte Carlo seed")
    p.add_argument("--n", type=int, default=100_000, help="Monte Carlo replications")
    p.add_argument("--epsilon", type=float, default=None, help="override the scenario window")
    p.add_argument("--backend", choices=["auto", "analytic", "pathwise", "mc"], default="auto")
    p.add_argument("--out", default=None, help="output CSV path (default: stdout)")
    p.add_argument("--subset-size", type=int, default=None,
                   help="orderings in the partial-sum upper bound (default: identity only)")
    p.add_argument("--destructive", action="store_true",
                   help="ksweep: use ln(K)+base bank intensities")
    p.add_argument("--grid-points", type=int, default=20, help="figure1: alpha0 grid size")
    p.add_argument("--k-min", type=int, default=2, help="ksweep: first K")
    p.add_argument("--k-max", type=int, default=10, help="ksweep: last K")
    p.add_argument("--workers", type=int, default=1, help="Monte Carlo worker threads")
    p.add_argument("--fd-step", type=float, default=1e-6, help="cstatics: finite-difference step")
    p.add_argument("--mc-check", action="store_true",
                   help="figure1: add stratified Monte Carlo columns")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    scn = None
    if args.scenario is not None:
        try:
            scn = load_scenario(args.scenario)
        except (ConfigError, OSError) as exc:
            print(f"scenario error: {exc}", file=sys.stderr)
            return 2
        if args.epsilon is not None and args.command != "figure1":
            scn = Scenario(
                MarketModel(scn.model.bank_intensities, scn.model.stress_intensity,
                            args.epsilon, initial_state=scn.model.initial_state,
                            atom_at_zero=scn.model.atom_at_zero),
                scn.state_path, scn.generator)
    elif args.command != "figure1":
        print("--scenario is required for this command", file=sys.stderr)
        return 2

    try:
        if args.command == "report":
            return cmd_report(args, scn)
        if args.command == "figure1":
            return cmd_figure1(args, scn)
        if args.command == "ksweep":
            return cmd_ksweep(args, scn)
        if args.command == "bounds":
            return cmd_bounds(args, scn)
        if args.command == "cstatics":
            return cmd_cstatics(args, scn)
        if args.command == "validate":
            return cmd_validate(args, scn)
    except (ValueError, pathwise.QuadratureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
