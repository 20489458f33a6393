"""Named invariant battery behind the command-line `validate` mode.

Each check returns (name, passed, detail). The battery covers the forecast
martingale structure, the Riccati and Lyapunov fixed points against
independent oracles, closed-form moments and costs against Monte Carlo, the
improvement-metric properties, and tabular DP against policy enumeration.
"""

from __future__ import annotations

import dataclasses
import math
import time
from typing import Callable

import numpy as np

from . import energy, simulate, tabular
from .lqg import riccati_map, riccati_solve
from .mmfe import (
    EpsilonArray,
    forecast,
    martingale_difference,
    sample_epsilon_array,
)

Check = tuple[str, bool, str]


def _scalar_riccati_root(a, b, q, r, alpha, tol=1e-12):
    def f(k):
        return q + alpha * a * a * k - alpha**2 * a * a * b * b * k * k / (
            alpha * k * b * b + r
        ) - k

    lo, hi = q, max(q, 1.0)
    while f(hi) > 0.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) > 0.0 else (lo, mid)
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def check_martingale_mean(params: energy.EnergyParams, reps: int = 100_000, seed: int = 101) -> Check:
    """Averaging the next-origin forecast over fresh reveals recovers the
    current forecast within 4 standard errors."""
    model = params.mmfe_model()
    sched = model.schedules[0]
    g = params.g
    k, n = 0, 4
    eps = sample_epsilon_array(model, (-(sched.trunc_lag + 2), k), seed)
    w_k = float(model.mean_w[0]) + 1.7
    f_base = forecast(model, eps, w_k, k, n)
    gen = np.random.default_rng(seed + 1)
    d = np.zeros(reps)
    for i in range(0, n - k):
        std = math.sqrt(sched.var_at_lookahead(n - i - (k + 1)))
        d += g**i * gen.normal(0.0, std, reps)
    f_new = f_base + d
    se = f_new.std(ddof=1) / math.sqrt(reps)
    gap = abs(f_new.mean() - f_base)
    return (
        "martingale-conditional-mean",
        bool(gap < 4.0 * se),
        f"|mean - forecast| = {gap:.3e}, 4se = {4 * se:.3e}",
    )


def check_orthogonality(params: energy.EnergyParams, reps: int = 100_000, seed: int = 103) -> Check:
    """Forecast revisions at distinct reveal times are empirically uncorrelated."""
    model = params.mmfe_model()
    sched = model.schedules[0]
    g = params.g
    gen = np.random.default_rng(seed)

    def revision(target, reveal):
        out = np.zeros(reps)
        for i in range(0, target - reveal + 1):
            std = math.sqrt(sched.var_at_lookahead(target - i - reveal))
            out += g**i * gen.normal(0.0, std, reps)
        return out

    corr = float(np.corrcoef(revision(6, 3), revision(5, 2))[0, 1])
    bound = 4.0 / math.sqrt(reps)
    return (
        "revision-orthogonality",
        bool(abs(corr) < bound),
        f"|corr| = {abs(corr):.3e}, bound = {bound:.3e}",
    )


def check_consistency_telescoping(params: energy.EnergyParams, seed: int = 105) -> Check:
    """F_{n|n} = W_n exactly and the revisions telescope to the realized path."""
    model = params.mmfe_model()
    lag = model.trunc_lag
    eps = sample_epsilon_array(model, (-lag - 10, 8), seed)
    g = params.g
    w = {-2: float(model.mean_w[0])}
    for m in range(-2, 8):
        z = params.mean_z + float(eps.reveal_sum(m + 1, m + 1 - lag, m + 1)[0])
        w[m + 1] = g * w[m] + z
    worst = 0.0
    for n in range(1, 8):
        if forecast(model, eps, w[n], n, n) != w[n]:
            return ("consistency-telescoping", False, f"zero-step forecast differs at n={n}")
        total = forecast(model, eps, w[0], 0, n)
        total += sum(martingale_difference(model, eps, n, k) for k in range(1, n + 1))
        worst = max(worst, abs(total - w[n]))
    return (
        "consistency-telescoping",
        bool(worst < 1e-12),
        f"max telescoping residual = {worst:.3e}",
    )


def check_riccati(params: energy.EnergyParams) -> Check:
    """Fixed-point residual below 1e-12 for both regulators, monotone
    positive-semidefinite iterate ordering, scalar bisection agreement."""
    msgs = []
    ok = True
    for name, bundle in (
        ("plain", energy.build_no_forecast(params)),
        ("forecast", energy.build_dynamic_forecast(params)),
    ):
        sol = riccati_solve(bundle.lqr, tol=1e-13)
        if sol.residual >= 1e-12:
            ok = False
        msgs.append(f"{name} residual {sol.residual:.2e}")
        k = bundle.lqr.q_matrix.copy()
        floor = 0.0
        for _ in range(sol.iterations):
            nxt = riccati_map(bundle.lqr, k)
            floor = min(floor, float(np.min(np.linalg.eigvalsh(nxt - k))))
            k = nxt
        if floor < -1e-10:
            ok = False
        msgs.append(f"{name} monotonicity floor {floor:.2e}")
    from .lqg import DiscountedLqr

    prob = DiscountedLqr(
        np.array([[0.9]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]),
        0.9, np.array([[0.0]]),
    )
    got = riccati_solve(prob, tol=1e-14).k_matrix[0, 0]
    want = _scalar_riccati_root(0.9, 1.0, 1.0, 1.0, 0.9)
    if abs(got - want) >= 1e-10:
        ok = False
    msgs.append(f"scalar oracle gap {abs(got - want):.2e}")
    return ("riccati-fixed-point", ok, "; ".join(msgs))


def check_moment_agreement(params: energy.EnergyParams) -> Check:
    closed = energy.initial_second_moment_forecast(params)
    iterative = energy.initial_second_moment_forecast_iterative(params)
    gap = float(np.max(np.abs(closed - iterative)))
    return ("moment-closed-vs-iterative", bool(gap < 1e-10), f"max entry gap = {gap:.3e}")


def check_c_matrix_monte_carlo(
    params: energy.EnergyParams, draws: int = 1_000_000, seed: int = 6
) -> Check:
    """Covariance of directly sampled roll noise within 1% of the closed form."""
    sched = params.schedule()
    g = params.g
    gen = np.random.default_rng(seed)
    e0 = gen.normal(0.0, math.sqrt(sched.var_at_lookahead(0)), draws)
    e1 = gen.normal(0.0, math.sqrt(sched.var_at_lookahead(1)), draws)
    e2 = gen.normal(0.0, math.sqrt(sched.var_at_lookahead(2)), draws)
    # far tail accumulated lookahead by lookahead, not as one lumped draw
    agg = np.zeros(draws)
    for j in range(3, sched.trunc_lag + 1):
        sd = math.sqrt(sched.var_at_lookahead(j))
        if sd == 0.0:
            break
        agg += gen.normal(0.0, sd, draws)
    v = gen.normal(0.0, math.sqrt(params.sigma2_v), draws)
    xi = np.stack([e0, e1 + g * e0, e2 + g * e1 + g * g * e0 + agg, e0 + v])
    mc = np.cov(xi)
    c = energy.roll_noise_cov(params)[:4, :4]
    rel = np.max(np.abs(mc - c) / np.maximum(np.abs(c), 1e-12))
    return ("roll-noise-cov-monte-carlo", bool(rel < 0.01), f"max relative gap = {rel:.4%}")


def check_cost_no_forecast_sim(
    params: energy.EnergyParams, reps: int = 100_000, seed: int = 109
) -> Check:
    sol = riccati_solve(energy.build_no_forecast(params).lqr)
    closed = energy.expected_cost_no_forecast(params, sol)
    cfg = simulate.SimConfig(replications=reps, discount=params.alpha, seed=seed)
    est = simulate.simulate_no_forecast_system_cost(params, sol.gain, cfg)
    z = abs(est.mean - closed) / est.std_error
    return (
        "plain-cost-closed-vs-sim",
        bool(z < 3.0),
        f"closed {closed:.4f}, sim {est.mean:.4f} +- {est.std_error:.4f} (z = {z:.2f})",
    )


def check_cost_forecast_sim(
    params: energy.EnergyParams, reps: int = 100_000, seed: int = 111
) -> Check:
    sol = riccati_solve(energy.build_dynamic_forecast(params).lqr)
    closed = energy.expected_cost_forecast(params, sol)
    cfg = simulate.SimConfig(replications=reps, discount=params.alpha, seed=seed)
    est = simulate.simulate_forecast_system_cost(params, sol.gain, cfg)
    z = abs(est.mean - closed) / est.std_error
    return (
        "forecast-cost-closed-vs-sim",
        bool(z < 3.0),
        f"closed {closed:.4f}, sim {est.mean:.4f} +- {est.std_error:.4f} (z = {z:.2f})",
    )


def check_improvement_properties(params: energy.EnergyParams, resolution: int = 13) -> Check:
    """Nonnegativity and the qualitative improvement trends on a small grid."""
    res = energy.sweep_grid(
        params,
        ("gamma", energy.default_axis_values("gamma", params, resolution)),
        ("g", energy.default_axis_values("g", params, resolution)),
    )
    grid = res.d_grid()
    msgs = []
    ok = True
    if not np.nanmin(grid) >= -1e-8:
        ok = False
    msgs.append(f"min D = {np.nanmin(grid):.3e}")
    for j in range(grid.shape[1]):
        col = grid[:, j][~np.isnan(grid[:, j])]
        if col.size > 1 and not np.all(np.diff(col) >= -1e-9):
            ok = False
            msgs.append(f"D not monotone in gamma at column {j}")
            break
    # the toward-persistence claim: D falls off as g approaches one
    top = [
        energy.improvement_d(dataclasses.replace(params, g=g)) for g in (0.80, 0.875, 0.95)
    ]
    if not (top[0] > top[1] > top[2]):
        ok = False
        msgs.append("D not decreasing toward g -> 1")
    d_small = energy.improvement_d(dataclasses.replace(params, gamma=0.01))
    if not abs(d_small) < 1e-4:
        ok = False
    msgs.append(f"D(gamma=0.01) = {d_small:.2e}")
    tau0 = params.tau0
    sym = max(
        abs(
            energy.improvement_d(dataclasses.replace(params, tau=tau0 + d))
            - energy.improvement_d(dataclasses.replace(params, tau=tau0 - d))
        )
        for d in (1.0, 4.0, 8.0)
    )
    if not sym < 1e-8:
        ok = False
    msgs.append(f"setpoint symmetry gap = {sym:.2e}")
    return ("improvement-properties", ok, "; ".join(msgs))


def check_tabular_dp(instances: int = 60, seed: int = 113) -> Check:
    gen = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        costs = gen.uniform(0.0, 5.0, size=(3, 2, 2))
        kernels = gen.uniform(0.05, 1.0, size=(2, 2, 2, 2))
        kernels /= kernels.sum(axis=-1, keepdims=True)
        mdp = tabular.TabularMdp(("s0", "s1"), ("a0", "a1"), costs, kernels)
        dp = tabular.backward_induction(mdp)
        brute = tabular.brute_force_policy_enum(mdp)
        worst = max(worst, float(np.max(np.abs(dp.values - brute.values))))
    ok = worst < 1e-12
    gaps = []
    for s in range(20):
        coarse, fine = tabular.scenario_tree_costs(tabular.random_scenario_tree(seed + s))
        gaps.append(coarse - fine)
        if fine > coarse + 1e-12:
            ok = False
    return (
        "tabular-dp-oracles",
        ok,
        f"max enumeration gap = {worst:.2e}; min information gain = {min(gaps):.2e}",
    )


def run_battery(
    params: energy.EnergyParams, emit: Callable[[str], None] = print
) -> list[Check]:
    checks: list[Check] = []
    steps: list[Callable[[], Check]] = [
        lambda: check_martingale_mean(params),
        lambda: check_orthogonality(params),
        lambda: check_consistency_telescoping(params),
        lambda: check_riccati(params),
        lambda: check_moment_agreement(params),
        lambda: check_c_matrix_monte_carlo(params),
        lambda: check_cost_no_forecast_sim(params),
        lambda: check_cost_forecast_sim(params),
        lambda: check_improvement_properties(params),
        lambda: check_tabular_dp(),
    ]
    for step in steps:
        t0 = time.perf_counter()
        name, ok, detail = step()
        dt = time.perf_counter() - t0
        checks.append((name, ok, detail))
        emit(f"{'PASS' if ok else 'FAIL'} {name} ({dt:.1f}s): {detail}")
    return checks
