"""Finite-horizon tabular dynamic programming over discretized weather states.

Backward induction on stage-indexed cost/kernel tables, an exhaustive policy
enumeration oracle, and builders that quantize the conditional weather chain
(stage-dependent kernels from frozen initial forecasts), the plain chain, and
the rolling forecast-vector chain (stationary kernel on the quantized vector
state). Costs are stored pre-integrated over the next-period weather, so a
stage cost is c_i(s, a) = E[c(a, W_next) | s].

A scenario-tree optimizer at the bottom compares adapted policies under
coarser and finer observation partitions on one shared noise tree; there the
statement "more information never costs more" is literally a minimum over a
subset."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import IO, Callable, Sequence

import numpy as np
from scipy.stats import multivariate_normal, norm

from .mmfe import EpsilonArray, MmfeModel, forecast


class DiscretizationError(ValueError):
    """Quantization grid too coarse for the requested noise scale."""


class SizeGuardError(ValueError):
    """Requested instance exceeds the enumeration or memory guard."""


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Stage-indexed finite MDP.

    costs has shape (stages, S, A); kernels has shape (stages-1, S, A, S) and
    row (i, s, a, :) is the distribution of the next state. Kernels may vary
    by stage (conditional-forecast case) or repeat one table (stationary).
    """

    states: tuple[str, ...]
    actions: tuple[str, ...]
    costs: np.ndarray
    kernels: np.ndarray

    def __post_init__(self):
        costs = np.asarray(self.costs, dtype=float)
        kernels = np.asarray(self.kernels, dtype=float)
        stages, s, a = costs.shape
        if len(self.states) != s or len(self.actions) != a:
            raise ValueError("cost table shape does not match labels")
        if kernels.shape != (stages - 1, s, a, s):
            raise ValueError(
                f"kernels must have shape {(stages - 1, s, a, s)}, got {kernels.shape}"
            )
        if kernels.size:
            if np.any(kernels < 0.0):
                raise ValueError("kernel entries must be nonnegative")
            if np.max(np.abs(kernels.sum(axis=-1) - 1.0)) > 1e-12:
                raise ValueError("kernel rows must sum to one within 1e-12")
        costs.setflags(write=False)
        kernels.setflags(write=False)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "kernels", kernels)

    @property
    def horizon(self) -> int:
        return self.costs.shape[0]


@dataclass(frozen=True, eq=False)
class Solution:
    values: np.ndarray  # (stages, S)
    policy: np.ndarray  # (stages, S), action indices


def backward_induction(mdp: TabularMdp) -> Solution:
    """Optimal values and a minimizing policy, ties to the smallest action index.

    v_i(s) = min_a [c_i(s, a) + sum_s' P_i(s'|s,a) v_{i+1}(s')], terminal
    stage v_t(s) = min_a c_t(s, a).
    """
    stages, s, a = mdp.costs.shape
    values = np.empty((stages, s))
    policy = np.empty((stages, s), dtype=np.int64)
    q = mdp.costs[-1]
    policy[-1] = np.argmin(q, axis=1)
    values[-1] = q[np.arange(s), policy[-1]]
    for i in range(stages - 2, -1, -1):
        q = mdp.costs[i] + mdp.kernels[i] @ values[i + 1]
        policy[i] = np.argmin(q, axis=1)
        values[i] = q[np.arange(s), policy[i]]
    return Solution(values, policy)


def evaluate_policy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Exact stage values of a deterministic Markov policy, shape (stages, S)."""
    stages, s, _ = mdp.costs.shape
    policy = np.asarray(policy, dtype=np.int64)
    values = np.empty((stages, s))
    idx = np.arange(s)
    values[-1] = mdp.costs[-1][idx, policy[-1]]
    for i in range(stages - 2, -1, -1):
        values[i] = (
            mdp.costs[i][idx, policy[i]]
            + np.einsum("st,t->s", mdp.kernels[i][idx, policy[i], :], values[i + 1])
        )
    return values


def brute_force_policy_enum(mdp: TabularMdp, guard: int = 1_000_000) -> Solution:
    """Elementwise minimum over every deterministic Markov policy.

    The oracle for backward_induction: evaluates each of the A^(S*stages)
    policies exactly and keeps, per (stage, state), the smallest value seen.
    Enumeration order makes ties resolve to the smallest action index.
    """
    stages, s, a = mdp.costs.shape
    count = a ** (s * stages)
    if count > guard:
        raise SizeGuardError(f"{count} policies exceeds the guard of {guard}")
    best_values = np.full((stages, s), np.inf)
    best_policy = np.zeros((stages, s), dtype=np.int64)
    for combo in itertools.product(range(a), repeat=s * stages):
        policy = np.asarray(combo, dtype=np.int64).reshape(stages, s)
        values = evaluate_policy(mdp, policy)
        better = values < best_values
        best_values = np.where(better, values, best_values)
        best_policy[better] = policy[better]
    return Solution(best_values, best_policy)


# ---------------------------------------------------------------------------
# Gaussian quantization.


def gaussian_cell_probs(atoms: np.ndarray, mean: float, std: float) -> np.ndarray:
    """Mass of N(mean, std^2) on the Voronoi cells of sorted atoms.

    Cell boundaries sit midway between neighbors; all mass beyond the first
    and last boundary folds into the extreme atoms. std = 0 degenerates to a
    point mass on the nearest atom.
    """
    atoms = np.asarray(atoms, dtype=float)
    if std == 0.0:
        probs = np.zeros(len(atoms))
        probs[int(np.argmin(np.abs(atoms - mean)))] = 1.0
        return probs
    edges = 0.5 * (atoms[1:] + atoms[:-1])
    cdf = norm.cdf(edges, loc=mean, scale=std)
    return np.diff(np.concatenate(([0.0], cdf, [1.0])))


def _max_cell_mass_guard(kernels: np.ndarray) -> None:
    worst = float(kernels.max())
    if worst > 0.5:
        raise DiscretizationError(
            f"a quantization cell captures {worst:.3f} of the transition mass; "
            "refine the grid"
        )


CostFn = Callable[[str, float], float]

_GH_NODES = 41


def _gauss_hermite(std_normal_nodes: int = _GH_NODES):
    nodes, weights = np.polynomial.hermite_e.hermegauss(std_normal_nodes)
    return nodes, weights / math.sqrt(2.0 * math.pi)


def _expected_costs(
    means: np.ndarray, std: float, actions: Sequence[str], cost_fn: CostFn
) -> np.ndarray:
    """c(s, a) = E cost(a, W') with W' ~ N(means[s], std^2), by quadrature.

    Stage costs integrate over the exact next-weather law, not the quantized
    kernel; only the value recursion sees the grid.
    """
    nodes, weights = _gauss_hermite()
    out = np.empty((len(means), len(actions)))
    for si, m in enumerate(means):
        w_next = m + std * nodes
        for ai, act in enumerate(actions):
            out[si, ai] = float(np.dot(weights, [cost_fn(act, float(w)) for w in w_next]))
    return out


def discretize_no_forecast(
    model: MmfeModel,
    horizon: int,
    atoms: np.ndarray,
    actions: Sequence[str],
    cost_fn: CostFn,
) -> TabularMdp:
    """Quantized plain weather chain: one stationary kernel, repeated."""
    if model.dim != 1:
        raise ValueError("discretization supports scalar weather only")
    atoms = np.sort(np.asarray(atoms, dtype=float))
    sched = model.schedules[0]
    g = model.g_matrix[0, 0]
    std = math.sqrt(sched.var_z)
    means = g * atoms + sched.mean_z
    rows = np.stack([gaussian_cell_probs(atoms, m, std) for m in means])
    _max_cell_mass_guard(rows)
    stage_cost = _expected_costs(means, std, actions, cost_fn)
    s, a = stage_cost.shape
    kernels = np.broadcast_to(rows[:, None, :], (horizon - 1, s, a, s)).copy()
    costs = np.broadcast_to(stage_cost, (horizon, s, a)).copy()
    labels = tuple(f"w={w:+.6g}" for w in atoms)
    return TabularMdp(labels, tuple(actions), costs, kernels)


def discretize_static_forecast(
    model: MmfeModel,
    frozen: EpsilonArray,
    w0: float,
    horizon: int,
    atoms: np.ndarray,
    actions: Sequence[str],
    cost_fn: CostFn,
) -> TabularMdp:
    """Quantized weather chain conditioned on the forecasts frozen at time 0.

    Stage i realizes W -> g W + Z_{i+1}, where the conditional step noise has
    the frozen-information mean F_{i+1|0} - g F_{i|0} and a variance that
    grows with the stage (the uncertainty accumulates as the frozen
    information ages), so the kernels are genuinely stage-dependent.
    """
    if model.dim != 1:
        raise ValueError("discretization supports scalar weather only")
    atoms = np.sort(np.asarray(atoms, dtype=float))
    sched = model.schedules[0]
    g = model.g_matrix[0, 0]
    f = [forecast(model, frozen, w0, 0, m) for m in range(horizon + 1)]
    per_stage_rows = []
    per_stage_costs = []
    for i in range(horizon):
        mean_shift = f[i + 1] - g * f[i]
        std = math.sqrt(sched.plume_var(i + 1))
        means = g * atoms + mean_shift
        per_stage_rows.append(np.stack([gaussian_cell_probs(atoms, m, std) for m in means]))
        per_stage_costs.append(_expected_costs(means, std, actions, cost_fn))
    stacked = np.stack(per_stage_rows)
    _max_cell_mass_guard(stacked)
    s, a = len(atoms), len(actions)
    costs = np.stack(per_stage_costs)
    kernels = np.broadcast_to(
        stacked[: horizon - 1, :, None, :], (horizon - 1, s, a, s)
    ).copy()
    labels = tuple(f"w={w:+.6g}" for w in atoms)
    return TabularMdp(labels, tuple(actions), costs, kernels)


def discretize_dynamic_forecast(
    model: MmfeModel,
    r: int,
    horizon: int,
    atoms: np.ndarray,
    actions: Sequence[str],
    cost_fn: CostFn,
    max_states: int = 4096,
) -> TabularMdp:
    """Quantized rolling-forecast chain: stationary kernel on the vector state.

    r = 1 keeps the single forward forecast; r = 2 keeps the pair, whose roll
    noise is jointly Gaussian with correlated components (integrated over
    product cells via the bivariate normal CDF). Stage costs integrate the
    raw cost over the realized next weather W' = f_1 + fresh reveal.
    """
    if model.dim != 1:
        raise ValueError("discretization supports scalar weather only")
    if r not in (1, 2):
        raise SizeGuardError("vector states supported for r in {1, 2} only")
    atoms = np.sort(np.asarray(atoms, dtype=float))
    n = len(atoms)
    if n**r > max_states:
        raise SizeGuardError(f"{n ** r} states exceeds the cap of {max_states}")
    sched = model.schedules[0]
    g = model.g_matrix[0, 0]
    mean_z = sched.mean_z
    # fresh-roll noise second moments shared by every stage
    var_u = sched.var_at_lookahead(1) + g**2 * sched.var_at_lookahead(0)
    var_w = (
        sched.var_at_lookahead(2)
        + g**2 * sched.var_at_lookahead(1)
        + g**4 * sched.var_at_lookahead(0)
        + sched.tail_var(3)
    )
    cov_uw = g * sched.var_at_lookahead(1) + g**3 * sched.var_at_lookahead(0)
    var_r1 = sched.var_at_lookahead(1) + g**2 * sched.var_at_lookahead(0) + sched.tail_var(2)

    if r == 1:
        states = [(w,) for w in atoms]
        std = math.sqrt(float(var_r1))
        rows = np.stack(
            [gaussian_cell_probs(atoms, g * f1 + mean_z, std) for f1 in atoms]
        )
        labels = tuple(f"f1={w:+.6g}" for w in atoms)
    else:
        states = [(f1, f2) for f1 in atoms for f2 in atoms]
        labels = tuple(f"f1={f1:+.6g},f2={f2:+.6g}" for f1, f2 in states)
        cov = np.array([[var_u, cov_uw], [cov_uw, var_w]], dtype=float)
        edges = 0.5 * (atoms[1:] + atoms[:-1])
        bounds = np.concatenate(([-np.inf], edges, [np.inf]))
        # the transition law depends on the source only through f2: the next
        # pair is (f2 + u, g f2 + mean_z + w) with (u, w) the fresh noise
        dist = multivariate_normal(mean=[0.0, 0.0], cov=cov, allow_singular=True)
        corners = np.stack(np.meshgrid(bounds, bounds, indexing="ij"), axis=-1)
        per_f2 = {}
        for f2 in atoms:
            shift = np.array([f2, g * f2 + mean_z])
            pts = corners - shift
            finite = np.where(np.isfinite(pts), pts, np.sign(pts) * 1e12)
            cdf = dist.cdf(finite.reshape(-1, 2)).reshape(n + 1, n + 1)
            cell = cdf[1:, 1:] - cdf[:-1, 1:] - cdf[1:, :-1] + cdf[:-1, :-1]
            cell = np.clip(cell, 0.0, None)
            cell /= cell.sum()
            per_f2[f2] = cell.ravel()
        rows = np.stack([per_f2[f2] for (_, f2) in states])
    _max_cell_mass_guard(rows)

    # stage cost integrates over W' = f_1 + fresh reveal
    sd0 = math.sqrt(sched.var_at_lookahead(0))
    stage_cost = _expected_costs(
        np.array([state[0] for state in states]), sd0, actions, cost_fn
    )
    s, a = stage_cost.shape
    kernels = np.broadcast_to(rows[:, None, :], (horizon - 1, s, a, s)).copy()
    costs = np.broadcast_to(stage_cost, (horizon, s, a)).copy()
    return TabularMdp(labels, tuple(actions), costs, kernels)


def solution_to_csv(mdp: TabularMdp, sol: Solution, fp: IO[str]) -> None:
    fp.write("stage,state,value,action\n")
    for i in range(mdp.horizon):
        for si, label in enumerate(mdp.states):
            fp.write(
                f"{i},{label},{sol.values[i, si]:.17e},{mdp.actions[sol.policy[i, si]]}\n"
            )


# ---------------------------------------------------------------------------
# Common-noise scenario trees.


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Finite-support noise tree driving both controllers of a comparison.

    Each period nature draws an independent pair: the incoming weather's
    final reveal (observable through the weather itself) and the next
    forecast's fresh shift (observable only to a forecast-informed
    controller). The indoor state follows
    x' = rho x + (g - rho) w + a + (w' - g w), and each stage costs
    (x' - target)^2 + effort * a^2. Because the newest shift never appears
    in the weather seen so far, weather-history observation classes are a
    strict coarsening of full-history classes.
    """

    g: float
    rho: float
    mean_z: float
    target: float
    effort: float
    actions: tuple[float, ...]
    reveals: np.ndarray  # (periods, q_r) support of the weather reveal
    reveal_probs: np.ndarray
    shifts: np.ndarray  # (periods, q_s) support of the forecast shift
    shift_probs: np.ndarray
    w0: float
    f0: float
    x0: float


def random_scenario_tree(seed: int, periods: int = 3, q_r: int = 2, q_s: int = 2) -> ScenarioTree:
    gen = np.random.default_rng(seed)
    g = float(gen.uniform(0.3, 0.9))
    rho = float(gen.uniform(0.05, g - 0.02))

    def centered(shape):
        vals = gen.normal(0.0, 1.0, shape)
        return vals - vals.mean(axis=-1, keepdims=True)

    return ScenarioTree(
        g=g,
        rho=rho,
        mean_z=float(gen.uniform(-0.5, 0.5)),
        target=float(gen.uniform(-1.0, 1.0)),
        effort=float(gen.uniform(0.2, 2.0)),
        actions=tuple(float(a) for a in gen.uniform(-1.5, 1.5, size=3)),
        reveals=centered((periods, q_r)),
        reveal_probs=gen.dirichlet(np.ones(q_r), size=periods),
        shifts=centered((periods, q_s)),
        shift_probs=gen.dirichlet(np.ones(q_s), size=periods),
        w0=float(gen.normal()),
        f0=float(gen.normal()),
        x0=float(gen.normal()),
    )


def _scenario_paths(tree: ScenarioTree):
    """All leaf paths: (branch pairs, probability, weather trajectory)."""
    periods, q_r = tree.reveals.shape
    q_s = tree.shifts.shape[1]
    paths = []
    for branches in itertools.product(
        *(itertools.product(range(q_r), range(q_s)) for _ in range(periods))
    ):
        prob = 1.0
        w, f = tree.w0, tree.f0
        ws = [w]
        for n, (br, bs) in enumerate(branches):
            prob *= float(tree.reveal_probs[n, br] * tree.shift_probs[n, bs])
            w_next = f + float(tree.reveals[n, br])
            f = tree.g * f + tree.mean_z + float(tree.shifts[n, bs])
            w = w_next
            ws.append(w)
        paths.append((branches, prob, ws))
    return paths


def _optimal_adapted_cost(tree: ScenarioTree, key_of) -> float:
    """Exact minimum expected cost over policies adapted to an observation map.

    key_of(branches, n) labels the information class in which the period-n
    decision must be constant. Classes refine over time (keys are history
    prefixes), so backward induction over the class tree with the indoor
    state carried along is exact: every scenario in a class shares its
    action history, weather history, and hence indoor state.
    """
    periods = tree.reveals.shape[0]
    paths = _scenario_paths(tree)

    def go(period: int, members, x: float) -> float:
        if period == periods:
            return 0.0
        best = math.inf
        for a in tree.actions:
            immediate = 0.0
            groups: dict = {}
            for branches, prob, ws in members:
                x_next = (
                    tree.rho * x
                    + (tree.g - tree.rho) * ws[period]
                    + a
                    + (ws[period + 1] - tree.g * ws[period])
                )
                immediate += prob * ((x_next - tree.target) ** 2 + tree.effort * a * a)
                groups.setdefault(key_of(branches, period + 1), ([], x_next))[0].append(
                    (branches, prob, ws)
                )
            future = sum(go(period + 1, sub, xn) for sub, xn in groups.values())
            best = min(best, immediate + future)
        return best

    return go(0, paths, tree.x0)


def _weather_key(tree: ScenarioTree, branches, n: int):
    """Weather history through period n, the coarse observation."""
    w, f = tree.w0, tree.f0
    seen = [round(w, 12)]
    for m in range(n):
        br, bs = branches[m]
        w = f + float(tree.reveals[m, br])
        f = tree.g * f + tree.mean_z + float(tree.shifts[m, bs])
        seen.append(round(w, 12))
    return tuple(seen)


def scenario_tree_costs(tree: ScenarioTree) -> tuple[float, float]:
    """(weather-history cost, full-history cost) on one shared noise tree.

    The full-history controller also sees the forecast path; its plans
    contain every weather-history plan, so the second cost can never exceed
    the first.
    """
    coarse = _optimal_adapted_cost(tree, lambda br, n: _weather_key(tree, br, n))
    fine = _optimal_adapted_cost(tree, lambda br, n: br[:n])
    return coarse, fine


def brute_force_adapted_cost(tree: ScenarioTree, observation: str, guard: int = 300_000) -> float:
    """Minimum over explicit enumeration of all class-action assignments.

    Oracle for the class-tree recursion in `_optimal_adapted_cost`; only
    viable for very small trees.
    """
    periods = tree.reveals.shape[0]
    paths = _scenario_paths(tree)
    if observation == "weather":
        key_of = lambda br, n: _weather_key(tree, br, n)
    elif observation == "full":
        key_of = lambda br, n: br[:n]
    else:
        raise ValueError("observation must be 'weather' or 'full'")
    class_keys = [sorted({key_of(br, n) for br, _, _ in paths}) for n in range(periods)]
    index = [{key: i for i, key in enumerate(keys)} for keys in class_keys]
    total_classes = sum(len(keys) for keys in class_keys)
    count = len(tree.actions) ** total_classes
    if count > guard:
        raise SizeGuardError(f"{count} assignments exceeds the guard of {guard}")
    best = math.inf
    for flat in itertools.product(range(len(tree.actions)), repeat=total_classes):
        offsets = np.cumsum([0] + [len(keys) for keys in class_keys])
        total = 0.0
        for branches, prob, ws in paths:
            x = tree.x0
            cost = 0.0
            for n in range(periods):
                a = tree.actions[flat[offsets[n] + index[n][key_of(branches, n)]]]
                x = (
                    tree.rho * x
                    + (tree.g - tree.rho) * ws[n]
                    + a
                    + (ws[n + 1] - tree.g * ws[n])
                )
                cost += (x - tree.target) ** 2 + tree.effort * a * a
            total += prob * cost
        best = min(best, total)
    return best
