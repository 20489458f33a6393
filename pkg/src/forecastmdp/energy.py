"""Building-temperature control example: value of dynamic weather forecasts.

Outdoor temperature is a scalar AR(1) with coefficient g; the indoor/outdoor
difference mean-reverts at rate rho, giving the controlled indoor dynamics
X' = (g - rho) W + rho X + Z' + V' + A. Costs are quadratic about a setpoint
tau with control penalty kappa, discounted at alpha. Two regulators are
compared on the same weather process:

  * no-forecast: 3 coordinates (W dev, X dev, setpoint constant);
  * dynamic-forecast: 5 coordinates adding the 1- and 2-period-ahead
    forecast deviations, driven by the forecast-roll noise with covariance C.

Both expected costs have closed forms in the Riccati fixed point, the
stationary second moments of the uncontrolled system, and C; the improvement
metric D is their percentage gap. The innovation variance used everywhere is
the truncated decomposition sum, so both systems describe one weather model.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import IO, Callable, Sequence

import numpy as np

from .lqg import (
    DiscountedLqr,
    IterationLimitError,
    RiccatiSolution,
    lyapunov_stationary_cov,
    riccati_solve,
)
from .mmfe import DisturbanceSchedule, MmfeModel

FORECAST_SPAN = 2  # forward forecasts carried in the augmented state


class UndefinedImprovementError(ZeroDivisionError):
    """Relative improvement is undefined when the baseline cost is zero."""


@dataclass(frozen=True)
class EnergyParams:
    """Scenario parameters; defaults are the reference configuration.

    trunc_lag = 0 requests the automatic truncation rule for gamma.
    """

    g: float = 0.6
    rho: float = 0.3
    kappa: float = 2.0
    alpha: float = 0.9
    tau: float = 74.0
    mean_w: float = 80.0
    mean_v: float = 2.0
    sigma2: float = 1.0
    sigma2_v: float = 1.0
    gamma: float = 0.95
    trunc_lag: int = 0

    def __post_init__(self):
        if not 0.0 < self.g < 1.0:
            raise ValueError(f"g must be in (0, 1), got {self.g}")
        if not 0.0 < self.rho < self.g:
            raise ValueError(f"rho must be in (0, g), got rho={self.rho}, g={self.g}")
        if self.kappa <= 0.0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.sigma2 < 0.0 or self.sigma2_v < 0.0:
            raise ValueError("variances must be nonnegative")

    @property
    def mean_z(self) -> float:
        """Innovation mean implied by holding the stationary mean fixed."""
        return (1.0 - self.g) * self.mean_w

    @property
    def tau0(self) -> float:
        """Uncontrolled equilibrium indoor temperature, the symmetry point of D."""
        return self.mean_w + self.mean_v / (1.0 - self.rho)

    def schedule(self) -> DisturbanceSchedule:
        return DisturbanceSchedule(self.sigma2, self.gamma, self.mean_z, self.trunc_lag)

    def mmfe_model(self) -> MmfeModel:
        return MmfeModel.scalar(self.g, self.schedule())

    @property
    def var_z(self) -> float:
        """Innovation variance: the (truncated) sum of the decomposition profile."""
        return self.schedule().var_z


@dataclass(frozen=True, eq=False)
class SystemBundle:
    """A regulator together with the stationary start-of-control moments."""

    lqr: DiscountedLqr
    initial_second_moment: np.ndarray
    labels: tuple[str, ...]
    constant_coord: float  # value of the deterministic last coordinate


NO_FORECAST_LABELS = ("w_dev", "x_dev", "setpoint")
FORECAST_LABELS = ("w_dev", "f1_dev", "f2_dev", "x_dev", "setpoint")


def build_no_forecast(params: EnergyParams) -> SystemBundle:
    """3-state regulator seen by a controller without forecast access."""
    g, rho = params.g, params.rho
    a = np.array([[g, 0.0, 0.0], [g - rho, rho, 0.0], [0.0, 0.0, 1.0]])
    b = np.array([[0.0], [1.0], [0.0]])
    q = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, -1.0], [0.0, -1.0, 1.0]])
    vz = params.var_z
    cov = np.array(
        [[vz, vz, 0.0], [vz, vz + params.sigma2_v, 0.0], [0.0, 0.0, 0.0]]
    )
    lqr = DiscountedLqr(a, b, q, np.array([[params.kappa]]), params.alpha, cov)
    vw = vz / (1.0 - g**2)
    vx = vw + params.sigma2_v / (1.0 - rho**2)
    y0 = params.tau - params.tau0
    moment = np.array([[vw, vw, 0.0], [vw, vx, 0.0], [0.0, 0.0, y0**2]])
    return SystemBundle(lqr, moment, NO_FORECAST_LABELS, y0)


def roll_noise_cov(params: EnergyParams) -> np.ndarray:
    """Per-period covariance C of the joint (weather, forecast, indoor) noise.

    Entry (i, j) is the covariance between the fresh-reveal combinations that
    drive coordinate i and j of the augmented state; the far-forecast entry
    also carries the lumped lookahead >= 3 tail of its target period.
    """
    s2, g = params.sigma2, params.g
    gam = params.gamma
    sched = params.schedule()
    tail = sched.tail_var(FORECAST_SPAN + 1)
    c = np.zeros((5, 5))
    c[0, 0] = s2
    c[0, 1] = s2 * g
    c[0, 2] = s2 * g**2
    c[0, 3] = s2
    c[1, 1] = s2 * (gam**2 + g**2)
    c[1, 2] = s2 * (gam**2 * g + g**3)
    c[1, 3] = s2 * g
    c[2, 2] = s2 * (gam**4 + gam**2 * g**2 + g**4) + tail
    c[2, 3] = s2 * g**2
    c[3, 3] = s2 + params.sigma2_v
    return c + np.triu(c, 1).T


def uncontrolled_forecast_block(params: EnergyParams) -> tuple[np.ndarray, np.ndarray]:
    """Zero-control dynamics and noise covariance of the 4 stochastic coordinates."""
    g, rho = params.g, params.rho
    a4 = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, g, 0.0],
            [-rho, 1.0, 0.0, rho],
        ]
    )
    return a4, roll_noise_cov(params)[:4, :4]


def initial_second_moment_forecast(params: EnergyParams) -> np.ndarray:
    """Closed-form E[state state'] at the start of control, 5x5.

    Uses the stationary AR identities of the uncontrolled chain: the
    far-forecast deviation is AR(1) in g driven by the C(3,3) noise, the
    nearer entries accumulate one roll of noise each, and the indoor column
    ties to the weather column because the indoor/outdoor gap is independent
    of the weather.
    """
    g = params.g
    c = roll_noise_cov(params)
    one_m_g2 = 1.0 - g**2
    m33 = c[2, 2] / one_m_g2
    m22 = m33 + c[1, 1]
    m23 = g * m33 + c[1, 2]
    m12 = g * m33 + c[1, 2] + c[0, 1]
    m13 = g**2 * m33 + g * c[1, 2] + c[0, 2]
    m11 = params.var_z / one_m_g2
    m44 = m11 + params.sigma2_v / (1.0 - params.rho**2)
    y0 = params.tau - params.tau0
    m = np.zeros((5, 5))
    m[0, 0] = m11
    m[1, 1] = m22
    m[2, 2] = m33
    m[0, 1] = m12
    m[0, 2] = m13
    m[1, 2] = m23
    m[3, 3] = m44
    # indoor column: E state_i * x_dev = E state_i * w_dev for the first three
    m[0, 3] = m11
    m[1, 3] = m12
    m[2, 3] = m13
    m[4, 4] = y0**2
    return m + np.triu(m, 1).T


def initial_second_moment_forecast_iterative(
    params: EnergyParams, tol: float = 1e-13
) -> np.ndarray:
    """Same moments via the Lyapunov fixed point on the stochastic block.

    The deterministic setpoint coordinate has unit eigenvalue and no noise,
    so it is appended analytically rather than iterated.
    """
    a4, c4 = uncontrolled_forecast_block(params)
    lam = lyapunov_stationary_cov(a4, c4, tol=tol)
    y0 = params.tau - params.tau0
    m = np.zeros((5, 5))
    m[:4, :4] = lam
    m[4, 4] = y0**2
    return m


def build_dynamic_forecast(params: EnergyParams) -> SystemBundle:
    """5-state regulator whose controller sees the rolling 2-period forecasts."""
    g, rho = params.g, params.rho
    a = np.array(
        [
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, g, 0.0, 0.0],
            [-rho, 1.0, 0.0, rho, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0],
        ]
    )
    b = np.array([[0.0], [0.0], [0.0], [1.0], [0.0]])
    q = np.zeros((5, 5))
    q[3, 3] = 1.0
    q[3, 4] = q[4, 3] = -1.0
    q[4, 4] = 1.0
    lqr = DiscountedLqr(a, b, q, np.array([[params.kappa]]), params.alpha, roll_noise_cov(params))
    moment = initial_second_moment_forecast(params)
    return SystemBundle(lqr, moment, FORECAST_LABELS, params.tau - params.tau0)


def expected_cost_no_forecast(
    params: EnergyParams, solution: RiccatiSolution | None = None
) -> float:
    """Expected discounted cost of the optimal forecast-free policy.

    Explicit expansion in the value-matrix entries: quadratic form against
    the stationary start moments plus the discounted per-period noise term.
    """
    if solution is None:
        solution = riccati_solve(build_no_forecast(params).lqr)
    k = solution.k_matrix
    g, rho, alpha = params.g, params.rho, params.alpha
    vz = params.var_z
    vw = vz / (1.0 - g**2)
    vx = vw + params.sigma2_v / (1.0 - rho**2)
    y0 = params.tau - params.tau0
    steady = k[0, 0] * vw + 2.0 * k[0, 1] * vw + k[1, 1] * vx + k[2, 2] * y0**2
    noise = k[0, 0] * vz + 2.0 * k[0, 1] * vz + k[1, 1] * (vz + params.sigma2_v)
    return float(steady + alpha / (1.0 - alpha) * noise)


def expected_cost_forecast(
    params: EnergyParams, solution: RiccatiSolution | None = None
) -> float:
    """Expected discounted cost of the optimal forecast-using policy:
    sum_ij K(i,j) M(i,j) + alpha/(1-alpha) trace(K C)."""
    if solution is None:
        solution = riccati_solve(build_dynamic_forecast(params).lqr)
    k = solution.k_matrix
    m = initial_second_moment_forecast(params)
    c = roll_noise_cov(params)
    return float(np.sum(k * m) + params.alpha / (1.0 - params.alpha) * np.trace(k @ c))


def improvement_d(params: EnergyParams) -> float:
    """Percentage cost reduction from using dynamic forecasts:
    100 (cost_no_forecast - cost_forecast) / cost_no_forecast."""
    cost_nf = expected_cost_no_forecast(params)
    cost_f = expected_cost_forecast(params)
    if cost_nf == 0.0:
        raise UndefinedImprovementError("baseline cost is zero; D is undefined")
    return 100.0 * (cost_nf - cost_f) / cost_nf


# ---------------------------------------------------------------------------
# Parameter sweeps.

SWEEPABLE = ("gamma", "g", "rho", "sigma2", "sigma2_v", "tau", "alpha", "kappa")

# brackets around the reference configuration; tau is centered on tau0
_AXIS_RANGES = {
    "gamma": (0.5, 0.99),
    "g": (0.1, 0.95),
    "rho": (0.05, None),  # upper bound tied to g
    "sigma2": (0.1, 4.0),
    "sigma2_v": (0.1, 4.0),
    "alpha": (0.5, 0.99),
    "kappa": (0.2, 5.0),
}

DEFAULT_RESOLUTION = 25


def default_axis_values(name: str, params: EnergyParams, resolution: int = DEFAULT_RESOLUTION) -> np.ndarray:
    if name not in SWEEPABLE:
        raise ValueError(f"unknown sweep axis {name!r}; choose from {SWEEPABLE}")
    if name == "tau":
        lo, hi = params.tau0 - 10.0, params.tau0 + 10.0
    elif name == "rho":
        lo, hi = _AXIS_RANGES["rho"][0], params.g - 0.05
    else:
        lo, hi = _AXIS_RANGES[name]
    return np.linspace(lo, hi, resolution)


@dataclass(frozen=True)
class SweepCell:
    value1: float
    value2: float
    cost_no_forecast: float
    cost_forecast: float
    d_percent: float
    status: str  # "ok" or an error category


@dataclass(frozen=True, eq=False)
class SweepResult:
    axis1: str
    axis2: str
    values1: np.ndarray
    values2: np.ndarray
    cells: tuple[SweepCell, ...]  # row-major over (values1, values2)

    def d_grid(self) -> np.ndarray:
        """D as a (len(values1), len(values2)) array, NaN where not ok."""
        out = np.full((len(self.values1), len(self.values2)), np.nan)
        for idx, cell in enumerate(self.cells):
            if cell.status == "ok":
                out[idx // len(self.values2), idx % len(self.values2)] = cell.d_percent
        return out


def _evaluate_cell(params: EnergyParams, axis1: str, v1: float, axis2: str, v2: float) -> SweepCell:
    try:
        cell_params = dataclasses.replace(params, **{axis1: float(v1), axis2: float(v2)})
    except ValueError as exc:
        return SweepCell(float(v1), float(v2), np.nan, np.nan, np.nan, f"invalid-params: {exc}")
    try:
        cost_nf = expected_cost_no_forecast(cell_params)
        cost_f = expected_cost_forecast(cell_params)
        if cost_nf == 0.0:
            return SweepCell(float(v1), float(v2), cost_nf, cost_f, np.nan, "undefined-improvement")
        d = 100.0 * (cost_nf - cost_f) / cost_nf
    except IterationLimitError as exc:
        return SweepCell(float(v1), float(v2), np.nan, np.nan, np.nan, f"non-convergence: {exc}")
    return SweepCell(float(v1), float(v2), cost_nf, cost_f, d, "ok")


def sweep_grid(
    params: EnergyParams,
    axis1: tuple[str, Sequence[float]],
    axis2: tuple[str, Sequence[float]],
    threads: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> SweepResult:
    """Evaluate the improvement metric over a parameter grid.

    Cells are independent pure evaluations, computed in row-major order over
    (axis1, axis2) and reported in that order regardless of scheduling.
    Invalid parameter combinations become per-cell status records.
    """
    name1, vals1 = axis1[0], np.asarray(axis1[1], dtype=float)
    name2, vals2 = axis2[0], np.asarray(axis2[1], dtype=float)
    for name in (name1, name2):
        if name not in SWEEPABLE:
            raise ValueError(f"unknown sweep axis {name!r}; choose from {SWEEPABLE}")
    if name1 == name2:
        raise ValueError("sweep axes must differ")
    pairs = [(v1, v2) for v1 in vals1 for v2 in vals2]
    total = len(pairs)

    def work(pair):
        return _evaluate_cell(params, name1, pair[0], name2, pair[1])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = []
            for idx, cell in enumerate(pool.map(work, pairs)):
                cells.append(cell)
                if progress is not None:
                    progress(idx + 1, total)
    else:
        cells = []
        for idx, pair in enumerate(pairs):
            cells.append(work(pair))
            if progress is not None:
                progress(idx + 1, total)
    return SweepResult(name1, name2, vals1, vals2, tuple(cells))


def write_sweep_csv(result: SweepResult, fp: IO[str]) -> None:
    """Delimited grid dump: one row per cell, full-precision scientific."""
    fp.write(
        f"{result.axis1},{result.axis2},cost_no_forecast,cost_forecast,D_percent,status\n"
    )
    for cell in result.cells:
        status = cell.status.replace(",", ";").replace("\n", " ")
        fp.write(
            f"{cell.value1:.17e},{cell.value2:.17e},{cell.cost_no_forecast:.17e},"
            f"{cell.cost_forecast:.17e},{cell.d_percent:.17e},{status}\n"
        )
