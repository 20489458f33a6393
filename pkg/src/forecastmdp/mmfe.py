"""Forecast evolution over a linear state space model.

The weather state follows W_{n+1} = G W_n + Z_{n+1} with the one-step
innovation decomposed into a triangular array of independent disturbances,

    Z_n - E Z = sum_{j>=0} eps_n(n - j),

where eps_n(k) is the piece of information about time n that becomes known at
time k <= n. Point forecasts are conditional means given everything revealed
up to the forecast origin; they form a martingale in the origin, and the full
r-period forward forecast vector is a Markov chain that can be rolled one
period at a time. This module builds the disturbance array, evaluates
forecasts and their update increments, and implements the unconditional and
conditional one-period rolls.

Variance convention: var eps_{n}(k) = sigma2 * gamma^(2 (n-k)) for lookaheads
n - k up to a truncation lag L, zero beyond. Sums over past reveal times are
therefore finite; the discarded tail mass is geometrically small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np

from . import rng


class InvalidHorizonError(ValueError):
    """Forecast target precedes the forecast origin (n < k), or k > n."""


class IncompleteArrayError(LookupError):
    """A required disturbance entry lies outside the array's reveal window."""


def default_trunc_lag(gamma: float, tail_mass: float = 1e-12) -> int:
    """Smallest lag L with gamma^(2L) <= tail_mass, so the dropped variance
    beyond L is below tail_mass * sigma2 / (1 - gamma^2)."""
    if gamma <= 0.0:
        return 1
    return max(1, math.ceil(math.log(tail_mass) / (2.0 * math.log(gamma))))


@dataclass(frozen=True)
class DisturbanceSchedule:
    """Variance profile of the disturbance array for one weather coordinate.

    Attributes:
        sigma2: variance of the lookahead-0 entry (weather units squared).
        gamma: per-period lookahead decay of the entry standard deviation,
            in [0, 1); var eps_{n+j}(n) = sigma2 * gamma^(2j).
        mean_z: mean of the one-step innovation Z.
        trunc_lag: lookahead L beyond which entries are treated as zero.
    """

    sigma2: float
    gamma: float
    mean_z: float = 0.0
    trunc_lag: int = field(default=0)

    def __post_init__(self):
        if self.sigma2 < 0.0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.trunc_lag == 0:
            object.__setattr__(self, "trunc_lag", default_trunc_lag(self.gamma))
        if self.trunc_lag < 1:
            raise ValueError(f"trunc_lag must be >= 1, got {self.trunc_lag}")

    def var_at_lookahead(self, j) -> np.ndarray:
        """var eps_{k+j}(k), vectorized over lookaheads j."""
        j = np.asarray(j)
        with np.errstate(invalid="ignore"):
            v = np.where(
                (j >= 0) & (j <= self.trunc_lag),
                self.sigma2 * self.gamma ** (2.0 * j),
                0.0,
            )
        return v

    @property
    def var_z(self) -> float:
        """Variance of the one-step innovation: sum of all entry variances.

        Equals sigma2 * (1 - gamma^(2(L+1))) / (1 - gamma^2); the geometric
        sum telescopes exactly against the per-lookahead profile.
        """
        if self.gamma == 0.0:
            return self.sigma2
        g2 = self.gamma**2
        return self.sigma2 * (1.0 - g2 ** (self.trunc_lag + 1)) / (1.0 - g2)

    def tail_var(self, j_lo: int) -> float:
        """sum_{j=j_lo..L} sigma2 * gamma^(2j): variance of a lumped tail."""
        if j_lo > self.trunc_lag:
            return 0.0
        if self.gamma == 0.0:
            return self.sigma2 if j_lo <= 0 else 0.0
        g2 = self.gamma**2
        lo = max(j_lo, 0)
        return self.sigma2 * (g2**lo - g2 ** (self.trunc_lag + 1)) / (1.0 - g2)

    def plume_var(self, steps: int) -> float:
        """Conditional noise variance after `steps` unobserved periods:
        sum_{j=0..min(steps-1, L)} sigma2 * gamma^(2j), nondecreasing in steps."""
        if steps <= 0:
            return 0.0
        return self.var_z - self.tail_var(steps)


@dataclass(frozen=True, eq=False)
class MmfeModel:
    """Weather dynamics matrix G plus the disturbance schedule per coordinate.

    G must have spectral radius strictly below one so the weather process has
    a stationary law with mean (I - G)^(-1) E Z.
    """

    g_matrix: np.ndarray
    schedules: tuple[DisturbanceSchedule, ...]

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.g_matrix, dtype=float))
        if g.shape[0] != g.shape[1]:
            raise ValueError(f"G must be square, got shape {g.shape}")
        if len(self.schedules) != g.shape[0]:
            raise ValueError("need one schedule per weather coordinate")
        if np.max(np.abs(np.linalg.eigvals(g))) >= 1.0:
            raise ValueError("spectral radius of G must be < 1")
        g.setflags(write=False)
        object.__setattr__(self, "g_matrix", g)

    @classmethod
    def scalar(cls, g: float, schedule: DisturbanceSchedule) -> "MmfeModel":
        return cls(np.array([[g]]), (schedule,))

    @property
    def dim(self) -> int:
        return self.g_matrix.shape[0]

    @property
    def mean_z(self) -> np.ndarray:
        return np.array([s.mean_z for s in self.schedules])

    @property
    def mean_w(self) -> np.ndarray:
        """Stationary mean (I - G)^(-1) E Z."""
        return np.linalg.solve(np.eye(self.dim) - self.g_matrix, self.mean_z)

    @property
    def trunc_lag(self) -> int:
        return max(s.trunc_lag for s in self.schedules)

    def state(self, w) -> np.ndarray:
        """Coerce a scalar or sequence to a (dim,) state vector."""
        v = np.atleast_1d(np.asarray(w, dtype=float))
        if v.shape != (self.dim,):
            raise ValueError(f"expected state of shape ({self.dim},), got {v.shape}")
        return v

    def _out(self, v: np.ndarray):
        return float(v[0]) if self.dim == 1 else v


@dataclass(frozen=True, eq=False)
class EpsilonArray:
    """Realized disturbance entries over a finite window of reveal times.

    Entries are generated lazily from the counter-based scheme keyed on
    (seed, target, reveal), so any entry can be (re)computed without storing
    the triangle, and replications with distinct seeds are independent.
    seed=None gives the all-zero array. `overrides` pins individual entries.
    Instances are immutable; derive modified arrays via `with_entries`.
    """

    schedules: tuple[DisturbanceSchedule, ...]
    reveal_lo: int
    reveal_hi: int
    seed: int | None = None
    overrides: Mapping[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.reveal_lo > self.reveal_hi:
            raise ValueError("empty reveal window")

    @property
    def dim(self) -> int:
        return len(self.schedules)

    @property
    def max_lag(self) -> int:
        return max(s.trunc_lag for s in self.schedules)

    def _require_reveals(self, k_lo: int, k_hi: int) -> None:
        if k_lo < self.reveal_lo or k_hi > self.reveal_hi:
            raise IncompleteArrayError(
                f"array covers reveal times [{self.reveal_lo}, {self.reveal_hi}], "
                f"needed [{k_lo}, {k_hi}]"
            )

    def _generate(self, n: np.ndarray, k: np.ndarray) -> np.ndarray:
        """Entries for paired target/reveal index arrays; shape (*n.shape, dim)."""
        n = np.asarray(n, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        out = np.zeros(n.shape + (self.dim,))
        if self.seed is not None:
            lag = n - k
            for c, sched in enumerate(self.schedules):
                std = np.sqrt(sched.var_at_lookahead(lag))
                live = std > 0.0
                if np.any(live):
                    z = rng.normal_at(self.seed, n[live], k[live], rng.STREAM_EPSILON + c)
                    out[..., c][live] = std[live] * z
        for (tn, tk), val in self.overrides.items():
            hit = (n == tn) & (k == tk)
            if np.any(hit):
                out[hit] = val
        return out

    def entries_at(self, n, k) -> np.ndarray:
        """Paired entries eps_{n[i]}(k[i]), vectorized; shape (*n.shape, dim).

        Every reveal time must lie in the covered window; entries beyond the
        truncation lag come back as zero.
        """
        n = np.asarray(n, dtype=np.int64)
        k = np.asarray(k, dtype=np.int64)
        if np.any(k > n):
            raise InvalidHorizonError("reveal times must not exceed target times")
        if k.size:
            self._require_reveals(int(k.min()), int(k.max()))
        return self._generate(n, k)

    def entry(self, n: int, k: int):
        """eps_n(k): the reveal-k disturbance for target time n.

        Zero when the lookahead n - k exceeds the truncation lag; raises if
        k > n (no such entry) or k falls outside the covered window.
        """
        if k > n:
            raise InvalidHorizonError(f"reveal time {k} is after target time {n}")
        if n - k > self.max_lag:
            d = np.zeros(self.dim)
        else:
            self._require_reveals(k, k)
            d = self._generate(np.array(n), np.array(k))
        return float(d[0]) if self.dim == 1 else d

    def column(self, k: int, n_lo: int, n_hi: int) -> np.ndarray:
        """Entries eps_n(k) for n in [n_lo, n_hi]; shape (count, dim)."""
        self._require_reveals(k, k)
        if n_lo < k:
            raise InvalidHorizonError("column targets must not precede the reveal time")
        targets = np.arange(n_lo, n_hi + 1, dtype=np.int64)
        return self._generate(targets, np.full_like(targets, k))

    def reveal_sum(self, n: int, k_lo: int, k_hi: int) -> np.ndarray:
        """sum_{k=k_lo..k_hi} eps_n(k), truncation applied; shape (dim,).

        Reveal times below n - L contribute exactly zero and need not be
        covered by the window; all others must be.
        """
        k_hi = min(k_hi, n)
        k_lo = max(k_lo, n - self.max_lag)
        if k_lo > k_hi:
            return np.zeros(self.dim)
        self._require_reveals(k_lo, k_hi)
        reveals = np.arange(k_lo, k_hi + 1, dtype=np.int64)
        return self._generate(np.full_like(reveals, n), reveals).sum(axis=0)

    def with_entries(self, entries: Mapping[tuple[int, int], float | np.ndarray]) -> "EpsilonArray":
        """New array equal to this one except at the given (target, reveal) keys."""
        merged = dict(self.overrides)
        for (n, k), val in entries.items():
            if k > n:
                raise InvalidHorizonError(f"reveal time {k} is after target time {n}")
            merged[(n, k)] = np.broadcast_to(np.asarray(val, dtype=float), (self.dim,)).copy()
        return EpsilonArray(self.schedules, self.reveal_lo, self.reveal_hi, self.seed, merged)

    @classmethod
    def zeros(cls, model: MmfeModel, reveal_window: tuple[int, int]) -> "EpsilonArray":
        return cls(model.schedules, reveal_window[0], reveal_window[1], seed=None)


def sample_epsilon_array(
    model: MmfeModel, reveal_window: tuple[int, int], seed: int
) -> EpsilonArray:
    """Independent Gaussian disturbance array over the given reveal window.

    Deterministic in the seed: the same (seed, target, reveal) triple always
    yields the same entry, regardless of access order.
    """
    return EpsilonArray(model.schedules, reveal_window[0], reveal_window[1], seed=seed)


def _g_powers(model: MmfeModel, count: int) -> np.ndarray:
    """Stack [I, G, G^2, ..., G^(count-1)], shape (count, d, d)."""
    d = model.dim
    out = np.empty((count, d, d))
    out[0] = np.eye(d)
    for i in range(1, count):
        out[i] = out[i - 1] @ model.g_matrix
    return out


def forecast(model: MmfeModel, eps: EpsilonArray, w_k, k: int, n: int):
    """Point forecast of the weather at time n from the information at time k.

    F_{n|k} = E W + G^(n-k) (W_k - E W)
              + sum_{i=0..n-k-1} G^i  sum_{r <= k} eps_{n-i}(r),

    with the reveal-time sum truncated at the schedule lag. Requires n >= k
    and an array window covering reveal times down to k + 1 - L.
    """
    if n < k:
        raise InvalidHorizonError(f"target time {n} precedes forecast origin {k}")
    w = model.state(w_k)
    if n == k:  # F_{k|k} = W_k, exactly
        return model._out(w)
    steps = n - k
    powers = _g_powers(model, steps + 1)
    acc = powers[steps] @ (w - model.mean_w)
    for i in range(steps):
        m = n - i
        acc = acc + powers[i] @ eps.reveal_sum(m, m - eps.max_lag, k)
    return model._out(model.mean_w + acc)


def martingale_difference(model: MmfeModel, eps: EpsilonArray, n: int, k: int):
    """Forecast revision D_{n|k} = F_{n|k} - F_{n|k-1} = sum_{i=0..n-k} G^i eps_{n-i}(k)."""
    if k > n:
        raise InvalidHorizonError(f"reveal time {k} is after target time {n}")
    i_hi = n - k
    i_lo = max(0, i_hi - eps.max_lag)  # terms with lookahead beyond the lag are zero
    powers = _g_powers(model, i_hi + 1)
    col = eps.column(k, k, n - i_lo)  # rows run over targets k..n-i_lo
    acc = np.zeros(model.dim)
    for i in range(i_lo, i_hi + 1):
        acc = acc + powers[i] @ col[(n - i) - k]
    return model._out(acc)


@dataclass(frozen=True, eq=False)
class ForecastVector:
    """Forward forecasts (F_{n+1|n}, ..., F_{n+r|n}) issued at base_time n.

    values has shape (r, dim). The chain accepts arbitrary starting values;
    consistency with a realized disturbance array is only needed when entries
    are extracted from one.
    """

    base_time: int
    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if np.asarray(self.values).ndim == 1:
            v = v.T
        if v.shape[0] < 1:
            raise ValueError("forecast vector needs horizon r >= 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        """Values as a 1-d array (scalar weather only)."""
        if self.values.shape[1] != 1:
            raise ValueError("flat() requires scalar weather")
        return self.values[:, 0].copy()


def forecast_vector(model: MmfeModel, eps: EpsilonArray, w_n, n: int, r: int) -> ForecastVector:
    """Assemble (F_{n+1|n}, ..., F_{n+r|n}) directly from the array."""
    vals = np.stack([model.state(forecast(model, eps, w_n, n, n + j)) for j in range(1, r + 1)])
    return ForecastVector(n, vals)


@dataclass(frozen=True, eq=False)
class FreshNoise:
    """Disturbances revealed at time n+1 that drive one forecast roll.

    reveal_entries[i] = eps_{n+1+i}(n+1) for 0 <= i <= r (shape (r+1, dim));
    aggregate = sum_{j <= n} eps_{n+1+r}(j), the lumped older-reveal tail of
    the new farthest entry (shape (dim,)).
    """

    reveal_entries: np.ndarray
    aggregate: np.ndarray


def fresh_noise_from_array(model: MmfeModel, eps: EpsilonArray, base_time: int, r: int) -> FreshNoise:
    k = base_time + 1
    entries = eps.column(k, k, k + r)
    lag = eps.max_lag
    agg = eps.reveal_sum(base_time + 1 + r, base_time + 1 + r - lag, base_time)
    return FreshNoise(entries, agg)


def roll_forecast_vector(
    model: MmfeModel, fvec: ForecastVector, fresh: FreshNoise
) -> tuple[object, ForecastVector]:
    """Advance the forecast vector one period and realize the next weather.

    With old entries f_1..f_r issued at n, reveal entries e_i = eps_{n+1+i}(n+1):

        W_{n+1}    = f_1 + e_0
        new f_j    = f_{j+1} + sum_{i=0..j} G^i e_{j-i}        (1 <= j < r)
        new f_r    = G f_r + E Z + aggregate + sum_{i=0..r} G^i e_{r-i}

    Returns (W_{n+1}, forecast vector at base time n+1).
    """
    r = fvec.horizon
    e = np.atleast_2d(np.asarray(fresh.reveal_entries, dtype=float))
    if np.asarray(fresh.reveal_entries).ndim == 1:
        e = e.T
    if e.shape != (r + 1, model.dim):
        raise ValueError(
            f"fresh noise must supply {r + 1} reveal entries of dim {model.dim}, got shape {e.shape}"
        )
    agg = model.state(fresh.aggregate)
    powers = _g_powers(model, r + 1)
    old = fvec.values
    new = np.empty_like(old)
    for j in range(1, r):
        new[j - 1] = old[j] + sum(powers[i] @ e[j - i] for i in range(j + 1))
    new[r - 1] = (
        model.g_matrix @ old[r - 1]
        + model.mean_z
        + agg
        + sum(powers[i] @ e[r - i] for i in range(r + 1))
    )
    w_next = old[0] + e[0]
    return model._out(w_next), ForecastVector(fvec.base_time + 1, new)


def conditional_noise_variance(model: MmfeModel, k: int, m: int) -> np.ndarray:
    """Per-coordinate variance of the step noise into time m given time-k data.

    var Z_m(info_k) = sum_{r=k+1..m} var eps_m(r) = sigma2 * sum_{j=0..m-k-1}
    gamma^(2j); nondecreasing in m (the uncertainty grows with lookahead) and
    saturating at var Z once the lag window is exhausted.
    """
    return np.array([s.plume_var(m - k) for s in model.schedules])


def conditional_weather_step(
    model: MmfeModel, w_cur, static_forecasts: tuple, post_reveal_entries: np.ndarray
):
    """One step of the weather chain conditioned on frozen time-k information.

    W_{m+1} = G W_m + Z_{m+1}, with the step noise rebuilt from the frozen
    forecasts plus everything revealed after k:

        Z_{m+1} = F_{m+1|k} - G F_{m|k} + sum_{r=k+1..m+1} eps_{m+1}(r).

    `static_forecasts` is the pair (F_{m+1|k}, F_{m|k}); `post_reveal_entries`
    stacks the post-k entries for target m+1 (any count, summed here).
    """
    w = model.state(w_cur)
    f_next = model.state(static_forecasts[0])
    f_cur = model.state(static_forecasts[1])
    entries = np.atleast_2d(np.asarray(post_reveal_entries, dtype=float))
    if np.asarray(post_reveal_entries).ndim == 1 and model.dim == 1:
        entries = entries.T
    if entries.size and entries.shape[1] != model.dim:
        raise ValueError(f"post-reveal entries must have dim {model.dim}")
    z = f_next - model.g_matrix @ f_cur + entries.sum(axis=0)
    return model._out(model.g_matrix @ w + z)


@dataclass(frozen=True, eq=False)
class ConditionalFreshNoise:
    """Roll noise split against the frozen time-0 information.

    reveal_entries are the eps_{n+1+i}(n+1) as in FreshNoise; mid_aggregate is
    sum_{j=1..n} eps_{n+1+r}(j), the part of the old-reveal tail that was NOT
    known at time 0 (the time-0-measurable part enters separately).
    """

    reveal_entries: np.ndarray
    mid_aggregate: np.ndarray


def g0_aggregate_from_array(model: MmfeModel, eps: EpsilonArray, base_time: int, r: int) -> np.ndarray:
    """Time-0-measurable tail sum_{j <= 0} eps_{n+1+r}(j) for the roll at base_time n."""
    target = base_time + 1 + r
    return eps.reveal_sum(target, target - eps.max_lag, 0)


def conditional_fresh_from_array(
    model: MmfeModel, eps: EpsilonArray, base_time: int, r: int
) -> ConditionalFreshNoise:
    k = base_time + 1
    entries = eps.column(k, k, k + r)
    target = base_time + 1 + r
    mid = eps.reveal_sum(target, 1, base_time)
    return ConditionalFreshNoise(entries, mid)


def conditional_forecast_roll(
    model: MmfeModel,
    fvec: ForecastVector,
    g0_aggregate,
    fresh: ConditionalFreshNoise,
) -> ForecastVector:
    """One step of the forecast-vector chain conditioned on time-0 information.

    Entries below the horizon roll exactly as in `roll_forecast_vector`; the
    farthest entry receives the frozen time-0 tail plus the independent
    remainder:

        new f_r = G f_r + E Z + g0_aggregate
                  + mid_aggregate + sum_{i=0..r} G^i e_{r-i}.
    """
    inner = FreshNoise(
        fresh.reveal_entries,
        model.state(g0_aggregate) + model.state(fresh.mid_aggregate),
    )
    _, rolled = roll_forecast_vector(model, fvec, inner)
    return rolled


def write_path_trace(fp: IO[str], times: Sequence[int], weather: Sequence[float], fvecs: Sequence[ForecastVector]) -> None:
    """Per-period trace: columns n, W_n, F_{n+1|n}, ..., F_{n+r|n} (scalar weather)."""
    r = fvecs[0].horizon
    header = ["n", "W_n"] + [f"F_{{n+{j}|n}}" for j in range(1, r + 1)]
    fp.write(",".join(header) + "\n")
    for t, w, fv in zip(times, weather, fvecs):
        row = [str(t), repr(float(w))] + [repr(float(v)) for v in fv.flat()]
        fp.write(",".join(row) + "\n")
