"""Numerical analysis of the EWMA traffic predictor.

The rate after ``n`` multi-superframes is a random variable whose support
grows exponentially with ``n``.  Instead of tracking it exactly, the value
range ``[0, m_max)`` is cut into ``N = m_max * h`` bins and two envelopes
are iterated: one that always rounds down (stochastically smaller than the
true process) and one that rounds up.  Their in-band masses bracket the
long-run probability that the rate stays within ``[mu - 1, mu + 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import signal, sparse, stats

from .schedule import ConfigError, SuperframeConfig, multisuperframe_duration, symbols_to_seconds

# guards floor() against values like 2.9999999999 that are integers in exact arithmetic
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class TruncatedPmf:
    mass: np.ndarray
    mean: float

    @property
    def m_max(self) -> int:
        return len(self.mass) - 1


@dataclass(frozen=True)
class DiscretizedDistribution:
    bins: np.ndarray
    h: int

    @property
    def n(self) -> int:
        return len(self.bins)

    @classmethod
    def point(cls, index: int, n: int, h: int) -> "DiscretizedDistribution":
        bins = np.zeros(n)
        bins[index] = 1.0
        return cls(bins, h)


@dataclass(frozen=True)
class BoundsResult:
    p_lower: float
    p_upper: float
    iterations: int
    epsilon: float
    converged: bool = True

    @property
    def gap(self) -> float:
        return self.p_upper - self.p_lower


PmfLike = Union[Callable[[int], float], Sequence[float], "stats.rv_discrete"]


def truncate_pmf(f: PmfLike, m_max: int, mean: Optional[float] = None) -> TruncatedPmf:
    """Fold the tail of ``f`` above ``m_max`` into the ``m_max`` entry.

    ``f`` may be a frozen scipy distribution, a callable ``k -> P(X = k)``
    or a finite sequence of probabilities.
    """
    if m_max < 1:
        raise ConfigError("m_max must be positive")
    if hasattr(f, "pmf") and hasattr(f, "sf"):
        head = np.asarray(f.pmf(np.arange(m_max)), dtype=float)
        tail = float(f.sf(m_max - 1))
        mu = float(f.mean()) if mean is None else mean
    else:
        if callable(f):
            head = np.array([f(k) for k in range(m_max)], dtype=float)
            tail = max(0.0, 1.0 - math.fsum(head))
        else:
            arr = np.asarray(f, dtype=float)
            head = np.zeros(m_max)
            k = min(len(arr), m_max)
            head[:k] = arr[:k]
            tail = math.fsum(arr[m_max:]) if len(arr) > m_max else 0.0
        mu = mean
    if np.any(head < 0) or tail < 0:
        raise ConfigError("probabilities must be non-negative")
    mass = np.append(head, tail)
    total = math.fsum(mass)
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"probabilities sum to {total}, not 1")
    mass = mass / total
    if mu is None:
        mu = float(np.dot(np.arange(m_max + 1), mass))
    if m_max < mu:
        raise ConfigError(f"m_max={m_max} below the mean {mu}")
    return TruncatedPmf(mass, mu)


def poisson_pmf(mu: float, m_max: Optional[int] = None) -> TruncatedPmf:
    if mu <= 0:
        raise ConfigError("Poisson mean must be positive")
    return truncate_pmf(stats.poisson(mu), m_max or math.ceil(4 * mu))


def fixed_pmf(mu: int, m_max: Optional[int] = None) -> TruncatedPmf:
    """Deterministic traffic: exactly ``mu`` packets every multi-superframe."""
    if mu != int(mu) or mu < 0:
        raise ConfigError("fixed traffic needs a non-negative integer packet count")
    mu = int(mu)
    m_max = m_max or max(1, math.ceil(4 * mu))
    mass = np.zeros(m_max + 1)
    mass[mu] = 1.0
    return truncate_pmf(mass, m_max, mean=float(mu))


def make_pmf(dist: str, mu: float, m_max: Optional[int] = None) -> TruncatedPmf:
    if dist == "poisson":
        return poisson_pmf(mu, m_max)
    if dist == "fixed":
        return fixed_pmf(mu, m_max)
    raise ConfigError(f"unknown distribution {dist!r}")


def _targets(m_max: int, n: int, h: int, alpha: float, v_bins: int) -> np.ndarray:
    """Destination bin of every (m, i) pair; shape (m_max + 1, n)."""
    i = np.arange(n)
    x = np.arange(m_max + 1)[:, None] * (alpha * h) + (i[None, :] + v_bins) * (1.0 - alpha)
    return np.minimum(np.floor(x + _FLOOR_EPS).astype(np.int64), n - 1)


def _offset_bins(v: float, h: int) -> int:
    vb = v * h
    if abs(vb - round(vb)) > 1e-9 or round(vb) not in (0, 1):
        raise ConfigError("offset v must be 0 or 1/h")
    return int(round(vb))


def step(y_prev: DiscretizedDistribution, v: float, f: TruncatedPmf, alpha: float) -> DiscretizedDistribution:
    """One EWMA step on the binned distribution, rounding each target down to its bin."""
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    h = y_prev.h
    n = y_prev.n
    if n != f.m_max * h:
        raise ConfigError(f"{n} bins do not match m_max * h = {f.m_max * h}")
    s = _targets(f.m_max, n, h, alpha, _offset_bins(v, h))
    weights = f.mass[:, None] * y_prev.bins[None, :]
    return DiscretizedDistribution(np.bincount(s.ravel(), weights=weights.ravel(), minlength=n), h)


def _transition(f: TruncatedPmf, n: int, h: int, alpha: float, v_bins: int) -> sparse.csr_matrix:
    s = _targets(f.m_max, n, h, alpha, v_bins)
    cols = np.broadcast_to(np.arange(n), s.shape)
    data = np.broadcast_to(f.mass[:, None], s.shape)
    return sparse.csr_matrix((data.ravel(), (s.ravel(), cols.ravel())), shape=(n, n))


def band_indices(mu: float, h: int) -> tuple[int, int]:
    """Last bin counted below ``mu - 1`` and first bin counted above ``mu + 1``."""
    return math.ceil((mu - 1) * h) - 1, math.floor((mu + 1) * h)


def _bounds(lower_env: np.ndarray, upper_env: np.ndarray, lo: int, hi: int) -> tuple[float, float]:
    below = slice(0, lo + 1)
    above = slice(hi, None)
    p_lower = 1.0 - math.fsum(lower_env[below]) - math.fsum(upper_env[above])
    p_upper = 1.0 - math.fsum(upper_env[below]) - math.fsum(lower_env[above])
    return p_lower, p_upper


def interval_probability(
    f: TruncatedPmf,
    alpha: float,
    h: int = 100,
    epsilon: float = 1e-3,
    max_iterations: int = 100_000,
    stall_window: Optional[int] = 200,
    callback: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None,
) -> BoundsResult:
    """Bracket the probability that the EWMA rate lies within ``[mu - 1, mu + 1]``.

    Iterates until the bounds are ``epsilon`` apart.  When the gap is limited
    by the bin width it stops shrinking; if it changed by less than 1e-12
    over ``stall_window`` iterations (or ``max_iterations`` is hit) the last
    bounds are returned with ``converged=False``.
    """
    if not isinstance(h, (int, np.integer)) or h <= 1:
        raise ConfigError("h must be an integer > 1")
    if epsilon <= 0:
        raise ConfigError("epsilon must be positive")
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    n = f.m_max * h
    down = _transition(f, n, h, alpha, 0)
    up = _transition(f, n, h, alpha, 1)
    y_low = np.zeros(n)
    y_low[0] = 1.0
    y_up = np.zeros(n)
    y_up[-1] = 1.0
    lo, hi = band_indices(f.mean, h)
    history: list[float] = []
    it = 0
    while True:
        it += 1
        y_low = down @ y_low
        y_up = up @ y_up
        if callback is not None:
            callback(it, y_low, y_up)
        p_lower, p_upper = _bounds(y_low, y_up, lo, hi)
        gap = p_upper - p_lower
        if gap <= epsilon:
            return BoundsResult(p_lower, p_upper, it, epsilon, True)
        if it >= max_iterations:
            return BoundsResult(p_lower, p_upper, it, epsilon, False)
        if stall_window:
            history.append(gap)
            if len(history) > stall_window:
                if abs(history[-1 - stall_window] - gap) < 1e-12:
                    return BoundsResult(p_lower, p_upper, it, epsilon, False)
                history.pop(0)


def settling_time(mu: float, alpha: float) -> float:
    """Multi-superframes until a constant rate ``mu`` drives the estimate to ``mu - 1``."""
    if mu <= 1:
        raise ConfigError("settling time needs mu > 1")
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    return math.log(1.0 / mu) / math.log(1.0 - alpha)


def ewma_trajectory(samples: np.ndarray, alpha: float, initial: float = 0.0) -> np.ndarray:
    """rate_t for t = 1..len(samples) of the filter driven by ``samples``."""
    zi = np.array([(1.0 - alpha) * initial])
    out, _ = signal.lfilter([alpha], [1.0, -(1.0 - alpha)], np.asarray(samples, dtype=float), zi=zi)
    return out


def monte_carlo_interval_probability(
    mu: float,
    alpha: float,
    steps: int = 1_000_000,
    seed: int = 0,
    dist: str = "poisson",
    burn_in: Optional[int] = None,
) -> float:
    """Empirical fraction of steps with the rate in ``[mu - 1, mu + 1]``."""
    rng = np.random.default_rng(seed)
    if burn_in is None:
        burn_in = int(20 / alpha) + 100
    total = steps + burn_in
    if dist == "poisson":
        x = rng.poisson(mu, total)
    elif dist == "fixed":
        x = np.full(total, mu)
    else:
        raise ConfigError(f"unknown distribution {dist!r}")
    rate = ewma_trajectory(x, alpha)[burn_in:]
    return float(np.mean((rate >= mu - 1) & (rate <= mu + 1)))


@dataclass(frozen=True)
class TradeoffRow:
    alpha: float
    p_lower: float
    p_upper: float
    settle_msf: float
    settle_s: float
    converged: bool


def tradeoff_table(
    mu: float,
    alphas: Sequence[float],
    h: int = 100,
    epsilon: float = 1e-3,
    config: Optional[SuperframeConfig] = None,
    dist: str = "poisson",
    m_max: Optional[int] = None,
    max_iterations: int = 100_000,
) -> list[TradeoffRow]:
    config = config or SuperframeConfig(so=3, mo=5, bo=5)
    msf_s = symbols_to_seconds(multisuperframe_duration(config), config.symbol_duration)
    f = make_pmf(dist, mu, m_max)
    rows = []
    for alpha in alphas:
        res = interval_probability(f, alpha, h, epsilon, max_iterations)
        settle = settling_time(mu, alpha) if alpha < 1 else 0.0
        rows.append(TradeoffRow(alpha, res.p_lower, res.p_upper, settle, settle * msf_s, res.converged))
    return rows
