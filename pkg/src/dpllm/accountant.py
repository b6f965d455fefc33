"""Moments accountant for the Poisson-subsampled Gaussian mechanism.

The per-step log-moment of order ``lam`` is

    alpha(lam) = log max( E_{z~mu}[(mu/mu0)^lam],  E_{z~mu0}[(mu0/mu)^lam] )

with ``mu0 = N(0, sigma^2)`` and ``mu = (1-q) N(0, sigma^2) + q N(1, sigma^2)``.
Both expectations are evaluated by trapezoidal quadrature in log space.
Log-moments add over steps, and ``eps = min_lam (alpha_total(lam) + log(1/delta)) / lam``.

The integration window is ``[-L*sigma, 1 + L*sigma]`` widened on the right to
``lam_max + 1 + L*sigma``: for small ``sigma`` the tilted integrand of the first
expectation peaks near ``z = lam + 1``, outside the plain window.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

DEFAULT_MAX_ORDER = 64
DEFAULT_NODES = 200_001
DEFAULT_WIDTH = 20.0


class AccountantError(RuntimeError):
    pass


def _check_q_sigma(q: float, sigma: float) -> None:
    if not 0 < q <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {q}")
    if not sigma > 0:
        raise ValueError(f"noise multiplier must be positive, got {sigma}")


def log_moments(
    q: float,
    sigma: float,
    max_order: int = DEFAULT_MAX_ORDER,
    nodes: int = DEFAULT_NODES,
    width: float = DEFAULT_WIDTH,
) -> np.ndarray:
    """Per-step log-moments for orders ``1..max_order`` (index 0 is order 1)."""
    return _log_moments_cached(float(q), float(sigma), int(max_order), int(nodes), float(width)).copy()


@functools.lru_cache(maxsize=256)
def _log_moments_cached(q: float, sigma: float, max_order: int, nodes: int, width: float) -> np.ndarray:
    _check_q_sigma(q, sigma)
    orders = np.arange(1, max_order + 1, dtype=np.float64)
    lo = -width * sigma
    hi = max_order + 1.0 + width * sigma
    z = np.linspace(lo, hi, nodes)
    h = z[1] - z[0]
    log_w = np.full(nodes, math.log(h))
    log_w[[0, -1]] -= math.log(2.0)

    log_norm = -0.5 * math.log(2 * math.pi * sigma**2)
    log_p0 = log_norm - z**2 / (2 * sigma**2)
    log_p1 = log_norm - (z - 1.0) ** 2 / (2 * sigma**2)
    if q == 1.0:
        log_mix = log_p1
    else:
        log_mix = np.logaddexp(math.log1p(-q) + log_p0, math.log(q) + log_p1)
    log_ratio = log_mix - log_p0

    out = np.empty(max_order)
    for i, lam in enumerate(orders):
        forward = logsumexp(log_mix + lam * log_ratio + log_w)
        backward = logsumexp(log_p0 - lam * log_ratio + log_w)
        out[i] = max(forward, backward)
    out.flags.writeable = False
    if not np.all(np.isfinite(out)):
        bad = [int(o) for o, v in zip(orders, out) if not np.isfinite(v)]
        raise AccountantError(f"non-finite log-moment for orders {bad} at q={q}, sigma={sigma}")
    return out


def log_moment(q: float, sigma: float, lam: int, nodes: int = DEFAULT_NODES, width: float = DEFAULT_WIDTH) -> float:
    """Single per-step log-moment; integration window sized for order ``lam``."""
    if lam < 1 or int(lam) != lam:
        raise ValueError(f"moment order must be a positive integer, got {lam}")
    return float(log_moments(q, sigma, int(lam), nodes, width)[-1])


def binomial_log_moment(q: float, sigma: float, lam: int) -> float:
    """Closed form of the first expectation for integer orders.

    ``E_mu[(mu/mu0)^lam] = sum_j C(lam+1, j) (1-q)^(lam+1-j) q^j exp(j(j-1) / (2 sigma^2))``.
    Only the ``mu``-side direction has this form; it lower-bounds ``alpha(lam)``.
    """
    _check_q_sigma(q, sigma)
    n = int(lam) + 1
    terms = []
    for j in range(n + 1):
        t = math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1)
        if j < n:
            if q == 1.0:
                continue
            t += (n - j) * math.log1p(-q)
        t += j * math.log(q) + j * (j - 1) / (2 * sigma**2)
        terms.append(t)
    return float(logsumexp(terms))


def epsilon_from_moments(total: np.ndarray, delta: float) -> tuple[float, int]:
    """Return ``(eps, argmin order)`` for cumulative log-moments ``total``."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if len(total) == 0:
        raise AccountantError("empty log-moment table")
    if not np.any(total):
        # nothing charged: the trivial table
        return 0.0, 1
    orders = np.arange(1, len(total) + 1)
    eps = (np.asarray(total) + math.log(1.0 / delta)) / orders
    i = int(np.argmin(eps))
    return max(float(eps[i]), 0.0), int(orders[i])


def delta_from_moments(total: np.ndarray, eps: float) -> float:
    orders = np.arange(1, len(total) + 1)
    return float(min(1.0, np.exp(np.min(np.asarray(total) - orders * eps))))


@dataclass
class PrivacyLedger:
    """Accumulates log-moments of a fixed (q, sigma) mechanism over steps."""

    q: float
    sigma: float
    max_order: int = DEFAULT_MAX_ORDER
    steps: int = 0
    moments: np.ndarray = field(default=None, repr=False)
    _per_step: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        _check_q_sigma(self.q, self.sigma)
        if self.moments is None:
            self.moments = np.zeros(self.max_order)

    @property
    def per_step(self) -> np.ndarray:
        if self._per_step is None:
            self._per_step = log_moments(self.q, self.sigma, self.max_order)
        return self._per_step

    def charge(self, count: int = 1) -> "PrivacyLedger":
        if count < 0:
            raise ValueError("charge count must be nonnegative")
        for _ in range(count):
            self.moments = self.moments + self.per_step
        self.steps += count
        return self

    def get_epsilon(self, delta: float) -> float:
        return epsilon_from_moments(self.moments, delta)[0]

    def best_order(self, delta: float) -> int:
        return epsilon_from_moments(self.moments, delta)[1]

    def get_delta(self, eps: float) -> float:
        return delta_from_moments(self.moments, eps)

    def state(self) -> dict:
        return {"q": self.q, "sigma": self.sigma, "steps": self.steps, "max_order": self.max_order}


def compute_epsilon(q: float, sigma: float, steps: int, delta: float, max_order: int = DEFAULT_MAX_ORDER) -> float:
    """Cumulative epsilon after ``steps`` identical subsampled Gaussian steps."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    return epsilon_from_moments(steps * log_moments(q, sigma, max_order), delta)[0]


def calibrate_sigma(
    q: float,
    steps: int,
    delta: float,
    target_eps: float,
    lo: float = 0.3,
    hi: float = 100.0,
    tol: float = 1e-3,
    max_order: int = DEFAULT_MAX_ORDER,
) -> float:
    """Smallest noise multiplier (to ``tol``) whose epsilon does not exceed ``target_eps``."""
    if not target_eps > 0:
        raise ValueError("target epsilon must be positive")

    def eps_at(s: float) -> float:
        return compute_epsilon(q, s, steps, delta, max_order)

    if eps_at(lo) <= target_eps:
        return lo
    if eps_at(hi) > target_eps:
        raise AccountantError(
            f"target eps={target_eps} unreachable with sigma <= {hi} "
            f"(eps at sigma={hi} is {eps_at(hi):.4g}); raise the upper bound or the target"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if eps_at(mid) <= target_eps:
            hi = mid
        else:
            lo = mid
    return hi


def gaussian_mechanism_sigma(eps: float, delta: float) -> tuple[float, bool]:
    """Classical calibration ``sqrt(2 log(1.25/delta)) / eps``.

    Returns ``(sigma, valid)``; ``valid`` is False when ``eps > 1``, outside the
    range where the bound is proven.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / eps, eps <= 1.0


def linear_composition_epsilon(q: float, sigma: float, steps: int, delta: float, amplify: bool = False) -> float:
    """Epsilon from summing per-step Gaussian-mechanism costs.

    The delta budget is split evenly, ``delta_t = delta / steps``, and each step
    costs ``eps_t = sqrt(2 log(1.25/delta_t)) / sigma``.  With ``amplify`` the
    per-step pair is first reduced by subsampling at rate ``q``:
    ``(log(1 + q(e^eps_t - 1)), q delta_t)`` with ``delta_t = delta / (q steps)``.
    """
    _check_q_sigma(q, sigma)
    if steps < 1:
        return 0.0
    if amplify:
        delta_t = delta / (q * steps)
        eps_t = math.sqrt(2.0 * math.log(1.25 / delta_t)) / sigma
        return steps * math.log1p(q * math.expm1(eps_t))
    delta_t = delta / steps
    return steps * math.sqrt(2.0 * math.log(1.25 / delta_t)) / sigma
