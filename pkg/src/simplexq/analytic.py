"""Closed-form and numerically evaluated latency models.

Everything here is a pure function of its arguments.  Service-time moments
of the per-request laws are computed twice, once from exact alternating sums
(rational arithmetic, so no cancellation) and once by quadrature of the tail
product; the two are cross-checked on every evaluation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize

from .core import BernoulliTwoPoint, Exp, Pareto, SelectOne, ServiceDistribution
from .errors import (
    DegenerateRegimeError,
    InfiniteMomentError,
    InstabilityError,
    NumericError,
    ParameterError,
)

METHODS = ("high_traffic_t1", "naive", "better", "best")

_QUAD_RTOL = 1e-10
_CROSS_RTOL = 1e-6


@dataclass(frozen=True)
class TypeJMoments:
    t: int
    j: int
    m1: float
    m2: float


@dataclass(frozen=True)
class FjEstimate:
    t: int
    f: tuple[float, ...]
    method: str

    def __post_init__(self):
        if len(self.f) != self.t + 1:
            raise ParameterError("f must have t + 1 entries")


@dataclass(frozen=True)
class MG1Model:
    lam: float
    m1: float
    m2: float
    sojourn: float

    @property
    def utilization(self) -> float:
        return self.lam * self.m1


# --------------------------------------------------------------------------
# Quadrature of tail functions
# --------------------------------------------------------------------------

def _quad(fn, a, b):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, a, b, epsabs=1e-13, epsrel=_QUAD_RTOL, limit=500)
        except integrate.IntegrationWarning as exc:
            raise NumericError(f"quadrature did not converge on [{a}, {b}]: {exc}") from exc
    return val


def tail_moments(tail: Callable[[float], float], breakpoints: Sequence[float] = (),
                 heavy_tail: bool = False) -> tuple[float, float]:
    """First two moments of a nonnegative variable from its tail function.

    Uses ``E[X] = int tail`` and ``E[X^2] = int 2 s tail``; the range is split
    at ``breakpoints`` so jumps of step-function tails land on segment edges.
    A polynomially decaying last segment is mapped onto ``(0, 1]`` by
    ``s = b / u`` before integrating.
    """
    edges = [0.0] + sorted(b for b in set(breakpoints) if b > 0)
    m1 = m2 = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        m1 += _quad(tail, a, b)
        m2 += _quad(lambda s: 2.0 * s * tail(s), a, b)
    last = edges[-1]
    if heavy_tail and last > 0:
        m1 += _quad(lambda u: tail(last / u) * last / u ** 2 if u > 0 else 0.0, 0.0, 1.0)
        m2 += _quad(lambda u: 2.0 * (last / u) * tail(last / u) * last / u ** 2 if u > 0 else 0.0,
                    0.0, 1.0)
    else:
        m1 += _quad(tail, last, math.inf)
        m2 += _quad(lambda s: 2.0 * s * tail(s), last, math.inf)
    return m1, m2


def _is_heavy(d: ServiceDistribution) -> bool:
    return isinstance(d, Pareto)


# --------------------------------------------------------------------------
# Per-type service time laws for replicate-to-all
# --------------------------------------------------------------------------

def type_j_tail(d: ServiceDistribution, t: int, j: int, s: float) -> float:
    """``Pr{S_j > s}``: min of ``j + 1`` single copies and ``t - j`` max-pairs."""
    T = float(d.tail(s))
    return T ** (t + 1) * (2.0 - T) ** (t - j)


def _alternating_terms(t: int, j: int):
    # tail of S_j is T^(t+1) (2 - T)^(t-j) = sum_k coef_k T^n_k
    for k in range(t - j + 1):
        coef = comb(t - j, k) * 2 ** k * (-1) ** (t - j - k)
        yield coef, 2 * t + 1 - j - k


def _closed_form_moments(d: ServiceDistribution, t: int, j: int) -> tuple[float, float]:
    if isinstance(d, Exp):
        m1 = sum(Fraction(c, n) for c, n in _alternating_terms(t, j))
        m2 = sum(Fraction(2 * c, n * n) for c, n in _alternating_terms(t, j))
        return float(m1) / d.rate, float(m2) / d.rate ** 2
    if isinstance(d, Pareto):
        a = Fraction(d.alpha)
        m1 = sum(c * (a * n) / (a * n - 1) for c, n in _alternating_terms(t, j))
        m2 = sum(c * (a * n) / (a * n - 2) for c, n in _alternating_terms(t, j))
        return float(m1) * d.scale, float(m2) * d.scale ** 2
    if isinstance(d, BernoulliTwoPoint):
        q = d.p ** (t + 1) * (2.0 - d.p) ** (t - j)
        return (d.usual + (d.long - d.usual) * q,
                d.usual ** 2 + (d.long ** 2 - d.usual ** 2) * q)
    raise ParameterError(f"no closed form for {type(d).__name__}")


def _check_tj(t: int, j: int) -> None:
    if t < 0 or not 0 <= j <= t:
        raise ParameterError(f"need 0 <= j <= t, got t={t}, j={j}")


@lru_cache(maxsize=4096)
def type_j_moments(d: ServiceDistribution, t: int, j: int) -> TypeJMoments:
    _check_tj(t, j)
    if isinstance(d, Pareto) and d.alpha * (t + 1) <= 2:
        raise InfiniteMomentError(
            f"E[S_j^2] is infinite for Pareto alpha={d.alpha}, t={t} (needs alpha(t+1) > 2)")
    m1, m2 = _closed_form_moments(d, t, j)
    q1, q2 = tail_moments(lambda s: type_j_tail(d, t, j, s), d.breakpoints, _is_heavy(d))
    if not (math.isclose(m1, q1, rel_tol=_CROSS_RTOL) and math.isclose(m2, q2, rel_tol=_CROSS_RTOL)):
        raise NumericError(
            f"closed form ({m1}, {m2}) and quadrature ({q1}, {q2}) disagree for t={t}, j={j}")
    return TypeJMoments(t=t, j=j, m1=m1, m2=m2)


def mean_type_moment(d: ServiceDistribution, t: int) -> float:
    """Unweighted average of ``E[S_j]`` over ``j = 0..t``."""
    return sum(type_j_moments(d, t, j).m1 for j in range(t + 1)) / (t + 1)


# --------------------------------------------------------------------------
# M/G/1
# --------------------------------------------------------------------------

def pk_sojourn(lam: float, m1: float, m2: float) -> MG1Model:
    if lam < 0:
        raise ParameterError(f"arrival rate must be nonnegative, got {lam}")
    rho = lam * m1
    if rho >= 1:
        raise InstabilityError(f"M/G/1 unstable: utilization {rho:.6g} >= 1", utilization=rho)
    return MG1Model(lam=lam, m1=m1, m2=m2, sojourn=m1 + lam * m2 / (2.0 * (1.0 - rho)))


# --------------------------------------------------------------------------
# Availability one under the high-traffic assumption
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HighTrafficChain:
    """Birth-death chain of the join queue when all servers are always busy."""

    p00: float
    ratio_right: float
    ratio_left: float

    def p_right(self, i: int) -> float:
        return self.ratio_right ** i * self.p00

    def p_left(self, i: int) -> float:
        return self.ratio_left ** i * self.p00


def high_traffic_t1_steady_state(gamma: float, alpha: float, beta: float) -> HighTrafficChain:
    if gamma <= 0 or alpha < 0 or beta < 0:
        raise ParameterError("rates must be nonnegative and gamma positive")
    if not (alpha < beta + gamma and beta < alpha + gamma):
        raise InstabilityError("join-queue chain drifts to infinity: need alpha < beta + gamma "
                               "and beta < alpha + gamma")
    p00 = (gamma ** 2 - (alpha - beta) ** 2) / (gamma * (alpha + beta + gamma))
    return HighTrafficChain(p00=p00, ratio_right=alpha / (beta + gamma),
                            ratio_left=beta / (alpha + gamma))


def _type0_share(gamma: float, mu: float) -> float:
    nu = gamma + 2.0 * mu
    return gamma * nu / (gamma * nu + 2.0 * mu ** 2)


def fj_high_traffic_t1(gamma: float, mu: float) -> FjEstimate:
    if gamma <= 0 or mu <= 0:
        raise ParameterError("gamma and mu must be positive")
    f0 = _type0_share(gamma, mu)
    return FjEstimate(t=1, f=(f0, 1.0 - f0), method="high_traffic_t1")


@dataclass(frozen=True)
class WinningFractions:
    ws_lb: float
    wr_ub: float


def winning_fraction_bounds(gamma: float, mu: float) -> WinningFractions:
    if gamma <= 0 or mu <= 0:
        raise ParameterError("gamma and mu must be positive")
    nu = gamma + 2.0 * mu
    denom = gamma * nu + 2.0 * mu ** 2
    return WinningFractions(ws_lb=gamma * nu / denom, wr_ub=2.0 * mu ** 2 / denom)


def t1_type_moments(gamma: float, mu: float) -> tuple[TypeJMoments, TypeJMoments]:
    """Exponential availability-one moments with systematic rate ``gamma``."""
    a, b = gamma + mu, gamma + 2.0 * mu
    s0 = TypeJMoments(1, 0, 2.0 / a - 1.0 / b, 4.0 / a ** 2 - 2.0 / b ** 2)
    s1 = TypeJMoments(1, 1, 1.0 / a, 2.0 / a ** 2)
    return s0, s1


def reptoall_t1_sojourn(lam: float, gamma: float, mu: float) -> MG1Model:
    """M/G/1 approximation for availability one with the high-traffic f-estimate."""
    f0, f1 = fj_high_traffic_t1(gamma, mu).f
    s0, s1 = t1_type_moments(gamma, mu)
    return pk_sojourn(lam, f0 * s0.m1 + f1 * s1.m1, f0 * s0.m2 + f1 * s1.m2)


# --------------------------------------------------------------------------
# General availability f_j estimators
# --------------------------------------------------------------------------

def _smallest_root(x: float, t: int) -> float:
    """Smallest root in (0, 1] of ``(1 - x) r^(t+1) - r + x``."""
    if x == 0:
        return 0.0
    slope = (t + 1) * (1.0 - x)
    if slope <= 1.0:
        return 1.0
    g = lambda r: (1.0 - x) * r ** (t + 1) - r + x
    r_min = slope ** (-1.0 / t)
    return optimize.brentq(g, 0.0, r_min, xtol=1e-15, rtol=4 * np.finfo(float).eps)


def fj_estimate(t: int, lam: float, s_bar: float, method: str, refine: bool = False) -> FjEstimate:
    """Estimate the type probabilities ``f_0..f_t``.

    ``s_bar`` is the plain average of ``E[S_j]`` over the ``t + 1`` types.
    ``refine`` makes the geometric ("better") estimator use the exact root
    of the degree-(t+1) inequality instead of its large-t relaxation.
    """
    if t < 0:
        raise ParameterError("t must be nonnegative")
    if method not in ("naive", "better", "best"):
        raise ParameterError(f"unknown f_j method {method!r}")
    if lam < 0 or s_bar <= 0:
        raise ParameterError("need lam >= 0 and s_bar > 0")
    if t == 0:
        return FjEstimate(t=0, f=(1.0,), method=method)
    if method == "naive":
        return FjEstimate(t=t, f=tuple([1.0 / (t + 1)] * (t + 1)), method=method)

    x = lam * s_bar
    if x >= 1:
        raise InstabilityError(f"lam * E[S_hat] = {x:.6g} >= 1", utilization=x)

    if method == "better":
        rho = _smallest_root(x, t) if refine else x
        if rho >= 1.0:
            f = [1.0 / (t + 1)] * (t + 1)
        else:
            norm = (1.0 - rho) / (1.0 - rho ** (t + 1))
            f = [rho ** j * norm for j in range(t + 1)]
        return FjEstimate(t=t, f=tuple(f), method=method)

    # best: per-step ratios, each fixed at its bound given the previous ones
    one_minus = 1.0 - x
    rhos: list[float] = []
    prods = [1.0]               # prods[j] = prod_{l<j} rho_hat_l
    for j in range(t):
        if prods[-1] == 0.0:
            break
        if j == 0:
            r = x / (t * one_minus)
        else:
            # 1 - (1-x)(1 + S) written as x - (1-x) S to avoid cancellation
            r = (x - one_minus * sum(prods[1:j + 1])) / (one_minus * (t - j) * prods[j])
        if r < -1e-9 or r > 1.0 + 1e-9:
            raise DegenerateRegimeError(
                f"rho_hat_{j} = {r:.6g} outside [0, 1] at lam*E[S_hat] = {x:.6g}")
        r = min(max(r, 0.0), 1.0)
        rhos.append(r)
        prods.append(prods[-1] * r)
    prods += [0.0] * (t + 1 - len(prods))
    total = sum(prods)
    return FjEstimate(t=t, f=tuple(p / total for p in prods), method="best")


def mixture_moments(d: ServiceDistribution, t: int, f: Sequence[float]) -> tuple[float, float]:
    ms = [type_j_moments(d, t, j) for j in range(t + 1)]
    return (sum(fj * m.m1 for fj, m in zip(f, ms)), sum(fj * m.m2 for fj, m in zip(f, ms)))


def reptoall_fj(t: int, lam: float, d: ServiceDistribution, method: str,
                refine: bool = False) -> FjEstimate:
    if method == "high_traffic_t1":
        if t != 1 or not isinstance(d, Exp):
            raise ParameterError("high_traffic_t1 needs t = 1 and exponential servers")
        return fj_high_traffic_t1(d.rate, d.rate)
    return fj_estimate(t, lam, mean_type_moment(d, t), method, refine=refine)


def reptoall_sojourn(t: int, lam: float, d: ServiceDistribution, method: str,
                     refine: bool = False) -> MG1Model:
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}")
    f = reptoall_fj(t, lam, d, method, refine)
    return pk_sojourn(lam, *mixture_moments(d, t, f.f))


@dataclass(frozen=True)
class SojournBounds:
    lb_sojourn: float
    ub_sojourn: float


def _pk_or_inf(lam: float, m1: float, m2: float) -> float:
    try:
        return pk_sojourn(lam, m1, m2).sojourn
    except InstabilityError:
        return math.inf


def reptoall_bounds(t: int, lam: float, d: ServiceDistribution) -> SojournBounds:
    """Type-t M/G/1 lower bound and split-merge (type-0) upper bound.

    An unstable split-merge queue yields an infinite upper bound; an unstable
    lower-bound queue raises.
    """
    st = type_j_moments(d, t, t)
    s0 = type_j_moments(d, t, 0)
    lb = pk_sojourn(lam, st.m1, st.m2).sojourn
    return SojournBounds(lb_sojourn=lb, ub_sojourn=_pk_or_inf(lam, s0.m1, s0.m2))


# --------------------------------------------------------------------------
# Select-one
# --------------------------------------------------------------------------

def selectone_sojourn(t: int, lam: float, mu: float, weights: Sequence[float]) -> float:
    if len(weights) != t + 1:
        raise ParameterError(f"expected {t + 1} weights, got {len(weights)}")
    if lam < 0 or mu <= 0:
        raise ParameterError("need lam >= 0 and mu > 0")
    p = SelectOne(tuple(weights)).weights
    if p[0] * lam >= mu:
        raise InstabilityError("systematic server unstable", utilization=p[0] * lam / mu,
                               where="systematic")
    total = p[0] / (mu - p[0] * lam)
    for i, pi in enumerate(p[1:], start=1):
        if pi * lam >= mu:
            raise InstabilityError(f"recovery group {i} unstable", utilization=pi * lam / mu,
                                   where=f"group{i}")
        total += pi * (12.0 * mu - pi * lam) / (8.0 * mu * (mu - pi * lam))
    return total


def selectone_optimal_weights(t: int, lam: float, mu: float) -> tuple[float, ...]:
    """Minimize the select-one mean download time over symmetric weights.

    Group weights are equal at the optimum (the objective is a sum of convex
    per-queue terms), so only the systematic share ``p0`` is searched.
    """
    if lam < 0 or mu <= 0:
        raise ParameterError("need lam >= 0 and mu > 0")
    if t == 0:
        if lam >= mu:
            raise InstabilityError("single server cannot carry the load", utilization=lam / mu)
        return (1.0,)

    def weights(p0):
        p0 = float(p0)
        return (p0,) + ((1.0 - p0) / t,) * t

    if lam == 0:
        return weights(1.0)
    lo = max(0.0, 1.0 - t * mu / lam)
    hi = min(1.0, mu / lam)
    if lo >= hi:
        raise InstabilityError(f"no stable select-one split at lam={lam}", utilization=lam / mu)

    def objective(p0):
        try:
            return selectone_sojourn(t, lam, mu, weights(p0))
        except InstabilityError:
            return math.inf

    span = hi - lo
    eps = 1e-12 * max(1.0, span)
    res = optimize.minimize_scalar(objective, bounds=(lo + eps, hi - eps), method="bounded",
                                   options={"xatol": 1e-10})
    best_p0, best = res.x, res.fun
    for edge in (lo, hi):
        val = objective(edge)
        if val <= best:
            best_p0, best = edge, val
    if not math.isfinite(best):
        raise InstabilityError(f"no stable select-one split at lam={lam}", utilization=lam / mu)
    return weights(best_p0)


# --------------------------------------------------------------------------
# Fairness-first
# --------------------------------------------------------------------------

def _is_power_of_two(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


def _check_ff_t(t: int) -> int:
    if t < 1 or not _is_power_of_two(t + 1):
        raise ParameterError(f"t + 1 must be a power of two, got t={t}")
    return (t + 1).bit_length() - 1


def ff_type_tail(d: ServiceDistribution, i: int, s: float) -> float:
    """``Pr{S_i > s}`` with ``i`` full recovery pairs racing the systematic copy."""
    T = float(d.tail(s))
    F = 1.0 - T
    return T * (1.0 - F * F) ** i


@lru_cache(maxsize=1024)
def ff_type_moments(d: ServiceDistribution, i: int) -> tuple[float, float]:
    return tail_moments(lambda s: ff_type_tail(d, i, s), d.breakpoints, _is_heavy(d))


def fairnessfirst_bounds(t: int, lam: float, d: ServiceDistribution) -> SojournBounds:
    m = _check_ff_t(t)
    lb = pk_sojourn(lam, *ff_type_moments(d, t)).sojourn
    return SojournBounds(lb_sojourn=lb, ub_sojourn=_pk_or_inf(lam, *ff_type_moments(d, t - m)))


def fairnessfirst_lowtraffic_tail(d: ServiceDistribution, t: int, lam_c: float, s: float,
                                  rho: float | None = None) -> float:
    """Hot-request service tail under fairness-first at low hot traffic.

    ``rho`` defaults to the cold-server utilization ``lam_c * E[V]``.
    """
    m = _check_ff_t(t)
    if rho is None:
        rho = lam_c * d.mean
    F = 1.0 - float(d.tail(s))
    T = 1.0 - F
    c = T * (1.0 - F * F) ** (t - m)
    a = 1.0 - F * d.partial_laplace(lam_c, s)
    return c * (a * (1.0 - rho) + rho) ** m


def fairnessfirst_lowtraffic_sojourn(t: int, lam: float, lam_c: float,
                                     d: ServiceDistribution) -> MG1Model:
    _check_ff_t(t)
    if lam_c < 0:
        raise ParameterError("cold arrival rate must be nonnegative")
    rho = lam_c * d.mean
    if rho >= 1:
        raise InstabilityError(f"cold servers unstable: rho = {rho:.6g}", utilization=rho,
                               where="cold")
    m1, m2 = _ff_lowtraffic_moments(d, t, lam_c)
    return pk_sojourn(lam, m1, m2)


@lru_cache(maxsize=1024)
def _ff_lowtraffic_moments(d: ServiceDistribution, t: int, lam_c: float) -> tuple[float, float]:
    return tail_moments(lambda s: fairnessfirst_lowtraffic_tail(d, t, lam_c, s),
                        d.breakpoints, _is_heavy(d))


# --------------------------------------------------------------------------
# Pathway probabilities behind the type-transition drift result
# --------------------------------------------------------------------------

def conj_pathway_prob(t: int, j: int) -> float:
    """Probability that the next request keeps the current type ``j``.

    Backward recurrence ``B_j = pD_j + p+1_j B_{j+1}`` from ``B_t = pD_t`` for
    exponential servers, with ``pD_j = (1+j)/(1+2t)`` and
    ``p+1_j = 2(t-j)/(1+2t)``.
    """
    if t < 1 or not 0 <= j <= t - 1:
        raise ParameterError(f"need t >= 1 and 0 <= j <= t - 1, got t={t}, j={j}")
    denom = 1.0 + 2.0 * t
    b = (1.0 + t) / denom
    for i in range(t - 1, j - 1, -1):
        b = (1.0 + i) / denom + 2.0 * (t - i) / denom * b
    return b


# --------------------------------------------------------------------------
# Service rate allocation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AllocationRow:
    rho: float
    gamma: float
    mu: float
    sojourn: float
    stable: bool


def rate_allocation_curve(budget: float, grid: Sequence[float], lam: float) -> list[AllocationRow]:
    """Availability-one M/G/1 approximation along ``gamma + 2 mu = budget``.

    ``rho = gamma / mu``; unstable grid points come back with ``stable=False``
    and an infinite sojourn.
    """
    if budget <= 0:
        raise ParameterError("budget must be positive")
    rows = []
    for rho in grid:
        if rho <= 0:
            raise ParameterError(f"grid values must be positive, got {rho}")
        gamma, mu = budget * rho / (rho + 2.0), budget / (rho + 2.0)
        try:
            soj, ok = reptoall_t1_sojourn(lam, gamma, mu).sojourn, True
        except InstabilityError:
            soj, ok = math.inf, False
        rows.append(AllocationRow(rho=rho, gamma=gamma, mu=mu, sojourn=soj, stable=ok))
    return rows


def t1_stability_limit(gamma: float, mu: float) -> float:
    """Arrival rate at which the availability-one approximation saturates."""
    f0, f1 = fj_high_traffic_t1(gamma, mu).f
    s0, s1 = t1_type_moments(gamma, mu)
    return 1.0 / (f0 * s0.m1 + f1 * s1.m1)
