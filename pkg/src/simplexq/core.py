"""Domain primitives: simplex-code layout, service laws, schedulers, arrivals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import InfiniteMomentError, ParameterError

MAX_K = 10


# --------------------------------------------------------------------------
# Simplex code topology
# --------------------------------------------------------------------------

def label_name(label: int) -> str:
    """Human-readable name of a server label, e.g. ``0b101 -> 'a+c'``."""
    letters = [chr(ord("a") + i) for i in range(label.bit_length()) if label >> i & 1]
    return "+".join(letters)


@dataclass(frozen=True)
class SimplexTopology:
    """Layout of a binary ``[2^k - 1, k]`` simplex code.

    Server labels are nonzero k-bit masks; the server storing symbol ``i``
    systematically is ``1 << i``.  ``groups[i]`` lists the recovery pairs of
    symbol ``i`` ordered by their smaller label.
    """

    k: int
    servers: tuple[int, ...]
    groups: tuple[tuple[tuple[int, int], ...], ...]

    @property
    def n(self) -> int:
        return len(self.servers)

    @property
    def t(self) -> int:
        return len(self.groups[0])

    def systematic(self, symbol: int) -> int:
        return 1 << symbol

    def index(self, label: int) -> int:
        """Position of ``label`` in ``servers`` (labels are 1..n, so label - 1)."""
        return label - 1

    def cold_groups(self, symbol: int) -> list[int]:
        """Indices of the recovery groups of ``symbol`` that contain a systematic server."""
        return [g for g, (u, v) in enumerate(self.groups[symbol])
                if _is_unit(u) or _is_unit(v)]


def _is_unit(label: int) -> bool:
    return label & (label - 1) == 0


def restrict_topology(top: SimplexTopology, t: int) -> SimplexTopology:
    """Keep only the first ``t`` recovery groups of every symbol.

    Gives availabilities that no simplex code has (e.g. t = 2 from k = 3);
    servers left out of every group simply idle under fixed arrivals.
    """
    if not 0 <= t <= top.t:
        raise ParameterError(f"t must lie in [0, {top.t}], got {t}")
    return SimplexTopology(k=top.k, servers=top.servers,
                           groups=tuple(g[:t] for g in top.groups))


def build_topology(k: int) -> SimplexTopology:
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_K:
        raise ParameterError(f"k must be an integer in [1, {MAX_K}], got {k!r}")
    k = int(k)
    n = (1 << k) - 1
    servers = tuple(range(1, n + 1))
    groups = []
    for i in range(k):
        e = 1 << i
        pairs = []
        for u in servers:
            v = u ^ e
            if u == e or v == e or v < u:
                continue
            pairs.append((u, v))
        groups.append(tuple(pairs))
    return SimplexTopology(k=k, servers=servers, groups=tuple(groups))


# --------------------------------------------------------------------------
# Service time distributions
# --------------------------------------------------------------------------

class ServiceDistribution:
    """Base class of the server service-time laws.

    Subclasses are frozen dataclasses, so instances are hashable and can key
    caches.  ``tail`` and ``cdf`` accept scalars or arrays.
    """

    #: points where the tail has a jump or a kink; used to split quadrature
    breakpoints: tuple[float, ...] = ()

    def moments(self) -> tuple[float, float]:
        return self.mean, self.second_moment

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    def tail(self, s):
        raise NotImplementedError

    def cdf(self, s):
        return 1.0 - self.tail(s)

    def quantile(self, u):
        """Inverse CDF on ``[0, 1)``."""
        raise NotImplementedError

    def partial_laplace(self, lam: float, s: float) -> float:
        """``E[exp(-lam V); V <= s]`` (atoms at ``s`` included)."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        return self.quantile(rng.random(size))

    def spec(self) -> str:
        """Flag-grammar representation, e.g. ``exp:1.0``."""
        raise NotImplementedError


@dataclass(frozen=True)
class Exp(ServiceDistribution):
    rate: float

    def __post_init__(self):
        if not self.rate > 0 or not math.isfinite(self.rate):
            raise ParameterError(f"exponential rate must be positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    @property
    def second_moment(self) -> float:
        return 2.0 / self.rate ** 2

    def tail(self, s):
        s = np.asarray(s, dtype=float)
        out = np.where(s < 0, 1.0, np.exp(-self.rate * np.maximum(s, 0.0)))
        return out if out.ndim else float(out)

    def quantile(self, u):
        out = -np.log1p(-np.asarray(u, dtype=float)) / self.rate
        return out if out.ndim else float(out)

    def partial_laplace(self, lam: float, s: float) -> float:
        if s <= 0:
            return 0.0
        r = self.rate + lam
        return self.rate / r * -math.expm1(-r * s)

    def spec(self) -> str:
        return f"exp:{self.rate!r}"


@dataclass(frozen=True)
class Pareto(ServiceDistribution):
    scale: float
    alpha: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ParameterError(f"Pareto scale must be positive, got {self.scale}")
        if not self.alpha > 1:
            raise ParameterError(f"Pareto tail index must exceed 1, got {self.alpha}")

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (self.scale,)

    @property
    def mean(self) -> float:
        return self.scale * self.alpha / (self.alpha - 1)

    @property
    def second_moment(self) -> float:
        if self.alpha <= 2:
            raise InfiniteMomentError(f"Pareto second moment is infinite for alpha={self.alpha} <= 2")
        return self.scale ** 2 * self.alpha / (self.alpha - 2)

    def tail(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(s < self.scale, 1.0, (np.maximum(s, self.scale) / self.scale) ** -self.alpha)
        return out if out.ndim else float(out)

    def quantile(self, u):
        out = self.scale * (1.0 - np.asarray(u, dtype=float)) ** (-1.0 / self.alpha)
        return out if out.ndim else float(out)

    def partial_laplace(self, lam: float, s: float) -> float:
        if s < self.scale:
            return 0.0
        if lam == 0:
            return float(self.cdf(s))
        from scipy import integrate

        a, x0 = self.alpha, self.scale
        val, _ = integrate.quad(lambda v: math.exp(-lam * v) * a * x0 ** a * v ** (-a - 1),
                                x0, s, epsabs=1e-14, epsrel=1e-12, limit=200)
        return val

    def spec(self) -> str:
        return f"pareto:{self.scale!r}:{self.alpha!r}"


@dataclass(frozen=True)
class BernoulliTwoPoint(ServiceDistribution):
    """Takes ``long`` with probability ``p`` and ``usual`` otherwise."""

    usual: float
    long: float
    p: float

    def __post_init__(self):
        if not self.usual > 0:
            raise ParameterError(f"usual value must be positive, got {self.usual}")
        if not self.long > self.usual:
            raise ParameterError("long value must exceed the usual value")
        if not 0 < self.p < 0.5:
            raise ParameterError(f"p must lie in (0, 0.5), got {self.p}")

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return (self.usual, self.long)

    @property
    def mean(self) -> float:
        return self.usual + (self.long - self.usual) * self.p

    @property
    def second_moment(self) -> float:
        return self.usual ** 2 + (self.long ** 2 - self.usual ** 2) * self.p

    def tail(self, s):
        s = np.asarray(s, dtype=float)
        out = np.where(s < self.usual, 1.0, np.where(s < self.long, self.p, 0.0))
        return out if out.ndim else float(out)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        out = np.where(u < 1.0 - self.p, self.usual, self.long)
        return out if out.ndim else float(out)

    def partial_laplace(self, lam: float, s: float) -> float:
        total = 0.0
        if s >= self.usual:
            total += (1.0 - self.p) * math.exp(-lam * self.usual)
        if s >= self.long:
            total += self.p * math.exp(-lam * self.long)
        return total

    def spec(self) -> str:
        return f"bern:{self.usual!r}:{self.long!r}:{self.p!r}"


def dist_moments(d: ServiceDistribution) -> tuple[float, float]:
    return d.moments()


def dist_tail(d: ServiceDistribution, s: float) -> float:
    return float(d.tail(s))


def dist_sample(d: ServiceDistribution, rng: np.random.Generator, size=None):
    return d.sample(rng, size)


# --------------------------------------------------------------------------
# Scheduling policies and arrival models
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicateToAll:
    name = "reptoall"


@dataclass(frozen=True)
class SelectOne:
    """Route each request to the systematic server (index 0) or one group."""

    weights: tuple[float, ...]
    name = "selectone"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        if not w or any(x < 0 or not math.isfinite(x) for x in w):
            raise ParameterError("select-one weights must be nonnegative")
        if abs(sum(w) - 1.0) > 1e-12:
            raise ParameterError(f"select-one weights must sum to 1, got {sum(w)!r}")


@dataclass(frozen=True)
class FairnessFirst:
    name = "fairnessfirst"


SchedulingPolicy = Union[ReplicateToAll, SelectOne, FairnessFirst]


def _positive_rate(name: str, value: float) -> None:
    if not value > 0 or not math.isfinite(value):
        raise ParameterError(f"{name} must be a positive finite rate, got {value!r}")


@dataclass(frozen=True)
class FixedHot:
    """Every request asks for the hot symbol."""

    rate: float
    name = "fixed"

    def __post_init__(self):
        _positive_rate("rate", self.rate)


@dataclass(frozen=True)
class MixedUniform:
    """Total rate ``rate`` split evenly over all k symbols."""

    rate: float
    name = "mixed"

    def __post_init__(self):
        _positive_rate("rate", self.rate)


@dataclass(frozen=True)
class HotCold:
    """Hot symbol at ``rate``; every other symbol at ``cold_rate``."""

    rate: float
    cold_rate: float
    name = "hotcold"

    def __post_init__(self):
        _positive_rate("rate", self.rate)
        _positive_rate("cold_rate", self.cold_rate)
        if self.cold_rate > self.rate:
            raise ParameterError("cold rate must not exceed the hot rate")


ArrivalModel = Union[FixedHot, MixedUniform, HotCold]

HOT_SYMBOL = 0
