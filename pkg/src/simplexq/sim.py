"""Discrete-event simulator of a simplex-coded storage cluster.

Every server runs a FIFO queue.  A request is a set of copies placed on
servers by the scheduling policy; it completes when its systematic copy
finishes or when both copies of one recovery group have finished, at which
point all its remaining copies are cancelled.

Events at equal timestamps are ordered departures first (FIFO among
themselves), then the cancellations and service starts they trigger, then
arrivals.
"""

from __future__ import annotations

import heapq
import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .analytic import FjEstimate
from .core import (
    HOT_SYMBOL,
    ArrivalModel,
    FairnessFirst,
    FixedHot,
    HotCold,
    MixedUniform,
    ReplicateToAll,
    SchedulingPolicy,
    SelectOne,
    ServiceDistribution,
    SimplexTopology,
)
from .errors import ConfigError, ConsistencyError, InstabilityError

NUM_BATCHES = 20
MIN_BATCHES = 10
_BUF = 4096

# copy states
_QUEUED, _BUSY, _DONE, _CANCELLED = 0, 1, 2, 3


@dataclass(frozen=True)
class SimConfig:
    topology: SimplexTopology
    policy: SchedulingPolicy
    arrivals: ArrivalModel
    service: ServiceDistribution
    num_requests: int
    warmup: int | None = None
    replications: int = 1
    seed: int = 0
    restart_on_hol: bool = False
    truncate_lead: int | None = None
    server_dists: Mapping[int, ServiceDistribution] | None = None
    max_in_system: int = 50_000

    def __post_init__(self):
        if self.warmup is None:
            object.__setattr__(self, "warmup", self.num_requests // 5)
        if self.num_requests < 1:
            raise ConfigError("num_requests must be positive", key="requests")
        if not 0 <= self.warmup < self.num_requests:
            raise ConfigError("warmup must lie in [0, num_requests)", key="warmup")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1", key="replications")
        if self.truncate_lead is not None and self.truncate_lead < 0:
            raise ConfigError("truncate_lead must be nonnegative", key="truncate_lead")
        if isinstance(self.policy, FairnessFirst) and not isinstance(self.arrivals, HotCold):
            raise ConfigError("fairness-first needs hot/cold arrivals", key="arrivals")
        if isinstance(self.policy, SelectOne) and len(self.policy.weights) != self.topology.t + 1:
            raise ConfigError(f"select-one needs {self.topology.t + 1} weights", key="weights")
        if self.server_dists:
            bad = [s for s in self.server_dists if s not in self.topology.servers]
            if bad:
                raise ConfigError(f"unknown server labels {bad}", key="server_dists")

    def dist_for(self, label: int) -> ServiceDistribution:
        if self.server_dists and label in self.server_dists:
            return self.server_dists[label]
        return self.service


@dataclass
class RepStats:
    """Raw output of one replication."""

    sojourn: np.ndarray          # post-warmup sojourns in arrival order
    cls: np.ndarray              # 0 hot, 1 cold
    type_counts: np.ndarray | None
    transitions: np.ndarray | None
    sys_wins: int
    group_wins: int
    events: int
    fifo_violations: int
    arrived: tuple[int, int]
    departed: tuple[int, int]
    end_time: float


@dataclass(frozen=True)
class ClassStats:
    mean: float
    ci: float | None
    p50: float
    p95: float
    p99: float
    count: int


@dataclass(frozen=True)
class SimResult:
    hot: ClassStats
    cold: ClassStats | None
    empirical_fj: FjEstimate | None
    ws: float | None
    wr: float | None
    jtype_transition: tuple[tuple[float, ...], ...] | None
    jtype_zero_rows: tuple[int, ...]
    events_processed: int
    fifo_violations: int
    replication_means: tuple[float, ...]

    @property
    def mean(self) -> float:
        return self.hot.mean

    @property
    def ci(self) -> float | None:
        return self.hot.ci


def classify_service_start(group_done: Sequence[int]) -> int:
    """Number of recovery groups with exactly one copy already finished."""
    return sum(1 for c in group_done if c == 1)


class _Copy:
    __slots__ = ("req", "grp", "srv", "state", "redundant", "t0")

    def __init__(self, req, grp, srv, redundant=False):
        self.req = req
        self.grp = grp
        self.srv = srv
        self.state = _QUEUED
        self.redundant = redundant
        self.t0 = 0.0


class _Request:
    __slots__ = ("id", "arr", "sym", "cls", "copies", "pending", "gdone", "done", "lead_srvs")

    def __init__(self, rid, arr, sym, cls, ngroups):
        self.id = rid
        self.arr = arr
        self.sym = sym
        self.cls = cls
        self.copies = []
        self.pending = 0
        self.gdone = [0] * ngroups
        self.done = False
        self.lead_srvs = []


class _Stream:
    """Buffered draws from one numpy generator."""

    __slots__ = ("fn", "buf", "i")

    def __init__(self, fn):
        self.fn = fn
        self.buf = []
        self.i = 0

    def next(self):
        if self.i >= len(self.buf):
            self.buf = self.fn()
            self.i = 0
        v = self.buf[self.i]
        self.i += 1
        return v


class _Engine:
    def __init__(self, cfg: SimConfig, rep: int, backlog: int = 0, open_arrivals: bool = True):
        self.cfg = cfg
        top = cfg.topology
        self.top = top
        self.n = top.n
        ss = np.random.SeedSequence([cfg.seed & (2 ** 64 - 1), rep])
        g_arr, g_route, g_serv = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3))

        arr = cfg.arrivals
        k = top.k
        if isinstance(arr, HotCold):
            self.total_rate = arr.rate + (k - 1) * arr.cold_rate
        else:
            self.total_rate = arr.rate
        rate = self.total_rate
        self.inter = _Stream(lambda: g_arr.exponential(1.0 / rate, _BUF).tolist())
        self.uni_arr = _Stream(lambda: g_arr.random(_BUF).tolist())
        self.uni_route = _Stream(lambda: g_route.random(_BUF).tolist())

        streams = {}
        self.serv = [None] * (self.n + 1)
        for s in top.servers:
            d = cfg.dist_for(s)
            if d not in streams:
                streams[d] = _Stream(lambda d=d: d.sample(g_serv, _BUF).tolist())
            self.serv[s] = streams[d]

        self.busy = [None] * (self.n + 1)
        self.queue = [deque() for _ in range(self.n + 1)]
        self.version = [0] * (self.n + 1)
        self.lead = [0] * (self.n + 1)
        lead = cfg.truncate_lead
        self.lead_cap = math.inf if lead is None else max(lead, 1)
        self.heap = []
        self.seq = 0
        self.now = 0.0
        self.backlog = backlog
        self.open_arrivals = open_arrivals

        self.pol = cfg.policy
        self.ff = isinstance(cfg.policy, FairnessFirst)
        self.track_types = isinstance(cfg.policy, ReplicateToAll) and isinstance(arr, FixedHot)
        t = top.t
        self.type_counts = np.zeros(t + 1, dtype=np.int64) if self.track_types else None
        self.trans = np.zeros((t + 1, t + 1), dtype=np.int64) if self.track_types else None
        self.prev_type = -1
        self.sys_wins = 0
        self.group_wins = 0
        self.last_done_id = -1
        self.fifo_violations = 0
        self.events = 0
        self.in_system = 0
        self.arrived = [0, 0]
        self.departed = [0, 0]
        total = cfg.num_requests + backlog
        self.sojourn = np.full(total, np.nan)
        self.cls = np.zeros(total, dtype=np.int8)
        self.done_time = np.full(total, np.nan) if backlog else None
        if self.ff:
            self.hot_groups = top.groups[HOT_SYMBOL]

    # ------------------------------------------------------------------
    def _draw_symbol(self):
        arr = self.cfg.arrivals
        k = self.top.k
        if isinstance(arr, FixedHot) or k == 1:
            return HOT_SYMBOL, 0
        if isinstance(arr, MixedUniform):
            return min(int(self.uni_route.next() * k), k - 1), 0
        u = self.uni_arr.next() * self.total_rate
        if u < arr.rate:
            return HOT_SYMBOL, 0
        sym = 1 + min(int((u - arr.rate) / arr.cold_rate), k - 2)
        return sym, 1

    def _arrive(self, rid):
        sym, cls = self._draw_symbol()
        groups = self.top.groups[sym]
        r = _Request(rid, self.now, sym, cls, len(groups))
        self.cls[rid] = cls
        self.arrived[cls] += 1
        self.in_system += 1
        copies = r.copies
        pol = self.pol
        sys_srv = 1 << sym
        if isinstance(pol, ReplicateToAll):
            copies.append(_Copy(r, -1, sys_srv))
            for g, (u, v) in enumerate(groups):
                copies.append(_Copy(r, g, u))
                copies.append(_Copy(r, g, v))
        elif isinstance(pol, SelectOne):
            x = self.uni_route.next()
            acc = 0.0
            choice = len(pol.weights) - 1
            for i, w in enumerate(pol.weights):
                acc += w
                if x < acc:
                    choice = i
                    break
            if choice == 0:
                copies.append(_Copy(r, -1, sys_srv))
            else:
                u, v = groups[choice - 1]
                copies.append(_Copy(r, choice - 1, u))
                copies.append(_Copy(r, choice - 1, v))
        else:
            copies.append(_Copy(r, -1, sys_srv))
            if cls == 1:
                cur = self.busy[sys_srv]
                if cur is not None and cur.redundant:
                    self._preempt(cur)
        r.pending = len(copies)
        for c in copies:
            self.queue[c.srv].append(c)
        for c in copies:
            self._try_start(c.srv)
        if self.in_system > self.cfg.max_in_system:
            thr = sum(self.departed) / (self.now * self.total_rate) if self.now > 0 else 0.0
            raise InstabilityError(
                f"{self.in_system} requests in system; throughput/lambda = {thr:.4f}",
                utilization=None, where="sim")

    def _launch(self, c, s):
        c.state = _BUSY
        c.t0 = self.now
        self.busy[s] = c
        v = self.version[s] + 1
        self.version[s] = v
        self.seq += 1
        heapq.heappush(self.heap, (self.now + self.serv[s].next(), self.seq, s, v))

    def _try_start(self, s):
        if self.busy[s] is not None or self.lead[s] >= self.lead_cap:
            return
        q = self.queue[s]
        while q:
            c = q.popleft()
            if c.state == _QUEUED:
                self._launch(c, s)
                r = c.req
                r.pending -= 1
                if r.pending == 0:
                    self._epoch(r)
                return

    def _epoch(self, r):
        if self.track_types:
            j = classify_service_start(r.gdone)
            if r.id >= self.cfg.warmup:
                self.type_counts[j] += 1
                if self.prev_type >= 0:
                    self.trans[self.prev_type, j] += 1
                self.prev_type = j
        if self.cfg.restart_on_hol:
            now = self.now
            for c in r.copies:
                if c.state == _BUSY and c.t0 < now:
                    s = c.srv
                    c.t0 = now
                    v = self.version[s] + 1
                    self.version[s] = v
                    self.seq += 1
                    heapq.heappush(self.heap, (now + self.serv[s].next(), self.seq, s, v))
        if self.ff and r.cls == 0:
            busy = self.busy
            for g, (u, v) in enumerate(self.hot_groups):
                if busy[u] is None and busy[v] is None and not self.queue[u] and not self.queue[v]:
                    for s in (u, v):
                        c = _Copy(r, g, s, redundant=True)
                        r.copies.append(c)
                        self._launch(c, s)

    def _cancel_busy(self, c):
        c.state = _CANCELLED
        s = c.srv
        self.busy[s] = None
        self.version[s] += 1

    def _preempt(self, c):
        r = c.req
        g = c.grp
        self._cancel_busy(c)
        for o in r.copies:
            if o.grp == g and o.state == _BUSY:
                self._cancel_busy(o)
                self._try_start(o.srv)

    def _depart(self, s):
        c = self.busy[s]
        self.busy[s] = None
        c.state = _DONE
        r = c.req
        if c.grp < 0:
            self._complete(r, s, True)
            return
        r.gdone[c.grp] += 1
        if r.gdone[c.grp] == 2:
            self._complete(r, s, False)
        else:
            self.lead[s] += 1
            r.lead_srvs.append(s)
            self._try_start(s)

    def _complete(self, r, s, by_sys):
        r.done = True
        self.in_system -= 1
        self.departed[r.cls] += 1
        rid = r.id
        self.sojourn[rid] = self.now - r.arr
        if self.done_time is not None:
            self.done_time[rid] = self.now
        if r.cls == 0 and rid >= self.cfg.warmup:
            if by_sys:
                self.sys_wins += 1
            else:
                self.group_wins += 1
        if self.track_types:
            if rid < self.last_done_id:
                self.fifo_violations += 1
            self.last_done_id = max(self.last_done_id, rid)
        restart = [s]
        for x in r.lead_srvs:
            self.lead[x] -= 1
            restart.append(x)
        for c in r.copies:
            st = c.state
            if st == _QUEUED:
                c.state = _CANCELLED
            elif st == _BUSY:
                self._cancel_busy(c)
                restart.append(c.srv)
        for x in restart:
            self._try_start(x)

    # ------------------------------------------------------------------
    def run(self) -> RepStats:
        cfg = self.cfg
        heap = self.heap
        version = self.version
        pop = heapq.heappop
        total = self.backlog + (cfg.num_requests if self.open_arrivals else 0)
        rid = 0
        for _ in range(self.backlog):
            self._arrive(rid)
            rid += 1
        next_arr = self.inter.next() if rid < total else math.inf
        events = 0
        while True:
            if heap and heap[0][0] <= next_arr:
                t, _, s, v = pop(heap)
                if version[s] != v:
                    continue
                self.now = t
                events += 1
                self._depart(s)
            elif next_arr < math.inf:
                self.now = next_arr
                events += 1
                self._arrive(rid)
                rid += 1
                next_arr = self.now + self.inter.next() if rid < total else math.inf
            else:
                break
        self.events = events
        if self.in_system != 0 or sum(self.arrived) != sum(self.departed) + self.in_system:
            raise ConsistencyError("request conservation violated")
        w = cfg.warmup + self.backlog
        return RepStats(
            sojourn=self.sojourn[w:], cls=self.cls[w:],
            type_counts=self.type_counts, transitions=self.trans,
            sys_wins=self.sys_wins, group_wins=self.group_wins, events=events,
            fifo_violations=self.fifo_violations,
            arrived=tuple(self.arrived), departed=tuple(self.departed), end_time=self.now)


def run_replication(cfg: SimConfig, rep: int) -> RepStats:
    return _Engine(cfg, rep).run()


# --------------------------------------------------------------------------
# Aggregation
# --------------------------------------------------------------------------

def batch_means(x: np.ndarray, batches: int = NUM_BATCHES) -> np.ndarray:
    m = len(x) // batches
    if m == 0:
        return np.empty(0)
    return x[: m * batches].reshape(batches, m).mean(axis=1)


def half_width(samples: np.ndarray, level: float = 0.95) -> float | None:
    n = len(samples)
    if n < 2:
        return None
    sd = float(np.std(samples, ddof=1))
    return float(stats.t.ppf(0.5 + level / 2, n - 1)) * sd / math.sqrt(n)


def _class_stats(reps: Sequence[RepStats], cls: int) -> ClassStats | None:
    parts = [r.sojourn[r.cls == cls] for r in reps]
    if sum(len(p) for p in parts) == 0:
        return None
    pooled = np.concatenate(parts)
    if len(reps) == 1:
        bm = batch_means(parts[0])
        ci = half_width(bm) if len(bm) >= MIN_BATCHES else None
    else:
        means = np.array([p.mean() for p in parts if len(p)])
        ci = half_width(means)
    p50, p95, p99 = np.percentile(pooled, [50, 95, 99])
    return ClassStats(mean=float(pooled.mean()), ci=ci, p50=float(p50), p95=float(p95),
                      p99=float(p99), count=len(pooled))


def aggregate(reps: Sequence[RepStats]) -> SimResult:
    """Pool replications.

    With one replication the CI comes from batch means within it; with
    several it comes from the replication means.
    """
    if not reps:
        raise ConfigError("need at least one replication")
    hot = _class_stats(reps, 0)
    if hot is None:
        raise ConfigError("no post-warmup hot requests")
    cold = _class_stats(reps, 1)

    fj = trans = None
    zero_rows: tuple[int, ...] = ()
    if reps[0].type_counts is not None:
        counts = sum(r.type_counts for r in reps)
        t = len(counts) - 1
        if counts.sum() > 0:
            f = counts / counts.sum()
            fj = FjEstimate(t=t, f=tuple(float(x) for x in f), method="empirical")
        tc = sum(r.transitions for r in reps).astype(float)
        rows = tc.sum(axis=1)
        zero_rows = tuple(int(i) for i in np.flatnonzero(rows == 0))
        with np.errstate(invalid="ignore", divide="ignore"):
            tm = np.where(rows[:, None] > 0, tc / np.maximum(rows, 1)[:, None], 0.0)
        trans = tuple(tuple(float(x) for x in row) for row in tm)

    sw = sum(r.sys_wins for r in reps)
    gw = sum(r.group_wins for r in reps)
    ws = sw / (sw + gw) if sw + gw else None
    wr = gw / (sw + gw) if sw + gw else None
    means = tuple(float(r.sojourn[r.cls == 0].mean()) for r in reps)
    return SimResult(hot=hot, cold=cold, empirical_fj=fj, ws=ws, wr=wr,
                     jtype_transition=trans, jtype_zero_rows=zero_rows,
                     events_processed=sum(r.events for r in reps),
                     fifo_violations=sum(r.fifo_violations for r in reps),
                     replication_means=means)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SIMPLEXQ_THREADS", "1")))
    except ValueError:
        return 1


def run_sim(cfg: SimConfig) -> SimResult:
    workers = min(_threads(), cfg.replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            reps = list(ex.map(run_replication, [cfg] * cfg.replications, range(cfg.replications)))
    else:
        reps = [run_replication(cfg, i) for i in range(cfg.replications)]
    return aggregate(reps)


def estimate_stability_limit(cfg: SimConfig, backlog: int = 50_000) -> float:
    """Throughput of the system started with ``backlog`` requests and no arrivals.

    The rate is measured between the 20% and 80% completion marks, so the
    start-up transient and the draining tail are both excluded.
    """
    probe = SimConfig(topology=cfg.topology, policy=cfg.policy, arrivals=cfg.arrivals,
                      service=cfg.service, num_requests=1, warmup=0, seed=cfg.seed,
                      restart_on_hol=cfg.restart_on_hol, truncate_lead=cfg.truncate_lead,
                      server_dists=cfg.server_dists, max_in_system=backlog + 10)
    eng = _Engine(probe, 0, backlog=backlog, open_arrivals=False)
    eng.run()
    done = np.sort(eng.done_time[:backlog])
    lo, hi = int(0.2 * backlog), int(0.8 * backlog)
    return (hi - lo) / (done[hi] - done[lo])
