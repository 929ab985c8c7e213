"""Command-line entry point.

Subcommands::

    analytic   model values only
    qbd        matrix-analytic bound for availability one
    simulate   one simulated point (or a --sweep grid)
    sweep      simulated lambda grid
    compare    simulation next to every applicable model

Exit codes: 0 success, 2 usage error, 3 instability abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, fields
from typing import Any

import numpy as np

from . import analytic, qbd
from .core import (
    BernoulliTwoPoint,
    Exp,
    FairnessFirst,
    FixedHot,
    HotCold,
    MixedUniform,
    Pareto,
    ReplicateToAll,
    SelectOne,
    ServiceDistribution,
    build_topology,
)
from .errors import ConfigError, InstabilityError, SimplexQError
from .sim import SimConfig, SimResult, run_sim

EXIT_OK, EXIT_USAGE, EXIT_UNSTABLE = 0, 2, 3

COMMANDS = ("analytic", "qbd", "simulate", "sweep", "compare")
POLICIES = ("reptoall", "selectone", "fairnessfirst")
ARRIVALS = ("fixed", "mixed", "hotcold")
FORMATS = ("csv", "json")


@dataclass(frozen=True)
class ExperimentSpec:
    command: str
    k: int = 2
    policy: str = "reptoall"
    dist: ServiceDistribution = Exp(1.0)
    lam: float | None = None
    lam_c: float | None = None
    arrivals: str = "fixed"
    weights: tuple[float, ...] | None = None
    method: str | None = None
    requests: int = 100_000
    warmup: int | None = None
    replications: int = 1
    seed: int = 0
    restart_on_hol: bool = False
    truncate_lead: int | None = None
    gamma: float | None = None
    alpha: float | None = None
    beta: float | None = None
    sweep: tuple[float, float, int] | None = None
    format: str = "csv"
    output: str | None = None

    @property
    def t(self) -> int:
        return (1 << (self.k - 1)) - 1

    def grid(self) -> list[float]:
        if self.sweep is None:
            return [self.lam]
        a, b, n = self.sweep
        return [round(float(x), 12) for x in np.linspace(a, b, n)]


# config-file key -> spec field
_KEYS = {
    "command": "command", "k": "k", "policy": "policy", "dist": "dist", "lambda": "lam",
    "lambda_c": "lam_c", "arrivals": "arrivals", "weights": "weights", "method": "method",
    "requests": "requests", "warmup": "warmup", "replications": "replications", "seed": "seed",
    "restart_on_hol": "restart_on_hol", "truncate_lead": "truncate_lead", "gamma": "gamma",
    "alpha": "alpha", "beta": "beta", "sweep": "sweep", "format": "format", "output": "output",
}


def parse_dist(text: str) -> ServiceDistribution:
    parts = str(text).split(":")
    try:
        nums = [float(x) for x in parts[1:]]
        if parts[0] == "exp" and len(nums) == 1:
            return Exp(nums[0])
        if parts[0] == "pareto" and len(nums) == 2:
            return Pareto(*nums)
        if parts[0] == "bern" and len(nums) == 3:
            return BernoulliTwoPoint(*nums)
    except (ValueError, SimplexQError) as exc:
        raise ConfigError(f"bad distribution {text!r}: {exc}", key="dist") from exc
    raise ConfigError(f"bad distribution {text!r}; use exp:MU, pareto:S:ALPHA or bern:U:L:P",
                      key="dist")


def _parse_weights(v) -> tuple[float, ...]:
    if isinstance(v, str):
        v = v.split(",")
    try:
        return tuple(float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad weights {v!r}", key="weights") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--config", help="JSON file with default values; flags override it")
    a("--k", type=int)
    a("--policy", choices=POLICIES)
    a("--dist", help="exp:MU | pareto:S:ALPHA | bern:U:L:P")
    a("--lambda", dest="lam", type=float)
    a("--lambda-c", dest="lam_c", type=float)
    a("--arrivals", choices=ARRIVALS)
    a("--weights", help="comma separated select-one weights p0,...,pt")
    a("--method", choices=analytic.METHODS)
    a("--requests", type=int)
    a("--warmup", type=int)
    a("--replications", type=int)
    a("--seed", type=int)
    a("--restart-on-hol", dest="restart_on_hol", action="store_const", const=True)
    a("--truncate-lead", dest="truncate_lead", type=int)
    a("--gamma", type=float)
    a("--alpha", type=float)
    a("--beta", type=float)
    a("--sweep", nargs=3, metavar=("START", "STOP", "POINTS"))
    a("--format", choices=FORMATS)
    a("--output")

    p = argparse.ArgumentParser(prog="simplexq",
                                description="Hot-data download latency in simplex-coded storage.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def _coerce(key: str, value: Any) -> Any:
    try:
        if key == "dist":
            return value if isinstance(value, ServiceDistribution) else parse_dist(value)
        if key == "weights":
            return None if value is None else _parse_weights(value)
        if key == "sweep":
            if value is None:
                return None
            a, b, n = value
            return float(a), float(b), int(n)
        if key in ("k", "requests", "warmup", "replications", "seed", "truncate_lead"):
            return None if value is None else int(value)
        if key in ("lam", "lam_c", "gamma", "alpha", "beta"):
            return None if value is None else float(value)
        if key == "restart_on_hol":
            return bool(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r}: {exc}", key=key) from exc
    return value


def parse_spec(argv: list[str] | None = None) -> ExperimentSpec:
    ns = build_parser().parse_args(argv)
    values: dict[str, Any] = {}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}", key="config") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object", key="config")
        for key, v in raw.items():
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r}", key=key)
            values[_KEYS[key]] = v
    for f in fields(ExperimentSpec):
        v = getattr(ns, f.name, None)
        if v is not None:
            values[f.name] = v
    values["command"] = ns.command
    values = {key: _coerce(key, v) for key, v in values.items()}
    spec = ExperimentSpec(**values)
    validate(spec)
    return spec


def validate(spec: ExperimentSpec) -> None:
    def bad(key, msg):
        raise ConfigError(msg, key=key)

    if spec.command not in COMMANDS:
        bad("command", f"unknown command {spec.command!r}")
    if not 1 <= spec.k <= 10:
        bad("k", "k must be in [1, 10]")
    if spec.policy not in POLICIES:
        bad("policy", f"unknown policy {spec.policy!r}")
    if spec.arrivals not in ARRIVALS:
        bad("arrivals", f"unknown arrival model {spec.arrivals!r}")
    if spec.format not in FORMATS:
        bad("format", f"unknown format {spec.format!r}")
    if spec.method is not None and spec.method not in analytic.METHODS:
        bad("method", f"unknown method {spec.method!r}")
    if spec.sweep is None and spec.lam is None:
        bad("lambda", "give --lambda or --sweep")
    if spec.sweep is not None:
        a, b, n = spec.sweep
        if n < 1 or (n > 1 and not a < b):
            bad("sweep", "sweep grid must be strictly increasing")
    for lam in spec.grid():
        if lam < 0:
            bad("lambda", "arrival rate must be nonnegative")
    if spec.policy == "selectone":
        if spec.weights is None:
            bad("weights", "select-one needs --weights")
        if len(spec.weights) != spec.t + 1:
            bad("weights", f"need {spec.t + 1} weights for k={spec.k}")
        try:
            SelectOne(spec.weights)
        except SimplexQError as exc:
            bad("weights", str(exc))
    if spec.policy == "fairnessfirst":
        if spec.arrivals != "hotcold":
            bad("arrivals", "fairness-first needs --arrivals hotcold")
        if spec.k < 2:
            bad("k", "fairness-first needs k >= 2")
    if spec.arrivals == "hotcold":
        if spec.lam_c is None:
            bad("lambda_c", "hot/cold arrivals need --lambda-c")
        if spec.lam_c <= 0:
            bad("lambda_c", "cold rate must be positive")
        if any(spec.lam_c > lam for lam in spec.grid()):
            bad("lambda_c", "cold rate must not exceed the hot rate")
    if spec.method == "high_traffic_t1" and spec.t != 1:
        bad("method", "high_traffic_t1 needs k = 2")
    if spec.requests < 1:
        bad("requests", "requests must be positive")
    if spec.warmup is not None and not 0 <= spec.warmup < spec.requests:
        bad("warmup", "warmup must lie in [0, requests)")
    if spec.replications < 1:
        bad("replications", "replications must be at least 1")
    if spec.truncate_lead is not None and spec.truncate_lead < 0:
        bad("truncate_lead", "truncate lead must be nonnegative")
    rates = (spec.gamma, spec.alpha, spec.beta)
    if any(r is not None for r in rates):
        if spec.k != 2:
            bad("gamma", "per-server rates apply to k = 2 only")
        if any(r is not None and r <= 0 for r in rates):
            bad("gamma", "per-server rates must be positive")


# --------------------------------------------------------------------------
# Row builders
# --------------------------------------------------------------------------

def _rates(spec: ExperimentSpec) -> tuple[float, float, float] | None:
    """(gamma, alpha, beta) for exponential availability-one setups."""
    if spec.t != 1:
        return None
    base = spec.dist.rate if isinstance(spec.dist, Exp) else None
    g = spec.gamma if spec.gamma is not None else base
    a = spec.alpha if spec.alpha is not None else base
    b = spec.beta if spec.beta is not None else base
    if None in (g, a, b):
        return None
    return g, a, b


def _heterogeneous(spec: ExperimentSpec) -> bool:
    return any(r is not None for r in (spec.gamma, spec.alpha, spec.beta))


def _safe(fn):
    try:
        v = fn()
    except (InstabilityError, SimplexQError):
        return None
    return v


def _default_method(spec: ExperimentSpec) -> str:
    if spec.method:
        return spec.method
    if spec.t == 1 and isinstance(spec.dist, Exp):
        return "high_traffic_t1"
    return "best"


def analytic_row(spec: ExperimentSpec, lam: float) -> dict[str, Any]:
    row: dict[str, Any] = {}
    t, d = spec.t, spec.dist
    if spec.policy == "reptoall":
        rates = _rates(spec)
        if _heterogeneous(spec):
            g, a, b = rates
            row["mg1_approx"] = (_safe(lambda: analytic.reptoall_t1_sojourn(lam, g, a).sojourn)
                                 if a == b else None)
            row["lb_st"] = row["ub_splitmerge"] = None
        else:
            row["mg1_approx"] = _safe(lambda: analytic.reptoall_sojourn(
                t, lam, d, _default_method(spec)).sojourn)
            b = _safe(lambda: analytic.reptoall_bounds(t, lam, d))
            row["lb_st"] = b.lb_sojourn if b else None
            row["ub_splitmerge"] = b.ub_sojourn if b else None
        if t == 1:
            row["ub_ma"] = (_safe(lambda: qbd.ma_sojourn_ub(*rates, lam))
                            if rates and lam > 0 else None)
    elif spec.policy == "selectone":
        row["selectone_exact"] = (_safe(lambda: analytic.selectone_sojourn(t, lam, d.rate, spec.weights))
                                  if isinstance(d, Exp) else None)
    else:
        b = _safe(lambda: analytic.fairnessfirst_bounds(t, lam, d))
        row["ff_lb"] = b.lb_sojourn if b else None
        row["ff_ub"] = b.ub_sojourn if b else None
        row["ff_lowtraffic"] = _safe(lambda: analytic.fairnessfirst_lowtraffic_sojourn(
            t, lam, spec.lam_c, d).sojourn)
        row["cold_pk"] = _safe(lambda: analytic.pk_sojourn(spec.lam_c, *d.moments()).sojourn)
    return row


def qbd_row(spec: ExperimentSpec, lam: float) -> dict[str, Any]:
    rates = _rates(spec)
    if rates is None:
        raise ConfigError("qbd needs k = 2 and exponential rates", key="dist")
    if lam <= 0:
        raise ConfigError("qbd needs a positive arrival rate", key="lambda")
    row: dict[str, Any] = {"ub_ma": None, "residual": None, "iterations": None,
                           "normalization": None}
    try:
        sol = qbd.solve(*rates, lam)
    except SimplexQError:
        return row
    row.update(ub_ma=qbd.mean_in_system(sol) / lam, residual=sol.residual,
               iterations=sol.iterations, normalization=qbd.normalization(sol))
    return row


def sim_config(spec: ExperimentSpec, lam: float) -> SimConfig:
    top = build_topology(spec.k)
    policy = {"reptoall": ReplicateToAll, "fairnessfirst": FairnessFirst}.get(spec.policy)
    policy = SelectOne(spec.weights) if spec.policy == "selectone" else policy()
    if spec.arrivals == "fixed":
        arr = FixedHot(lam)
    elif spec.arrivals == "mixed":
        arr = MixedUniform(lam)
    else:
        arr = HotCold(lam, spec.lam_c)
    server_dists = None
    if _heterogeneous(spec):
        g, a, b = _rates(spec) or (None, None, None)
        if None in (g, a, b):
            raise ConfigError("per-server rates need exponential service", key="dist")
        server_dists = {1: Exp(g), 2: Exp(a), 3: Exp(b)}
    return SimConfig(topology=top, policy=policy, arrivals=arr, service=spec.dist,
                     num_requests=spec.requests, warmup=spec.warmup,
                     replications=spec.replications, seed=spec.seed,
                     restart_on_hol=spec.restart_on_hol, truncate_lead=spec.truncate_lead,
                     server_dists=server_dists)


def sim_row(spec: ExperimentSpec, res: SimResult, full: bool) -> dict[str, Any]:
    row: dict[str, Any] = {"sim_mean": res.hot.mean, "sim_ci": res.hot.ci}
    if not full:
        return row
    row.update(p50=res.hot.p50, p95=res.hot.p95, p99=res.hot.p99, ws=res.ws, wr=res.wr)
    if res.empirical_fj is not None:
        for j, f in enumerate(res.empirical_fj.f):
            row[f"f{j}"] = f
    if spec.arrivals == "hotcold":
        row["cold_mean"] = res.cold.mean if res.cold else None
        row["cold_ci"] = res.cold.ci if res.cold else None
    row["events"] = res.events_processed
    return row


def _stability_warning(spec: ExperimentSpec, lam: float) -> None:
    if spec.policy != "reptoall" or spec.arrivals != "fixed" or lam == 0 or _heterogeneous(spec):
        return
    try:
        st = analytic.type_j_moments(spec.dist, spec.t, spec.t).m1
    except SimplexQError:
        return
    if lam * st >= 1:
        print(f"warning: lambda={lam} exceeds the fastest-type capacity; the run may not be stable",
              file=sys.stderr)


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def render(rows: list[dict[str, Any]], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{k: _json_value(v) for k, v in r.items()} for r in rows], indent=1) + "\n"
    header: list[str] = []
    for r in rows:
        for key in r:
            if key not in header:
                header.append(key)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r.get(h)) for h in header])
    return buf.getvalue()


def emit(rows: list[dict[str, Any]], spec: ExperimentSpec, stdout=None) -> None:
    text = render(rows, spec.format)
    if spec.output:
        with open(spec.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        (stdout or sys.stdout).write(text)


def run_spec(spec: ExperimentSpec, stdout=None) -> int:
    rows: list[dict[str, Any]] = []
    code = EXIT_OK
    try:
        for lam in spec.grid():
            row: dict[str, Any] = {"lambda": lam}
            if spec.command == "analytic":
                row.update(analytic_row(spec, lam))
            elif spec.command == "qbd":
                row.update(qbd_row(spec, lam))
            else:
                _stability_warning(spec, lam)
                res = run_sim(sim_config(spec, lam))
                row.update(sim_row(spec, res, full=spec.command != "compare"))
                if spec.command == "compare":
                    row.update(analytic_row(spec, lam))
            rows.append(row)
    except InstabilityError as exc:
        print(f"instability: {exc}", file=sys.stderr)
        code = EXIT_UNSTABLE
    emit(rows, spec, stdout)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        spec = parse_spec(argv)
        return run_spec(spec)
    except ConfigError as exc:
        key = f" [{exc.key}]" if exc.key else ""
        print(f"usage error{key}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SimplexQError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
