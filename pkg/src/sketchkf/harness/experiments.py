"""Monte-Carlo orchestration, aggregation and output files."""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import netmon
from ..errors import ConfigurationError
from ..rng import MONTE_CARLO_RUN, derive_seed
from ..statespace import LinearDynamicalSystem, ar1_covariance, cyclic_shift_transition, simulate
from .config import ExperimentConfig
from .methods import DIVERGENCE_CAP, FilterRun, MethodSpec, run_filter, smoothed_run

log = logging.getLogger(__name__)

SWEEP_PARAMS = ("d_over_D", "k", "tau_b")


# -- problems -----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticProblem:
    """Cyclic-shift state with AR(1) process noise; Gaussian rows scaled by ``alpha``."""

    p: int = 50
    D: int = 500
    N: int = 100
    sigma_w: float = 0.01
    q_rho: float = 0.5
    r_rho: float = 0.5
    correlated_noise: bool = True
    sigma_v2: float = 1.0
    p0: float = 0.04
    m0: tuple = ((0, 20.0), (4, -30.0))
    alpha: tuple = (0.5, 1.5)
    alpha_discrete: bool = False

    def build(self):
        p, D = self.p, self.D
        m0 = np.zeros(p)
        for i, v in self.m0:
            m0[i] = v
        Q = self.sigma_w**2 * ar1_covariance(p, self.q_rho)
        system = LinearDynamicalSystem(p, cyclic_shift_transition(p), Q, m0, self.p0 * np.eye(p))
        if self.correlated_noise:
            R = self.sigma_v2 * ar1_covariance(D, self.r_rho)
        else:
            R = np.full(D, self.sigma_v2)
        lo, hi = self.alpha

        def measurements(n, rng):
            X = rng.standard_normal((D, p))
            if self.alpha_discrete:
                a = rng.choice(np.array([lo, hi]), size=D)
            else:
                a = rng.uniform(lo, hi, size=D)
            return X * a[:, None], R

        return system, measurements, D


@dataclass(frozen=True)
class NetworkProblem:
    """Traffic or link-cost tracking on a Kronecker topology."""

    kind: str
    N: int = 100
    network: netmon.NetworkConfig = netmon.NetworkConfig()
    traffic: netmon.TrafficModel = netmon.TrafficModel()
    linkcost: netmon.LinkCostModel = netmon.LinkCostModel()

    def build(self):
        net = _network(self.network)
        if self.kind == "traffic":
            system, meas = netmon.traffic_system(net, self.traffic)
            D = net.routing.matrix.shape[0]
        elif self.kind == "linkcost":
            system, meas = netmon.linkcost_system(net, self.linkcost)
            D = net.routing.matrix.shape[1]
        else:
            raise ConfigurationError(f"unknown network problem {self.kind!r}")
        return system, meas, D


@functools.lru_cache(maxsize=8)
def _network(config: netmon.NetworkConfig) -> netmon.Network:
    return netmon.build_network(config)


@functools.lru_cache(maxsize=8)
def _built(problem):
    return problem.build()


def problem_from_config(config: ExperimentConfig):
    m = config.model
    if m.kind == "synthetic":
        return SyntheticProblem(
            m.p, m.D, m.N, m.sigma_w, m.q_rho, m.r_rho, m.correlated_noise, m.sigma_v2, m.p0,
            tuple((int(i), float(v)) for i, v in m.m0), (m.alpha_low, m.alpha_high), m.alpha_discrete,
        )
    return NetworkProblem(
        m.kind, m.N,
        netmon.NetworkConfig(**m.network.model_dump()),
        netmon.TrafficModel(**m.traffic.model_dump()),
        netmon.LinkCostModel(**m.linkcost.model_dump()),
    )


def _horizon(problem) -> int:
    return problem.N


# -- Monte Carlo --------------------------------------------------------------


def run_once(problem, specs: Sequence[MethodSpec], d: int, seed: int, run: int, timing: bool = False) -> list:
    """All methods on one simulated trajectory (common random numbers)."""
    system, meas, D = _built(problem)
    run_seed = derive_seed(seed, MONTE_CARLO_RUN, run)
    traj = simulate(system, meas, _horizon(problem), run_seed)
    out = []
    for spec in specs:
        res = run_filter(system, traj, spec, d, run_seed, timing=timing)
        if spec.tau_b is not None:
            sm = smoothed_run(res, traj, spec.tau_b)
            res.archive = None
            out.extend([res, sm])
        else:
            res.archive = None
            out.append(res)
    return out


def _run_task(args):
    return run_once(*args)


def monte_carlo(
    problem,
    specs: Sequence[MethodSpec],
    d: int,
    runs: int,
    seed: int,
    *,
    threads: int = 1,
    timing: bool = False,
) -> dict:
    """``{label: [FilterRun per run]}``, merged in run order whatever the pool size."""
    if timing and threads > 1:
        log.warning("timing requested: running single-threaded")
        threads = 1
    tasks = [(problem, tuple(specs), d, seed, r, timing) for r in range(runs)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_run = list(pool.map(_run_task, tasks))
    else:
        per_run = [_run_task(t) for t in tasks]
    merged: dict = {}
    for results in per_run:
        for res in results:
            merged.setdefault(res.label, []).append(res)
    return merged


def budget_rows(problem, d_over_D: float) -> tuple:
    D = _built(problem)[2]
    return max(1, int(round(d_over_D * D))), D


# -- metrics ------------------------------------------------------------------


@dataclass
class MethodStats:
    rmse: np.ndarray
    mse: np.ndarray
    runtime_ns: np.ndarray
    updates: np.ndarray
    diverged_runs: int

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.rmse))

    @property
    def rmse_stderr(self) -> float:
        n = self.rmse.size
        return float(np.std(self.rmse, ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    @property
    def runtime_mean_ns(self) -> float:
        return float(np.mean(self.runtime_ns))


@dataclass
class RunMetrics:
    """Aggregates per method label, in configuration order."""

    methods: dict
    d: int
    D: int
    N: int
    config: dict = field(default_factory=dict)

    def __getitem__(self, label: str) -> MethodStats:
        return self.methods[label]


def aggregate(results: dict, d: int, D: int, N: int, config: dict | None = None) -> RunMetrics:
    stats = {}
    for label, runs in results.items():
        rmse = np.array([min(r.rmse, math.sqrt(DIVERGENCE_CAP)) for r in runs])
        stats[label] = MethodStats(
            rmse=rmse,
            mse=np.mean([r.mse for r in runs], axis=0),
            runtime_ns=np.mean([r.runtime_ns for r in runs], axis=0),
            updates=np.mean([r.updates for r in runs], axis=0),
            diverged_runs=sum(r.diverged for r in runs),
        )
    return RunMetrics(stats, d, D, N, config or {})


def run_experiment(config: ExperimentConfig, out_dir=None) -> RunMetrics:
    """Simulate, filter with every configured method, aggregate and write outputs."""
    exp = config.experiment
    specs = config.method_specs()
    problem = problem_from_config(config)
    d, D = budget_rows(problem, exp.d_over_D)
    if any(s.kind == "full" for s in specs) and exp.d_over_D < 1:
        log.warning("method 'full' ignores the measurement budget")
    results = monte_carlo(problem, specs, d, exp.runs, exp.seed, threads=exp.threads, timing=exp.timing)
    metrics = aggregate(results, d, D, _horizon(problem), config.model_dump(mode="json"))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_series(metrics, out / "series.csv")
        write_summary(metrics, out / "summary.json")
        if isinstance(problem, NetworkProblem) and exp.export_network:
            net = _network(problem.network)
            netmon.write_edge_list(net.graph, out / "graph.edges")
            netmon.write_routing_triplets(net.routing, out / "routing.csv")
    return metrics


def _fmt(x: float) -> str:
    return repr(float(x))


def write_series(metrics: RunMetrics, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "method", "mse", "runtime_ns", "updates", "diverged"])
        for label, st in metrics.methods.items():
            flag = int(st.diverged_runs > 0)
            for n in range(metrics.N):
                w.writerow([n + 1, label, _fmt(st.mse[n]), int(round(st.runtime_ns[n])), _fmt(st.updates[n]), flag])


def summary_dict(metrics: RunMetrics) -> dict:
    return {
        "config": metrics.config,
        "seed": metrics.config.get("experiment", {}).get("seed"),
        "d": metrics.d,
        "D": metrics.D,
        "N": metrics.N,
        "methods": {
            label: {
                "rmse_mean": st.rmse_mean,
                "rmse_stderr": st.rmse_stderr,
                "runs": int(st.rmse.size),
                "diverged_runs": int(st.diverged_runs),
                "diverged": bool(st.diverged_runs > 0),
                "updates_mean": float(np.mean(st.updates)),
                "runtime_ns_mean": st.runtime_mean_ns,
            }
            for label, st in metrics.methods.items()
        },
    }


def write_summary(metrics: RunMetrics, path) -> None:
    with open(path, "w") as fh:
        json.dump(summary_dict(metrics), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- sweeps -------------------------------------------------------------------


def _apply(config: ExperimentConfig, param: str, value: float) -> ExperimentConfig:
    if param == "d_over_D":
        return config.with_updates(experiment={"d_over_D": float(value)})
    targets = {
        "k": [n for n, m in config.method.items() if (m.kind or n) == "us"],
        "tau_b": [n for n, m in config.method.items() if (m.kind or n) in ("ac", "us")],
    }[param]
    if not targets:
        raise ConfigurationError(f"no configured method takes parameter {param!r}")
    val = int(value) if param == "k" else float(value)
    return config.with_updates(method={n: {param: val} for n in targets})


@dataclass(frozen=True)
class SweepRow:
    value: float
    method: str
    rmse_mean: float
    rmse_stderr: float
    runtime_ns: float
    diverged: bool


def sweep(config: ExperimentConfig, param: str, values: Sequence[float], out_dir=None) -> list:
    """``run_experiment`` once per value of ``param``; one row per (value, method)."""
    if param not in SWEEP_PARAMS:
        raise ConfigurationError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}")
    if len(values) == 0:
        raise ConfigurationError("sweep needs at least one value")
    rows = []
    for v in values:
        metrics = run_experiment(_apply(config, param, v))
        for label, st in metrics.methods.items():
            rows.append(SweepRow(float(v), label, st.rmse_mean, st.rmse_stderr, st.runtime_mean_ns, st.diverged_runs > 0))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([param, "method", "rmse_mean", "rmse_stderr", "runtime_ns", "diverged"])
            for r in rows:
                w.writerow([_fmt(r.value), r.method, _fmt(r.rmse_mean), _fmt(r.rmse_stderr), int(round(r.runtime_ns)), int(r.diverged)])
        with open(out / "sweep.json", "w") as fh:
            json.dump({"param": param, "values": [float(v) for v in values], "config": config.model_dump(mode="json"),
                       "rows": [r.__dict__ for r in rows]}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rows
