"""Monte Carlo study over random sinusoidal initial strategies."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dynamics import MultiPlayerSystem, TimeDiscretization
from ..errors import DegenerateGeometryError, DivergenceError, InvalidArgumentError, SolveFailure
from ..scenarios import ScenarioSpec, build_problem
from ..solver import SolverConfig, ilq_solve

log = logging.getLogger(__name__)


def sample_seed(master_seed: int, sample_id: int, attempt: int = 0) -> int:
    """Per-sample seed split off the master seed by (sample, attempt) counters."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(sample_id, attempt))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sample_sinusoidal_strategy(
    seed: int,
    player: int,
    discretization: TimeDiscretization,
    control_dim: int,
    amplitude: tuple[float, float] = (0.0, 1.0),
    frequency: tuple[float, float] = (0.0, 0.5),
    phase: tuple[float, float] = (0.0, 2 * math.pi),
) -> np.ndarray:
    """Open-loop controls a*sin(2 pi f t + phi) per channel, shape (K, control_dim)."""
    for name, (lo, hi) in (("amplitude", amplitude), ("frequency", frequency), ("phase", phase)):
        if lo > hi:
            raise InvalidArgumentError(f"{name} range is reversed: ({lo}, {hi})")
    if amplitude[0] < 0:
        raise InvalidArgumentError("amplitudes must be nonnegative")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(player,))))
    ts = discretization.times()
    out = np.empty((ts.size, control_dim))
    for c in range(control_dim):
        a = rng.uniform(*amplitude)
        f = rng.uniform(*frequency)
        phi = rng.uniform(*phase)
        out[:, c] = a * np.sin(2 * np.pi * f * ts + phi)
    return out


def pairwise_min_distance(system: MultiPlayerSystem, xs: np.ndarray) -> float:
    best = math.inf
    for i in range(system.num_players):
        for j in range(i + 1, system.num_players):
            d = xs[:, list(system.position_indices(i))] - xs[:, list(system.position_indices(j))]
            best = min(best, float(np.min(np.hypot(d[:, 0], d[:, 1]))))
    return best


def passing_order(system: MultiPlayerSystem, xs: np.ndarray) -> str:
    """Side on which each pair of players passes, one mark per pair (i < j).

    '+' when player i is on the +y side as their x coordinates cross, '-'
    when it is on the -y side, '=' when the pair never swaps x order.
    """
    marks = []
    for i in range(system.num_players):
        for j in range(i + 1, system.num_players):
            xi, yi = system.position_indices(i)
            xj, yj = system.position_indices(j)
            gap = xs[:, xi] - xs[:, xj]
            if np.sign(gap[0]) == np.sign(gap[-1]):
                marks.append("=")
                continue
            k = int(np.argmin(np.abs(gap)))
            marks.append("+" if xs[k, yi] > xs[k, yj] else "-")
    return "".join(marks)


@dataclass
class SampleRecord:
    sample_id: int
    seed: int
    attempt: int
    converged: bool
    iterations: int
    costs: list  # per iteration, per player
    trajectory: np.ndarray | None
    min_distance: float | None = None
    error: str | None = None
    max_alpha: list = field(default_factory=list)  # per iteration


@dataclass
class Cluster:
    members: list
    representative: int
    passing_order: str = ""


@dataclass
class MonteCarloReport:
    scenario: str
    num_samples: int
    master_seed: int
    samples: list = field(default_factory=list)
    clusters: list = field(default_factory=list)
    outliers: list = field(default_factory=list)
    failed: list = field(default_factory=list)
    resample_count: int = 0
    cost_stats: list = field(default_factory=list)
    iteration_histogram: dict = field(default_factory=dict)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        return [s.seed for s in self.samples]

    @property
    def first_attempt_converged(self) -> int:
        return self.num_samples - self.resample_count

    def summary(self) -> dict:
        its = [s.iterations for s in self.samples if s.converged]
        return {
            "scenario": self.scenario,
            "num_samples": self.num_samples,
            "first_attempt_converged": self.first_attempt_converged,
            "converged": len(its),
            "resampled": self.resample_count,
            "failed": list(self.failed),
            "cluster_sizes": [len(c.members) for c in self.clusters],
            "passing_orders": [c.passing_order for c in self.clusters],
            "outliers": list(self.outliers),
            "mean_iterations": float(np.mean(its)) if its else None,
            "max_iterations": int(max(its)) if its else None,
            "iteration_histogram": dict(self.iteration_histogram),
        }

    def to_dict(self) -> dict:
        samples = []
        for s in self.samples:
            d = asdict(s)
            d["trajectory"] = None if s.trajectory is None else s.trajectory.tolist()
            samples.append(d)
        return {
            "kind": "montecarlo",
            "scenario": self.scenario,
            "num_samples": self.num_samples,
            "master_seed": self.master_seed,
            "resample_count": self.resample_count,
            "samples": samples,
            "clusters": [asdict(c) for c in self.clusters],
            "outliers": self.outliers,
            "failed": self.failed,
            "cost_stats": self.cost_stats,
            "iteration_histogram": {str(k): v for k, v in self.iteration_histogram.items()},
            "wall_time": self.wall_time,
            "config": self.config,
            "summary": self.summary(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MonteCarloReport":
        samples = []
        for s in d["samples"]:
            s = dict(s)
            s["trajectory"] = None if s["trajectory"] is None else np.asarray(s["trajectory"])
            samples.append(SampleRecord(**s))
        return cls(
            scenario=d["scenario"],
            num_samples=d["num_samples"],
            master_seed=d["master_seed"],
            samples=samples,
            clusters=[Cluster(**c) for c in d["clusters"]],
            outliers=list(d["outliers"]),
            failed=list(d["failed"]),
            resample_count=d["resample_count"],
            cost_stats=d["cost_stats"],
            iteration_histogram={int(k): v for k, v in d["iteration_histogram"].items()},
            wall_time=d.get("wall_time", 0.0),
            config=d.get("config", {}),
        )


def cluster_trajectories(
    trajectories: list[np.ndarray], distance_threshold: float, min_members: int = 1
) -> tuple[list[list[int]], list[int]]:
    """Greedy clustering by Euclidean distance between stacked state sequences.

    Each trajectory joins the first cluster whose representative (its first
    member) lies within ``distance_threshold``, otherwise it starts a new one.
    Clusters smaller than ``min_members`` are returned as outliers.
    Indices refer to positions in ``trajectories``.
    """
    if not trajectories:
        return [], []
    shape = np.shape(trajectories[0])
    for k, traj in enumerate(trajectories):
        if np.shape(traj) != shape:
            raise InvalidArgumentError(f"trajectory {k} has shape {np.shape(traj)}, expected {shape}")
    reps: list[np.ndarray] = []
    groups: list[list[int]] = []
    for k, traj in enumerate(trajectories):
        flat = np.asarray(traj, dtype=float).ravel()
        for rep, members in zip(reps, groups):
            if np.linalg.norm(flat - rep) <= distance_threshold:
                members.append(k)
                break
        else:
            reps.append(flat)
            groups.append([k])
    clusters = [g for g in groups if len(g) >= min_members]
    outliers = sorted(k for g in groups if len(g) < min_members for k in g)
    return clusters, outliers


def _initial_controls(spec: ScenarioSpec, problem, seed: int, amplitude=None):
    mc = spec.montecarlo
    amp = (mc.amplitude.low, mc.amplitude.high) if amplitude is None else amplitude
    td = problem.config.discretization
    return [
        sample_sinusoidal_strategy(
            seed, i, td, m, amp, (mc.frequency.low, mc.frequency.high), (mc.phase.low, mc.phase.high)
        )
        for i, m in enumerate(problem.system.control_dims)
    ]


def _run_sample(spec: ScenarioSpec, config: SolverConfig, sample_id: int, seed: int,
                attempt: int, amplitude=None) -> SampleRecord:
    problem = build_problem(spec)
    controls = _initial_controls(spec, problem, seed, amplitude)
    try:
        result = ilq_solve(problem.system, problem.costs, problem.x0, config, initial_controls=controls)
    except (DivergenceError, SolveFailure, DegenerateGeometryError) as exc:
        return SampleRecord(sample_id, seed, attempt, False, 0, [], None, None, f"{type(exc).__name__}: {exc}")
    xs = result.operating_point.xs
    return SampleRecord(
        sample_id=sample_id,
        seed=seed,
        attempt=attempt,
        converged=result.converged,
        iterations=result.iterations,
        costs=[list(rec.costs) for rec in result.diagnostics],
        trajectory=xs,
        min_distance=pairwise_min_distance(problem.system, xs),
        max_alpha=result.alpha_history.tolist(),
    )


def _sample_with_resample(args) -> tuple[SampleRecord, bool]:
    spec, config, sample_id, master_seed, amplitude = args
    rec = _run_sample(spec, config, sample_id, sample_seed(master_seed, sample_id, 0), 0, amplitude)
    if rec.converged:
        return rec, False
    log.info("sample %d did not converge (%s); resampling", sample_id, rec.error or "iteration cap")
    return _run_sample(spec, config, sample_id, sample_seed(master_seed, sample_id, 1), 1, amplitude), True


def _cost_statistics(records: list[SampleRecord]) -> dict:
    """Mean and standard deviation of each player's cost per iteration.

    Shorter runs are padded with their final (converged) costs.
    """
    length = max(len(r.costs) for r in records)
    stacked = np.array([r.costs + [r.costs[-1]] * (length - len(r.costs)) for r in records])
    return {"mean": stacked.mean(axis=0).tolist(), "std": stacked.std(axis=0).tolist()}


def _histogram(iterations: list[int], cap: int, width: int = 10) -> dict[int, int]:
    edges = range(0, cap + width, width)
    hist = {e: 0 for e in edges}
    for it in iterations:
        hist[(it // width) * width] += 1
    return {k: v for k, v in hist.items() if k <= cap}


def run_monte_carlo(
    spec: ScenarioSpec,
    num_samples: int,
    seed: int,
    config: SolverConfig | None = None,
    workers: int = 1,
    amplitude: tuple[float, float] | None = None,
) -> MonteCarloReport:
    """Solve from ``num_samples`` random initializations and cluster the results.

    Per-sample seeds derive from ``seed`` alone, and results are merged in
    sample order, so the report is identical for any ``workers`` count.
    """
    if num_samples < 1:
        raise InvalidArgumentError("num_samples must be at least 1")
    problem = build_problem(spec)
    config = config or problem.config
    start = time.perf_counter()
    jobs = [(spec, config, k, seed, amplitude) for k in range(num_samples)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_sample_with_resample, jobs))
    else:
        outcomes = [_sample_with_resample(job) for job in jobs]

    report = MonteCarloReport(spec.name, num_samples, seed, config=spec.model_dump(mode="json"))
    report.samples = [rec for rec, _ in outcomes]
    report.resample_count = sum(resampled for _, resampled in outcomes)
    converged = [r for r in report.samples if r.converged]
    report.failed = [r.sample_id for r in report.samples if not r.converged]

    mc = spec.montecarlo
    # a minimum membership larger than the whole study would leave nothing to cluster
    groups, outlier_pos = cluster_trajectories(
        [r.trajectory for r in converged], mc.cluster_threshold, min(mc.min_cluster_size, num_samples)
    )
    for members in groups:
        ids = [converged[k].sample_id for k in members]
        rep = converged[members[0]]
        report.clusters.append(Cluster(ids, rep.sample_id, passing_order(problem.system, rep.trajectory)))
        report.cost_stats.append(_cost_statistics([converged[k] for k in members]))
    report.clusters.sort(key=lambda c: -len(c.members))
    order = {c.representative: k for k, c in enumerate(report.clusters)}
    report.cost_stats = [s for _, s in sorted(
        zip([order[converged[g[0]].sample_id] for g in groups], report.cost_stats))]
    report.outliers = [converged[k].sample_id for k in outlier_pos]
    report.iteration_histogram = _histogram([r.iterations for r in converged], config.max_iterations)
    report.wall_time = time.perf_counter() - start
    return report
