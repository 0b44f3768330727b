"""Experiment runners and artifact export."""

from .export import export_artifacts, load_report, render_svg, solve_summary
from .montecarlo import (
    MonteCarloReport,
    cluster_trajectories,
    pairwise_min_distance,
    passing_order,
    run_monte_carlo,
    sample_seed,
    sample_sinusoidal_strategy,
)
from .receding import RecedingHorizonLog, execute_window, reintegrate, run_receding_horizon

__all__ = [
    "MonteCarloReport",
    "RecedingHorizonLog",
    "cluster_trajectories",
    "execute_window",
    "export_artifacts",
    "load_report",
    "pairwise_min_distance",
    "passing_order",
    "reintegrate",
    "render_svg",
    "run_monte_carlo",
    "run_receding_horizon",
    "sample_seed",
    "sample_sinusoidal_strategy",
    "solve_summary",
]
