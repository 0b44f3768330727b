"""Trajectory CSV, JSON run report and top-down SVG plot."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from xml.etree import ElementTree as ET

import numpy as np

from ..lqgame import control_slices
from ..scenarios import build_problem
from ..scenarios.schema import ScenarioSpec
from ..solver import SolveResult
from .montecarlo import MonteCarloReport
from .receding import RecedingHorizonLog

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def solve_summary(result: SolveResult) -> dict:
    diag = result.diagnostics
    return {
        "converged": result.converged,
        "iterations": result.iterations,
        "final_costs": list(result.final_costs),
        "final_max_alpha": diag[-1].max_alpha,
        "total_time": result.total_time,
        "mean_iteration_time": result.total_time / len(diag),
    }


def _config_echo(config) -> dict:
    d = asdict(config)
    d["discretization"] = {"dt": config.discretization.dt, "horizon": config.discretization.horizon}
    return d


def _player_names(spec: ScenarioSpec | None, count: int) -> list[str]:
    if spec is not None:
        return [p.name for p in spec.players]
    return [f"player{i}" for i in range(count)]


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def trajectory_rows(system, times, xs, us, names):
    """Header and rows: time, then each player's state and control components."""
    header = ["time"]
    for i, name in enumerate(names):
        sl = system.state_slices[i]
        header += [f"{name}.x{k}" for k in range(sl.stop - sl.start)]
        header += [f"{name}.u{k}" for k in range(system.control_dims[i])]
    rows = []
    for k, t in enumerate(times):
        row = [float(t)]
        for i in range(system.num_players):
            row += xs[k, system.state_slices[i]].tolist() + list(np.atleast_1d(us[i][k]))
        rows.append(row)
    return header, rows


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_json_ready(doc), fh, indent=1)


def render_svg(paths_per_player, spec: ScenarioSpec | None = None, size: int = 600) -> str:
    """Top-down plot.  ``paths_per_player`` is a list (per player) of (K, 2) arrays
    or of lists of such arrays; every array becomes one <path>."""
    groups = [[p] if isinstance(p, np.ndarray) else list(p) for p in paths_per_player]
    pts = [np.asarray(a) for g in groups for a in g]
    goals = []
    lanes = []
    d_hall = None
    if spec is not None:
        goals = [p.goal for p in spec.players if p.goal is not None]
        lanes = [np.asarray(v) for v in spec.geometry.lanes.values()]
        d_hall = spec.geometry.d_hall
    extent = np.vstack(pts + [np.asarray(goals).reshape(-1, 2)])
    lo, hi = extent.min(axis=0), extent.max(axis=0)
    if d_hall is not None:
        lo[1], hi[1] = min(lo[1], -d_hall), max(hi[1], d_hall)
    pad = 0.1 * max(float(np.max(hi - lo)), 1.0)
    lo, hi = lo - pad, hi + pad
    scale = size / float(np.max(hi - lo))
    width, height = (hi - lo) * scale

    def screen(p):
        p = np.asarray(p, dtype=float)
        return (p[..., 0] - lo[0]) * scale, (hi[1] - p[..., 1]) * scale

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=f"{width:.0f}", height=f"{height:.0f}")
    geometry = ET.SubElement(svg, "g", stroke="#888", fill="none")
    if d_hall is not None:
        for y in (-d_hall, d_hall):
            (x1, x2), (y1, y2) = screen(np.array([[lo[0], y], [hi[0], y]]))
            ET.SubElement(geometry, "line", x1=f"{x1:.2f}", y1=f"{y1:.2f}", x2=f"{x2:.2f}", y2=f"{y2:.2f}")
    for lane in lanes:
        sx, sy = screen(lane)
        ET.SubElement(geometry, "polyline", points=" ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx, sy)),
                      **{"stroke-dasharray": "4 4"})
    for i, group in enumerate(groups):
        color = COLORS[i % len(COLORS)]
        for arr in group:
            sx, sy = screen(arr)
            d = "M " + " L ".join(f"{a:.2f} {b:.2f}" for a, b in zip(sx, sy))
            ET.SubElement(svg, "path", d=d, stroke=color, fill="none", **{"stroke-width": "2"})
    for i, g in enumerate(goals):
        cx, cy = screen(g)
        ET.SubElement(svg, "circle", cx=f"{cx:.2f}", cy=f"{cy:.2f}", r="5",
                      fill=COLORS[i % len(COLORS)])
    return ET.tostring(svg, encoding="unicode")


def _positions(system, xs, player):
    return xs[:, list(system.position_indices(player))]


def export_artifacts(obj, output_dir, spec: ScenarioSpec | None = None, config=None) -> dict[str, Path]:
    """Write trajectory.csv, report.json and trajectory.svg; returns their paths.

    ``obj`` is a SolveResult (``spec`` required), a MonteCarloReport or a
    RecedingHorizonLog (``spec`` required for the latter two's plots).
    ``config`` is the solver configuration to echo when it differs from the
    scenario's own.
    """
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    files = {"csv": out / "trajectory.csv", "report": out / "report.json", "svg": out / "trajectory.svg"}
    problem = build_problem(spec) if spec is not None else None
    system = problem.system if problem is not None else None
    spec_doc = spec.model_dump(mode="json") if spec is not None else None

    if isinstance(obj, SolveResult):
        if system is None:
            raise ValueError("exporting a single solve needs its scenario")
        op = obj.operating_point
        names = _player_names(spec, system.num_players)
        times = np.round(np.arange(op.num_steps) * spec.time.dt, 12)
        header, rows = trajectory_rows(system, times, op.xs, op.us, names)
        doc = {
            "kind": "solve",
            "scenario": spec.name,
            "config": _config_echo(config or problem.config),
            "converged": obj.converged,
            "iterations": obj.iterations,
            "eta": obj.eta,
            "diagnostics": [asdict(r) for r in obj.diagnostics],
            "timings": {"total": obj.total_time, "per_iteration": [r.wall_time for r in obj.diagnostics]},
            "summary": solve_summary(obj),
            "spec": spec_doc,
        }
        paths = [_positions(system, op.xs, i) for i in range(system.num_players)]
    elif isinstance(obj, MonteCarloReport):
        doc = {"kind": "montecarlo", **obj.to_dict()}
        header, rows = ["sample_id", "seed", "attempt", "converged", "iterations", "min_distance", "cluster"], []
        cluster_of = {m: c for c, cl in enumerate(obj.clusters) for m in cl.members}
        for s in obj.samples:
            label = cluster_of.get(s.sample_id, "outlier" if s.sample_id in obj.outliers else "")
            rows.append([s.sample_id, s.seed, s.attempt, s.converged, s.iterations, s.min_distance, label])
        by_id = {s.sample_id: s for s in obj.samples}
        paths = []
        if system is not None:
            reps = [by_id[c.representative].trajectory for c in obj.clusters]
            paths = [[_positions(system, xs, i) for xs in reps] for i in range(system.num_players)]
    elif isinstance(obj, RecedingHorizonLog):
        doc = {"kind": "receding", **obj.to_dict(), "spec": spec_doc}
        paths = []
        if system is not None:
            names = _player_names(spec, system.num_players)
            # one row per executed segment: its start time, start state and held control
            starts = np.array([s.state for s in obj.segments])
            controls = np.array([s.controls for s in obj.segments])
            us = [controls[:, s] for s in control_slices(system.control_dims)]
            header, rows = trajectory_rows(system, obj.times[:-1], starts, us, names)
            paths = [_positions(system, obj.states, i) for i in range(system.num_players)]
        else:
            header, rows = ["time"], [[t] for t in obj.times]
    else:
        raise TypeError(f"cannot export {type(obj).__name__}")

    try:
        _write_csv(files["csv"], header, rows)
        _write_json(files["report"], doc)
        if paths:
            files["svg"].write_text(render_svg(paths, spec))
        else:
            del files["svg"]
    except OSError as exc:
        raise OSError(f"writing artifacts to {out} failed: {exc}") from exc
    return files


def load_report(path):
    """Re-read report.json: a MonteCarloReport, RecedingHorizonLog or plain dict."""
    with open(path) as fh:
        doc = json.load(fh)
    kind = doc.get("kind")
    if kind == "montecarlo":
        return MonteCarloReport.from_dict(doc)
    if kind == "receding":
        return RecedingHorizonLog.from_dict(doc)
    return doc
