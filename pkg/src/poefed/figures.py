"""Static matplotlib renderings of a run: scene layout and forensic spread.

Figures are written straight to files (Agg backend); nothing here animates
or opens a window.
"""

from __future__ import annotations

import statistics

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import ScenarioConfig, SimOutcome, build_world
from .ledger import DiscrepancyReport
from .world import dsrc_reachable, scene_position


def _role_groups(cfg: ScenarioConfig, outcome: SimOutcome):
    world = build_world(cfg.world)
    colliding = set(cfg.accident.colliding)
    witnesses = set()
    for c in sorted(colliding):
        witnesses |= dsrc_reachable(world.position_of(c), world)
    witnesses -= colliding
    members = (set(outcome.federation.members)
               if outcome.federation is not None else set())
    groups: dict[str, list] = {
        "accident": [], "witness": [], "verifier": [], "other": []}
    for spec in cfg.world.vehicles:
        pos = (spec.x, spec.y)
        if spec.vehicle_id in colliding:
            groups["accident"].append(pos)
        elif spec.vehicle_id in witnesses:
            groups["witness"].append(pos)
        elif spec.vehicle_id in members:
            groups["verifier"].append(pos)
        else:
            groups["other"].append(pos)
    return world, groups


def render_scene(cfg: ScenarioConfig, outcome: SimOutcome, path: str) -> str:
    """Scatter plot of the world at accident time, colored by role, with the
    short-range radio disk drawn around the scene."""
    world, groups = _role_groups(cfg, outcome)
    scene = scene_position(set(cfg.accident.colliding), world)

    fig, ax = plt.subplots(figsize=(7, 6))
    styles = {
        "accident": dict(c="tab:red", marker="X", s=120, zorder=5),
        "witness": dict(c="tab:orange", marker="o", s=60, zorder=4),
        "verifier": dict(c="tab:green", marker="s", s=60, zorder=4),
        "other": dict(c="tab:gray", marker=".", s=35, zorder=3),
    }
    for name, points in groups.items():
        if points:
            xs, ys = zip(*points)
            ax.scatter(xs, ys, label=f"{name} ({len(points)})",
                       **styles[name])
    sx = [s.position.x for s in cfg.world.stations]
    sy = [s.position.y for s in cfg.world.stations]
    ax.scatter(sx, sy, c="black", marker="^", s=90, label="base station",
               zorder=5)
    ax.add_patch(plt.Circle((scene.x, scene.y), cfg.world.dsrc_range,
                            fill=False, ls="--", color="tab:red", alpha=0.6))
    ax.annotate("scene", (scene.x, scene.y), textcoords="offset points",
                xytext=(8, 8), color="tab:red")
    ax.set_title(f"accident {outcome.accident_id.hex()[:8]} "
                 f"[{outcome.classification.value}]")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_discrepancy(report: DiscrepancyReport, path: str) -> str:
    """Self-reported speed vs witness estimates per collided vehicle, with
    the tolerance band around the witness median."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, comp in enumerate(report.comparisons):
        if comp.witness_estimates:
            median = statistics.median(comp.witness_estimates)
            ax.axhspan(median - report.tolerance, median + report.tolerance,
                       xmin=(i + 0.1) / len(report.comparisons),
                       xmax=(i + 0.9) / len(report.comparisons),
                       color="tab:green", alpha=0.15)
            ax.scatter([i] * len(comp.witness_estimates),
                       comp.witness_estimates, c="tab:blue", marker="o",
                       s=50, zorder=4,
                       label="witness estimate" if i == 0 else None)
        color = "tab:red" if comp.flagged else "tab:green"
        ax.scatter([i], [comp.self_reported], c=color, marker="X", s=120,
                   zorder=5, label="self-reported" if i == 0 else None)
        if comp.flagged:
            ax.annotate("flagged", (i, comp.self_reported),
                        textcoords="offset points", xytext=(10, -4),
                        color="tab:red", fontsize=9)
    ax.set_xticks(range(len(report.comparisons)))
    ax.set_xticklabels([f"vehicle {c.subject}" for c in report.comparisons])
    ax.set_ylabel("speed (m/s)")
    ax.set_title(f"accident {report.accident_id.hex()[:8]} "
                 f"speed review (tolerance {report.tolerance:g} m/s)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
