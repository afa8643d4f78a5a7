"""Geometric world model: vehicle positions, base stations, cell assignment,
and DSRC reachability.

Cells are Voronoi regions of the base stations (nearest station wins, ties
to the smallest cell id). DSRC reachability is an inclusive disk of fixed
radius; no fading or obstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from .crypto import VehicleId
from .errors import NoBaseStations, UnknownVehicle

CellId = int


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def distance_to(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class BaseStation:
    cell_id: CellId
    position: Position


@dataclass(frozen=True)
class VehicleSite:
    position: Position
    velocity: tuple[float, float]  # (vx, vy) in m/s


@dataclass(frozen=True)
class WorldState:
    vehicles: Mapping[VehicleId, VehicleSite]
    base_stations: tuple[BaseStation, ...]
    dsrc_range: float

    def __post_init__(self):
        if self.dsrc_range <= 0:
            raise ValueError("dsrc_range must be positive")
        if not self.base_stations:
            raise ValueError("world needs at least one base station")
        ids = [s.cell_id for s in self.base_stations]
        if len(set(ids)) != len(ids):
            raise ValueError("base station cell ids must be unique")
        object.__setattr__(self, "vehicles", dict(self.vehicles))

    def position_of(self, vehicle_id: VehicleId) -> Position:
        try:
            return self.vehicles[vehicle_id].position
        except KeyError:
            raise UnknownVehicle(f"vehicle {vehicle_id} not in world") from None


def assign_cell(p: Position, stations: tuple[BaseStation, ...] | list[BaseStation]) -> CellId:
    """Id of the nearest station by Euclidean distance, ties to smallest id."""
    if not stations:
        raise NoBaseStations("cell assignment requires at least one base station")
    best = min(stations, key=lambda s: (p.distance_to(s.position), s.cell_id))
    return best.cell_id


def vehicular_network(accident_ids: set[VehicleId], world: WorldState) -> set[VehicleId]:
    """All vehicles whose cell equals the cell of any accident vehicle.

    Union over the accident vehicles' cells; always contains the accident
    vehicles themselves. A vehicle in two accident vehicles' different cells
    participates once (set semantics).
    """
    accident_cells = set()
    for vid in sorted(accident_ids):
        accident_cells.add(assign_cell(world.position_of(vid), world.base_stations))
    members = set()
    for vid, site in world.vehicles.items():
        if assign_cell(site.position, world.base_stations) in accident_cells:
            members.add(vid)
    return members


def dsrc_reachable(origin: Position, world: WorldState) -> set[VehicleId]:
    """Vehicles within (inclusive) DSRC range of origin.

    Includes any accident vehicles at the origin itself; callers subtract
    those to obtain the witness set.
    """
    return {
        vid
        for vid, site in world.vehicles.items()
        if origin.distance_to(site.position) <= world.dsrc_range
    }


def scene_position(colliding: set[VehicleId], world: WorldState) -> Position:
    """Accident scene: centroid of the colliding vehicles' positions."""
    if not colliding:
        raise ValueError("scene requires at least one colliding vehicle")
    pts = [world.position_of(v) for v in sorted(colliding)]
    return Position(
        x=sum(p.x for p in pts) / len(pts),
        y=sum(p.y for p in pts) / len(pts),
    )
