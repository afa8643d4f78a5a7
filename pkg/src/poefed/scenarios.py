"""Shipped example scenarios, one per documented behavior.

Each builder returns the plain-dict form of a scenario so the same source
feeds both the JSON files under scenarios/ and the test suite. Run
`python -m poefed.scenarios [dir]` to (re)write the files.
"""

from __future__ import annotations

import json
import os
import random
import sys

from .harness import ScenarioConfig, parse_scenario

STATION = {"cell_id": 0, "x": 0.0, "y": 0.0}


def _vehicle(vid: int, x: float, y: float, **extra) -> dict:
    return {"id": vid, "x": x, "y": y, **extra}


def _colliding_pair() -> list[dict]:
    return [
        _vehicle(1, -5.0, 0.0),
        _vehicle(2, 5.0, 0.0),
    ]


def _witness_trio(observed: dict[int, dict] | None = None) -> list[dict]:
    obs = observed or {}
    return [
        _vehicle(3, 50.0, 30.0, **obs.get(3, {})),
        _vehicle(4, -60.0, 40.0, **obs.get(4, {})),
        _vehicle(5, 80.0, -50.0, **obs.get(5, {})),
    ]


def _community_six(reputations=(40, 50, 60, 70, 80, 90)) -> list[dict]:
    spots = [(350.0, 80.0), (420.0, -60.0), (480.0, 40.0),
             (540.0, -30.0), (600.0, 70.0), (650.0, -80.0)]
    return [
        _vehicle(10 + i, x, y, reputation=float(rep))
        for i, ((x, y), rep) in enumerate(zip(spots, reputations))
    ]


def _out_of_range_pair() -> list[dict]:
    # registered but low-reputation bystanders beyond short-range radio;
    # the fake-witness relay targets these
    return [
        _vehicle(30, 500.0, 200.0, reputation=10.0),
        _vehicle(31, 520.0, -150.0, reputation=10.0),
    ]


def fig2_normal() -> dict:
    """Reference layout: two collided vehicles, three witnesses in radio
    range, six eligible community vehicles in the same cell."""
    return {
        "seed": 42,
        "world": {
            "dsrc_range": 300.0,
            "base_stations": [STATION],
            "vehicles": (_colliding_pair() + _witness_trio()
                         + _community_six() + _out_of_range_pair()),
        },
        "accident": {"colliding": [1, 2], "time": 1000},
        "protocol": {"m": 4},
    }


def extreme_1() -> dict:
    """Empty road: the collided pair is alone, so the record stays
    unconfirmed with only their own recorder data."""
    return {
        "seed": 42,
        "world": {
            "dsrc_range": 300.0,
            "base_stations": [STATION],
            "vehicles": _colliding_pair(),
        },
        "accident": {"colliding": [1, 2], "time": 1000},
        "protocol": {"m": 4},
    }


def extreme_2() -> dict:
    """Nobody within radio range, but the cell has verifier candidates: the
    block is built from the collided vehicles' own event data."""
    return {
        "seed": 42,
        "world": {
            "dsrc_range": 300.0,
            "base_stations": [STATION],
            "vehicles": _colliding_pair() + _community_six(),
        },
        "accident": {"colliding": [1, 2], "time": 1000},
        "protocol": {"m": 4},
    }


def extreme_3() -> dict:
    """Witnesses reply but every community vehicle sits below the reputation
    floor, so no federation forms and the events stay unconfirmed."""
    return {
        "seed": 42,
        "world": {
            "dsrc_range": 300.0,
            "base_stations": [STATION],
            "vehicles": (_colliding_pair() + _witness_trio()
                         + _community_six(reputations=(5, 5, 5, 5, 5, 5))),
        },
        "accident": {"colliding": [1, 2], "time": 1000},
        "protocol": {"m": 4},
    }


def attack_tamper() -> dict:
    """A witness inflates its recorded speeds after signing; the stale digest
    gives it away."""
    base = fig2_normal()
    base["attacks"] = [
        {"kind": "tamper_event", "attacker": 3, "field": "speed",
         "delta": 5.0},
    ]
    return base


def attack_fake_witness() -> dict:
    """A real witness relays the generation request to two distant vehicles;
    their replies land outside the reply window."""
    base = fig2_normal()
    base["attacks"] = [
        {"kind": "fake_witness_relay", "relayer": 3,
         "fake_witnesses": [30, 31], "relay_delay_ms": 600},
    ]
    return base


def attack_collusion() -> dict:
    """Four of five verifiers approve a tampered event: enough for both the
    per-event majority and the signing threshold, so the forgery lands."""
    spots = [(350.0, 80.0), (420.0, -60.0), (480.0, 40.0),
             (540.0, -30.0), (600.0, 70.0)]
    community = [
        _vehicle(20 + i, x, y, reputation=float(50 + 10 * i))
        for i, (x, y) in enumerate(spots)
    ]
    return {
        "seed": 7,
        "world": {
            "dsrc_range": 300.0,
            "base_stations": [STATION],
            "vehicles": (_colliding_pair()
                         + [_vehicle(3, 50.0, 30.0)] + community),
        },
        "accident": {"colliding": [1, 2], "time": 1000},
        "protocol": {"m": 5},
        "attacks": [
            {"kind": "tamper_event", "attacker": 3, "field": "speed",
             "delta": 5.0},
            {"kind": "colluding_verifiers", "members": [20, 21, 22, 23],
             "behavior": "approve_tampered"},
        ],
    }


def forensics_speed() -> dict:
    """One collided vehicle under-reports its speed against three witness
    estimates clustered near the true value."""
    observed = {
        3: {"observed_speeds": {"1": 13.4, "2": 13.4}},
        4: {"observed_speeds": {"1": 13.4, "2": 13.0}},
        5: {"observed_speeds": {"1": 13.4, "2": 13.9}},
    }
    vehicles = (
        [_vehicle(1, -5.0, 0.0, vx=13.4),
         _vehicle(2, 5.0, 0.0, vx=13.4, self_speed=8.9)]
        + _witness_trio(observed) + _community_six()
    )
    return {
        "seed": 42,
        "world": {
            "dsrc_range": 300.0,
            "base_stations": [STATION],
            "vehicles": vehicles,
        },
        "accident": {"colliding": [1, 2], "time": 1000},
        "protocol": {"m": 4},
    }


SCENARIOS = {
    "fig2_normal": fig2_normal,
    "extreme_1": extreme_1,
    "extreme_2": extreme_2,
    "extreme_3": extreme_3,
    "attack_tamper": attack_tamper,
    "attack_fake_witness": attack_fake_witness,
    "attack_collusion": attack_collusion,
    "forensics_speed": forensics_speed,
}

ATTACK_SPECS = {
    # pair with fig2_normal (collusion pairs with attack_collusion's world)
    "tamper_event": {"kind": "tamper_event", "attacker": 3, "field": "speed",
                     "delta": 5.0},
    "impersonate": {"kind": "impersonate", "attacker": 3, "claimed_id": 4},
    "fake_witness": {"kind": "fake_witness_relay", "relayer": 3,
                     "fake_witnesses": [30, 31], "relay_delay_ms": 600},
    "collusion": {"kind": "colluding_verifiers",
                  "members": [20, 21, 22, 23],
                  "behavior": "approve_tampered"},
}


def build(name: str) -> ScenarioConfig:
    return parse_scenario(SCENARIOS[name]())


def build_scale_scenario(vehicles: int = 1000, cells: int = 10,
                         seed: int = 7) -> ScenarioConfig:
    """Large sparse world for throughput checks: vehicles spread over a
    10 km strip, accident near one end."""
    rng = random.Random(seed)
    stations = [{"cell_id": i, "x": 500.0 + 1000.0 * i, "y": 0.0}
                for i in range(cells)]
    specs = [
        _vehicle(0, 300.0, 0.0),
        _vehicle(1, 308.0, 4.0),
    ]
    for vid in range(2, vehicles):
        specs.append(_vehicle(
            vid,
            round(rng.uniform(0.0, 1000.0 * cells), 1),
            round(rng.uniform(-500.0, 500.0), 1),
            reputation=float(rng.randint(20, 95)),
        ))
    return parse_scenario({
        "seed": seed,
        "world": {
            "dsrc_range": 300.0,
            "base_stations": stations,
            "vehicles": specs,
            "edr_capacity": 120,
        },
        "accident": {"colliding": [0, 1], "time": 1000},
        "protocol": {"m": 5},
    })


def write_all(root: str) -> list[str]:
    os.makedirs(os.path.join(root, "attacks"), exist_ok=True)
    written = []
    for name, builder in SCENARIOS.items():
        path = os.path.join(root, f"{name}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(builder(), fh, indent=2)
            fh.write("\n")
        written.append(path)
    for name, spec in ATTACK_SPECS.items():
        path = os.path.join(root, "attacks", f"{name}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(spec, fh, indent=2)
            fh.write("\n")
        written.append(path)
    return written


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else "scenarios"
    for p in write_all(target):
        print(p)
