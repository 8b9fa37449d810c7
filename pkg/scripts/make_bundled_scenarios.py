"""Regenerate the bundled voxel scenarios.

Run from the repository root:

    python3 scripts/make_bundled_scenarios.py

Writes src/sara/data/scenarios/voxel_unconstrained.json and
voxel_turn.json, one provider plus a headset, a phone, and a tablet
playing the voxel game.  Both files carry their expected verdicts and
final state hash, computed by the serial replay, so every later run
validates itself against them.  The generation is seeded; rerunning
this script reproduces the same two files byte for byte.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from sara.sim.oracle import replay_oracle
from sara.sim.scenario import parse_scenario
from sara.sim.voxel import BLOCK_PALETTE, FACES

OUT_DIR = Path(__file__).resolve().parent.parent / "src/sara/data/scenarios"

CLIENTS = [
    {"name": "p", "role": "provider", "transport": "tcp",
     "convention": "RIGHT_HANDED", "profile": "DESKTOP_POINTER"},
    {"name": "c1", "role": "consumer", "transport": "ws",
     "convention": "RIGHT_HANDED", "profile": "HMD_GESTURE"},
    {"name": "c2", "role": "consumer", "transport": "tcp",
     "convention": "LEFT_HANDED", "profile": "HANDHELD_TOUCH"},
    {"name": "c3", "role": "consumer", "transport": "ws",
     "convention": "RIGHT_HANDED", "profile": "HANDHELD_TOUCH"},
]

EXTENT = (4, 4)
FACE_NAMES = sorted(FACES)


class _GridTracker:
    """Just enough grid bookkeeping to aim clicks at real cubes."""

    def __init__(self):
        self.alive = {(x, y, 0) for x in range(EXTENT[0])
                      for y in range(EXTENT[1])}

    def pick(self, rng: random.Random) -> list[int]:
        if self.alive and rng.random() < 0.85:
            return list(rng.choice(sorted(self.alive)))
        return [rng.randrange(-1, EXTENT[0] + 1),
                rng.randrange(-1, EXTENT[1] + 1), rng.randrange(0, 3)]

    def apply_tool(self, kind: str, cube: tuple, face: str | None) -> None:
        if cube not in self.alive:
            return
        if kind == "shovel":
            self.alive.discard(cube)
        elif kind == "adder":
            dx, dy, dz = FACES[face]
            target = (cube[0] + int(dx), cube[1] + int(dy), cube[2] + int(dz))
            if target not in self.alive:
                self.alive.add(target)


def _tool_op(rng: random.Random, grid: _GridTracker) -> dict:
    kind = rng.choices(("shovel", "brush", "adder"), weights=(34, 38, 28))[0]
    cube = grid.pick(rng)
    op = {"op": kind, "cube": cube}
    face = None
    if kind == "brush":
        op["block"] = rng.choice(BLOCK_PALETTE)
    elif kind == "adder":
        face = rng.choice(FACE_NAMES)
        op["face"] = face
    if rng.random() < 0.15:
        op["via"] = "raw"
    return op, kind, tuple(cube), face


def build_unconstrained() -> dict:
    rng = random.Random(622)
    grid = _GridTracker()
    names = [c["name"] for c in CLIENTS]
    timeline = [{"at_ms": 0, "client": "p", "operation": {"op": "inject"}}]
    at_ms = 0
    for _ in range(100):
        at_ms += rng.randrange(15, 45)
        sender = rng.choices(names, weights=(10, 30, 30, 30))[0]
        roll = rng.random()
        if roll < 0.76:
            op, kind, cube, face = _tool_op(rng, grid)
            grid.apply_tool(kind, cube, face)
        elif roll < 0.84 and grid.alive:
            cube = rng.choice(sorted(grid.alive))
            op = {"op": "remove", "cube": list(cube)}
            grid.alive.discard(cube)
        elif roll < 0.92 and grid.alive:
            op = {"op": "paint", "cube": list(rng.choice(sorted(grid.alive))),
                  "block": rng.choice(BLOCK_PALETTE)}
        else:
            spot = (rng.randrange(0, EXTENT[0]), rng.randrange(0, EXTENT[1]),
                    rng.randrange(1, 3))
            op = {"op": "place", "cube": list(spot),
                  "block": rng.choice(BLOCK_PALETTE)}
            grid.alive.add(spot)
        timeline.append({"at_ms": at_ms, "client": sender, "operation": op})
    return {
        "name": "voxel_unconstrained",
        "session_id": "voxel",
        "session": {"models": [{"kind": "unconstrained"}],
                    "conflict_window_ms": 100,
                    "conflict_strategy": "LAST_WRITER_WINS"},
        "landscape": {"extent": list(EXTENT), "block": "grass"},
        "clients": CLIENTS,
        "timeline": timeline,
    }


def build_turn() -> dict:
    # tool clicks and token traffic only, so every rejection is an
    # off-turn act and nothing else
    rng = random.Random(623)
    grid = _GridTracker()
    names = [c["name"] for c in CLIENTS]
    holder = "p"  # first joiner takes the token
    timeline = [{"at_ms": 0, "client": "p", "operation": {"op": "inject"}}]
    at_ms = 0
    for _ in range(100):
        at_ms += rng.randrange(15, 45)
        roll = rng.random()
        if roll < 0.72:
            sender = rng.choice(names)
            op, kind, cube, face = _tool_op(rng, grid)
            if sender == holder:
                grid.apply_tool(kind, cube, face)
        elif roll < 0.88:
            legal = rng.random() < 0.75
            sender = holder if legal else rng.choice(
                [n for n in names if n != holder])
            to = rng.choice(names + [None])
            op = {"op": "pass_turn"}
            if to is not None:
                op["to"] = to
            if legal:
                index = names.index(holder)
                holder = to if to is not None \
                    else names[(index + 1) % len(names)]
        else:
            sender = rng.choice(names)
            op = {"op": "request_turn"}
        timeline.append({"at_ms": at_ms, "client": sender, "operation": op})
    return {
        "name": "voxel_turn",
        "session_id": "voxel",
        "session": {"models": [{"kind": "turn"}],
                    "conflict_window_ms": 100,
                    "conflict_strategy": "LAST_WRITER_WINS"},
        "landscape": {"extent": list(EXTENT), "block": "grass"},
        "clients": CLIENTS,
        "timeline": timeline,
    }


def finalize(doc: dict) -> dict:
    oracle = replay_oracle(parse_scenario(doc))
    doc["expectations"] = {
        "final_state_hash": oracle.hash,
        "verdicts": list(oracle.verdicts),
    }
    parse_scenario(doc)  # the shipped file must be valid as written
    return doc


def main() -> None:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for doc in (build_unconstrained(), build_turn()):
        doc = finalize(doc)
        path = OUT_DIR / f"{doc['name']}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {path} ({len(doc['timeline'])} timeline entries)")


if __name__ == "__main__":
    main()
