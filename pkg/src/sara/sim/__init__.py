"""Scenario simulator: scripted multi-client sessions against a live server.

The harness boots a real server, connects one content provider running the
voxel-game logic plus N scripted consumers, replays a timeline of tool
operations, and checks every client mirror against an independent
single-threaded oracle at quiescence barriers.
"""

from sara.sim.oracle import replay_oracle, state_hash
from sara.sim.runner import run_scenario
from sara.sim.scenario import Scenario, generate_scenario, load_scenario
from sara.sim.voxel import VoxelAppLogic, voxel_apply

__all__ = [
    "Scenario",
    "VoxelAppLogic",
    "generate_scenario",
    "load_scenario",
    "replay_oracle",
    "run_scenario",
    "state_hash",
    "voxel_apply",
]
