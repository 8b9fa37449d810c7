"""Scenario files: schema, validation, and the seeded random generator.

A scenario is a JSON document:

    {
      "name": "voxel_turn",
      "session_id": "voxel",
      "session": {"models": [...], "conflict_window_ms": 100,
                  "conflict_strategy": "LAST_WRITER_WINS"},
      "landscape": {"extent": [4, 4], "block": "grass"},
      "clients": [
        {"name": "p", "role": "provider", "transport": "tcp",
         "convention": "RIGHT_HANDED", "profile": "DESKTOP_POINTER",
         "format": "CUSTOM_JSON"},
        ...
      ],
      "timeline": [
        {"at_ms": 0, "client": "p", "operation": {"op": "inject"}},
        {"at_ms": 40, "client": "c1",
         "operation": {"op": "shovel", "cube": [1, 1, 0]}},
        ...
      ],
      "expectations": {
        "final_state_hash": "...",          // optional, hex sha256
        "verdicts": ["-", "accept", ...],   // optional, one per timeline entry
        "broadcast_subsequence": ["interaction.click", ...]  // optional
      }
    }

Exactly one client is the provider; it must be right-handed, because it
reasons about click geometry in canonical coordinates.  Clients without a
``join`` operation connect before the timeline starts, in list order
(which decides the initial turn holder).  Timeline entries must be sorted
by ``at_ms``; entries sharing a timestamp run in file order.

Operations:

  inject                                 provider replaces the scene with
                                         the starting landscape
  shovel|adder {cube}                    tool click on a cube
  brush {cube, block}                    tool click carrying a paint color
  adder takes an optional {face}, default "up"
  raw {gesture ...}: any tool op with "via": "raw" is sent as a device
                                         gesture instead of a click
  remove {cube}                          direct structural removal
  paint {cube, block}                    direct block_type update
  place {cube, block?}                   direct cube addition
  pass_turn {to?}                        turn-model token handoff
  request_turn                           queue for the token
  transfer_ownership {cube, to}          ownership handoff
  grant_layer|revoke_layer {layer, to}   layer access change
  set_permissions {user, cubes, include_group?}   hierarchy delegation
  join                                   connect this client now
  leave                                  disconnect this client now
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from sara.errors import ScenarioParseError
from sara.events import ConnectionMethod, Convention, DeviceProfile, StateFormat
from sara.sim.voxel import BLOCK_PALETTE, FACES

TOOL_OPS = ("shovel", "brush", "adder")
DIRECT_OPS = ("remove", "paint", "place")
MODEL_OPS = ("pass_turn", "request_turn", "transfer_ownership",
             "grant_layer", "revoke_layer", "set_permissions")
LIFECYCLE_OPS = ("inject", "join", "leave")
ALL_OPS = TOOL_OPS + DIRECT_OPS + MODEL_OPS + LIFECYCLE_OPS

_TRANSPORTS = {"tcp": ConnectionMethod.TCP, "ws": ConnectionMethod.WEBSOCKET,
               "udp": ConnectionMethod.UDP, "mqtt": ConnectionMethod.MQTT}


@dataclass
class ClientSpec:
    name: str
    role: str = "consumer"
    transport: str = "tcp"
    convention: Convention = Convention.RIGHT_HANDED
    profile: DeviceProfile = DeviceProfile.DESKTOP_POINTER
    format: StateFormat = StateFormat.CUSTOM_JSON

    def method(self) -> ConnectionMethod:
        return _TRANSPORTS[self.transport]


@dataclass
class TimelineEntry:
    at_ms: int
    client: str
    operation: dict


@dataclass
class Scenario:
    name: str
    session_id: str
    session: dict
    landscape: dict
    clients: list[ClientSpec]
    timeline: list[TimelineEntry]
    expectations: dict = field(default_factory=dict)

    def provider(self) -> ClientSpec:
        return next(c for c in self.clients if c.role == "provider")

    def client(self, name: str) -> ClientSpec:
        return next(c for c in self.clients if c.name == name)

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "session_id": self.session_id,
            "session": self.session,
            "landscape": self.landscape,
            "clients": [{
                "name": c.name, "role": c.role, "transport": c.transport,
                "convention": c.convention.value, "profile": c.profile.value,
                "format": c.format.value,
            } for c in self.clients],
            "timeline": [{"at_ms": e.at_ms, "client": e.client,
                          "operation": e.operation} for e in self.timeline],
            "expectations": self.expectations,
        }


def _fail(msg: str):
    raise ScenarioParseError(msg)


def _parse_client(doc: dict, index: int) -> ClientSpec:
    if not isinstance(doc, dict):
        _fail(f"clients[{index}] must be an object")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        _fail(f"clients[{index}] needs a non-empty name")
    role = doc.get("role", "consumer")
    if role not in ("provider", "consumer"):
        _fail(f"client {name!r}: unknown role {role!r}")
    transport = doc.get("transport", "tcp")
    if transport not in _TRANSPORTS:
        _fail(f"client {name!r}: unknown transport {transport!r}")
    try:
        convention = Convention(doc.get("convention", "RIGHT_HANDED"))
        profile = DeviceProfile(doc.get("profile", "DESKTOP_POINTER"))
        fmt = StateFormat(doc.get("format", "CUSTOM_JSON"))
    except ValueError as exc:
        _fail(f"client {name!r}: {exc}")
    return ClientSpec(name=name, role=role, transport=transport,
                      convention=convention, profile=profile, format=fmt)


def _check_cube(op: dict, op_name: str):
    cube = op.get("cube")
    if (not isinstance(cube, list) or len(cube) != 3
            or any(not isinstance(c, int) for c in cube)):
        _fail(f"{op_name} needs a cube of three integer coordinates")


def _validate_operation(entry_index: int, client: ClientSpec, op: dict):
    name = op.get("op")
    if name not in ALL_OPS:
        _fail(f"timeline[{entry_index}]: unknown operation {name!r}")
    where = f"timeline[{entry_index}] ({name})"
    if name == "inject" and client.role != "provider":
        _fail(f"{where}: only the provider injects the landscape")
    if name in TOOL_OPS + ("remove", "paint", "place", "transfer_ownership"):
        _check_cube(op, where)
    if name == "brush" or name == "paint":
        if not isinstance(op.get("block"), str) or not op["block"]:
            _fail(f"{where}: needs a block type")
    if name == "adder" and op.get("face") is not None:
        if op["face"] not in FACES:
            _fail(f"{where}: unknown face {op['face']!r}")
    if name == "pass_turn" and op.get("to") is not None:
        if not isinstance(op["to"], str):
            _fail(f"{where}: 'to' must be a client name")
    if name == "transfer_ownership":
        if not isinstance(op.get("to"), str) or not op["to"]:
            _fail(f"{where}: needs a receiving client name")
    if name in ("grant_layer", "revoke_layer"):
        if not isinstance(op.get("layer"), str) or not op["layer"]:
            _fail(f"{where}: needs a layer id")
        if not isinstance(op.get("to"), str) or not op["to"]:
            _fail(f"{where}: needs a user name")
    if name == "set_permissions":
        if not isinstance(op.get("user"), str) or not op["user"]:
            _fail(f"{where}: needs a user name")
        cubes = op.get("cubes")
        if not isinstance(cubes, list):
            _fail(f"{where}: needs a list of cubes")
        for cube in cubes:
            if (not isinstance(cube, list) or len(cube) != 3
                    or any(not isinstance(c, int) for c in cube)):
                _fail(f"{where}: each entry in cubes must be 3 integers")


def parse_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        _fail("scenario must be a JSON object")
    name = doc.get("name", "unnamed")
    session_id = doc.get("session_id", "sim")
    session = doc.get("session", {})
    if not isinstance(session, dict):
        _fail("session must be an object")
    landscape = doc.get("landscape", {"extent": [4, 4], "block": "grass"})
    if not isinstance(landscape, dict):
        _fail("landscape must be an object")
    extent = landscape.get("extent", [4, 4])
    if (not isinstance(extent, list) or len(extent) != 2
            or any(not isinstance(c, int) or c < 1 for c in extent)):
        _fail("landscape extent must be two positive integers")

    raw_clients = doc.get("clients")
    if not isinstance(raw_clients, list) or not raw_clients:
        _fail("scenario needs a non-empty clients list")
    clients = [_parse_client(c, i) for i, c in enumerate(raw_clients)]
    names = [c.name for c in clients]
    if len(set(names)) != len(names):
        _fail("client names must be unique")
    providers = [c for c in clients if c.role == "provider"]
    if len(providers) != 1:
        _fail("scenario needs exactly one provider client")
    if providers[0].convention is not Convention.RIGHT_HANDED:
        _fail("the provider must be right-handed: its game logic reasons"
              " in canonical coordinates")

    raw_timeline = doc.get("timeline", [])
    if not isinstance(raw_timeline, list):
        _fail("timeline must be a list")
    timeline: list[TimelineEntry] = []
    by_name = {c.name: c for c in clients}
    last_at = None
    for i, raw in enumerate(raw_timeline):
        if not isinstance(raw, dict):
            _fail(f"timeline[{i}] must be an object")
        at_ms = raw.get("at_ms")
        if not isinstance(at_ms, int) or at_ms < 0:
            _fail(f"timeline[{i}]: at_ms must be a non-negative integer")
        if last_at is not None and at_ms < last_at:
            _fail(f"timeline[{i}]: timeline must be sorted by at_ms")
        last_at = at_ms
        client_name = raw.get("client")
        if client_name not in by_name:
            _fail(f"timeline[{i}]: unknown client {client_name!r}")
        op = raw.get("operation")
        if not isinstance(op, dict):
            _fail(f"timeline[{i}]: operation must be an object")
        _validate_operation(i, by_name[client_name], op)
        timeline.append(TimelineEntry(at_ms=at_ms, client=client_name,
                                      operation=op))

    # clients with a join op enter late; nothing of theirs may run earlier
    joined_late = {e.client for e in timeline if e.operation.get("op") == "join"}
    seen_join = set()
    gone: set[str] = set()
    for i, entry in enumerate(timeline):
        op = entry.operation.get("op")
        if entry.client in gone:
            _fail(f"timeline[{i}]: client {entry.client!r} already left")
        if (entry.client in joined_late and entry.client not in seen_join
                and op != "join"):
            _fail(f"timeline[{i}]: client {entry.client!r} acts before joining")
        if op == "join":
            if entry.client in seen_join:
                _fail(f"timeline[{i}]: client {entry.client!r} joined twice")
            seen_join.add(entry.client)
        elif op == "leave":
            # departure is a transport-close signal; datagrams have none
            if by_name[entry.client].transport == "udp":
                _fail(f"timeline[{i}]: a udp client cannot leave mid-run")
            gone.add(entry.client)
    expectations = doc.get("expectations", {})
    if not isinstance(expectations, dict):
        _fail("expectations must be an object")
    return Scenario(name=name, session_id=session_id, session=session,
                    landscape=landscape, clients=clients, timeline=timeline,
                    expectations=expectations)


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario: {exc}") from None
    except ValueError as exc:
        raise ScenarioParseError(f"scenario is not valid JSON: {exc}") from None
    return parse_scenario(doc)


# ----------------------------------------------------------------------
# generator
# ----------------------------------------------------------------------

_MODEL_PRESETS = ("unconstrained", "turn", "ownership", "hierarchy", "layer")


def _session_for_models(models: list[str], consumers: list[str],
                        provider: str) -> dict:
    docs = []
    for kind in models:
        if kind == "unconstrained":
            docs.append({"kind": "unconstrained"})
        elif kind == "turn":
            docs.append({"kind": "turn"})
        elif kind == "ownership":
            docs.append({"kind": "ownership"})
        elif kind == "hierarchy":
            docs.append({"kind": "hierarchy",
                         "root": provider,
                         "parents": {c: provider for c in consumers}})
        elif kind == "layer":
            docs.append({"kind": "layer",
                         "layers": {"world": []},
                         "access": {provider: ["world"]}})
        else:
            raise ScenarioParseError(f"unknown model preset {kind!r}")
    return {"models": docs,
            "conflict_window_ms": 100,
            "conflict_strategy": "LAST_WRITER_WINS"}


def generate_scenario(clients: int = 4, ops: int = 100,
                      model: str = "unconstrained", seed: int = 0,
                      name: str | None = None) -> Scenario:
    """Seeded random scenario: 1 provider plus (clients - 1) consumers.

    ``model`` is a preset name or a comma-joined mix, e.g. "turn,layer".
    The same (clients, ops, model, seed) always yields the same scenario.
    """
    if clients < 2:
        raise ScenarioParseError("a scenario needs a provider and a consumer")
    models = [m.strip() for m in model.split(",") if m.strip()]
    for kind in models:
        if kind not in _MODEL_PRESETS:
            raise ScenarioParseError(f"unknown model preset {kind!r}")
    rng = random.Random(seed)
    provider = "p"
    consumers = [f"c{i}" for i in range(1, clients)]
    transports = ["tcp", "ws"]
    conventions = ["RIGHT_HANDED", "LEFT_HANDED"]
    profiles = ["DESKTOP_POINTER", "HANDHELD_TOUCH", "HMD_GESTURE"]
    specs = [{"name": provider, "role": "provider", "transport": "tcp",
              "convention": "RIGHT_HANDED", "profile": "DESKTOP_POINTER",
              "format": "CUSTOM_JSON"}]
    for cname in consumers:
        specs.append({"name": cname, "role": "consumer",
                      "transport": rng.choice(transports),
                      "convention": rng.choice(conventions),
                      "profile": rng.choice(profiles),
                      "format": "CUSTOM_JSON"})

    extent = (4, 4)
    floor = [[x, y, 0] for x in range(extent[0]) for y in range(extent[1])]
    has_turn = "turn" in models
    has_ownership = "ownership" in models
    has_hierarchy = "hierarchy" in models
    has_layer = "layer" in models

    # the generator tracks the turn token so most passes are legal
    holder = provider  # provider connects first, so it takes the token
    active = [provider] + consumers

    timeline = [{"at_ms": 0, "client": provider, "operation": {"op": "inject"}}]
    at_ms = 0

    def pick_cube():
        if rng.random() < 0.75:
            base = rng.choice(floor)
        else:
            base = [rng.randrange(-1, extent[0] + 1),
                    rng.randrange(-1, extent[1] + 1), 0]
        z = 0 if rng.random() < 0.7 else rng.randrange(0, 3)
        return [base[0], base[1], z]

    # early empowerment ops so restrictive models leave room to act
    if has_ownership:
        for cname in consumers:
            at_ms += rng.randrange(10, 40)
            timeline.append({"at_ms": at_ms, "client": provider,
                             "operation": {"op": "transfer_ownership",
                                           "cube": rng.choice(floor),
                                           "to": cname}})
    if has_hierarchy:
        for cname in consumers:
            at_ms += rng.randrange(10, 40)
            cubes = rng.sample(floor, k=min(4, len(floor)))
            timeline.append({"at_ms": at_ms, "client": provider,
                             "operation": {"op": "set_permissions",
                                           "user": cname, "cubes": cubes,
                                           "include_group": rng.random() < 0.5}})
    if has_layer:
        for cname in consumers:
            if rng.random() < 0.7:
                at_ms += rng.randrange(10, 40)
                timeline.append({"at_ms": at_ms, "client": provider,
                                 "operation": {"op": "grant_layer",
                                               "layer": "world", "to": cname}})

    while len(timeline) < ops:
        at_ms += rng.randrange(10, 60)
        actor = rng.choice(active)
        roll = rng.random()
        op: dict
        if roll < 0.30:
            op = {"op": "shovel", "cube": pick_cube()}
        elif roll < 0.50:
            op = {"op": "brush", "cube": pick_cube(),
                  "block": rng.choice(BLOCK_PALETTE)}
        elif roll < 0.68:
            op = {"op": "adder", "cube": pick_cube(),
                  "face": rng.choice(sorted(FACES))}
        elif roll < 0.74:
            op = {"op": "remove", "cube": pick_cube()}
        elif roll < 0.80:
            op = {"op": "paint", "cube": pick_cube(),
                  "block": rng.choice(BLOCK_PALETTE)}
        elif roll < 0.86:
            op = {"op": "place", "cube": pick_cube()}
        elif roll < 0.92 and has_turn:
            if rng.random() < 0.8 and holder in active:
                target = rng.choice(active)
                op = {"op": "pass_turn", "to": target}
                actor = holder
                holder = target
            else:
                op = {"op": "request_turn"}
        elif roll < 0.95 and has_ownership:
            op = {"op": "transfer_ownership", "cube": rng.choice(floor),
                  "to": rng.choice(active)}
            actor = provider if rng.random() < 0.6 else actor
        elif roll < 0.97 and has_layer:
            op = {"op": "grant_layer", "layer": "world",
                  "to": rng.choice(consumers)}
            actor = provider
        else:
            op = {"op": "brush", "cube": pick_cube(),
                  "block": rng.choice(BLOCK_PALETTE)}
        if rng.random() < 0.12 and op["op"] in TOOL_OPS:
            op["via"] = "raw"
        timeline.append({"at_ms": at_ms, "client": actor, "operation": op})

    doc = {
        "name": name or f"gen_{'_'.join(models)}_{seed}",
        "session_id": "sim",
        "session": _session_for_models(models, consumers, provider),
        "landscape": {"extent": list(extent), "block": "grass"},
        "clients": specs,
        "timeline": timeline,
        "expectations": {},
    }
    return parse_scenario(doc)
