"""Drive one scenario against a live server and judge the outcome.

The runner cuts no corners on realism: every scripted participant is a
real ``SaraClient`` on a real socket, the provider answers interaction
broadcasts by reading its own mirror, and nothing reaches into session
internals to move the world along.  The serial replay from
``sara.sim.oracle`` advances beside the live system, and at the end the
two must agree: per-operation verdicts, the authoritative tree, and
every surviving client mirror.

Reports are plain dicts, JSON-ready, and deterministic for a given
scenario apart from the measured wall time; ``normalized`` strips that
one volatile field so two runs of the same scenario can be compared
byte for byte.

Report fields:

    scenario, session, seed   identity echoed from the input
    transports                client name -> transport actually used
    virtual_time              whether a scripted clock drove timestamps
    restarts                  server kill/restore cycles performed
    ops                       [{index, at_ms, client, op, verdict}, ...]
    verdicts                  the verdict column of ops, as a flat list
    oracle_verdicts           the serial replay's verdicts, same order
    accepted / rejected       verdict counts (joins and leaves excluded)
    final_state_hash          sha256 of the server's canonical tree
    oracle_state_hash         sha256 of the replay's tree
    revision                  the server's final tree revision
    grid                      {"x,y,z": block_type} for the terrain cubes
    convergence               client name -> converged | diverged | skipped
    wall_ms                   elapsed real time, milliseconds
"""

from __future__ import annotations

import json
import shutil
import tempfile
import time
from dataclasses import dataclass

from sara.client import SaraClient
from sara.clock import VirtualClock
from sara.errors import ExpectationFailed, ScenarioParseError
from sara.events import (
    AddNode,
    Click,
    ConnectionMethod,
    DeviceProfile,
    GrantLayerAccess,
    IncrementalUpdate,
    PassTurn,
    RawInteraction,
    RemoveNode,
    RequestTurn,
    RevokeLayerAccess,
    SetSubordinatePermissions,
    TransferOwnership,
)
from sara.interpreters import convert_node, convert_status, convert_vector
from sara.net.mqtt import MiniBroker
from sara.scene import SessionStatus
from sara.server.service import CommunicationService, ServerConfig
from sara.sim.oracle import replay_oracle, state_hash
from sara.sim.scenario import Scenario, load_scenario, parse_scenario
from sara.sim.voxel import (
    TERRAIN_GROUP,
    VoxelAppLogic,
    cube_id,
    face_point,
    grid_of,
    make_cube,
    starting_landscape,
)

# device gesture that each profile's table normalizes back into a click
_CLICK_GESTURE = {
    DeviceProfile.DESKTOP_POINTER: "click",
    DeviceProfile.HANDHELD_TOUCH: "tap",
    DeviceProfile.HMD_GESTURE: "air_tap",
}

_VERDICT_TIMEOUT_S = 10.0
_QUIESCE_TIMEOUT_S = 10.0
_POLL_S = 0.0015


class VoxelProvider:
    """Observer that answers click broadcasts with scene edits.

    Attached to the provider's client, it reacts to every click the
    server accepted, the provider's own echoes included, using only the
    provider's mirror; the server remains free to reject any reaction.
    """

    def __init__(self, client: SaraClient, logic: VoxelAppLogic):
        self.client = client
        self.logic = logic

    def on_event(self, env) -> None:
        payload = env.payload
        if not isinstance(payload, Click):
            return
        for reaction in self.logic.react(payload, self.client.mirror_copy()):
            self._send(reaction)

    def _send(self, payload) -> None:
        if isinstance(payload, RemoveNode):
            self.client.send_remove_node(payload.node_id)
        elif isinstance(payload, AddNode):
            self.client.send_add_node(payload.parent_id, payload.node)
        elif isinstance(payload, IncrementalUpdate):
            self.client.send_update(payload.node_id, payload.property_path,
                                    payload.new_value)


@dataclass
class _Seat:
    """One scripted participant and its connection lifecycle."""

    spec: object
    client: SaraClient | None = None
    joined: bool = False
    left: bool = False


def restricted_copy(status: SessionStatus, visible: set[str]) -> SessionStatus:
    """Connected subtree of ``status`` holding only the visible nodes."""
    if visible >= status.nodes.keys():
        return status.copy()
    out = SessionStatus(status.root_id)
    src_root = status.root
    out.root.name = src_root.name
    out.root.transform = src_root.transform.copy()
    out.root.mesh = src_root.mesh.copy() if src_root.mesh else None
    out.root.attributes = dict(src_root.attributes)
    for nid in status.subtree_ids(status.root_id):
        if nid == status.root_id or nid not in visible:
            continue
        node = status.node(nid).copy()
        node.children = []
        out.attach_node(node.parent_id, node)
    return out


def normalized(report: dict) -> dict:
    """Deep copy of a report with the volatile timing field removed."""
    out = json.loads(json.dumps(report))
    out.pop("wall_ms", None)
    return out


class ScenarioRunner:
    """Boot a service, play one timeline through real clients, report."""

    def __init__(self, scenario: Scenario, *, seed: int = 0,
                 transport: str | None = None, virtual_time: bool = True,
                 restart_after: int | None = None,
                 snapshot_dir: str | None = None,
                 host: str = "127.0.0.1"):
        if transport not in (None, "tcp", "ws", "udp"):
            raise ScenarioParseError(
                f"transport override must be tcp, ws, or udp, not {transport!r}")
        if transport == "udp" and any(
                e.operation.get("op") == "leave" for e in scenario.timeline):
            raise ScenarioParseError(
                "a udp override cannot play a scenario with leave operations")
        self.scenario = scenario
        self.seed = seed
        self.transport = transport
        self.virtual_time = virtual_time
        self.restart_after = restart_after
        self.snapshot_dir = snapshot_dir
        self.host = host
        self.session_id = scenario.session_id
        self.clock = VirtualClock(0) if virtual_time else None
        self.logic = VoxelAppLogic(
            extent=tuple(scenario.landscape.get("extent", [4, 4])))
        self.seats = {spec.name: _Seat(spec) for spec in scenario.clients}
        self.service: CommunicationService | None = None
        self.broker: MiniBroker | None = None
        self.restarts = 0
        self._provider_name = scenario.provider().name

    # -- transport plumbing --------------------------------------------

    def _effective_transport(self, spec) -> str:
        if self.transport is None:
            return spec.transport
        if spec.role == "provider" and self.transport == "udp":
            return spec.transport  # datagram members get no state mirror
        return self.transport

    def _needs_broker(self) -> bool:
        return any(self._effective_transport(s.spec) == "mqtt"
                   for s in self.seats.values())

    def _start_service(self) -> None:
        cfg = ServerConfig(
            host=self.host, tcp_port=0, ws_port=0, udp_port=0,
            mqtt_url=(f"mqtt://{self.host}:{self.broker.port}"
                      if self.broker else None),
            snapshot_dir=self.snapshot_dir,
            session_config={"sessions": {self.session_id: self.scenario.session}},
            snapshot_interval_s=0.0)
        self.service = CommunicationService(cfg, clock=self.clock).start()

    def _port_for(self, transport: str) -> int:
        if transport == "tcp":
            return self.service.tcp_port
        if transport == "ws":
            return self.service.ws_port
        if transport == "udp":
            return self.service.udp_port
        return self.broker.port

    def _connect(self, seat: _Seat) -> None:
        spec = seat.spec
        transport = self._effective_transport(spec)
        method = {"tcp": ConnectionMethod.TCP, "ws": ConnectionMethod.WEBSOCKET,
                  "udp": ConnectionMethod.UDP,
                  "mqtt": ConnectionMethod.MQTT}[transport]
        seat.client = SaraClient.connect(
            self.host, self._port_for(transport), method=method,
            user_id=spec.name, session_id=self.session_id,
            convention=spec.convention, device_profile=spec.profile,
            reception_format=spec.format, role=spec.role)
        seat.joined = True
        if spec.name == self._provider_name:
            seat.client.add_observer(VoxelProvider(seat.client, self.logic))

    def _disconnect(self, seat: _Seat) -> None:
        seat.client.close()
        seat.left = True
        deadline = time.monotonic() + _QUIESCE_TIMEOUT_S
        while (seat.spec.name in self.service.members(self.session_id)
               and time.monotonic() < deadline):
            time.sleep(_POLL_S)

    def _live_clients(self) -> list[SaraClient]:
        return [s.client for s in self.seats.values()
                if s.client is not None and not s.left]

    # -- synchronization barriers --------------------------------------

    def _quiesce(self) -> None:
        """Block until queues drain and client counters stop moving."""
        deadline = time.monotonic() + _QUIESCE_TIMEOUT_S
        last = None
        stable = 0
        while time.monotonic() < deadline:
            clients = self._live_clients()
            snap = (self.service.backlog(),
                    sum(c.events_received for c in clients),
                    sum(c.events_sent for c in clients))
            if snap == last and snap[0] == 0:
                stable += 1
                if stable >= 2:
                    return
            else:
                stable = 0
            last = snap
            time.sleep(_POLL_S)

    def _await_verdict(self, seat: _Seat, event_id: str) -> str:
        deadline = time.monotonic() + _VERDICT_TIMEOUT_S
        while True:
            for rejection in list(seat.client.rejections):
                if rejection.rejected_event_id == event_id:
                    return "reject:" + rejection.reason.split(":", 1)[0]
            if event_id in self.service.broadcast_order(self.session_id):
                return "accept"
            if time.monotonic() > deadline:
                raise ExpectationFailed(
                    f"no verdict for {seat.spec.name}'s event within "
                    f"{_VERDICT_TIMEOUT_S:g}s")
            time.sleep(0.001)

    # -- operation dispatch --------------------------------------------

    def _dispatch(self, entry) -> str:
        seat = self.seats[entry.client]
        op = entry.operation
        kind = op["op"]
        if kind == "join":
            self._connect(seat)
            return "-"
        if kind == "leave":
            self._disconnect(seat)
            return "-"
        if seat.client is None or seat.left:
            raise ScenarioParseError(
                f"{entry.client} acts while not connected")
        event_id = self._send_op(seat, op, kind)
        return self._await_verdict(seat, event_id)

    def _send_op(self, seat: _Seat, op: dict, kind: str) -> str:
        client = seat.client
        convention = seat.spec.convention
        if kind == "inject":
            landscape = starting_landscape(
                tuple(self.scenario.landscape.get("extent", [4, 4])),
                self.scenario.landscape.get("block", "grass"))
            return client.inject_scene(landscape)
        if kind in ("shovel", "brush", "adder"):
            cube = op["cube"]
            node_id = cube_id(*cube)
            tool = "brush:" + op["block"] if kind == "brush" else kind
            face = op.get("face", "up") if kind == "adder" else None
            point = face_point(*cube, face) if face \
                else [float(c) for c in cube]
            point = convert_vector(point, convention)
            if op.get("via") == "raw":
                return client.send_interaction(RawInteraction(
                    gesture=_CLICK_GESTURE[seat.spec.profile],
                    node_id=node_id, point=point, tool=tool))
            return client.send_click(node_id, point, tool)
        if kind == "remove":
            return client.send_remove_node(cube_id(*op["cube"]))
        if kind == "paint":
            return client.send_update(cube_id(*op["cube"]),
                                      "attributes.block_type", op["block"])
        if kind == "place":
            node = make_cube(*op["cube"],
                             op.get("block", self.logic.default_block))
            return client.send_add_node(TERRAIN_GROUP,
                                        convert_node(node, convention))
        if kind == "pass_turn":
            return client.send_model_event(PassTurn(to_user=op.get("to")))
        if kind == "request_turn":
            return client.send_model_event(RequestTurn())
        if kind == "transfer_ownership":
            return client.send_model_event(TransferOwnership(
                node_id=cube_id(*op["cube"]), to_user=op["to"]))
        if kind == "grant_layer":
            return client.send_model_event(GrantLayerAccess(
                layer_id=op["layer"], user_id=op["to"]))
        if kind == "revoke_layer":
            return client.send_model_event(RevokeLayerAccess(
                layer_id=op["layer"], user_id=op["to"]))
        if kind == "set_permissions":
            node_ids = [cube_id(*cube) for cube in op["cubes"]]
            if op.get("include_group"):
                node_ids.append(TERRAIN_GROUP)
            return client.send_model_event(SetSubordinatePermissions(
                user_id=op["user"], node_ids=node_ids))
        raise ScenarioParseError(f"runner: unknown operation {kind!r}")

    # -- server lifecycle ----------------------------------------------

    def _restart_service(self) -> tuple[int, str, int, str]:
        """Kill the server abruptly, restore from disk, reseat everyone."""
        self.service.stop()
        before = self.service.session(self.session_id).status
        before_rev, before_hash = before.revision, state_hash(before)
        for seat in self.seats.values():
            if seat.client is not None and not seat.left:
                seat.client.close()
        self._start_service()
        restored = self.service.session(self.session_id)
        if restored is None:
            raise ExpectationFailed("no session came back after the restart")
        after_rev = restored.status.revision
        after_hash = state_hash(restored.status)
        for spec in self.scenario.clients:
            seat = self.seats[spec.name]
            if seat.joined and not seat.left:
                self._connect(seat)
        self._quiesce()
        self.restarts += 1
        return before_rev, before_hash, after_rev, after_hash

    # -- the run -------------------------------------------------------

    def run(self) -> dict:
        started = time.monotonic()
        if self._needs_broker():
            self.broker = MiniBroker(self.host)
        try:
            self._start_service()
            late = {e.client for e in self.scenario.timeline
                    if e.operation.get("op") == "join"}
            for spec in self.scenario.clients:
                if spec.name not in late:
                    self._connect(self.seats[spec.name])
            self._quiesce()
            ops = []
            wall_anchor = time.monotonic()
            for index, entry in enumerate(self.scenario.timeline):
                if self.clock is not None:
                    self.clock.set(entry.at_ms)
                else:
                    target = wall_anchor + entry.at_ms / 1000.0
                    pause = target - time.monotonic()
                    if pause > 0:
                        time.sleep(pause)
                verdict = self._dispatch(entry)
                self._quiesce()
                ops.append({"index": index, "at_ms": entry.at_ms,
                            "client": entry.client,
                            "op": entry.operation["op"],
                            "verdict": verdict})
                if self.restart_after == index:
                    rev_a, hash_a, rev_b, hash_b = self._restart_service()
                    if (rev_a, hash_a) != (rev_b, hash_b):
                        raise ExpectationFailed(
                            "restore mismatch: revision "
                            f"{rev_a} hash {hash_a[:12]} became revision "
                            f"{rev_b} hash {hash_b[:12]}")
            self._quiesce()
            return self._report(ops, started)
        finally:
            self._teardown()

    def _teardown(self) -> None:
        for seat in self.seats.values():
            if seat.client is not None:
                seat.client.close()
        if self.service is not None:
            self.service.stop()
        if self.broker is not None:
            self.broker.close()

    # -- judgement -----------------------------------------------------

    def _report(self, ops: list[dict], started: float) -> dict:
        oracle = replay_oracle(self.scenario)
        server_tree = self.service.session(self.session_id).status.copy()
        verdicts = [entry["verdict"] for entry in ops]
        convergence = self._convergence(oracle)
        grid = {",".join(str(c) for c in coords): block
                for coords, block in sorted(grid_of(server_tree).items())}
        report = {
            "scenario": self.scenario.name,
            "session": self.session_id,
            "seed": self.seed,
            "transports": {name: self._effective_transport(seat.spec)
                           for name, seat in self.seats.items()},
            "virtual_time": self.virtual_time,
            "restarts": self.restarts,
            "ops": ops,
            "verdicts": verdicts,
            "oracle_verdicts": list(oracle.verdicts),
            "accepted": verdicts.count("accept"),
            "rejected": sum(v.startswith("reject") for v in verdicts),
            "final_state_hash": state_hash(server_tree),
            "oracle_state_hash": oracle.hash,
            "revision": server_tree.revision,
            "grid": grid,
            "convergence": convergence,
            "wall_ms": round((time.monotonic() - started) * 1000.0, 1),
        }
        problems = self._judge(report, oracle)
        if problems:
            error = ExpectationFailed("; ".join(problems))
            error.report = report
            raise error
        return report

    def _convergence(self, oracle) -> dict[str, str]:
        out = {}
        for spec in self.scenario.clients:
            seat = self.seats[spec.name]
            if (seat.client is None or seat.left
                    or self._effective_transport(spec) == "udp"):
                out[spec.name] = "skipped"
                continue
            expected = restricted_copy(oracle.tree, oracle.visible[spec.name])
            expected = convert_status(expected, spec.convention)
            got = seat.client.mirror_copy()
            out[spec.name] = ("converged" if state_hash(got)
                              == state_hash(expected) else "diverged")
        return out

    def _judge(self, report: dict, oracle) -> list[str]:
        problems = []
        if report["verdicts"] != report["oracle_verdicts"]:
            for i, (got, want) in enumerate(zip(report["verdicts"],
                                                report["oracle_verdicts"])):
                if got != want:
                    entry = report["ops"][i]
                    problems.append(
                        f"op {i} ({entry['client']} {entry['op']}): "
                        f"server said {got}, replay said {want}")
                    break
        if report["final_state_hash"] != report["oracle_state_hash"]:
            problems.append("final server tree differs from the replay tree")
        diverged = sorted(name for name, state in report["convergence"].items()
                          if state == "diverged")
        if diverged:
            problems.append("mirrors diverged: " + ", ".join(diverged))
        problems.extend(self._check_expectations(report))
        return problems

    def _check_expectations(self, report: dict) -> list[str]:
        expected = self.scenario.expectations or {}
        problems = []
        want_hash = expected.get("final_state_hash")
        if want_hash and want_hash != report["final_state_hash"]:
            problems.append(
                f"expected final hash {want_hash[:12]}, "
                f"got {report['final_state_hash'][:12]}")
        want_verdicts = expected.get("verdicts")
        if want_verdicts is not None and want_verdicts != report["verdicts"]:
            problems.append("verdicts differ from the scenario's expectations")
        want_seq = expected.get("broadcast_subsequence")
        if want_seq:
            kinds = iter(self.service.broadcast_kinds(self.session_id))
            missing = [step for step in want_seq
                       if not any(kind == step for kind in kinds)]
            if missing:
                problems.append(
                    "broadcast order never reached " + ", ".join(missing))
        return problems


def run_scenario(source, *, seed: int = 0, transport: str | None = None,
                 virtual_time: bool = True, restart_after: int | None = None,
                 snapshot_dir: str | None = None,
                 report_path: str | None = None) -> dict:
    """Play a scenario file, dict, or object end to end and return its report.

    Raises ScenarioParseError for malformed input and ExpectationFailed
    (with the report attached as ``.report``) when the live system and
    the serial replay disagree, a mirror fails to converge, or an
    expectation written into the scenario itself does not hold.
    """
    if isinstance(source, Scenario):
        scenario = source
    elif isinstance(source, dict):
        scenario = parse_scenario(source)
    else:
        scenario = load_scenario(source)
    scratch = None
    if restart_after is not None and snapshot_dir is None:
        scratch = tempfile.mkdtemp(prefix="sara-sim-")
        snapshot_dir = scratch
    runner = ScenarioRunner(scenario, seed=seed, transport=transport,
                            virtual_time=virtual_time,
                            restart_after=restart_after,
                            snapshot_dir=snapshot_dir)
    try:
        report = runner.run()
    except ExpectationFailed as error:
        attached = getattr(error, "report", None)
        if attached is not None and report_path:
            _write_report(attached, report_path)
        raise
    finally:
        if scratch is not None:
            shutil.rmtree(scratch, ignore_errors=True)
    if report_path:
        _write_report(report, report_path)
    return report


def _write_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
