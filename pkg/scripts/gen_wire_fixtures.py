"""Regenerate the frontend's wire fixtures from the server-side codec.

The browser client reimplements the wire format natively, so its tests
pin themselves to real encoder output instead of a hand-copied idea of
it.  Run from the repository root:

    python scripts/gen_wire_fixtures.py
"""

from __future__ import annotations

import json
import pathlib

from sara.events import (
    AddNode,
    Click,
    ConnectToSession,
    ConnectionMethod,
    Convention,
    DeviceProfile,
    Drag,
    EventRejected,
    Ack,
    IncrementalUpdate,
    NewUserConnection,
    PassTurn,
    RawInteraction,
    RemoveNode,
    RequestTurn,
    SetSessionState,
    StateFormat,
    encode_event,
    encode_session_state,
    make_event,
)
from sara.sim.voxel import grid_of, make_cube, starting_landscape

OUT = pathlib.Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures" / "wire.json"


def _env(payload, sender="alice", session="fixture", n=[0]) -> str:
    n[0] += 1
    return encode_event(make_event(sender, session, payload, ts=n[0],
                                   event_id=f"evt-{n[0]:04d}"))


def main() -> None:
    tree = starting_landscape((3, 2), "grass")
    tree.attach_node("terrain", make_cube(1, 1, 1, "stone"))
    tree.attach_node("terrain", make_cube(1, 1, 2, "wood"))
    tree.revision = 7
    state_b64 = encode_session_state(tree, StateFormat.CUSTOM_JSON)

    envelopes = [
        _env(NewUserConnection(user_id="alice",
                               connection_method=ConnectionMethod.WEBSOCKET,
                               convention=Convention.RIGHT_HANDED,
                               device_profile=DeviceProfile.DESKTOP_POINTER,
                               client_id="c-1")),
        _env(Ack(client_id="c-1"), sender="server", session=""),
        _env(ConnectToSession(session_id="fixture", user_id="alice",
                              reception_format=StateFormat.CUSTOM_JSON)),
        _env(SetSessionState(format=StateFormat.CUSTOM_JSON, state_base64=state_b64),
             sender="server"),
        _env(RawInteraction(gesture="click", node_id="cube_1_1_1",
                            point=[1.0, 1.0, 1.5], tool="adder")),
        _env(Click(node_id="cube_1_1_1", world_point=[1.0, 1.0, 1.5], tool="shovel")),
        _env(Drag(node_id="cube_0_0_0", delta=[0.5, 0.0, 0.0])),
        _env(IncrementalUpdate(node_id="cube_1_1_1",
                               property_path="attributes.block_type",
                               new_value="water")),
        _env(AddNode(parent_id="terrain", node=make_cube(2, 1, 1, "sand"))),
        _env(RemoveNode(node_id="cube_1_1_2")),
        _env(EventRejected(rejected_event_id="evt-0005",
                           reason="turn: alice is not the token holder"),
             sender="server"),
        _env(PassTurn(to_user="bob")),
        _env(PassTurn(to_user=None)),
        _env(RequestTurn()),
    ]

    doc = {
        "state_base64": state_b64,
        "state_revision": tree.revision,
        "state_grid": [
            {"x": x, "y": y, "z": z, "block": block}
            for (x, y, z), block in sorted(grid_of(tree).items())
        ],
        "envelopes": envelopes,
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({len(envelopes)} envelopes, {len(doc['state_grid'])} cells)")


if __name__ == "__main__":
    main()
