"""Single-threaded replay oracle: ground truth for scenario runs.

The oracle re-executes a scenario's timeline with no server, no sockets,
and no threads, re-implementing every collaboration rule in plain
sequential form.  It shares the scene-graph data structures with the rest
of the package (so final trees are byte-comparable) but none of the
validation or dispatch code: rules are spelled out again here on purpose,
as an independent cross-check.

Scope: the scenario operation vocabulary under the LAST_WRITER_WINS
conflict regime, where resolution is equivalent to serial application.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from sara.errors import ScenarioParseError
from sara.events import (
    AddNode,
    Click,
    IncrementalUpdate,
    RemoveNode,
    canonical_json,
    node_to_obj,
)
from sara.scene import SessionStatus
from sara.sim.scenario import Scenario, parse_scenario
from sara.sim.voxel import (
    TERRAIN_GROUP,
    VoxelAppLogic,
    cube_id,
    face_point,
    grid_of,
    make_cube,
    starting_landscape,
)


def state_hash(status: SessionStatus) -> str:
    """Hex digest of the canonical tree encoding, revision excluded."""
    obj = {"root": node_to_obj(status.root, status)}
    digest = hashlib.sha256(canonical_json(obj).encode("utf-8"))
    return digest.hexdigest()


# ----------------------------------------------------------------------
# independent per-rule state
# ----------------------------------------------------------------------


class _Turn:
    def __init__(self, doc: dict):
        self.order: list[str] = list(doc.get("order", []))
        self.holder: str | None = doc.get("holder")
        self.pending: list[str] = list(doc.get("pending", []))
        if self.holder is None and self.order:
            self.holder = self.order[0]

    def join(self, user: str):
        if user not in self.order:
            self.order.append(user)
        if self.holder is None:
            self._set_holder(user)

    def leave(self, user: str):
        if user in self.pending:
            self.pending.remove(user)
        if user not in self.order:
            return
        if self.holder == user:
            nxt = self._next_after(user)
            self.order.remove(user)
            self._set_holder(nxt if nxt != user else None)
        else:
            self.order.remove(user)
        if not self.order:
            self.holder = None

    def _next_after(self, user: str | None) -> str | None:
        if not self.order:
            return None
        if user not in self.order:
            return self.order[0]
        i = self.order.index(user)
        return self.order[(i + 1) % len(self.order)]

    def _set_holder(self, user: str | None):
        self.holder = user
        if user in self.pending:
            self.pending.remove(user)

    def pass_to(self, to_user: str | None):
        if to_user is not None:
            self._set_holder(to_user)
        else:
            self._set_holder(self._next_after(self.holder))

    def request(self, user: str):
        if user != self.holder and user not in self.pending:
            self.pending.append(user)


class _Ownership:
    def __init__(self, doc: dict):
        self.owner_of: dict[str, str] = dict(doc.get("owners", {}))
        self.visibility: str = doc.get("visibility", "ALL_VISIBLE")


class _Layer:
    def __init__(self, doc: dict):
        self.layers: dict[str, set[str]] = {
            k: set(v) for k, v in doc.get("layers", {}).items()}
        self.access: dict[str, set[str]] = {
            k: set(v) for k, v in doc.get("access", {}).items()}

    def accessible(self, user: str) -> set[str]:
        return self.access.get(user, set())

    def can_reach(self, user: str, node_id: str) -> bool:
        return any(node_id in self.layers.get(lid, ())
                   for lid in self.accessible(user))


class _Hierarchy:
    def __init__(self, doc: dict):
        self.parents: dict[str, str] = dict(doc.get("parents", {}))
        self.permitted: dict[str, set[str]] = {
            k: set(v) for k, v in doc.get("permitted", {}).items()}
        root = doc.get("root")
        if root is None:
            tops = {p for p in self.parents.values() if p not in self.parents}
            if len(tops) != 1:
                raise ScenarioParseError("hierarchy model needs a single root")
            root = next(iter(tops))
        self.root: str = root

    def in_tree(self, user: str) -> bool:
        return user == self.root or user in self.parents

    def is_ancestor(self, a: str, b: str) -> bool:
        current = self.parents.get(b)
        while current is not None:
            if current == a:
                return True
            current = self.parents.get(current)
        return False

    def may_touch(self, user: str, node_id: str) -> bool:
        if user == self.root:
            return True
        return node_id in self.permitted.get(user, set())

    def join(self, user: str):
        if not self.in_tree(user):
            self.parents[user] = self.root


def _parse_models(session: dict) -> list[tuple[str, object]]:
    out: list[tuple[str, object]] = []
    for doc in session.get("models", []):
        kind = doc.get("kind")
        if kind == "unconstrained":
            out.append((kind, None))
        elif kind == "turn":
            out.append((kind, _Turn(doc)))
        elif kind == "ownership":
            out.append((kind, _Ownership(doc)))
        elif kind == "layer":
            out.append((kind, _Layer(doc)))
        elif kind == "hierarchy":
            out.append((kind, _Hierarchy(doc)))
        else:
            raise ScenarioParseError(f"oracle: unknown model kind {kind!r}")
    return out


@dataclass
class OracleResult:
    verdicts: list[str]
    tree: SessionStatus
    grid: dict = field(default_factory=dict)
    visible: dict[str, set[str]] = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return state_hash(self.tree)


class _Replay:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.models = _parse_models(scenario.session)
        self.tree = SessionStatus()
        self.provider = scenario.provider().name
        self.logic = VoxelAppLogic(
            extent=tuple(scenario.landscape.get("extent", [4, 4])))
        self.verdicts: list[str] = []

    # -- rule mirror ----------------------------------------------------

    def _join(self, user: str):
        for kind, st in self.models:
            if kind == "turn":
                st.join(user)
            elif kind == "hierarchy":
                st.join(user)

    def _leave(self, user: str):
        for kind, st in self.models:
            if kind == "turn":
                st.leave(user)

    def _validate(self, sender: str, *, interaction: bool = False,
                  node_id: str | None = None, add_parent: str | None = None,
                  state_replace: bool = False) -> str | None:
        """First failing rule in configured order, or None when accepted."""
        for kind, st in self.models:
            if kind == "turn" and interaction:
                if st.holder is None or sender != st.holder:
                    return "reject:turn"
            elif kind == "ownership" and node_id is not None:
                owner = st.owner_of.get(node_id)
                if owner is None or owner != sender:
                    return "reject:ownership"
            elif kind == "layer":
                if node_id is not None:
                    if not st.can_reach(sender, node_id):
                        return "reject:layer"
                elif add_parent is not None:
                    if not st.accessible(sender):
                        return "reject:layer"
            elif kind == "hierarchy":
                if node_id is not None:
                    if not st.may_touch(sender, node_id):
                        return "reject:hierarchy"
                elif add_parent is not None:
                    if not st.may_touch(sender, add_parent):
                        return "reject:hierarchy"
                elif state_replace:
                    if sender != st.root:
                        return "reject:hierarchy"
        return None

    def _on_added(self, sender: str, node_id: str):
        for kind, st in self.models:
            if kind == "ownership":
                st.owner_of.setdefault(node_id, sender)
            elif kind == "layer":
                for lid in st.accessible(sender):
                    st.layers[lid].add(node_id)
            elif kind == "hierarchy":
                if sender != st.root:
                    st.permitted.setdefault(sender, set()).add(node_id)

    def _on_removed(self, removed_ids):
        for kind, st in self.models:
            if kind == "ownership":
                for nid in removed_ids:
                    st.owner_of.pop(nid, None)
            elif kind == "layer":
                for members in st.layers.values():
                    members.difference_update(removed_ids)
            elif kind == "hierarchy":
                for grants in st.permitted.values():
                    grants.difference_update(removed_ids)

    def _on_state_replaced(self, sender: str):
        nodes = self.tree.nodes
        root_id = self.tree.root_id
        for kind, st in self.models:
            if kind == "ownership":
                for nid in nodes:
                    if nid != root_id:
                        st.owner_of.setdefault(nid, sender)
                for nid in list(st.owner_of):
                    if nid not in nodes:
                        del st.owner_of[nid]
            elif kind == "layer":
                layered = set().union(*st.layers.values()) if st.layers else set()
                for nid in nodes:
                    if nid != root_id and nid not in layered:
                        for lid in st.accessible(sender):
                            st.layers[lid].add(nid)
                for members in st.layers.values():
                    members.intersection_update(nodes)
            elif kind == "hierarchy":
                for grants in st.permitted.values():
                    grants.intersection_update(nodes)

    # -- structural application ----------------------------------------

    def _apply_effects(self, sender: str, payloads: list):
        """Provider-reaction payloads, each re-validated as the provider."""
        for payload in payloads:
            if isinstance(payload, RemoveNode):
                fail = self._validate(sender, node_id=payload.node_id)
                if fail or not self.tree.has_node(payload.node_id):
                    continue
                removed = self.tree.detach_node(payload.node_id)
                self._on_removed(tuple(removed))
            elif isinstance(payload, IncrementalUpdate):
                fail = self._validate(sender, node_id=payload.node_id)
                if fail or not self.tree.has_node(payload.node_id):
                    continue
                self.tree.apply_property_update(
                    payload.node_id, payload.property_path, payload.new_value)
            elif isinstance(payload, AddNode):
                fail = self._validate(sender, add_parent=payload.parent_id)
                if fail or not self.tree.has_node(payload.parent_id):
                    continue
                if self.tree.has_node(payload.node.node_id):
                    continue
                self.tree.attach_node(payload.parent_id, payload.node.copy())
                self._on_added(sender, payload.node.node_id)

    # -- one timeline operation ----------------------------------------

    def step(self, sender: str, op: dict):
        kind = op["op"]
        if kind == "join":
            self._join(sender)
            self.verdicts.append("-")
            return
        if kind == "leave":
            self._leave(sender)
            self.verdicts.append("-")
            return
        if kind == "inject":
            fail = self._validate(sender, state_replace=True)
            if fail:
                self.verdicts.append(fail)
                return
            landscape = starting_landscape(
                tuple(self.scenario.landscape.get("extent", [4, 4])),
                self.scenario.landscape.get("block", "grass"))
            self.tree.replace_tree(landscape)
            self._on_state_replaced(sender)
            self.verdicts.append("accept")
            return
        if kind in ("shovel", "brush", "adder"):
            cube = op["cube"]
            node_id = cube_id(*cube)
            fail = self._validate(sender, interaction=True, node_id=node_id)
            if fail:
                self.verdicts.append(fail)
                return
            self.verdicts.append("accept")
            tool = "brush:" + op["block"] if kind == "brush" else kind
            face = op.get("face", "up") if kind == "adder" else None
            point = face_point(*cube, face) if face else [float(c) for c in cube]
            click = Click(node_id=node_id, world_point=point, tool=tool)
            self._apply_effects(self.provider, self.logic.react(click, self.tree))
            return
        if kind == "remove":
            node_id = cube_id(*op["cube"])
            fail = self._validate(sender, node_id=node_id)
            if fail:
                self.verdicts.append(fail)
                return
            if not self.tree.has_node(node_id):
                self.verdicts.append("reject:unknown-node")
                return
            removed = self.tree.detach_node(node_id)
            self._on_removed(tuple(removed))
            self.verdicts.append("accept")
            return
        if kind == "paint":
            node_id = cube_id(*op["cube"])
            fail = self._validate(sender, node_id=node_id)
            if fail:
                self.verdicts.append(fail)
                return
            if not self.tree.has_node(node_id):
                self.verdicts.append("reject:unknown-node")
                return
            self.tree.apply_property_update(node_id, "attributes.block_type",
                                            op["block"])
            self.verdicts.append("accept")
            return
        if kind == "place":
            cube = op["cube"]
            node_id = cube_id(*cube)
            fail = self._validate(sender, add_parent=TERRAIN_GROUP)
            if fail:
                self.verdicts.append(fail)
                return
            if not self.tree.has_node(TERRAIN_GROUP):
                self.verdicts.append("reject:unknown-parent")
                return
            if self.tree.has_node(node_id):
                self.verdicts.append("reject:duplicate-node-id")
                return
            block = op.get("block", self.logic.default_block)
            self.tree.attach_node(TERRAIN_GROUP, make_cube(*cube, block))
            self._on_added(sender, node_id)
            self.verdicts.append("accept")
            return
        if kind in ("pass_turn", "request_turn"):
            turn = next((st for k, st in self.models if k == "turn"), None)
            if turn is None:
                self.verdicts.append("accept")  # unclaimed management event
                return
            if kind == "request_turn":
                if sender not in turn.order:
                    self.verdicts.append("reject:turn")
                    return
                turn.request(sender)
                self.verdicts.append("accept")
                return
            to_user = op.get("to")
            if sender != turn.holder or (
                    to_user is not None and to_user not in turn.order):
                self.verdicts.append("reject:turn")
                return
            turn.pass_to(to_user)
            self.verdicts.append("accept")
            return
        if kind == "transfer_ownership":
            own = next((st for k, st in self.models if k == "ownership"), None)
            if own is None:
                self.verdicts.append("accept")
                return
            node_id = cube_id(*op["cube"])
            owner = own.owner_of.get(node_id)
            if owner is None or owner != sender:
                self.verdicts.append("reject:ownership")
                return
            own.owner_of[node_id] = op["to"]
            self.verdicts.append("accept")
            return
        if kind in ("grant_layer", "revoke_layer"):
            layer = next((st for k, st in self.models if k == "layer"), None)
            if layer is None:
                self.verdicts.append("accept")
                return
            lid = op["layer"]
            if lid not in layer.layers or lid not in layer.accessible(sender):
                self.verdicts.append("reject:layer")
                return
            if kind == "grant_layer":
                layer.access.setdefault(op["to"], set()).add(lid)
            else:
                layer.access.get(op["to"], set()).discard(lid)
            self.verdicts.append("accept")
            return
        if kind == "set_permissions":
            hier = next((st for k, st in self.models if k == "hierarchy"), None)
            if hier is None:
                self.verdicts.append("accept")
                return
            target = op["user"]
            if not hier.in_tree(target) or not hier.is_ancestor(sender, target):
                self.verdicts.append("reject:hierarchy")
                return
            node_ids = {cube_id(*cube) for cube in op["cubes"]}
            if op.get("include_group"):
                node_ids.add(TERRAIN_GROUP)
            hier.permitted[target] = node_ids
            self.verdicts.append("accept")
            return
        raise ScenarioParseError(f"oracle: unknown operation {kind!r}")

    # -- visibility -----------------------------------------------------

    def visible_nodes(self, user: str) -> set[str]:
        base: set[str] | None = None
        for kind, st in self.models:
            contribution: set[str] | None = None
            if kind == "ownership" and st.visibility == "OWNER_ONLY":
                contribution = {nid for nid, owner in st.owner_of.items()
                                if owner == user}
            elif kind == "layer":
                contribution = set()
                for lid in st.accessible(user):
                    contribution |= st.layers.get(lid, set())
            elif kind == "hierarchy":
                if user != st.root:
                    contribution = set(st.permitted.get(user, set()))
            if contribution is None:
                continue
            base = contribution if base is None else base & contribution
        if base is None:
            return set(self.tree.nodes)
        visible = {self.tree.root_id}
        for nid in base:
            if nid in self.tree.nodes:
                visible.add(nid)
                visible.update(self.tree.ancestors(nid))
        return visible


def replay_oracle(timeline_or_scenario, session: dict | None = None) -> OracleResult:
    """Replay a scenario (or a bare timeline plus model config) serially.

    Running it twice over the same input yields identical output: the
    replay holds no hidden state and consults no clock.
    """
    if isinstance(timeline_or_scenario, Scenario):
        scenario = timeline_or_scenario
    else:
        scenario = parse_scenario({
            "clients": [{"name": "p", "role": "provider"}],
            "timeline": timeline_or_scenario,
            "session": session or {},
        })
    replay = _Replay(scenario)
    late = {e.client for e in scenario.timeline
            if e.operation.get("op") == "join"}
    for spec in scenario.clients:
        if spec.name not in late:
            replay._join(spec.name)
    for entry in scenario.timeline:
        replay.step(entry.client, entry.operation)
    visible = {spec.name: replay.visible_nodes(spec.name)
               for spec in scenario.clients}
    return OracleResult(verdicts=replay.verdicts, tree=replay.tree,
                        grid=grid_of(replay.tree), visible=visible)
