"""Collaboration models: per-event rule validation and visibility filtering.

Five rule sets govern who may do what in a session:

  unconstrained  everything goes, first in first out
  turn           a single token holder may interact; others wait
  ownership      nodes belong to users; only owners touch their nodes
  layer          nodes live in named layers; users see what they can access
  hierarchy      users form a tree; ancestors outrank and delegate to
                 subordinates, the root may do anything

A session runs any combination of these at once.  The combination is a
logical AND: an event passes only if every member rule set accepts it,
and a user sees only nodes every member lets them see (plus ancestors,
so the filtered tree stays connected).

Rule scope, fixed here and mirrored by the independent test oracle:

  - Turn gates interaction events (clicks and drags) only.  Structural
    events keep flowing so a content provider can answer interactions
    regardless of whose turn it is.
  - Ownership and layer gate node-addressed events: interactions,
    incremental updates, node removal.  Node addition requires somewhere
    legal to put the node (any accessible layer; ownership is recorded
    after the fact, creator becomes owner).
  - Hierarchy gates node-addressed events against per-user permitted
    sets; the root user is unrestricted; full state replacement is a
    root-only operation under hierarchy.
  - Connection bookkeeping events are always accepted.
  - A management event whose rule set is absent from the combination is
    accepted and changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from sara.errors import ConfigError
from sara.events import (
    AddNode,
    Click,
    ConnectToSession,
    Drag,
    EventEnvelope,
    GrantLayerAccess,
    IncrementalUpdate,
    NewUserConnection,
    PassTurn,
    RawInteraction,
    RemoveNode,
    RequestTurn,
    RevokeLayerAccess,
    SetSessionState,
    SetSubordinatePermissions,
    TransferOwnership,
)
from sara.scene import SessionStatus

INTERACTION_PAYLOADS = (RawInteraction, Click, Drag)
ALL_VISIBLE = "ALL_VISIBLE"
OWNER_ONLY = "OWNER_ONLY"


@dataclass
class Verdict:
    accepted: bool
    reason: str = ""
    rule_id: str = ""

    @staticmethod
    def ok() -> "Verdict":
        return Verdict(True)

    @staticmethod
    def no(reason: str, rule_id: str) -> "Verdict":
        return Verdict(False, reason, rule_id)


def _node_id_of(payload) -> str | None:
    """Node a payload addresses, for per-node permission checks."""
    if isinstance(payload, (RawInteraction, Click, Drag, IncrementalUpdate, RemoveNode)):
        return payload.node_id
    return None


class UnconstrainedModel:
    """No rules: everything is accepted in arrival order."""

    kind = "unconstrained"

    def validate(self, event: EventEnvelope, status: SessionStatus) -> Verdict:
        return Verdict.ok()

    def check_model_event(self, event: EventEnvelope) -> Verdict | None:
        return None

    def apply_model_event(self, event: EventEnvelope) -> None:
        raise AssertionError("unconstrained claims no model events")

    def visible_base(self, user_id: str, status: SessionStatus) -> set[str] | None:
        return None

    def on_event_applied(self, event, status, removed_ids=()):
        pass

    def join(self, user_id: str):
        pass

    def leave(self, user_id: str):
        pass

    def to_doc(self) -> dict:
        return {"kind": self.kind}

    @staticmethod
    def from_doc(doc: dict) -> "UnconstrainedModel":
        return UnconstrainedModel()


class TurnModel:
    """One token travels the member list; only its holder may interact."""

    kind = "turn"

    def __init__(self, order: list[str] | None = None, holder: str | None = None,
                 pending: list[str] | None = None):
        self.order: list[str] = list(order or [])
        self.holder: str | None = holder
        self.pending: list[str] = list(pending or [])
        if self.holder is None and self.order:
            self.holder = self.order[0]
        if self.holder is not None and self.holder not in self.order:
            raise ConfigError(f"turn holder {self.holder!r} is not in the order")

    def validate(self, event: EventEnvelope, status: SessionStatus) -> Verdict:
        if isinstance(event.payload, INTERACTION_PAYLOADS):
            if self.holder is None:
                return Verdict.no("turn: no turn holder yet", self.kind)
            if event.sender_id != self.holder:
                return Verdict.no(
                    f"turn: {event.sender_id} is not the token holder", self.kind)
        return Verdict.ok()

    def check_model_event(self, event: EventEnvelope) -> Verdict | None:
        payload = event.payload
        if isinstance(payload, RequestTurn):
            if event.sender_id not in self.order:
                return Verdict.no("turn: requester is not in the session", self.kind)
            return Verdict.ok()
        if isinstance(payload, PassTurn):
            if event.sender_id != self.holder:
                return Verdict.no("turn: only the holder may pass the turn", self.kind)
            if payload.to_user is not None and payload.to_user not in self.order:
                return Verdict.no(
                    f"turn: {payload.to_user} is not in the session", self.kind)
            return Verdict.ok()
        return None

    def apply_model_event(self, event: EventEnvelope) -> None:
        payload = event.payload
        if isinstance(payload, RequestTurn):
            if event.sender_id != self.holder and event.sender_id not in self.pending:
                self.pending.append(event.sender_id)
        elif isinstance(payload, PassTurn):
            if payload.to_user is not None:
                self._set_holder(payload.to_user)
            else:
                self._set_holder(self._next_after(self.holder))

    def _next_after(self, user_id: str | None) -> str | None:
        if not self.order:
            return None
        if user_id not in self.order:
            return self.order[0]
        i = self.order.index(user_id)
        return self.order[(i + 1) % len(self.order)]

    def _set_holder(self, user_id: str | None) -> None:
        self.holder = user_id
        if user_id in self.pending:
            self.pending.remove(user_id)

    def visible_base(self, user_id: str, status: SessionStatus) -> set[str] | None:
        return None

    def on_event_applied(self, event, status, removed_ids=()):
        pass

    def join(self, user_id: str):
        if user_id not in self.order:
            self.order.append(user_id)
        if self.holder is None:
            self._set_holder(user_id)

    def leave(self, user_id: str):
        if user_id in self.pending:
            self.pending.remove(user_id)
        if user_id not in self.order:
            return
        if self.holder == user_id:
            nxt = self._next_after(user_id)
            self.order.remove(user_id)
            self._set_holder(nxt if nxt != user_id else None)
        else:
            self.order.remove(user_id)
        if not self.order:
            self.holder = None

    def to_doc(self) -> dict:
        return {"kind": self.kind, "order": list(self.order), "holder": self.holder,
                "pending": list(self.pending)}

    @staticmethod
    def from_doc(doc: dict) -> "TurnModel":
        order = doc.get("order", [])
        if not isinstance(order, list) or any(not isinstance(u, str) for u in order):
            raise ConfigError("turn order must be a list of user ids")
        holder = doc.get("holder")
        if holder is not None and not isinstance(holder, str):
            raise ConfigError("turn holder must be a user id")
        pending = doc.get("pending", [])
        if not isinstance(pending, list) or any(not isinstance(u, str) for u in pending):
            raise ConfigError("turn pending must be a list of user ids")
        return TurnModel(order=order, holder=holder, pending=pending)


class OwnershipModel:
    """Each node has at most one owner; only the owner may touch it."""

    kind = "ownership"

    def __init__(self, owners: dict[str, str] | None = None,
                 visibility: str = ALL_VISIBLE):
        if visibility not in (ALL_VISIBLE, OWNER_ONLY):
            raise ConfigError(f"unknown ownership visibility {visibility!r}")
        self.owner_of: dict[str, str] = dict(owners or {})
        self.visibility = visibility

    def validate(self, event: EventEnvelope, status: SessionStatus) -> Verdict:
        node_id = _node_id_of(event.payload)
        if node_id is not None:
            owner = self.owner_of.get(node_id)
            if owner is None:
                return Verdict.no(f"ownership: node {node_id} has no owner", self.kind)
            if owner != event.sender_id:
                return Verdict.no(
                    f"ownership: node {node_id} belongs to {owner}", self.kind)
        return Verdict.ok()

    def check_model_event(self, event: EventEnvelope) -> Verdict | None:
        payload = event.payload
        if isinstance(payload, TransferOwnership):
            owner = self.owner_of.get(payload.node_id)
            if owner is None:
                return Verdict.no(
                    f"ownership: node {payload.node_id} has no owner", self.kind)
            if owner != event.sender_id:
                return Verdict.no(
                    f"ownership: only the owner may transfer {payload.node_id}",
                    self.kind)
            return Verdict.ok()
        return None

    def apply_model_event(self, event: EventEnvelope) -> None:
        payload = event.payload
        if isinstance(payload, TransferOwnership):
            self.owner_of[payload.node_id] = payload.to_user

    def visible_base(self, user_id: str, status: SessionStatus) -> set[str] | None:
        if self.visibility == ALL_VISIBLE:
            return None
        return {nid for nid, owner in self.owner_of.items() if owner == user_id}

    def on_event_applied(self, event, status, removed_ids=()):
        payload = event.payload
        if isinstance(payload, AddNode):
            self.owner_of.setdefault(payload.node.node_id, event.sender_id)
        elif isinstance(payload, RemoveNode):
            for nid in removed_ids:
                self.owner_of.pop(nid, None)
        elif isinstance(payload, SetSessionState):
            for nid in status.nodes:
                if nid != status.root_id:
                    self.owner_of.setdefault(nid, event.sender_id)
            for nid in list(self.owner_of):
                if nid not in status.nodes:
                    del self.owner_of[nid]

    def join(self, user_id: str):
        pass

    def leave(self, user_id: str):
        pass

    def to_doc(self) -> dict:
        return {"kind": self.kind, "owners": dict(self.owner_of),
                "visibility": self.visibility}

    @staticmethod
    def from_doc(doc: dict) -> "OwnershipModel":
        owners = doc.get("owners", {})
        if not isinstance(owners, dict) or any(
                not isinstance(k, str) or not isinstance(v, str)
                for k, v in owners.items()):
            raise ConfigError("ownership owners must map node ids to user ids")
        return OwnershipModel(owners=owners,
                              visibility=doc.get("visibility", ALL_VISIBLE))


class LayerModel:
    """Nodes grouped in named layers; users hold access to layer sets."""

    kind = "layer"

    def __init__(self, layers: dict[str, set[str]] | None = None,
                 access: dict[str, set[str]] | None = None):
        self.layers: dict[str, set[str]] = {k: set(v) for k, v in (layers or {}).items()}
        self.access: dict[str, set[str]] = {k: set(v) for k, v in (access or {}).items()}
        for user, layer_ids in self.access.items():
            for lid in layer_ids:
                if lid not in self.layers:
                    raise ConfigError(
                        f"layer access for {user} names unknown layer {lid!r}")

    def _accessible_layers(self, user_id: str) -> set[str]:
        return self.access.get(user_id, set())

    def _node_accessible(self, user_id: str, node_id: str) -> bool:
        return any(node_id in self.layers.get(lid, ())
                   for lid in self._accessible_layers(user_id))

    def validate(self, event: EventEnvelope, status: SessionStatus) -> Verdict:
        payload = event.payload
        node_id = _node_id_of(payload)
        if node_id is not None:
            if not self._node_accessible(event.sender_id, node_id):
                return Verdict.no(
                    f"layer: {event.sender_id} has no layer containing {node_id}",
                    self.kind)
        elif isinstance(payload, AddNode):
            if not self._accessible_layers(event.sender_id):
                return Verdict.no(
                    "layer: sender has no accessible layer for a new node", self.kind)
        return Verdict.ok()

    def check_model_event(self, event: EventEnvelope) -> Verdict | None:
        payload = event.payload
        if isinstance(payload, (GrantLayerAccess, RevokeLayerAccess)):
            if payload.layer_id not in self.layers:
                return Verdict.no(
                    f"layer: unknown layer {payload.layer_id}", self.kind)
            if payload.layer_id not in self._accessible_layers(event.sender_id):
                return Verdict.no(
                    f"layer: sender has no access to {payload.layer_id}", self.kind)
            return Verdict.ok()
        return None

    def apply_model_event(self, event: EventEnvelope) -> None:
        payload = event.payload
        if isinstance(payload, GrantLayerAccess):
            self.access.setdefault(payload.user_id, set()).add(payload.layer_id)
        elif isinstance(payload, RevokeLayerAccess):
            self.access.get(payload.user_id, set()).discard(payload.layer_id)

    def visible_base(self, user_id: str, status: SessionStatus) -> set[str] | None:
        out: set[str] = set()
        for lid in self._accessible_layers(user_id):
            out |= self.layers.get(lid, set())
        return out

    def on_event_applied(self, event, status, removed_ids=()):
        payload = event.payload
        if isinstance(payload, AddNode):
            for lid in self._accessible_layers(event.sender_id):
                self.layers[lid].add(payload.node.node_id)
        elif isinstance(payload, RemoveNode):
            for members in self.layers.values():
                members.difference_update(removed_ids)
        elif isinstance(payload, SetSessionState):
            layered = set().union(*self.layers.values()) if self.layers else set()
            for nid in status.nodes:
                if nid != status.root_id and nid not in layered:
                    for lid in self._accessible_layers(event.sender_id):
                        self.layers[lid].add(nid)
            for members in self.layers.values():
                members.intersection_update(status.nodes)

    def join(self, user_id: str):
        pass

    def leave(self, user_id: str):
        pass

    def to_doc(self) -> dict:
        return {"kind": self.kind,
                "layers": {k: sorted(v) for k, v in self.layers.items()},
                "access": {k: sorted(v) for k, v in self.access.items()}}

    @staticmethod
    def from_doc(doc: dict) -> "LayerModel":
        layers = doc.get("layers", {})
        access = doc.get("access", {})
        for name, value in (("layers", layers), ("access", access)):
            if not isinstance(value, dict) or any(
                    not isinstance(k, str) or not isinstance(v, list)
                    or any(not isinstance(x, str) for x in v)
                    for k, v in value.items()):
                raise ConfigError(f"layer {name} must map ids to lists of ids")
        return LayerModel(layers={k: set(v) for k, v in layers.items()},
                          access={k: set(v) for k, v in access.items()})


class HierarchyModel:
    """Users form a tree; the root is unrestricted, ancestors delegate."""

    kind = "hierarchy"

    def __init__(self, parents: dict[str, str] | None = None,
                 root: str | None = None,
                 permitted: dict[str, set[str]] | None = None):
        self.parents: dict[str, str] = dict(parents or {})
        self.permitted: dict[str, set[str]] = {
            k: set(v) for k, v in (permitted or {}).items()}
        self.root = self._resolve_root(root)
        self._check_tree()

    def _resolve_root(self, explicit: str | None) -> str:
        tops = {p for p in self.parents.values() if p not in self.parents}
        if explicit is not None:
            if tops and tops != {explicit}:
                raise ConfigError(
                    f"hierarchy root {explicit!r} disagrees with parent map")
            return explicit
        if len(tops) == 1:
            return next(iter(tops))
        raise ConfigError("hierarchy needs a single root"
                          " (give an explicit root or a connected parent map)")

    def _check_tree(self):
        for user in self.parents:
            seen = set()
            current = user
            while current in self.parents:
                if current in seen:
                    raise ConfigError("hierarchy parent map contains a cycle")
                seen.add(current)
                current = self.parents[current]
            if current != self.root:
                raise ConfigError(
                    f"hierarchy user {user!r} does not reach the root")

    def in_tree(self, user_id: str) -> bool:
        return user_id == self.root or user_id in self.parents

    def is_user_ancestor(self, a: str, b: str) -> bool:
        """True iff a is a strict ancestor of b in the user tree."""
        current = self.parents.get(b)
        while current is not None:
            if current == a:
                return True
            current = self.parents.get(current)
        return False

    def _may_touch(self, user_id: str, node_id: str) -> bool:
        if user_id == self.root:
            return True
        return node_id in self.permitted.get(user_id, set())

    def validate(self, event: EventEnvelope, status: SessionStatus) -> Verdict:
        payload = event.payload
        node_id = _node_id_of(payload)
        if node_id is not None:
            if not self._may_touch(event.sender_id, node_id):
                return Verdict.no(
                    f"hierarchy: {event.sender_id} may not touch {node_id}", self.kind)
        elif isinstance(payload, AddNode):
            if not self._may_touch(event.sender_id, payload.parent_id):
                return Verdict.no(
                    f"hierarchy: {event.sender_id} may not extend {payload.parent_id}",
                    self.kind)
        elif isinstance(payload, SetSessionState):
            if event.sender_id != self.root:
                return Verdict.no(
                    "hierarchy: only the root may replace the session state", self.kind)
        return Verdict.ok()

    def check_model_event(self, event: EventEnvelope) -> Verdict | None:
        payload = event.payload
        if isinstance(payload, SetSubordinatePermissions):
            if not self.in_tree(payload.user_id):
                return Verdict.no(
                    f"hierarchy: unknown user {payload.user_id}", self.kind)
            if not self.is_user_ancestor(event.sender_id, payload.user_id):
                return Verdict.no(
                    "hierarchy: permissions may only be set for subordinates",
                    self.kind)
            return Verdict.ok()
        return None

    def apply_model_event(self, event: EventEnvelope) -> None:
        payload = event.payload
        if isinstance(payload, SetSubordinatePermissions):
            self.permitted[payload.user_id] = set(payload.node_ids)

    def visible_base(self, user_id: str, status: SessionStatus) -> set[str] | None:
        if user_id == self.root:
            return None
        return set(self.permitted.get(user_id, set()))

    def on_event_applied(self, event, status, removed_ids=()):
        payload = event.payload
        if isinstance(payload, AddNode):
            if event.sender_id != self.root:
                self.permitted.setdefault(event.sender_id, set()).add(
                    payload.node.node_id)
        elif isinstance(payload, RemoveNode):
            for grants in self.permitted.values():
                grants.difference_update(removed_ids)
        elif isinstance(payload, SetSessionState):
            for grants in self.permitted.values():
                grants.intersection_update(status.nodes)

    def join(self, user_id: str):
        if not self.in_tree(user_id):
            self.parents[user_id] = self.root

    def leave(self, user_id: str):
        pass  # the org chart outlives a connection

    def to_doc(self) -> dict:
        return {"kind": self.kind, "root": self.root, "parents": dict(self.parents),
                "permitted": {k: sorted(v) for k, v in self.permitted.items()}}

    @staticmethod
    def from_doc(doc: dict) -> "HierarchyModel":
        parents = doc.get("parents", {})
        if not isinstance(parents, dict) or any(
                not isinstance(k, str) or not isinstance(v, str)
                for k, v in parents.items()):
            raise ConfigError("hierarchy parents must map user ids to user ids")
        permitted = doc.get("permitted", {})
        if not isinstance(permitted, dict) or any(
                not isinstance(k, str) or not isinstance(v, list)
                or any(not isinstance(x, str) for x in v)
                for k, v in permitted.items()):
            raise ConfigError("hierarchy permitted must map user ids to node lists")
        root = doc.get("root")
        if root is not None and not isinstance(root, str):
            raise ConfigError("hierarchy root must be a user id")
        return HierarchyModel(parents=parents, root=root,
                              permitted={k: set(v) for k, v in permitted.items()})


MODEL_KINDS = {
    UnconstrainedModel.kind: UnconstrainedModel,
    TurnModel.kind: TurnModel,
    OwnershipModel.kind: OwnershipModel,
    LayerModel.kind: LayerModel,
    HierarchyModel.kind: HierarchyModel,
}

_ALWAYS_ACCEPTED = (NewUserConnection, ConnectToSession)


class CompositeModel:
    """Ordered combination of rule sets, applied as a logical AND."""

    def __init__(self, models: list | None = None):
        self.models = list(models or [])
        turn_count = sum(isinstance(m, TurnModel) for m in self.models)
        if turn_count > 1:
            raise ConfigError("a session may run at most one turn model")

    def validate(self, event: EventEnvelope, status: SessionStatus) -> Verdict:
        if isinstance(event.payload, _ALWAYS_ACCEPTED):
            return Verdict.ok()
        for model in self.models:
            verdict = model.validate(event, status)
            if not verdict.accepted:
                return verdict
        return Verdict.ok()

    def apply_model_event(self, event: EventEnvelope) -> Verdict:
        """Authority-check then apply a management event; AND over claimants."""
        claimants = []
        for model in self.models:
            verdict = model.check_model_event(event)
            if verdict is None:
                continue
            if not verdict.accepted:
                return verdict
            claimants.append(model)
        for model in claimants:
            model.apply_model_event(event)
        return Verdict.ok()

    def visible_nodes(self, user_id: str, status: SessionStatus) -> set[str]:
        base: set[str] | None = None
        for model in self.models:
            contribution = model.visible_base(user_id, status)
            if contribution is None:
                continue
            base = contribution if base is None else base & contribution
        if base is None:
            return set(status.nodes)
        visible = {status.root_id}
        for nid in base:
            if nid in status.nodes:
                visible.add(nid)
                visible.update(status.ancestors(nid))
        return visible

    def higher_priority(self, user_a: str, user_b: str) -> str | None:
        """User whose changes prevail, or None when neither outranks."""
        for model in self.models:
            if isinstance(model, HierarchyModel):
                if model.is_user_ancestor(user_a, user_b):
                    return user_a
                if model.is_user_ancestor(user_b, user_a):
                    return user_b
        return None

    def turn_holder(self) -> str | None:
        for model in self.models:
            if isinstance(model, TurnModel):
                return model.holder
        return None

    def has_turn_model(self) -> bool:
        return any(isinstance(m, TurnModel) for m in self.models)

    def on_event_applied(self, event: EventEnvelope, status: SessionStatus,
                         removed_ids=()) -> None:
        for model in self.models:
            model.on_event_applied(event, status, removed_ids)

    def join(self, user_id: str) -> None:
        for model in self.models:
            model.join(user_id)

    def leave(self, user_id: str) -> None:
        for model in self.models:
            model.leave(user_id)

    def to_doc(self) -> dict:
        return {"models": [m.to_doc() for m in self.models]}

    @staticmethod
    def from_doc(doc: dict) -> "CompositeModel":
        if not isinstance(doc, dict):
            raise ConfigError("model configuration must be an object")
        entries = doc.get("models", [])
        if not isinstance(entries, list):
            raise ConfigError("models must be a list")
        models = []
        for entry in entries:
            if not isinstance(entry, dict) or "kind" not in entry:
                raise ConfigError("each model entry needs a kind")
            kind = entry["kind"]
            cls = MODEL_KINDS.get(kind)
            if cls is None:
                raise ConfigError(f"unknown collaboration model kind {kind!r}")
            models.append(cls.from_doc(entry))
        return CompositeModel(models)
