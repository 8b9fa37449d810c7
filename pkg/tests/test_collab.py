"""Collaboration model tests: rules, composition, visibility, evolution."""

import random

import pytest

import enumeration
import oracle_rules as oracle

from sara.collab import (
    CompositeModel,
    HierarchyModel,
    LayerModel,
    OwnershipModel,
    TurnModel,
    UnconstrainedModel,
)
from sara.errors import ConfigError
from sara.events import (
    Click,
    Drag,
    IncrementalUpdate,
    PassTurn,
    RequestTurn,
    TransferOwnership,
    make_event,
)
from sara.scene import Node, SessionStatus


def status_with(*node_ids):
    status = SessionStatus()
    for nid in node_ids:
        status.attach_node("root", Node(node_id=nid))
    return status


def click(sender, node):
    return make_event(sender, "s", Click(node_id=node))


def test_turn_rejects_off_turn_click():
    composite = CompositeModel([TurnModel(order=["u1", "u2"], holder="u1")])
    status = status_with("n1")
    verdict = composite.validate(click("u2", "n1"), status)
    assert not verdict.accepted
    assert verdict.rule_id == "turn"
    assert "token holder" in verdict.reason
    assert composite.validate(click("u1", "n1"), status).accepted


def test_empty_composite_accepts_everything():
    composite = CompositeModel([])
    status = status_with("n1")
    for event in [click("u1", "n1"), click("anyone", "ghost"),
                  make_event("u2", "s", Drag(node_id="n1", delta=[1, 0, 0]))]:
        assert composite.validate(event, status).accepted


def test_ownership_and_turn_composite():
    composite = CompositeModel([
        OwnershipModel(owners={"n1": "u1"}),
        TurnModel(order=["u1", "u2"], holder="u1"),
    ])
    status = status_with("n1")
    assert composite.validate(click("u1", "n1"), status).accepted
    assert not composite.validate(click("u2", "n1"), status).accepted


def test_pass_turn_wraps():
    model = TurnModel(order=["u1", "u2"], holder="u1")
    composite = CompositeModel([model])
    verdict = composite.apply_model_event(make_event("u1", "s", PassTurn()))
    assert verdict.accepted
    assert model.holder == "u2"
    verdict = composite.apply_model_event(make_event("u2", "s", PassTurn()))
    assert verdict.accepted
    assert model.holder == "u1"


def test_pass_turn_by_non_holder_rejected():
    model = TurnModel(order=["u1", "u2"], holder="u1")
    composite = CompositeModel([model])
    verdict = composite.apply_model_event(make_event("u2", "s", PassTurn()))
    assert not verdict.accepted
    assert model.holder == "u1"


def test_request_turn_queues():
    model = TurnModel(order=["u1", "u2"], holder="u1")
    composite = CompositeModel([model])
    assert composite.apply_model_event(make_event("u2", "s", RequestTurn())).accepted
    assert model.pending == ["u2"]
    composite.apply_model_event(make_event("u1", "s", PassTurn(to_user="u2")))
    assert model.holder == "u2"
    assert model.pending == []


def test_transfer_then_click_two_step():
    composite = CompositeModel([OwnershipModel(owners={"n1": "u1"})])
    status = status_with("n1")
    assert not composite.validate(click("u2", "n1"), status).accepted
    verdict = composite.apply_model_event(
        make_event("u1", "s", TransferOwnership(node_id="n1", to_user="u2")))
    assert verdict.accepted
    assert composite.validate(click("u2", "n1"), status).accepted
    assert not composite.validate(click("u1", "n1"), status).accepted


def test_transfer_requires_current_owner():
    composite = CompositeModel([OwnershipModel(owners={"n1": "u1"})])
    verdict = composite.apply_model_event(
        make_event("u2", "s", TransferOwnership(node_id="n1", to_user="u2")))
    assert not verdict.accepted
    verdict = composite.apply_model_event(
        make_event("u1", "s", TransferOwnership(node_id="ghost", to_user="u2")))
    assert not verdict.accepted


def test_layer_visibility_with_ancestors():
    composite = CompositeModel([LayerModel(
        layers={"L1": {"inner"}, "L2": {"other"}},
        access={"u1": {"L1"}})])
    status = SessionStatus()
    status.attach_node("root", Node(node_id="group"))
    status.attach_node("group", Node(node_id="inner"))
    status.attach_node("root", Node(node_id="other"))
    visible = composite.visible_nodes("u1", status)
    assert visible == {"root", "group", "inner"}


def test_hierarchy_root_sees_all():
    composite = CompositeModel([HierarchyModel(
        parents={"u2": "u1"}, permitted={"u2": {"n1"}})])
    status = status_with("n1", "n2")
    assert composite.visible_nodes("u1", status) == {"root", "n1", "n2"}
    assert composite.visible_nodes("u2", status) == {"root", "n1"}


def test_owner_only_visibility():
    composite = CompositeModel([OwnershipModel(
        owners={"n1": "u1", "n2": "u2"}, visibility="OWNER_ONLY")])
    status = status_with("n1", "n2")
    assert composite.visible_nodes("u1", status) == {"root", "n1"}
    assert composite.visible_nodes("u2", status) == {"root", "n2"}


def test_higher_priority():
    composite = CompositeModel([HierarchyModel(parents={"u2": "u1", "u3": "u2"})])
    assert composite.higher_priority("u1", "u3") == "u1"
    assert composite.higher_priority("u3", "u1") == "u1"
    assert composite.higher_priority("u2", "u3") == "u2"
    composite2 = CompositeModel([HierarchyModel(parents={"u2": "u1", "u3": "u1"})])
    assert composite2.higher_priority("u2", "u3") is None
    assert CompositeModel([]).higher_priority("a", "b") is None


def test_exhaustive_agreement_with_oracle():
    # The full sweep also runs under the acceptance suite with a time bound.
    total = enumeration.run_all()
    assert total > 30000


def test_composition_monotonicity():
    rng = random.Random(99)
    status = enumeration.base_status()
    extras = {
        "turn": lambda: TurnModel(order=["u1", "u2"],
                                  holder=rng.choice(["u1", "u2"])),
        "ownership": lambda: OwnershipModel(
            owners={n: rng.choice(["u1", "u2"])
                    for n in ["n1", "n2"] if rng.random() < 0.7},
            visibility=rng.choice(["ALL_VISIBLE", "OWNER_ONLY"])),
        "layer": lambda: LayerModel(
            layers={"L1": {n for n in ["n1", "n2"] if rng.random() < 0.6},
                    "L2": {n for n in ["n1", "n2"] if rng.random() < 0.6}},
            access={u: {l for l in ["L1", "L2"] if rng.random() < 0.6}
                    for u in ["u1", "u2"]}),
        "hierarchy": lambda: HierarchyModel(
            parents={"u2": "u1"},
            permitted={"u2": {n for n in ["n1", "n2"] if rng.random() < 0.5}}),
    }
    catalog = enumeration.event_catalog(["u1", "u2"])
    content = [(d, p) for d, p in catalog
               if d["kind"] in ("click", "drag", "update", "remove", "add",
                                "set_state")]
    for _ in range(1000):
        base_kinds = [k for k in ("turn", "ownership", "layer", "hierarchy")
                      if rng.random() < 0.4]
        base_models = [extras[k]() for k in base_kinds]
        extra_choices = [k for k in extras if k != "turn" or "turn" not in base_kinds]
        extra = extras[rng.choice(extra_choices)]()
        smaller = CompositeModel(list(base_models))
        larger = CompositeModel(list(base_models) + [extra])
        ev_dict, payload = content[rng.randrange(len(content))]
        event = make_event(ev_dict["sender"], "s", payload)
        if larger.validate(event, status).accepted:
            assert smaller.validate(event, status).accepted
        for user in ["u1", "u2"]:
            assert larger.visible_nodes(user, status) <= smaller.visible_nodes(
                user, status)


def test_turn_safety_replay():
    rng = random.Random(12)
    model = TurnModel()
    composite = CompositeModel([model])
    status = status_with("n1")
    for user in ["u1", "u2", "u3"]:
        composite.join(user)
    accepted_trace = []
    for _ in range(500):
        sender = rng.choice(["u1", "u2", "u3"])
        if rng.random() < 0.3:
            composite.apply_model_event(make_event(
                sender, "s", PassTurn(to_user=rng.choice(
                    [None, "u1", "u2", "u3"]))))
        else:
            holder_at_validation = model.holder
            verdict = composite.validate(click(sender, "n1"), status)
            if verdict.accepted:
                accepted_trace.append((sender, holder_at_validation))
    assert accepted_trace, "trace should contain accepted interactions"
    for sender, holder in accepted_trace:
        assert sender == holder


def test_visible_nodes_always_connected_subtree():
    rng = random.Random(4)
    for _ in range(50):
        status = SessionStatus()
        ids = ["root"]
        for i in range(rng.randrange(2, 15)):
            nid = f"n{i}"
            status.attach_node(rng.choice(ids), Node(node_id=nid))
            ids.append(nid)
        composite = CompositeModel([LayerModel(
            layers={"L1": {i for i in ids if rng.random() < 0.4}},
            access={"u1": {"L1"}})])
        visible = composite.visible_nodes("u1", status)
        assert "root" in visible
        for nid in visible:
            if nid != "root":
                assert status.nodes[nid].parent_id in visible


def test_join_and_leave_drive_turn_order():
    model = TurnModel()
    composite = CompositeModel([model])
    composite.join("u1")
    assert model.holder == "u1"
    composite.join("u2")
    composite.join("u3")
    assert model.order == ["u1", "u2", "u3"]
    composite.leave("u1")
    assert model.order == ["u2", "u3"]
    assert model.holder == "u2"
    composite.leave("u3")
    composite.leave("u2")
    assert model.holder is None
    assert model.order == []


def test_leave_of_non_holder_keeps_holder():
    model = TurnModel(order=["u1", "u2", "u3"], holder="u2")
    model.leave("u3")
    assert model.holder == "u2"
    assert model.order == ["u1", "u2"]


def test_composite_doc_roundtrip():
    composite = CompositeModel([
        TurnModel(order=["u1", "u2"], holder="u2", pending=["u1"]),
        OwnershipModel(owners={"n1": "u1"}, visibility="OWNER_ONLY"),
        LayerModel(layers={"L1": {"n1"}}, access={"u1": {"L1"}}),
        HierarchyModel(parents={"u2": "u1"}, permitted={"u2": {"n1"}}),
    ])
    doc = composite.to_doc()
    back = CompositeModel.from_doc(doc)
    assert back.to_doc() == doc
    assert [enumeration.canon_model(m.to_doc()) for m in back.models] == [
        enumeration.canon_model(m.to_doc()) for m in composite.models]


def test_config_errors():
    with pytest.raises(ConfigError):
        CompositeModel([TurnModel(order=["u1"]), TurnModel(order=["u2"])])
    with pytest.raises(ConfigError):
        TurnModel(order=["u1"], holder="u9")
    with pytest.raises(ConfigError):
        OwnershipModel(visibility="SOMETIMES")
    with pytest.raises(ConfigError):
        LayerModel(layers={}, access={"u1": {"L1"}})
    with pytest.raises(ConfigError):
        HierarchyModel(parents={"u1": "u2", "u2": "u1"})
    with pytest.raises(ConfigError):
        HierarchyModel(parents={})
    with pytest.raises(ConfigError):
        CompositeModel.from_doc({"models": [{"kind": "quorum"}]})
    with pytest.raises(ConfigError):
        CompositeModel.from_doc({"models": [{}]})


def test_unconstrained_model_explicit():
    composite = CompositeModel([UnconstrainedModel()])
    status = status_with("n1")
    assert composite.validate(click("u1", "n1"), status).accepted
    assert composite.visible_nodes("u1", status) == {"root", "n1"}


def test_oracle_self_check():
    # The oracle itself honors the documented turn example.
    models = [{"kind": "turn", "order": ["u1", "u2"], "holder": "u1",
               "pending": []}]
    assert not oracle.oracle_validate(models, {"sender": "u2", "kind": "click",
                                               "node": "n1"})
    assert oracle.oracle_validate(models, {"sender": "u1", "kind": "click",
                                           "node": "n1"})
