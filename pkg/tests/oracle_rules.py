"""Independent rule oracle for collaboration-model checks.

Deliberately shares no code with the package under test: states are
plain dicts, events are plain dicts with a short kind string, and every
rule is written out longhand from its documented behavior.  Enumeration
tests compare the package against this module decision by decision.

Event dicts:
  {"sender": u, "kind": k, ...} where k is one of
    click, drag, update, add, remove, set_state   (content events)
    request_turn, pass_turn, transfer, grant, revoke, set_perms
    connect                                        (always accepted)
  extra keys by kind: node, parent, to_user, layer, target, node_ids.

Model state dicts mirror the configuration documents:
  {"kind":"turn","order":[...],"holder":u|None,"pending":[...]}
  {"kind":"ownership","owners":{node:user},"visibility":...}
  {"kind":"layer","layers":{lid:[nodes]},"access":{user:[lids]}}
  {"kind":"hierarchy","root":u,"parents":{child:parent},
   "permitted":{user:[nodes]}}
"""

import copy

CONTENT_NODE_KINDS = ("click", "drag", "update", "remove")
INTERACTION_KINDS = ("click", "drag")


# --- turn ---

def turn_validate(m, ev):
    if ev["kind"] in INTERACTION_KINDS:
        if m["holder"] is None:
            return False
        if ev["sender"] != m["holder"]:
            return False
    return True


def turn_claims(ev):
    return ev["kind"] in ("request_turn", "pass_turn")


def turn_check(m, ev):
    if ev["kind"] == "request_turn":
        return ev["sender"] in m["order"]
    if ev["kind"] == "pass_turn":
        if ev["sender"] != m["holder"]:
            return False
        to = ev.get("to_user")
        return to is None or to in m["order"]
    return True


def turn_apply(m, ev):
    if ev["kind"] == "request_turn":
        if ev["sender"] != m["holder"] and ev["sender"] not in m["pending"]:
            m["pending"].append(ev["sender"])
    elif ev["kind"] == "pass_turn":
        to = ev.get("to_user")
        if to is None:
            order = m["order"]
            if not order:
                to = None
            elif m["holder"] not in order:
                to = order[0]
            else:
                to = order[(order.index(m["holder"]) + 1) % len(order)]
        m["holder"] = to
        if to in m["pending"]:
            m["pending"].remove(to)


def turn_visible(m, user, nodes):
    return set(nodes)


# --- ownership ---

def ownership_validate(m, ev):
    if ev["kind"] in CONTENT_NODE_KINDS:
        owner = m["owners"].get(ev["node"])
        if owner is None or owner != ev["sender"]:
            return False
    return True


def ownership_claims(ev):
    return ev["kind"] == "transfer"


def ownership_check(m, ev):
    if ev["kind"] == "transfer":
        owner = m["owners"].get(ev["node"])
        return owner is not None and owner == ev["sender"]
    return True


def ownership_apply(m, ev):
    if ev["kind"] == "transfer":
        m["owners"][ev["node"]] = ev["to_user"]


def ownership_visible(m, user, nodes):
    if m["visibility"] == "ALL_VISIBLE":
        return set(nodes)
    return {n for n, o in m["owners"].items() if o == user and n in nodes}


def ownership_after_content(m, ev, nodes_after, root_id):
    if ev["kind"] == "add":
        if ev["node"] not in m["owners"]:
            m["owners"][ev["node"]] = ev["sender"]
    elif ev["kind"] == "remove":
        for nid in ev.get("removed", [ev["node"]]):
            m["owners"].pop(nid, None)
    elif ev["kind"] == "set_state":
        for nid in nodes_after:
            if nid != root_id and nid not in m["owners"]:
                m["owners"][nid] = ev["sender"]
        for nid in list(m["owners"]):
            if nid not in nodes_after:
                del m["owners"][nid]


# --- layer ---

def _layer_access(m, user):
    return m["access"].get(user, [])


def layer_validate(m, ev):
    if ev["kind"] in CONTENT_NODE_KINDS:
        for lid in _layer_access(m, ev["sender"]):
            if ev["node"] in m["layers"].get(lid, []):
                return True
        return False
    if ev["kind"] == "add":
        return len(_layer_access(m, ev["sender"])) > 0
    return True


def layer_claims(ev):
    return ev["kind"] in ("grant", "revoke")


def layer_check(m, ev):
    if ev["kind"] in ("grant", "revoke"):
        if ev["layer"] not in m["layers"]:
            return False
        return ev["layer"] in _layer_access(m, ev["sender"])
    return True


def layer_apply(m, ev):
    if ev["kind"] == "grant":
        lids = m["access"].setdefault(ev["target"], [])
        if ev["layer"] not in lids:
            lids.append(ev["layer"])
    elif ev["kind"] == "revoke":
        lids = m["access"].get(ev["target"], [])
        if ev["layer"] in lids:
            lids.remove(ev["layer"])


def layer_visible(m, user, nodes):
    out = set()
    for lid in _layer_access(m, user):
        out |= {n for n in m["layers"].get(lid, []) if n in nodes}
    return out


def layer_after_content(m, ev, nodes_after, root_id):
    if ev["kind"] == "add":
        for lid in _layer_access(m, ev["sender"]):
            if ev["node"] not in m["layers"][lid]:
                m["layers"][lid].append(ev["node"])
    elif ev["kind"] == "remove":
        for lid in m["layers"]:
            m["layers"][lid] = [n for n in m["layers"][lid]
                                if n not in ev.get("removed", [ev["node"]])]
    elif ev["kind"] == "set_state":
        layered = {n for members in m["layers"].values() for n in members}
        for nid in nodes_after:
            if nid != root_id and nid not in layered:
                for lid in _layer_access(m, ev["sender"]):
                    m["layers"][lid].append(nid)
        for lid in m["layers"]:
            m["layers"][lid] = [n for n in m["layers"][lid] if n in nodes_after]


# --- hierarchy ---

def hier_is_ancestor(m, a, b):
    cur = m["parents"].get(b)
    while cur is not None:
        if cur == a:
            return True
        cur = m["parents"].get(cur)
    return False


def hier_may_touch(m, user, node):
    if user == m["root"]:
        return True
    return node in m["permitted"].get(user, [])


def hier_validate(m, ev):
    if ev["kind"] in CONTENT_NODE_KINDS:
        return hier_may_touch(m, ev["sender"], ev["node"])
    if ev["kind"] == "add":
        return hier_may_touch(m, ev["sender"], ev["parent"])
    if ev["kind"] == "set_state":
        return ev["sender"] == m["root"]
    return True


def hier_claims(ev):
    return ev["kind"] == "set_perms"


def hier_check(m, ev):
    if ev["kind"] == "set_perms":
        target = ev["target"]
        in_tree = target == m["root"] or target in m["parents"]
        if not in_tree:
            return False
        return hier_is_ancestor(m, ev["sender"], target)
    return True


def hier_apply(m, ev):
    if ev["kind"] == "set_perms":
        m["permitted"][ev["target"]] = list(ev["node_ids"])


def hier_visible(m, user, nodes):
    if user == m["root"]:
        return set(nodes)
    return {n for n in m["permitted"].get(user, []) if n in nodes}


def hier_after_content(m, ev, nodes_after, root_id):
    if ev["kind"] == "add":
        if ev["sender"] != m["root"]:
            lst = m["permitted"].setdefault(ev["sender"], [])
            if ev["node"] not in lst:
                lst.append(ev["node"])
    elif ev["kind"] == "remove":
        for user in m["permitted"]:
            m["permitted"][user] = [n for n in m["permitted"][user]
                                    if n not in ev.get("removed", [ev["node"]])]
    elif ev["kind"] == "set_state":
        for user in m["permitted"]:
            m["permitted"][user] = [n for n in m["permitted"][user]
                                    if n in nodes_after]


_RULES = {
    "turn": (turn_validate, turn_claims, turn_check, turn_apply, turn_visible, None),
    "ownership": (ownership_validate, ownership_claims, ownership_check,
                  ownership_apply, ownership_visible, ownership_after_content),
    "layer": (layer_validate, layer_claims, layer_check, layer_apply,
              layer_visible, layer_after_content),
    "hierarchy": (hier_validate, hier_claims, hier_check, hier_apply,
                  hier_visible, hier_after_content),
    "unconstrained": (lambda m, ev: True, lambda ev: False, None, None,
                      lambda m, user, nodes: set(nodes), None),
}


def oracle_validate(models, ev):
    """AND over member rules; connection events always pass."""
    if ev["kind"] == "connect":
        return True
    for m in models:
        validate = _RULES[m["kind"]][0]
        if not validate(m, ev):
            return False
    return True


def oracle_model_event(models, ev):
    """Check-all-then-apply for a management event; returns accepted."""
    claimants = []
    for m in models:
        _, claims, check, apply, _, _ = _RULES[m["kind"]]
        if claims(ev):
            if not check(m, ev):
                return False
            claimants.append((m, apply))
    for m, apply in claimants:
        apply(m, ev)
    return True


def oracle_after_content(models, ev, nodes_after, root_id):
    for m in models:
        hook = _RULES[m["kind"]][5]
        if hook is not None:
            hook(m, ev, nodes_after, root_id)


def oracle_visible(models, user, tree_parents, root_id):
    """Visible set: intersection of member sets, closed over ancestors."""
    nodes = set(tree_parents)
    base = None
    for m in models:
        vis = _RULES[m["kind"]][4]
        contribution = vis(m, user, nodes)
        if contribution >= nodes:
            continue
        base = contribution if base is None else base & contribution
    if base is None:
        return set(nodes)
    out = {root_id}
    for nid in base:
        if nid not in tree_parents:
            continue
        out.add(nid)
        cur = tree_parents[nid]
        while cur is not None:
            out.add(cur)
            cur = tree_parents[cur]
    return out


def clone(state):
    return copy.deepcopy(state)
