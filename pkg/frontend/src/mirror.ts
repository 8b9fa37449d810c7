/**
 * Client-side scene mirror.
 *
 * The mirror is written by exactly one code path, applyBroadcast, so
 * every change it ever makes is traceable to a received event id.  The
 * journal keeps that trace for auditing; the UI renders from the mirror
 * and never writes to it.
 */

import {
  ADD_NODE,
  Envelope,
  INCREMENTAL_UPDATE,
  NodeDoc,
  REMOVE_NODE,
  SET_SESSION_STATE,
  StateDoc,
  decodeStateBase64,
} from "./protocol.js";

export interface MirrorNode {
  nodeId: string;
  name: string;
  parentId: string | null;
  position: number[];
  rotation: number[];
  scale: number[];
  attributes: Record<string, string>;
  children: string[];
  hasMesh: boolean;
}

export interface AppliedChange {
  eventId: string;
  kind: "state" | "add" | "remove" | "update";
  nodeId: string;
}

const JOURNAL_CAP = 512;

function vec(value: unknown, arity: number): number[] | null {
  if (!Array.isArray(value) || value.length !== arity) return null;
  for (const c of value) {
    if (typeof c !== "number" || !Number.isFinite(c)) return null;
  }
  return value.slice();
}

export class SceneMirror {
  revision = 0;
  rootId = "root";
  nodes = new Map<string, MirrorNode>();
  journal: AppliedChange[] = [];
  applied = 0;

  node(nodeId: string): MirrorNode | undefined {
    return this.nodes.get(nodeId);
  }

  childIds(nodeId: string): string[] {
    const n = this.nodes.get(nodeId);
    return n ? n.children.slice() : [];
  }

  /**
   * Apply one broadcast envelope.  Returns true when the tree changed.
   * Unknown types, unknown nodes and malformed values are skipped
   * quietly; a lagging or filtered view must never crash the page.
   */
  applyBroadcast(env: Envelope): boolean {
    switch (env.type) {
      case SET_SESSION_STATE:
        return this.applyState(env);
      case ADD_NODE:
        return this.applyAdd(env);
      case REMOVE_NODE:
        return this.applyRemove(env);
      case INCREMENTAL_UPDATE:
        return this.applyUpdate(env);
      default:
        return false;
    }
  }

  private record(eventId: string, kind: AppliedChange["kind"], nodeId: string): void {
    this.journal.push({ eventId, kind, nodeId });
    if (this.journal.length > JOURNAL_CAP) this.journal.shift();
    this.applied += 1;
  }

  private applyState(env: Envelope): boolean {
    if (env.payload.format !== "CUSTOM_JSON") return false;
    const b64 = env.payload.state_base64;
    if (typeof b64 !== "string") return false;
    const doc = decodeStateBase64(b64);
    if (doc === null) return false;
    this.adoptDoc(doc);
    this.record(env.event_id, "state", this.rootId);
    return true;
  }

  /** Replace the whole tree from a state document. */
  adoptDoc(doc: StateDoc): void {
    const nodes = new Map<string, MirrorNode>();
    const stack: Array<{ doc: NodeDoc; parent: string | null }> = [
      { doc: doc.root, parent: null },
    ];
    while (stack.length > 0) {
      const { doc: nd, parent } = stack.pop()!;
      if (typeof nd.node_id !== "string" || nodes.has(nd.node_id)) continue;
      nodes.set(nd.node_id, {
        nodeId: nd.node_id,
        name: typeof nd.name === "string" ? nd.name : "",
        parentId: parent,
        position: vec(nd.transform?.position, 3) ?? [0, 0, 0],
        rotation: vec(nd.transform?.rotation, 4) ?? [0, 0, 0, 1],
        scale: vec(nd.transform?.scale, 3) ?? [1, 1, 1],
        attributes: { ...(nd.attributes ?? {}) },
        children: [],
        hasMesh: nd.mesh != null,
      });
      if (parent !== null) nodes.get(parent)!.children.push(nd.node_id);
      const kids = Array.isArray(nd.children) ? nd.children : [];
      // reversed push keeps document order after the stack pops
      for (let i = kids.length - 1; i >= 0; i--) stack.push({ doc: kids[i], parent: nd.node_id });
    }
    this.nodes = nodes;
    this.rootId = doc.root.node_id;
    this.revision = doc.revision;
  }

  private applyAdd(env: Envelope): boolean {
    const parentId = env.payload.parent_id;
    const nd = env.payload.node as NodeDoc | undefined;
    if (typeof parentId !== "string" || nd == null || typeof nd.node_id !== "string") return false;
    const parent = this.nodes.get(parentId);
    if (parent === undefined || this.nodes.has(nd.node_id)) return false;
    this.nodes.set(nd.node_id, {
      nodeId: nd.node_id,
      name: typeof nd.name === "string" ? nd.name : "",
      parentId,
      position: vec(nd.transform?.position, 3) ?? [0, 0, 0],
      rotation: vec(nd.transform?.rotation, 4) ?? [0, 0, 0, 1],
      scale: vec(nd.transform?.scale, 3) ?? [1, 1, 1],
      attributes: { ...(nd.attributes ?? {}) },
      children: [],
      hasMesh: nd.mesh != null,
    });
    parent.children.push(nd.node_id);
    this.revision += 1;
    this.record(env.event_id, "add", nd.node_id);
    return true;
  }

  private applyRemove(env: Envelope): boolean {
    const nodeId = env.payload.node_id;
    if (typeof nodeId !== "string" || nodeId === this.rootId) return false;
    const node = this.nodes.get(nodeId);
    if (node === undefined) return false;
    const doomed = [nodeId];
    for (let i = 0; i < doomed.length; i++) {
      for (const child of this.nodes.get(doomed[i])!.children) doomed.push(child);
    }
    for (const id of doomed) this.nodes.delete(id);
    if (node.parentId !== null) {
      const parent = this.nodes.get(node.parentId);
      if (parent !== undefined) {
        parent.children = parent.children.filter((c) => c !== nodeId);
      }
    }
    this.revision += 1;
    this.record(env.event_id, "remove", nodeId);
    return true;
  }

  private applyUpdate(env: Envelope): boolean {
    const nodeId = env.payload.node_id;
    const path = env.payload.property_path;
    if (typeof nodeId !== "string" || typeof path !== "string") return false;
    const node = this.nodes.get(nodeId);
    if (node === undefined) return false;
    const value = env.payload.new_value;
    if (path === "transform.position") {
      const v = vec(value, 3);
      if (v === null) return false;
      node.position = v;
    } else if (path === "transform.rotation") {
      const v = vec(value, 4);
      if (v === null) return false;
      node.rotation = v;
    } else if (path === "transform.scale") {
      const v = vec(value, 3);
      if (v === null) return false;
      node.scale = v;
    } else if (path === "name") {
      if (typeof value !== "string") return false;
      node.name = value;
    } else if (path.startsWith("attributes.")) {
      const key = path.slice("attributes.".length);
      if (key === "" || typeof value !== "string") return false;
      node.attributes[key] = value;
    } else {
      return false;
    }
    this.revision += 1;
    this.record(env.event_id, "update", nodeId);
    return true;
  }
}
