/**
 * Headless voxel provider used by the live test.
 *
 * It joins a session like any member, seeds the terrain, and then acts
 * as the app logic: every accepted click broadcast (its own echoes
 * included) is answered with the matching scene mutation, which the
 * server then fans out to everyone.
 */

import { CLICK, Envelope, StateDoc, freshId, setSessionState } from "../src/protocol.js";
import { cubeCoords, cubeId, TERRAIN_GROUP } from "../src/grid.js";
import { BLOCK_COLORS } from "../src/render.js";
import { ClientOptions, VoxelClient } from "../src/client.js";
import { cubeDoc } from "./harness.js";

type Vec3 = [number, number, number];

const REACT_NORMALS: Record<string, Vec3> = {
  east: [1, 0, 0],
  west: [-1, 0, 0],
  north: [0, 1, 0],
  south: [0, -1, 0],
  up: [0, 0, 1],
  down: [0, 0, -1],
};

/** Face whose axis dominates the offset from the cube center; null on ties. */
export function dominantFace(point: number[], coords: Vec3): string | null {
  if (point.length !== 3) return null;
  const d = [point[0] - coords[0], point[1] - coords[1], point[2] - coords[2]];
  const a = d.map(Math.abs);
  const best = Math.max(a[0], a[1], a[2]);
  if (best === 0) return null;
  if (a.filter((v) => v === best).length > 1) return null;
  if (a[0] === best) return d[0] > 0 ? "east" : "west";
  if (a[1] === best) return d[1] > 0 ? "north" : "south";
  return d[2] > 0 ? "up" : "down";
}

export class ProviderPeer {
  readonly client: VoxelClient;

  constructor(opts: ClientOptions) {
    this.client = new VoxelClient(opts);
    this.client.onEnvelope = (env) => this.react(env);
  }

  join(): Promise<void> {
    return this.client.join();
  }

  close(): void {
    this.client.close();
  }

  seed(doc: StateDoc): void {
    this.client.sendEnvelope(
      setSessionState(this.client.userId, this.client.sessionId, doc),
    );
  }

  private send(type: string, payload: Record<string, unknown>): void {
    this.client.sendEnvelope({
      event_id: freshId(),
      sender_id: this.client.userId,
      session_id: this.client.sessionId,
      type,
      ts: 0,
      payload,
    });
  }

  /** Answer an accepted click broadcast with the tool's scene mutation. */
  private react(env: Envelope): void {
    if (env.type !== CLICK) return;
    const nodeId = typeof env.payload.node_id === "string" ? env.payload.node_id : null;
    const tool = typeof env.payload.tool === "string" ? env.payload.tool : "";
    if (nodeId === null) return;
    const coords = cubeCoords(nodeId);
    if (coords === null) return;
    if (!this.client.mirror.nodes.has(nodeId)) return;

    if (tool === "shovel") {
      this.send("information.remove_node", { node_id: nodeId });
      return;
    }
    if (tool.startsWith("brush:")) {
      const block = tool.slice("brush:".length);
      if (!(block in BLOCK_COLORS)) return;
      this.send("information.incremental_update", {
        node_id: nodeId,
        property_path: "attributes.block_type",
        new_value: block,
      });
      return;
    }
    if (tool === "adder") {
      const point = Array.isArray(env.payload.world_point)
        ? (env.payload.world_point as number[])
        : null;
      if (point === null) return;
      const face = dominantFace(point, coords);
      if (face === null) return;
      const n = REACT_NORMALS[face];
      const [x, y, z] = [coords[0] + n[0], coords[1] + n[1], coords[2] + n[2]];
      if (this.client.mirror.nodes.has(cubeId(x, y, z))) return;
      const block = this.client.mirror.nodes.get(nodeId)?.attributes.block_type ?? "grass";
      this.send("information.add_node", {
        parent_id: TERRAIN_GROUP,
        node: cubeDoc(x, y, z, block),
      });
    }
  }
}
