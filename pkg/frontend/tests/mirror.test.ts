import { describe, expect, test } from "vitest";

import { SceneMirror } from "../src/mirror.js";
import {
  ADD_NODE,
  INCREMENTAL_UPDATE,
  REMOVE_NODE,
  decodeEnvelope,
} from "../src/protocol.js";
import { cubeDoc, serverEnvelope, stateDoc, stateFrame } from "./harness.js";

function seeded(): SceneMirror {
  const mirror = new SceneMirror();
  const frame = stateFrame(stateDoc(3, [
    [0, 0, 0, "grass"],
    [1, 0, 0, "stone"],
    [1, 0, 1, "wood"],
  ]));
  mirror.applyBroadcast(decodeEnvelope(frame)!);
  return mirror;
}

describe("state adoption", () => {
  test("a state push replaces the whole tree", () => {
    const mirror = seeded();
    expect(mirror.revision).toBe(3);
    expect(mirror.rootId).toBe("root");
    expect(mirror.childIds("terrain").sort()).toEqual(
      ["cube_0_0_0", "cube_1_0_0", "cube_1_0_1"]);
    expect(mirror.node("cube_1_0_1")!.attributes.block_type).toBe("wood");
    expect(mirror.node("cube_1_0_1")!.parentId).toBe("terrain");

    const corrective = stateFrame(stateDoc(9, [[5, 5, 0, "sand"]]));
    mirror.applyBroadcast(decodeEnvelope(corrective)!);
    expect(mirror.revision).toBe(9);
    expect(mirror.childIds("terrain")).toEqual(["cube_5_5_0"]);
    expect(mirror.node("cube_0_0_0")).toBeUndefined();
  });

  test("a garbled state push changes nothing", () => {
    const mirror = seeded();
    const before = mirror.revision;
    const bad = serverEnvelope("information.set_session_state", {
      format: "CUSTOM_JSON",
      state_base64: "@@not-base64@@",
    });
    expect(mirror.applyBroadcast(bad)).toBe(false);
    expect(mirror.revision).toBe(before);
    expect(mirror.childIds("terrain")).toHaveLength(3);
  });
});

describe("incremental broadcasts", () => {
  test("add, update, remove walk the revision forward", () => {
    const mirror = seeded();
    expect(mirror.applyBroadcast(serverEnvelope(ADD_NODE, {
      parent_id: "terrain",
      node: cubeDoc(2, 0, 0, "water"),
    }))).toBe(true);
    expect(mirror.revision).toBe(4);
    expect(mirror.node("cube_2_0_0")!.attributes.block_type).toBe("water");

    expect(mirror.applyBroadcast(serverEnvelope(INCREMENTAL_UPDATE, {
      node_id: "cube_2_0_0",
      property_path: "attributes.block_type",
      new_value: "sand",
    }))).toBe(true);
    expect(mirror.node("cube_2_0_0")!.attributes.block_type).toBe("sand");

    expect(mirror.applyBroadcast(serverEnvelope(REMOVE_NODE, {
      node_id: "cube_2_0_0",
    }))).toBe(true);
    expect(mirror.node("cube_2_0_0")).toBeUndefined();
    expect(mirror.childIds("terrain")).toHaveLength(3);
    expect(mirror.revision).toBe(6);
  });

  test("removing a group takes its subtree along", () => {
    const mirror = seeded();
    mirror.applyBroadcast(serverEnvelope(REMOVE_NODE, { node_id: "terrain" }));
    expect(mirror.node("terrain")).toBeUndefined();
    expect(mirror.node("cube_0_0_0")).toBeUndefined();
    expect(mirror.childIds("root")).toEqual([]);
    expect(mirror.nodes.size).toBe(1);
  });

  test("position updates land on the node", () => {
    const mirror = seeded();
    mirror.applyBroadcast(serverEnvelope(INCREMENTAL_UPDATE, {
      node_id: "cube_1_0_0",
      property_path: "transform.position",
      new_value: [4, 0, 0],
    }));
    expect(mirror.node("cube_1_0_0")!.position).toEqual([4, 0, 0]);
  });
});

describe("skip discipline", () => {
  test.each([
    ["unknown parent", serverEnvelope(ADD_NODE, { parent_id: "nowhere", node: cubeDoc(9, 9, 9, "grass") })],
    ["duplicate node id", serverEnvelope(ADD_NODE, { parent_id: "terrain", node: cubeDoc(0, 0, 0, "grass") })],
    ["unknown remove target", serverEnvelope(REMOVE_NODE, { node_id: "cube_9_9_9" })],
    ["removing the root", serverEnvelope(REMOVE_NODE, { node_id: "root" })],
    ["unknown update target", serverEnvelope(INCREMENTAL_UPDATE, { node_id: "cube_9_9_9", property_path: "name", new_value: "x" })],
    ["unsupported path", serverEnvelope(INCREMENTAL_UPDATE, { node_id: "cube_0_0_0", property_path: "mesh", new_value: null })],
    ["wrong arity position", serverEnvelope(INCREMENTAL_UPDATE, { node_id: "cube_0_0_0", property_path: "transform.position", new_value: [1, 2] })],
    ["non string attribute", serverEnvelope(INCREMENTAL_UPDATE, { node_id: "cube_0_0_0", property_path: "attributes.block_type", new_value: 5 })],
  ])("%s is skipped without a revision bump", (_label, env) => {
    const mirror = seeded();
    const before = mirror.revision;
    expect(mirror.applyBroadcast(env)).toBe(false);
    expect(mirror.revision).toBe(before);
    expect(mirror.journal).toHaveLength(1); // just the seed state push
  });
});

describe("audit journal", () => {
  test("every applied change carries the event id that caused it", () => {
    const mirror = seeded();
    const add = serverEnvelope(ADD_NODE, { parent_id: "terrain", node: cubeDoc(3, 3, 0, "grass") });
    const update = serverEnvelope(INCREMENTAL_UPDATE, {
      node_id: "cube_3_3_0", property_path: "attributes.block_type", new_value: "stone",
    });
    const remove = serverEnvelope(REMOVE_NODE, { node_id: "cube_3_3_0" });
    for (const env of [add, update, remove]) mirror.applyBroadcast(env);
    expect(mirror.journal.slice(1).map((j) => j.eventId)).toEqual(
      [add.event_id, update.event_id, remove.event_id]);
    expect(mirror.journal.map((j) => j.kind)).toEqual(["state", "add", "update", "remove"]);
    expect(mirror.applied).toBe(4);
  });
});
