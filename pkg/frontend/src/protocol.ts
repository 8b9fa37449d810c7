/**
 * Wire protocol for the collaborative scene server.
 *
 * Every message is one JSON envelope per WebSocket text frame:
 *
 *   { event_id, sender_id, session_id, type, ts, payload }
 *
 * This module speaks the format directly instead of wrapping a client
 * library, so the whole browser bundle stays dependency free.  The
 * handshake is three steps: send new_user_connection, wait for the ack,
 * send connect_to_session, then adopt the state push and apply every
 * broadcast that follows it.
 */

export const RAW_INTERACTION = "interaction.raw";
export const CLICK = "interaction.click";
export const DRAG = "interaction.drag";
export const NEW_USER_CONNECTION = "information.new_user_connection";
export const CONNECT_TO_SESSION = "information.connect_to_session";
export const SET_SESSION_STATE = "information.set_session_state";
export const INCREMENTAL_UPDATE = "information.incremental_update";
export const ADD_NODE = "information.add_node";
export const REMOVE_NODE = "information.remove_node";
export const EVENT_REJECTED = "information.event_rejected";
export const ACK = "information.ack";
export const REQUEST_TURN = "model.request_turn";
export const PASS_TURN = "model.pass_turn";

export const INTERACTION_TYPES = [RAW_INTERACTION, CLICK, DRAG];

export interface Envelope {
  event_id: string;
  sender_id: string;
  session_id: string;
  type: string;
  ts: number;
  payload: Record<string, unknown>;
}

export interface TransformDoc {
  position: number[];
  rotation: number[];
  scale: number[];
}

export interface MeshDoc {
  vertices: number[];
  triangles: number[];
  normals: number[];
}

export interface NodeDoc {
  node_id: string;
  name: string;
  transform: TransformDoc;
  mesh: MeshDoc | null;
  attributes: Record<string, string>;
  children: NodeDoc[];
}

export interface StateDoc {
  revision: number;
  root: NodeDoc;
}

export function freshId(): string {
  const c = globalThis.crypto as Crypto | undefined;
  if (c && typeof c.randomUUID === "function") return c.randomUUID();
  // v4 shape without the crypto API, for plain-http pages
  let out = "";
  for (const ch of "xxxxxxxx-xxxx-4xxx-yxxx-xxxxxxxxxxxx") {
    if (ch === "x") out += ((Math.random() * 16) | 0).toString(16);
    else if (ch === "y") out += (((Math.random() * 4) | 0) + 8).toString(16);
    else out += ch;
  }
  return out;
}

export function encodeEnvelope(env: Envelope): string {
  return JSON.stringify({
    event_id: env.event_id,
    sender_id: env.sender_id,
    session_id: env.session_id,
    type: env.type,
    ts: env.ts,
    payload: env.payload,
  });
}

/** Parse one frame; anything malformed is dropped as null, never thrown. */
export function decodeEnvelope(text: string): Envelope | null {
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) return null;
  const rec = obj as Record<string, unknown>;
  if (typeof rec.event_id !== "string" || typeof rec.sender_id !== "string") return null;
  if (typeof rec.session_id !== "string" || typeof rec.type !== "string") return null;
  const payload = rec.payload;
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) return null;
  const ts = typeof rec.ts === "number" ? rec.ts : 0;
  return {
    event_id: rec.event_id,
    sender_id: rec.sender_id,
    session_id: rec.session_id,
    type: rec.type,
    ts,
    payload: payload as Record<string, unknown>,
  };
}

function envelope(sender: string, session: string, type: string,
                  payload: Record<string, unknown>): Envelope {
  return { event_id: freshId(), sender_id: sender, session_id: session, type, ts: 0, payload };
}

export function newUserConnection(userId: string, clientId: string): Envelope {
  // session_id stays empty until the ack names us
  return envelope(userId, "", NEW_USER_CONNECTION, {
    user_id: userId,
    connection_method: "WEBSOCKET",
    convention: "RIGHT_HANDED",
    device_profile: "DESKTOP_POINTER",
    auth_token: null,
    client_id: clientId,
  });
}

export function connectToSession(userId: string, sessionId: string): Envelope {
  return envelope(userId, sessionId, CONNECT_TO_SESSION, {
    session_id: sessionId,
    user_id: userId,
    reception_format: "CUSTOM_JSON",
  });
}

export function rawClick(userId: string, sessionId: string, nodeId: string,
                         point: number[] | null, tool: string): Envelope {
  return envelope(userId, sessionId, RAW_INTERACTION, {
    gesture: "click",
    node_id: nodeId,
    point,
    delta: null,
    tool,
  });
}

export function passTurn(userId: string, sessionId: string,
                         toUser: string | null = null): Envelope {
  return envelope(userId, sessionId, PASS_TURN, { to_user: toUser });
}

export function requestTurn(userId: string, sessionId: string): Envelope {
  return envelope(userId, sessionId, REQUEST_TURN, {});
}

// -- state documents -------------------------------------------------------

function bytesFromBase64(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

function base64FromText(text: string): string {
  const bytes = new TextEncoder().encode(text);
  let bin = "";
  for (const b of bytes) bin += String.fromCharCode(b);
  return btoa(bin);
}

/** Decode a CUSTOM_JSON state push; null for anything unreadable. */
export function decodeStateBase64(b64: string): StateDoc | null {
  let text: string;
  try {
    text = new TextDecoder("utf-8", { fatal: true }).decode(bytesFromBase64(b64));
  } catch {
    return null;
  }
  let obj: unknown;
  try {
    obj = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null) return null;
  const rec = obj as Record<string, unknown>;
  if (typeof rec.revision !== "number") return null;
  if (typeof rec.root !== "object" || rec.root === null) return null;
  return rec as unknown as StateDoc;
}

export function encodeStateBase64(doc: StateDoc): string {
  return base64FromText(JSON.stringify(doc));
}

export function setSessionState(userId: string, sessionId: string,
                                doc: StateDoc): Envelope {
  return envelope(userId, sessionId, SET_SESSION_STATE, {
    format: "CUSTOM_JSON",
    state_base64: encodeStateBase64(doc),
  });
}
