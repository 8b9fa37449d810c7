/**
 * Browser client for one collaborative voxel session.
 *
 * One WebSocket, one state machine.  The server is the only authority:
 * the grid shown on screen is a pure projection of the mirror, and the
 * mirror moves only when a broadcast arrives.  A click never edits the
 * world locally, it just asks.
 */

import {
  ACK,
  CONNECT_TO_SESSION,
  Envelope,
  EVENT_REJECTED,
  INTERACTION_TYPES,
  PASS_TURN,
  REQUEST_TURN,
  connectToSession,
  decodeEnvelope,
  encodeEnvelope,
  freshId,
  newUserConnection,
  passTurn as passTurnEnvelope,
  rawClick,
  requestTurn as requestTurnEnvelope,
} from "./protocol.js";
import { SceneMirror } from "./mirror.js";
import { GridCell, IsoLayout, faceWorldPoint, gridOf, pickCell, projectGrid } from "./grid.js";

export type Tool = "SHOVEL" | "BRUSH" | "ADDER";

export const WIRE_TOOLS: Record<Tool, (block: string) => string> = {
  SHOVEL: () => "shovel",
  BRUSH: (block) => `brush:${block}`,
  ADDER: () => "adder",
};

export type ConnectionStatus = "idle" | "connecting" | "connected" | "closed";

export interface TurnIndicator {
  holder: string | null;
  isMyTurn: boolean;
}

export interface LogEntry {
  eventId: string;
  verdict: "accepted" | "rejected";
  type: string;
  sender: string;
  detail: string;
}

export interface UiState {
  connection: ConnectionStatus;
  grid: GridCell[];
  tool: Tool;
  blockType: string;
  turn: TurnIndicator;
  log: LogEntry[]; // newest last, capped at LOG_CAP
}

export const LOG_CAP = 50;

/** The subset of the WebSocket surface the client needs; the ws package
 *  and every browser implementation both satisfy it. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientOptions {
  serverUrl: string;
  userName: string;
  sessionId: string;
  socketFactory?: SocketFactory;
  handshakeTimeoutMs?: number;
}

const defaultFactory: SocketFactory = (url) =>
  new (globalThis as { WebSocket: new (u: string) => SocketLike }).WebSocket(url);

export class VoxelClient {
  readonly userId: string;
  readonly sessionId: string;
  readonly serverUrl: string;
  clientId: string | null = null;

  mirror = new SceneMirror();
  state: UiState;
  /** Join order as witnessed on this connection; members who joined
   *  before us never appear, so it is knowledge, not truth. */
  joinOrder: string[] = [];
  receivedEventIds: string[] = [];
  sentEventIds: string[] = [];

  onUpdate: ((state: UiState) => void) | null = null;
  /** Fires after a decoded frame has been fully processed; lets a
   *  headless peer react to broadcasts without a second socket. */
  onEnvelope: ((env: Envelope) => void) | null = null;

  private sock: SocketLike | null = null;
  private factory: SocketFactory;
  private timeoutMs: number;
  private sentTypes = new Map<string, string>();
  private turnGateSeen = false;
  private joinResolve: (() => void) | null = null;
  private joinReject: ((err: Error) => void) | null = null;
  private joinTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(opts: ClientOptions) {
    this.userId = opts.userName;
    this.sessionId = opts.sessionId;
    this.serverUrl = opts.serverUrl;
    this.factory = opts.socketFactory ?? defaultFactory;
    this.timeoutMs = opts.handshakeTimeoutMs ?? 10000;
    this.state = {
      connection: "idle",
      grid: [],
      tool: "SHOVEL",
      blockType: "grass",
      turn: { holder: null, isMyTurn: true },
      log: [],
    };
  }

  /** Open the socket and run the handshake; resolves once the first
   *  session state has been mirrored. */
  join(): Promise<void> {
    if (this.sock !== null) return Promise.reject(new Error("already joined"));
    this.state.connection = "connecting";
    this.emit();
    return new Promise<void>((resolve, reject) => {
      this.joinResolve = resolve;
      this.joinReject = reject;
      this.joinTimer = setTimeout(() => {
        this.failJoin(new Error("handshake timed out"));
      }, this.timeoutMs);
      let sock: SocketLike;
      try {
        sock = this.factory(this.serverUrl);
      } catch (err) {
        this.failJoin(err instanceof Error ? err : new Error(String(err)));
        return;
      }
      this.sock = sock;
      sock.onopen = () => {
        this.sendEnvelope(newUserConnection(this.userId, freshId()));
      };
      sock.onmessage = (ev) => {
        if (typeof ev.data === "string") this.onFrame(ev.data);
        else this.onFrame(String(ev.data));
      };
      sock.onclose = () => {
        this.state.connection = "closed";
        this.failJoin(new Error("connection closed during handshake"));
        this.emit();
      };
      sock.onerror = () => {
        // the close handler does the bookkeeping
      };
    });
  }

  close(): void {
    if (this.sock !== null) {
      try {
        this.sock.close();
      } catch {
        // already gone
      }
      this.sock = null;
    }
    if (this.state.connection !== "closed") {
      this.state.connection = "closed";
      this.emit();
    }
  }

  // -- sending -------------------------------------------------------------

  setTool(tool: Tool): void {
    this.state.tool = tool;
    this.emit();
  }

  setBlockType(block: string): void {
    this.state.blockType = block;
    this.emit();
  }

  /**
   * Turn a canvas point into the raw interaction it means right now:
   * the front-most cube under the point, with the selected tool.  Null
   * when the point hits empty sky.
   */
  clickToInteraction(px: number, py: number, layout: IsoLayout): Envelope | null {
    const projected = projectGrid(this.state.grid, layout);
    const pick = pickCell(projected, layout, px, py);
    if (pick === null) return null;
    const tool = WIRE_TOOLS[this.state.tool](this.state.blockType);
    const point = faceWorldPoint(pick.cell, pick.face);
    return rawClick(this.userId, this.sessionId, pick.cell.nodeId, point, tool);
  }

  /** Pick and send in one step; true when something was under the click. */
  clickAt(px: number, py: number, layout: IsoLayout): boolean {
    const env = this.clickToInteraction(px, py, layout);
    if (env === null) return false;
    this.sendEnvelope(env);
    return true;
  }

  /** Offer the turn to the next member; a no-op unless it is our turn. */
  passTurn(): boolean {
    if (!this.state.turn.isMyTurn) return false;
    this.sendEnvelope(passTurnEnvelope(this.userId, this.sessionId, null));
    return true;
  }

  requestTurn(): void {
    this.sendEnvelope(requestTurnEnvelope(this.userId, this.sessionId));
  }

  sendEnvelope(env: Envelope): void {
    if (this.sock === null) return;
    this.sentEventIds.push(env.event_id);
    this.sentTypes.set(env.event_id, env.type);
    this.sock.send(encodeEnvelope(env));
  }

  // -- receiving -----------------------------------------------------------

  private onFrame(text: string): void {
    const env = decodeEnvelope(text);
    if (env === null) return; // garbled frames never kill the page
    this.receivedEventIds.push(env.event_id);
    this.route(env);
    if (this.onEnvelope !== null) this.onEnvelope(env);
  }

  private route(env: Envelope): void {
    if (env.type === ACK) {
      const clientId = env.payload.client_id;
      this.clientId = typeof clientId === "string" ? clientId : null;
      this.sendEnvelope(connectToSession(this.userId, this.sessionId));
      return;
    }
    if (env.type === EVENT_REJECTED) {
      this.onRejected(env);
      return;
    }
    const changed = this.mirror.applyBroadcast(env);
    if (changed) {
      this.state.grid = gridOf(this.mirror);
      if (this.state.connection === "connecting") {
        this.state.connection = "connected";
        this.settleJoin();
      }
    }
    this.trackMembership(env);
    this.trackTurn(env);
    this.pushLog({
      eventId: env.event_id,
      verdict: "accepted",
      type: env.type,
      sender: env.sender_id,
      detail: describe(env),
    });
    this.emit();
  }

  private onRejected(env: Envelope): void {
    const rejectedId = String(env.payload.rejected_event_id ?? "");
    const reason = String(env.payload.reason ?? "");
    const rejectedType = this.sentTypes.get(rejectedId) ?? "unknown";
    if (this.state.connection === "connecting") {
      this.failJoin(new Error(`join rejected: ${reason}`));
    }
    if (reason.startsWith("turn:")) {
      // hard evidence that a turn gate exists and we are outside it
      this.turnGateSeen = true;
      this.state.turn.isMyTurn = false;
      if (this.state.turn.holder === this.userId) this.state.turn.holder = null;
    }
    this.pushLog({
      eventId: env.event_id,
      verdict: "rejected",
      type: rejectedType,
      sender: this.userId,
      detail: reason,
    });
    this.emit();
  }

  private trackMembership(env: Envelope): void {
    if (env.type !== CONNECT_TO_SESSION) return;
    const joined = env.payload.user_id;
    if (typeof joined === "string" && !this.joinOrder.includes(joined)) {
      this.joinOrder.push(joined);
    }
  }

  /**
   * Holder tracking works from wire evidence alone.  A pass broadcast
   * names the new holder outright; an accepted interaction proves its
   * sender held the token at that moment.  Until any turn evidence
   * shows up we assume nothing gates us, so a fresh session behaves
   * like the free-for-all it usually is.
   */
  private trackTurn(env: Envelope): void {
    if (env.type === PASS_TURN || env.type === REQUEST_TURN) {
      this.turnGateSeen = true;
    }
    if (env.type === PASS_TURN) {
      const to = env.payload.to_user;
      if (typeof to === "string") {
        this.state.turn.holder = to;
      } else {
        // successor unnamed and our join-order knowledge is partial
        this.state.turn.holder = this.successorOf(env.sender_id);
      }
      this.state.turn.isMyTurn = this.state.turn.holder === this.userId;
      return;
    }
    if (this.turnGateSeen && INTERACTION_TYPES.includes(env.type)) {
      this.state.turn.holder = env.sender_id;
      this.state.turn.isMyTurn = env.sender_id === this.userId;
    }
  }

  private successorOf(sender: string): string | null {
    const i = this.joinOrder.indexOf(sender);
    if (i === -1) return null;
    if (this.joinOrder.length < 2) return null;
    return this.joinOrder[(i + 1) % this.joinOrder.length];
  }

  private pushLog(entry: LogEntry): void {
    this.state.log.push(entry);
    if (this.state.log.length > LOG_CAP) {
      this.state.log.splice(0, this.state.log.length - LOG_CAP);
    }
  }

  private settleJoin(): void {
    if (this.joinTimer !== null) clearTimeout(this.joinTimer);
    this.joinTimer = null;
    const resolve = this.joinResolve;
    this.joinResolve = null;
    this.joinReject = null;
    if (resolve !== null) resolve();
  }

  private failJoin(err: Error): void {
    if (this.joinReject === null) return;
    if (this.joinTimer !== null) clearTimeout(this.joinTimer);
    this.joinTimer = null;
    const reject = this.joinReject;
    this.joinResolve = null;
    this.joinReject = null;
    reject(err);
  }

  private emit(): void {
    if (this.onUpdate !== null) this.onUpdate(this.state);
  }
}

function describe(env: Envelope): string {
  const p = env.payload;
  switch (env.type) {
    case "information.set_session_state":
      return "session state replaced";
    case "information.add_node":
      return `added ${(p.node as { node_id?: string })?.node_id ?? "?"}`;
    case "information.remove_node":
      return `removed ${p.node_id ?? "?"}`;
    case "information.incremental_update":
      return `${p.node_id ?? "?"} ${p.property_path ?? "?"} = ${JSON.stringify(p.new_value)}`;
    case "information.connect_to_session":
      return `${p.user_id ?? "?"} joined`;
    case "interaction.click":
      return `click ${p.node_id ?? "?"} (${p.tool ?? "no tool"})`;
    case "interaction.raw":
      return `${p.gesture ?? "?"} ${p.node_id ?? "?"}`;
    case "model.pass_turn":
      return `turn passed to ${p.to_user ?? "the next member"}`;
    case "model.request_turn":
      return "turn requested";
    default:
      return env.type;
  }
}
