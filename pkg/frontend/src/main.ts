/**
 * Page bootstrap: query params, DOM wiring, one render loop.
 *
 * The page is a static bundle; point it at a server with
 * ?server=ws://host:port&session=name&name=user.  Everything the user
 * sees is recomputed from the client's UiState on every update, there
 * is no second source of truth hiding in the DOM.
 */

import { Tool, UiState, VoxelClient, SocketFactory } from "./client.js";
import { IsoLayout, layoutFor, projectGrid } from "./grid.js";
import { BLOCK_COLORS, drawScene } from "./render.js";

export interface BootOptions {
  serverUrl?: string;
  sessionId?: string;
  userName?: string;
  socketFactory?: SocketFactory;
}

export interface AppHandle {
  client: VoxelClient;
  canvas: HTMLCanvasElement;
  layout(): IsoLayout;
  joined: Promise<void>;
}

const TOOLS: Tool[] = ["SHOVEL", "BRUSH", "ADDER"];

export function paramsFrom(search: string): Required<Omit<BootOptions, "socketFactory">> {
  const params = new URLSearchParams(search);
  return {
    serverUrl: params.get("server") ?? "ws://127.0.0.1:7401/",
    sessionId: params.get("session") ?? "voxel",
    userName: params.get("name") ?? `guest-${Math.random().toString(16).slice(2, 6)}`,
  };
}

export function boot(doc: Document, opts: BootOptions = {}): AppHandle {
  const fromUrl = paramsFrom(doc.location?.search ?? "");
  const canvas = doc.getElementById("scene") as HTMLCanvasElement | null;
  if (canvas === null) throw new Error("page has no #scene canvas");
  const badge = doc.getElementById("connection")!;
  const turnLabel = doc.getElementById("turn")!;
  const passButton = doc.getElementById("pass-turn") as HTMLButtonElement;
  const blockSelect = doc.getElementById("block") as HTMLSelectElement;
  const logList = doc.getElementById("log-list")!;
  const statusLine = doc.getElementById("status")!;

  const client = new VoxelClient({
    serverUrl: opts.serverUrl ?? fromUrl.serverUrl,
    userName: opts.userName ?? fromUrl.userName,
    sessionId: opts.sessionId ?? fromUrl.sessionId,
    socketFactory: opts.socketFactory,
  });

  for (const block of Object.keys(BLOCK_COLORS)) {
    const option = doc.createElement("option");
    option.value = block;
    option.textContent = block;
    blockSelect.appendChild(option);
  }
  blockSelect.value = client.state.blockType;
  blockSelect.addEventListener("change", () => client.setBlockType(blockSelect.value));

  const toolButtons = new Map<Tool, HTMLButtonElement>();
  for (const tool of TOOLS) {
    const button = doc.getElementById(`tool-${tool.toLowerCase()}`) as HTMLButtonElement;
    toolButtons.set(tool, button);
    button.addEventListener("click", () => client.setTool(tool));
  }

  passButton.addEventListener("click", () => client.passTurn());

  let layout = layoutFor(client.state.grid, canvas.width, canvas.height);

  canvas.addEventListener("click", (ev) => {
    const rect = canvas.getBoundingClientRect();
    client.clickAt(ev.clientX - rect.left, ev.clientY - rect.top, layout);
  });

  const render = (state: UiState) => {
    layout = layoutFor(state.grid, canvas.width, canvas.height);
    drawScene(canvas, projectGrid(state.grid, layout), layout);
    badge.textContent = state.connection;
    badge.className = `badge badge-${state.connection}`;
    for (const [tool, button] of toolButtons) {
      button.classList.toggle("active", state.tool === tool);
    }
    if (state.turn.holder === null) {
      turnLabel.textContent = state.turn.isMyTurn ? "open floor" : "turn: someone else";
    } else if (state.turn.isMyTurn) {
      turnLabel.textContent = "your turn";
    } else {
      turnLabel.textContent = `turn: ${state.turn.holder}`;
    }
    passButton.disabled = !state.turn.isMyTurn;
    logList.textContent = "";
    for (const entry of state.log) {
      const item = doc.createElement("li");
      item.className = entry.verdict;
      item.textContent = `${entry.verdict === "rejected" ? "✗" : "✓"} ${entry.sender}: ${entry.detail}`;
      logList.appendChild(item);
    }
    logList.scrollTop = logList.scrollHeight;
  };

  client.onUpdate = render;
  render(client.state);

  statusLine.textContent = `${client.userId} @ ${client.serverUrl} (${client.sessionId})`;
  const joined = client.join().catch((err: Error) => {
    statusLine.textContent = `connection failed: ${err.message}`;
    throw err;
  });

  return { client, canvas, layout: () => layout, joined };
}

// Module scripts run after parsing, so the canvas is there on a real
// page; a bare import in a test harness leaves booting to the harness.
if (typeof document !== "undefined" && document.getElementById("scene") !== null) {
  boot(document);
}
