/** Browser entry point: wires the live ultrasound canvas, gesture input,
 * fire/assist controls, the 12-zone schematic, and the progress panel to
 * the trainer service. Everything testable lives in the imported modules;
 * this file is DOM glue only. */

import { ApiClient } from "./api.js";
import { PoseControl } from "./input.js";
import type { Frame, ResultDict, ScenarioDict } from "./protocol.js";
import { FramePlayer, replaySteps } from "./replay.js";
import { SessionChannel, SocketLike } from "./stream.js";
import {
  FpsCounter,
  chartModel,
  frameToRGBA,
  guideOverlay,
  zoneCells,
} from "./view.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
};

function paintFrame(canvas: HTMLCanvasElement, frame: Frame, overlay?: ScenarioDict): void {
  canvas.width = frame.width;
  canvas.height = frame.height;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const rgba = frameToRGBA(frame);
  ctx.putImageData(new ImageData(rgba, frame.width, frame.height), 0, 0);
  if (overlay) {
    const seg = guideOverlay(overlay.probe, {
      widthMm: frame.mmPerPx * frame.width,
      heightMm: frame.mmPerPx * frame.height,
      pxW: frame.width,
      pxH: frame.height,
    }, overlay.needle.throw_mm + overlay.insertion_mm);
    ctx.strokeStyle = "rgba(80, 220, 120, 0.9)";
    ctx.setLineDash([6, 4]);
    ctx.beginPath();
    ctx.moveTo(seg.x0, seg.y0);
    ctx.lineTo(seg.x1, seg.y1);
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

function renderZones(host: HTMLElement, hit: Iterable<number>): void {
  host.innerHTML = "";
  for (const cell of zoneCells(hit)) {
    const div = document.createElement("div");
    div.className = `zone ${cell.hit ? "hit" : ""}`;
    div.style.gridRow = String(cell.row + 1);
    div.style.gridColumn = String(cell.col + 1);
    div.title = cell.name;
    div.textContent = String(cell.id);
    host.appendChild(div);
  }
}

async function start(): Promise<void> {
  // the page is usually served statically, so default to the service's
  // conventional port on the same host; ?api=http://host:port overrides
  const apiBase =
    new URLSearchParams(location.search).get("api") ??
    `${location.protocol}//${location.hostname}:8000`;
  const api = new ApiClient(apiBase);
  const status = $("status");
  const canvas = $("frame") as unknown as HTMLCanvasElement;
  const coronalCanvas = $("coronal") as unknown as HTMLCanvasElement;

  const { scenarios } = await api.scenarios();
  const scenario = scenarios[0];
  const user = await api.createUser("trainee");
  const { session_id } = await api.createSession(user.user_id, scenario.id);
  status.textContent = `session ${session_id} on ${scenario.title}`;

  const control = new PoseControl(scenario.probe);
  const fps = new FpsCounter();
  const hitZones = new Set<number>();

  const ws = new WebSocket(api.streamUrl(session_id));
  ws.binaryType = "arraybuffer";
  const channel = new SessionChannel(ws as unknown as SocketLike, {
    onFrame: (frame, kind) => {
      if (kind === "coronal") {
        paintFrame(coronalCanvas, frame);
        return;
      }
      fps.tick(performance.now());
      $("fps").textContent = `${fps.fps(performance.now()).toFixed(1)} fps`;
      paintFrame(canvas, frame, scenario);
    },
    onEvent: async (ev) => {
      if (ev.type === "sample") {
        for (const z of ev.sample.zones) hitZones.add(z);
        renderZones($("zones"), hitZones);
        $("last-core").textContent =
          `core ${ev.sample.order_index + 1}: ${ev.sample.inside_mm.toFixed(1)} mm in gland`;
      } else if (ev.type === "result") {
        showResult(ev.result, ev.score);
        const series = await api.series(user.user_id, "simulation");
        const chart = chartModel(series.series, 320, 120);
        $("chart-line").setAttribute("points", chart.points);
        $("chart-values").textContent = JSON.stringify(series.series);
      } else if (ev.type === "error") {
        status.textContent = `error ${ev.code}: ${ev.text}`;
      }
    },
    onClose: () => { status.textContent += " (closed)"; },
  });

  function showResult(result: ResultDict, score: number): void {
    $("result").textContent =
      `score ${score.toFixed(3)} | coverage ${result.coverage.toFixed(3)} | ` +
      `order ${result.order_score.toFixed(3)} | ` +
      `out-of-gland ${result.out_of_gland_count}`;
    renderZones($("zones"), result.zone_hit_map.flatMap((h, i) => (h ? [i] : [])));
  }

  let dragging = false;
  let rolling = false;
  let last: [number, number] = [0, 0];
  canvas.addEventListener("pointerdown", (e) => {
    dragging = true;
    rolling = e.shiftKey;
    last = [e.clientX, e.clientY];
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    const dx = e.clientX - last[0];
    const dy = e.clientY - last[1];
    last = [e.clientX, e.clientY];
    if (rolling) control.rollDrag(dx);
    else control.drag(dx, dy);
    channel.sendPose(control.deviceMsg());
  });
  canvas.addEventListener("pointerup", () => { dragging = false; });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    control.wheel(e.deltaY);
    channel.sendPose(control.deviceMsg());
  }, { passive: false });

  $("fire").addEventListener("click", () => channel.fire());
  $("end").addEventListener("click", () => channel.end());
  ($("assist-coronal") as HTMLInputElement).addEventListener("change", (e) => {
    channel.setAssist("coronal", (e.target as HTMLInputElement).checked);
  });

  $("load-replay").addEventListener("click", async () => {
    const record = await api.replay(session_id);
    const steps = replaySteps(record);
    $("replay-info").textContent =
      `${steps.length} cores, zones ${steps.at(-1)?.zonesSoFar.join(",") ?? "-"}`;
  });

  renderZones($("zones"), []);
  channel.sendPose(control.deviceMsg()); // first frame at the rest pose
}

start().catch((err) => {
  document.body.insertAdjacentText("beforeend", `failed to start: ${err}`);
});

export { FramePlayer }; // replay viewer is reachable from the console too
