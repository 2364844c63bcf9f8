/** Live session channel: wraps one WebSocket, attributes binary frames to
 * views, and paces pose messages so at most one is in flight at a time
 * (the next pose goes out when the previous frame set lands, which keeps
 * the stream at whatever rate the service can actually sustain). */

import {
  ClientMsg,
  Frame,
  ServerEvent,
  decodeFrame,
  isServerEvent,
} from "./protocol.js";
import type { DeviceMsgBody } from "./input.js";

/** The subset of WebSocket the channel needs; injectable for tests. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
}

export interface ChannelHandlers {
  onFrame?: (frame: Frame, kind: "main" | "coronal") => void;
  onEvent?: (ev: ServerEvent) => void;
  onClose?: () => void;
}

export class SessionChannel {
  private coronalOn = false;
  private awaitingFrames = 0;
  private pendingPose: DeviceMsgBody | null = null;
  private expectCoronal = false;
  private closed = false;

  constructor(
    private readonly socket: SocketLike,
    private readonly handlers: ChannelHandlers = {},
  ) {
    socket.onmessage = (ev) => this.receive(ev.data);
    socket.onclose = () => {
      this.closed = true;
      this.handlers.onClose?.();
    };
  }

  /** Queue a pose; only the freshest queued pose is ever sent. */
  sendPose(body: DeviceMsgBody): void {
    if (this.closed) return;
    if (this.awaitingFrames > 0) {
      this.pendingPose = body; // coalesce: stale intermediate poses drop
      return;
    }
    this.transmitPose(body);
  }

  fire(): void {
    this.sendMsg({ type: "fire" });
  }

  setAssist(view: "coronal" | "3d", on: boolean): void {
    this.sendMsg({ type: "assist", view, on });
  }

  end(): void {
    this.sendMsg({ type: "end" });
  }

  close(): void {
    this.closed = true;
    this.socket.close();
  }

  private transmitPose(body: DeviceMsgBody): void {
    // one binary frame comes back per pose, two while coronal assist is on
    this.expectCoronal = this.coronalOn;
    this.awaitingFrames = this.coronalOn ? 2 : 1;
    this.sendMsg({ type: "pose", position: body.position, orientation: body.orientation });
  }

  /** When the in-flight pose settles, promote the freshest queued one. */
  private flushPending(): void {
    if (this.awaitingFrames === 0 && this.pendingPose) {
      const next = this.pendingPose;
      this.pendingPose = null;
      this.transmitPose(next);
    }
  }

  private sendMsg(msg: ClientMsg): void {
    if (this.closed) return;
    this.socket.send(JSON.stringify(msg));
  }

  private receive(data: unknown): void {
    if (data instanceof ArrayBuffer) {
      const frame = decodeFrame(data);
      const isCoronal = this.expectCoronal && this.awaitingFrames === 1;
      if (this.awaitingFrames > 0) this.awaitingFrames -= 1;
      this.handlers.onFrame?.(frame, isCoronal ? "coronal" : "main");
      this.flushPending();
      return;
    }
    if (typeof data === "string") {
      let parsed: unknown;
      try {
        parsed = JSON.parse(data);
      } catch {
        return;
      }
      if (!isServerEvent(parsed)) return;
      if (parsed.type === "assist_ok" && parsed.view === "coronal") {
        this.coronalOn = parsed.on;
      }
      if (parsed.type === "error") {
        // a failed pose produces no frame; release the backpressure gate
        if (parsed.code === "bad_pose" || parsed.code === "internal") {
          this.awaitingFrames = 0;
          this.flushPending();
        }
      }
      this.handlers.onEvent?.(parsed);
    }
  }
}
