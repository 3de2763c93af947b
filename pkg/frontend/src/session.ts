/**
 * Connection and streaming session: opens the socket, streams teleop
 * frames at up to the target rate (capped at the display cadence), decodes
 * state frames into a store the renderer reads, and reconnects with
 * backoff when the link drops.
 */

import {
  MSG_CONTROL,
  MSG_STATE,
  StateFrame,
  TeleopFrame,
  decodeControl,
  decodeStateFrame,
  encodeControl,
  encodeTeleopFrame,
  nowMicros,
  peekType,
} from './protocol.js';

export interface SocketFactory {
  (url: string): WebSocket;
}

export interface SessionView {
  status: 'connecting' | 'connected' | 'closed';
  sendRateHz: number;
  latencyMsEstimate: number | null;
  echoSeq: number;
  lastState: StateFrame | null;
  recording: boolean;
  taskId: string;
  instruction: string;
  framesSent: number;
  errors: number;
}

export interface SceneDescription {
  task_id: string;
  instruction: string;
  objects: { id: number; name: string; kind: string; shape: Record<string, unknown> }[];
}

const MAX_RATE_HZ = 90;

export class Session {
  readonly view: SessionView = {
    status: 'connecting',
    sendRateHz: 0,
    latencyMsEstimate: null,
    echoSeq: 0,
    lastState: null,
    recording: false,
    taskId: '',
    instruction: '',
    framesSent: 0,
    errors: 0,
  };
  scene: SceneDescription | null = null;
  onUpdate: (() => void) | null = null;

  private ws: WebSocket | null = null;
  private url: string;
  private makeSocket: SocketFactory;
  private sendTimes = new Map<number, number>();
  private sentWindow: number[] = [];
  private lastSendMs = 0;
  private retryDelayMs = 500;
  private controlSeq = 0;
  private pendingControl = new Map<number, (payload: Record<string, unknown>) => void>();
  private closed = false;

  constructor(url: string, makeSocket: SocketFactory = (u) => new WebSocket(u)) {
    this.url = url;
    this.makeSocket = makeSocket;
    this.connect();
  }

  private connect(): void {
    if (this.closed) return;
    this.view.status = 'connecting';
    let ws: WebSocket;
    try {
      ws = this.makeSocket(this.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    ws.binaryType = 'arraybuffer';
    ws.onopen = () => {
      this.view.status = 'connected';
      this.retryDelayMs = 500;
      this.requestDescribe();
      this.notify();
    };
    ws.onclose = () => {
      this.view.status = 'closed';
      this.notify();
      this.scheduleRetry();
    };
    ws.onerror = () => {
      this.view.errors += 1;
    };
    ws.onmessage = (event) => this.handleMessage(event.data);
    this.ws = ws;
  }

  private scheduleRetry(): void {
    if (this.closed) return;
    setTimeout(() => this.connect(), this.retryDelayMs);
    this.retryDelayMs = Math.min(this.retryDelayMs * 2, 8000);
  }

  close(): void {
    this.closed = true;
    this.ws?.close();
  }

  private handleMessage(data: unknown): void {
    if (!(data instanceof ArrayBuffer)) return;
    let type: number;
    try {
      type = peekType(data);
    } catch {
      this.view.errors += 1;
      return;
    }
    if (type === MSG_STATE) {
      const state = decodeStateFrame(data);
      if (state.echoSeq < this.view.echoSeq) return; // displayed echoSeq never decreases
      const sentAt = this.sendTimes.get(state.echoSeq);
      if (sentAt !== undefined) {
        this.view.latencyMsEstimate = (performance.now() - sentAt) / 2;
        this.sendTimes.delete(state.echoSeq);
      }
      this.view.echoSeq = state.echoSeq;
      this.view.lastState = state;
      this.notify();
    } else if (type === MSG_CONTROL) {
      const { seq, payload } = decodeControl(data);
      const resolve = this.pendingControl.get(seq);
      if (resolve) {
        this.pendingControl.delete(seq);
        resolve(payload);
      }
    }
  }

  /** Send one frame, rate-capped; returns true when actually sent. */
  sendFrame(frame: TeleopFrame): boolean {
    if (!this.ws || this.view.status !== 'connected') return false;
    const now = performance.now();
    if (now - this.lastSendMs < 1000 / MAX_RATE_HZ - 0.25) return false;
    this.lastSendMs = now;
    this.ws.send(encodeTeleopFrame(frame));
    this.sendTimes.set(frame.seq, now);
    if (this.sendTimes.size > 512) {
      const oldest = this.sendTimes.keys().next().value;
      if (oldest !== undefined) this.sendTimes.delete(oldest);
    }
    this.view.framesSent += 1;
    this.sentWindow.push(now);
    while (this.sentWindow.length && this.sentWindow[0] < now - 2000) this.sentWindow.shift();
    this.view.sendRateHz = this.sentWindow.length / 2;
    return true;
  }

  control(payload: Record<string, unknown>, timeoutMs = 4000): Promise<Record<string, unknown>> {
    return new Promise((resolve, reject) => {
      if (!this.ws || this.view.status !== 'connected') {
        reject(new Error('not connected'));
        return;
      }
      this.controlSeq += 1;
      const seq = this.controlSeq;
      this.pendingControl.set(seq, resolve);
      setTimeout(() => {
        if (this.pendingControl.delete(seq)) reject(new Error('control request timed out'));
      }, timeoutMs);
      this.ws.send(encodeControl(seq, nowMicros(), payload));
    });
  }

  private async requestDescribe(): Promise<void> {
    try {
      const reply = await this.control({ describe: true });
      const scene = reply['scene'] as SceneDescription | undefined;
      if (scene) {
        this.scene = scene;
        this.view.taskId = scene.task_id;
        this.view.instruction = scene.instruction;
        this.notify();
      }
    } catch {
      // server may not be ready yet; the next reconnect retries
    }
  }

  async startEpisode(taskId?: string, seed?: number): Promise<boolean> {
    const reply = await this.control({ startEpisode: true, taskId, seed });
    this.view.recording = Boolean(reply['ok']);
    this.notify();
    return Boolean(reply['ok']);
  }

  async endEpisode(): Promise<Record<string, unknown>> {
    const reply = await this.control({ endEpisode: true });
    if (reply['ok']) this.view.recording = false;
    this.notify();
    return reply;
  }

  async reset(taskId?: string, seed?: number): Promise<Record<string, unknown>> {
    const reply = await this.control({ reset: true, taskId, seed });
    void this.requestDescribe();
    return reply;
  }

  private notify(): void {
    this.onUpdate?.();
  }
}
