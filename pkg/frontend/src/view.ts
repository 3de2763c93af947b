/**
 * Minimal line/primitive rendering of the kinematic scene on a 2D canvas:
 * a top-down panel (x/y) and a side panel (x/z), wireframe boxes and
 * circles only. Enough to steer demonstrations, nothing photoreal.
 */

import { SceneDescription, SessionView } from './session.js';

const COLORS: Record<string, string> = {
  fixture: '#7a7a7a',
  container: '#3c7a3c',
  freeItem: '#b05030',
  ee: '#2050c0',
};

interface Panel {
  ox: number; // canvas origin
  oy: number;
  scale: number; // px per meter
  axes: [number, number]; // world axis indices mapped to (right, up)
}

function worldToPanel(p: Panel, pos: number[]): [number, number] {
  return [p.ox + pos[p.axes[0]] * p.scale, p.oy - pos[p.axes[1]] * p.scale];
}

export class SceneRenderer {
  private ctx: CanvasRenderingContext2D;
  private top: Panel;
  private side: Panel;

  constructor(private canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext('2d');
    if (!ctx) throw new Error('canvas 2d context unavailable');
    this.ctx = ctx;
    const half = canvas.width / 2;
    this.top = { ox: half / 2, oy: canvas.height * 0.62, scale: 340, axes: [0, 1] };
    this.side = { ox: half + half / 2, oy: canvas.height * 0.8, scale: 340, axes: [0, 2] };
  }

  render(view: SessionView, scene: SceneDescription | null): void {
    const { ctx, canvas } = this;
    ctx.fillStyle = '#11131a';
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    ctx.strokeStyle = '#333';
    ctx.beginPath();
    ctx.moveTo(canvas.width / 2, 0);
    ctx.lineTo(canvas.width / 2, canvas.height);
    ctx.stroke();
    ctx.fillStyle = '#888';
    ctx.font = '11px monospace';
    ctx.fillText('top (x/y)', 8, 14);
    ctx.fillText('side (x/z)', canvas.width / 2 + 8, 14);

    const state = view.lastState;
    if (!state || !scene) return;
    const shapeById = new Map(scene.objects.map((o) => [o.id, o]));
    for (const op of state.objectPoses) {
      const meta = shapeById.get(op.id);
      if (!meta) continue;
      const color = COLORS[meta.kind] ?? '#999';
      for (const panel of [this.top, this.side]) {
        this.drawShape(panel, op.pose, meta.shape, color);
      }
    }
    // end effectors: left then right, 7 floats each
    for (const [offset, label] of [
      [0, 'L'],
      [7, 'R'],
    ] as const) {
      const pos = state.eePoses.slice(offset, offset + 3);
      for (const panel of [this.top, this.side]) {
        const [x, y] = worldToPanel(panel, pos);
        this.cross(x, y, 6, COLORS.ee);
        this.ctx.fillStyle = COLORS.ee;
        this.ctx.fillText(label, x + 6, y - 6);
      }
    }
  }

  private drawShape(panel: Panel, pose: number[], shape: Record<string, unknown>, color: string): void {
    const { ctx } = this;
    const [cx, cy] = worldToPanel(panel, pose);
    ctx.strokeStyle = color;
    ctx.lineWidth = 1;
    if (Array.isArray(shape['box'])) {
      const dims = shape['box'] as number[];
      const w = dims[panel.axes[0]] * panel.scale;
      const h = dims[panel.axes[1]] * panel.scale;
      ctx.strokeRect(cx - w / 2, cy - h / 2, w, h);
    } else if (Array.isArray(shape['cylinder'])) {
      const [r, height] = shape['cylinder'] as number[];
      if (panel.axes[1] === 2) {
        ctx.strokeRect(cx - r * panel.scale, cy - (height / 2) * panel.scale, 2 * r * panel.scale, height * panel.scale);
      } else {
        this.circle(cx, cy, r * panel.scale, color);
      }
    } else if (typeof shape['sphere'] === 'number') {
      this.circle(cx, cy, (shape['sphere'] as number) * panel.scale, color);
    }
  }

  private circle(x: number, y: number, r: number, color: string): void {
    this.ctx.strokeStyle = color;
    this.ctx.beginPath();
    this.ctx.arc(x, y, Math.max(r, 1), 0, 2 * Math.PI);
    this.ctx.stroke();
  }

  private cross(x: number, y: number, size: number, color: string): void {
    this.ctx.strokeStyle = color;
    this.ctx.beginPath();
    this.ctx.moveTo(x - size, y);
    this.ctx.lineTo(x + size, y);
    this.ctx.moveTo(x, y - size);
    this.ctx.lineTo(x, y + size);
    this.ctx.stroke();
  }
}

export function renderStatus(el: HTMLElement, view: SessionView): void {
  const latency =
    view.latencyMsEstimate === null ? 'n/a' : `${view.latencyMsEstimate.toFixed(1)} ms`;
  el.textContent =
    `${view.status} | task ${view.taskId || '?'} | send ${view.sendRateHz.toFixed(0)} Hz | ` +
    `latency ${latency} | echo #${view.echoSeq} | ` +
    `${view.recording ? 'RECORDING' : 'idle'}`;
}
