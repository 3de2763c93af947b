/**
 * Operator input: mouse/keyboard fallback (always available) or WebXR
 * controllers when the browser grants a session.
 *
 * Mouse mapping: drag moves the active hand in x/y, wheel moves z,
 * shift-drag rotates about the z axis, keys 1-6 toggle finger closure,
 * holding Space (or the left mouse button's clutch toggle key C) engages
 * the clutch. Tab switches the active hand. One frame is emitted per
 * animation tick at most, with strictly increasing sequence numbers.
 */

import {
  FLAG_CLUTCH,
  FLAG_EPISODE_END,
  FLAG_EPISODE_START,
  HandState,
  TeleopFrame,
  identityHand,
  nowMicros,
} from './protocol.js';

export type HandSide = 'left' | 'right';

const MOVE_SCALE = 0.001; // meters per pixel of drag
const WHEEL_SCALE = 0.0004; // meters per wheel delta unit
const ROT_SCALE = 0.004; // radians per pixel of shift-drag

interface HandModel {
  x: number;
  y: number;
  z: number;
  yaw: number;
  fingers: number[];
}

function newHandModel(): HandModel {
  return { x: 0, y: 0, z: 0, yaw: 0, fingers: [0, 0, 0, 0, 0, 0] };
}

export class InputSource {
  readonly mode: 'mouseKeyboard' | 'xrControllers';
  active: HandSide = 'left';
  clutch = false;
  private hands: Record<HandSide, HandModel> = { left: newHandModel(), right: newHandModel() };
  private dragging = false;
  private rotating = false;
  private lastPx: [number, number] | null = null;
  private seq = 0;
  private pendingStart = false;
  private pendingEnd = false;

  constructor(mode: 'mouseKeyboard' | 'xrControllers' = 'mouseKeyboard') {
    this.mode = mode;
  }

  attach(element: HTMLElement): void {
    element.addEventListener('mousedown', (e) => this.mouseDown(e.offsetX, e.offsetY, e.shiftKey));
    element.addEventListener('mouseup', () => this.mouseUp());
    element.addEventListener('mouseleave', () => this.mouseUp());
    element.addEventListener('mousemove', (e) => this.mouseMove(e.offsetX, e.offsetY));
    element.addEventListener('wheel', (e) => {
      e.preventDefault();
      this.wheel(e.deltaY);
    });
    window.addEventListener('keydown', (e) => this.keyDown(e.key));
    window.addEventListener('keyup', (e) => this.keyUp(e.key));
  }

  mouseDown(px: number, py: number, shift = false): void {
    this.dragging = true;
    this.rotating = shift;
    this.lastPx = [px, py];
  }

  mouseUp(): void {
    this.dragging = false;
    this.rotating = false;
    this.lastPx = null;
  }

  mouseMove(px: number, py: number): void {
    if (!this.dragging || !this.lastPx) return;
    const dx = px - this.lastPx[0];
    const dy = py - this.lastPx[1];
    this.lastPx = [px, py];
    const hand = this.hands[this.active];
    if (this.rotating) {
      hand.yaw += dx * ROT_SCALE;
    } else {
      hand.x += dx * MOVE_SCALE;
      hand.y -= dy * MOVE_SCALE; // screen y grows downward
    }
  }

  wheel(deltaY: number): void {
    this.hands[this.active].z -= deltaY * WHEEL_SCALE;
  }

  keyDown(key: string): void {
    if (key === ' ') this.clutch = true;
    if (key === 'Tab') this.active = this.active === 'left' ? 'right' : 'left';
    const n = Number.parseInt(key, 10);
    if (n >= 1 && n <= 6) {
      const fingers = this.hands[this.active].fingers;
      fingers[n - 1] = fingers[n - 1] > 0.5 ? 0 : 1;
    }
    if (key === 'g') this.hands[this.active].fingers = [1, 1, 1, 1, 1, 1];
    if (key === 'r') this.hands[this.active].fingers = [0, 0, 0, 0, 0, 0];
    if (key === 'Enter') this.pendingStart = true;
    if (key === 'Escape') this.pendingEnd = true;
  }

  keyUp(key: string): void {
    if (key === ' ') this.clutch = false;
  }

  setFingers(side: HandSide, closure: number): void {
    this.hands[side].fingers = new Array(6).fill(Math.min(1, Math.max(0, closure)));
  }

  handState(side: HandSide): HandState {
    const h = this.hands[side];
    const half = h.yaw / 2;
    const state: HandState = {
      position: [h.x, h.y, h.z],
      orientationWxyz: [Math.cos(half), 0, 0, Math.sin(half)],
      fingers: [...h.fingers],
      flags: this.clutch ? FLAG_CLUTCH : 0,
    };
    return state;
  }

  /** Build the next frame; at most one per animation tick. */
  nextFrame(): TeleopFrame {
    this.seq += 1;
    const left = this.active === 'left' ? this.handState('left') : this.idleHand('left');
    const right = this.active === 'right' ? this.handState('right') : this.idleHand('right');
    if (this.pendingStart) {
      left.flags |= FLAG_EPISODE_START;
      this.pendingStart = false;
    }
    if (this.pendingEnd) {
      left.flags |= FLAG_EPISODE_END;
      this.pendingEnd = false;
    }
    return { seq: this.seq, timestampMicros: nowMicros(), left, right };
  }

  private idleHand(side: HandSide): HandState {
    // the inactive hand still reports its last pose, clutch disengaged
    const state = this.handState(side);
    state.flags &= ~FLAG_CLUTCH;
    return state;
  }

  get lastSeq(): number {
    return this.seq;
  }
}
