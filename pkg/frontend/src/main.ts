/**
 * Page wiring: connect to the server named in the query string, pump the
 * input source at the display cadence (capped at 90 Hz), render the live
 * scene, and expose the episode controls.
 */

import { InputSource } from './input.js';
import { Session } from './session.js';
import { SceneRenderer, renderStatus } from './view.js';

function param(name: string, fallback: string): string {
  return new URLSearchParams(window.location.search).get(name) ?? fallback;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function tryXr(input: InputSource): Promise<void> {
  const xr = (navigator as unknown as { xr?: { isSessionSupported(m: string): Promise<boolean> } }).xr;
  if (!xr) return;
  try {
    if (await xr.isSessionSupported('immersive-vr')) {
      el<HTMLElement>('banner').textContent =
        'XR controllers detected: use grip to clutch, trigger to close the hand.';
    }
  } catch {
    // mouse/keyboard fallback stays active
  }
}

function main(): void {
  const server = param('server', `ws://${window.location.hostname || '127.0.0.1'}:8765`);
  const task = param('task', '');
  const canvas = el<HTMLCanvasElement>('scene');
  const status = el<HTMLElement>('status');
  const banner = el<HTMLElement>('banner');

  const session = new Session(server);
  const input = new InputSource('mouseKeyboard');
  input.attach(canvas);
  const renderer = new SceneRenderer(canvas);
  void tryXr(input);

  session.onUpdate = () => renderStatus(status, session.view);

  el<HTMLButtonElement>('btn-reset').onclick = () => {
    void session.reset(task || undefined, Number(el<HTMLInputElement>('seed').value) || 0);
  };
  el<HTMLButtonElement>('btn-start').onclick = async () => {
    const ok = await session.startEpisode(task || undefined, Number(el<HTMLInputElement>('seed').value) || 0);
    banner.textContent = ok ? 'recording' : 'start rejected';
  };
  el<HTMLButtonElement>('btn-end').onclick = async () => {
    try {
      const reply = await session.endEpisode();
      banner.textContent = reply['ok'] ? `saved ${reply['file']}` : `rejected: ${reply['error']}`;
    } catch (err) {
      banner.textContent = String(err);
    }
  };

  const pump = (): void => {
    if (session.view.status === 'connected') {
      session.sendFrame(input.nextFrame());
    }
    renderer.render(session.view, session.scene);
    requestAnimationFrame(pump);
  };
  requestAnimationFrame(pump);
}

document.addEventListener('DOMContentLoaded', main);
