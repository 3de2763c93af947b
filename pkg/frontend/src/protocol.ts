/**
 * Binary wire codec, mirroring the server's frame layout bit for bit.
 *
 * Header (18 bytes): magic "RMTP" | version u8 = 1 | msgType u8 |
 * seq u32 LE | timestampMicros u64 LE.
 * Hand block (53 bytes): 3xf32 position | 4xf32 quaternion (w,x,y,z) |
 * 6xf32 fingers | flags u8. A teleop frame is header + two hand blocks
 * = 124 bytes.
 */

export const MAGIC = 'RMTP';
export const VERSION = 1;

export const MSG_TELEOP = 0x01;
export const MSG_STATE = 0x02;
export const MSG_LATENCY_ECHO = 0x03;
export const MSG_CONTROL = 0x04;

export const HEADER_SIZE = 18;
export const HAND_BLOCK_SIZE = 53;
export const TELEOP_FRAME_SIZE = HEADER_SIZE + 2 * HAND_BLOCK_SIZE;

export const FLAG_CLUTCH = 0x01;
export const FLAG_EPISODE_START = 0x02;
export const FLAG_EPISODE_END = 0x04;

export interface HandState {
  position: [number, number, number];
  orientationWxyz: [number, number, number, number];
  fingers: number[]; // 6 values in [0, 1]
  flags: number;
}

export interface TeleopFrame {
  seq: number;
  timestampMicros: bigint;
  left: HandState;
  right: HandState;
}

export interface ObjectPose {
  id: number;
  pose: number[]; // x y z qw qx qy qz
}

export interface StateFrame {
  seq: number;
  timestampMicros: bigint;
  echoSeq: number;
  jointState: number[]; // 26
  eePoses: number[]; // 14, left then right
  objectPoses: ObjectPose[];
}

export class DecodeError extends Error {}

export function identityHand(flags = 0): HandState {
  return {
    position: [0, 0, 0],
    orientationWxyz: [1, 0, 0, 0],
    fingers: [0, 0, 0, 0, 0, 0],
    flags,
  };
}

function writeHeader(view: DataView, msgType: number, seq: number, ts: bigint): void {
  view.setUint8(0, MAGIC.charCodeAt(0));
  view.setUint8(1, MAGIC.charCodeAt(1));
  view.setUint8(2, MAGIC.charCodeAt(2));
  view.setUint8(3, MAGIC.charCodeAt(3));
  view.setUint8(4, VERSION);
  view.setUint8(5, msgType);
  view.setUint32(6, seq >>> 0, true);
  view.setBigUint64(10, ts, true);
}

function checkHeader(view: DataView, expectedType?: number): { msgType: number; seq: number; ts: bigint } {
  if (view.byteLength < 4) throw new DecodeError('frame shorter than the magic');
  for (let i = 0; i < 4; i++) {
    if (view.getUint8(i) !== MAGIC.charCodeAt(i)) throw new DecodeError('bad magic');
  }
  if (view.byteLength < HEADER_SIZE) throw new DecodeError('truncated header');
  const version = view.getUint8(4);
  if (version !== VERSION) throw new DecodeError(`unsupported version ${version}`);
  const msgType = view.getUint8(5);
  if (expectedType !== undefined && msgType !== expectedType) {
    throw new DecodeError(`expected msgType ${expectedType}, got ${msgType}`);
  }
  return { msgType, seq: view.getUint32(6, true), ts: view.getBigUint64(10, true) };
}

export function peekType(buf: ArrayBuffer): number {
  return checkHeader(new DataView(buf)).msgType;
}

function writeHand(view: DataView, offset: number, hand: HandState): void {
  for (let i = 0; i < 3; i++) view.setFloat32(offset + 4 * i, hand.position[i], true);
  for (let i = 0; i < 4; i++) view.setFloat32(offset + 12 + 4 * i, hand.orientationWxyz[i], true);
  for (let i = 0; i < 6; i++) view.setFloat32(offset + 28 + 4 * i, hand.fingers[i] ?? 0, true);
  view.setUint8(offset + 52, hand.flags & 0xff);
}

function readHand(view: DataView, offset: number): HandState {
  const position: [number, number, number] = [
    view.getFloat32(offset, true),
    view.getFloat32(offset + 4, true),
    view.getFloat32(offset + 8, true),
  ];
  const orientationWxyz: [number, number, number, number] = [
    view.getFloat32(offset + 12, true),
    view.getFloat32(offset + 16, true),
    view.getFloat32(offset + 20, true),
    view.getFloat32(offset + 24, true),
  ];
  const fingers: number[] = [];
  for (let i = 0; i < 6; i++) fingers.push(view.getFloat32(offset + 28 + 4 * i, true));
  return { position, orientationWxyz, fingers, flags: view.getUint8(offset + 52) };
}

export function encodeTeleopFrame(frame: TeleopFrame): ArrayBuffer {
  const buf = new ArrayBuffer(TELEOP_FRAME_SIZE);
  const view = new DataView(buf);
  writeHeader(view, MSG_TELEOP, frame.seq, frame.timestampMicros);
  writeHand(view, HEADER_SIZE, frame.left);
  writeHand(view, HEADER_SIZE + HAND_BLOCK_SIZE, frame.right);
  return buf;
}

export function decodeTeleopFrame(buf: ArrayBuffer): TeleopFrame {
  const view = new DataView(buf);
  const { seq, ts } = checkHeader(view, MSG_TELEOP);
  if (view.byteLength !== TELEOP_FRAME_SIZE) {
    throw new DecodeError(`teleop frame must be ${TELEOP_FRAME_SIZE} bytes`);
  }
  return {
    seq,
    timestampMicros: ts,
    left: readHand(view, HEADER_SIZE),
    right: readHand(view, HEADER_SIZE + HAND_BLOCK_SIZE),
  };
}

export function decodeStateFrame(buf: ArrayBuffer): StateFrame {
  const view = new DataView(buf);
  const { seq, ts } = checkHeader(view, MSG_STATE);
  const fixed = HEADER_SIZE + 4 + 26 * 4 + 14 * 4 + 2;
  if (view.byteLength < fixed) throw new DecodeError('truncated state frame');
  let off = HEADER_SIZE;
  const echoSeq = view.getUint32(off, true);
  off += 4;
  const jointState: number[] = [];
  for (let i = 0; i < 26; i++, off += 4) jointState.push(view.getFloat32(off, true));
  const eePoses: number[] = [];
  for (let i = 0; i < 14; i++, off += 4) eePoses.push(view.getFloat32(off, true));
  const count = view.getUint16(off, true);
  off += 2;
  if (view.byteLength !== off + count * 30) throw new DecodeError('state frame length mismatch');
  const objectPoses: ObjectPose[] = [];
  for (let i = 0; i < count; i++) {
    const id = view.getUint16(off, true);
    off += 2;
    const pose: number[] = [];
    for (let j = 0; j < 7; j++, off += 4) pose.push(view.getFloat32(off, true));
    objectPoses.push({ id, pose });
  }
  return { seq, timestampMicros: ts, echoSeq, jointState, eePoses, objectPoses };
}

export function encodeControl(seq: number, ts: bigint, payload: unknown): ArrayBuffer {
  const body = new TextEncoder().encode(JSON.stringify(payload));
  const buf = new ArrayBuffer(HEADER_SIZE + body.byteLength);
  writeHeader(new DataView(buf), MSG_CONTROL, seq, ts);
  new Uint8Array(buf, HEADER_SIZE).set(body);
  return buf;
}

export function decodeControl(buf: ArrayBuffer): { seq: number; payload: Record<string, unknown> } {
  const view = new DataView(buf);
  const { seq } = checkHeader(view, MSG_CONTROL);
  const text = new TextDecoder().decode(new Uint8Array(buf, HEADER_SIZE));
  return { seq, payload: JSON.parse(text) };
}

export function encodeLatencyEcho(seq: number, ts: bigint): ArrayBuffer {
  const buf = new ArrayBuffer(HEADER_SIZE);
  writeHeader(new DataView(buf), MSG_LATENCY_ECHO, seq, ts);
  return buf;
}

export function nowMicros(): bigint {
  return BigInt(Math.round(performance.now() * 1000));
}
