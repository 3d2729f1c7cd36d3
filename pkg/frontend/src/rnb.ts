/**
 * Native reader/writer for the toolkit's portable "rnb" container.
 *
 * Wire format (little-endian):
 *   bytes 0:4       magic "RNB1"
 *   bytes 4:8       u32 sequence count N
 *   per sequence    28-byte header: u32 rows, u32 cols, u32 frames,
 *                   f32 pixelSizeKm, f32 timestepHours, i64 t0
 *   payloads        frames*rows*cols float32 row-major, in order
 *   last 8 bytes    u64 checksum of every preceding byte
 *
 * Checksum: pad the stream with zeros to a multiple of 8, read LE u64
 * words w_i, then
 *   checksum = (sum_i (w_i XOR A5A5A5A5A5A5A5A5h) * (2i + 1)  mod 2^64)
 *              XOR byteLength
 * Bit-compatible with the Python implementation, so files are
 * interchangeable in both directions.
 */

import { promises as fs } from "node:fs";

import { DataError, ValidationError } from "./errors.js";

const MAGIC = 0x31424e52; // "RNB1" as LE u32
const SALT = 0xa5a5a5a5a5a5a5a5n;
const MASK64 = (1n << 64n) - 1n;
const FILE_HEADER_BYTES = 8;
const SEQ_HEADER_BYTES = 28;

export interface GridGeometry {
  rows: number;
  cols: number;
  pixelSizeKm: number;
  timestepHours: number;
}

/** One sequence: frames*rows*cols float32 rain rates, row-major. */
export interface Sequence {
  geometry: GridGeometry;
  frames: number;
  t0: number;
  data: Float32Array;
}

export function rnbChecksum(buf: Buffer): bigint {
  const whole = buf.length & ~7;
  let acc = 0n;
  let mult = 1n;
  for (let i = 0; i < whole; i += 8) {
    const w = buf.readBigUInt64LE(i);
    acc = (acc + ((w ^ SALT) * mult & MASK64)) & MASK64;
    mult = (mult + 2n) & MASK64;
  }
  if (buf.length !== whole) {
    const tail = Buffer.alloc(8);
    buf.copy(tail, 0, whole);
    const w = tail.readBigUInt64LE(0);
    acc = (acc + ((w ^ SALT) * mult & MASK64)) & MASK64;
  }
  return acc ^ BigInt(buf.length);
}

export function encodeSequences(sequences: Sequence[]): Buffer {
  if (sequences.length === 0) {
    throw new ValidationError("nothing to write");
  }
  const headBytes = FILE_HEADER_BYTES + SEQ_HEADER_BYTES * sequences.length;
  let payloadBytes = 0;
  for (const seq of sequences) {
    const expected = seq.frames * seq.geometry.rows * seq.geometry.cols;
    if (seq.data.length !== expected) {
      throw new ValidationError(
        `sequence data has ${seq.data.length} values, expected ${expected}`
      );
    }
    payloadBytes += expected * 4;
  }
  const buf = Buffer.alloc(headBytes + payloadBytes + 8);
  buf.writeUInt32LE(MAGIC, 0);
  buf.writeUInt32LE(sequences.length, 4);
  let off = FILE_HEADER_BYTES;
  for (const seq of sequences) {
    buf.writeUInt32LE(seq.geometry.rows, off);
    buf.writeUInt32LE(seq.geometry.cols, off + 4);
    buf.writeUInt32LE(seq.frames, off + 8);
    buf.writeFloatLE(seq.geometry.pixelSizeKm, off + 12);
    buf.writeFloatLE(seq.geometry.timestepHours, off + 16);
    buf.writeBigInt64LE(BigInt(seq.t0), off + 20);
    off += SEQ_HEADER_BYTES;
  }
  for (const seq of sequences) {
    // byte-level copy keeps the exact float32 bit patterns
    const bytes = Buffer.from(seq.data.buffer, seq.data.byteOffset, seq.data.byteLength);
    bytes.copy(buf, off);
    off += seq.data.byteLength;
  }
  buf.writeBigUInt64LE(rnbChecksum(buf.subarray(0, off)), off);
  return buf;
}

export interface ReadOptions {
  /** Negative no-data marker to replace with 0 instead of failing. */
  sentinel?: number;
}

export function decodeSequences(buf: Buffer, options: ReadOptions = {}): Sequence[] {
  if (buf.length < FILE_HEADER_BYTES || buf.readUInt32LE(0) !== MAGIC) {
    throw new DataError("bad magic: not an rnb container");
  }
  const count = buf.readUInt32LE(4);
  if (count === 0) {
    throw new DataError("zero sequences");
  }
  const headBytes = FILE_HEADER_BYTES + SEQ_HEADER_BYTES * count;
  if (buf.length < headBytes + 8) {
    throw new DataError("truncated header");
  }
  const sequences: Sequence[] = [];
  let payloadBytes = 0;
  for (let s = 0; s < count; s += 1) {
    const off = FILE_HEADER_BYTES + s * SEQ_HEADER_BYTES;
    const rows = buf.readUInt32LE(off);
    const cols = buf.readUInt32LE(off + 4);
    const frames = buf.readUInt32LE(off + 8);
    const pixelSizeKm = buf.readFloatLE(off + 12);
    const timestepHours = buf.readFloatLE(off + 16);
    const t0 = Number(buf.readBigInt64LE(off + 20));
    if (rows < 1 || cols < 1 || frames < 1 || !(pixelSizeKm > 0) || !(timestepHours > 0)) {
      throw new DataError(
        `implausible header: rows=${rows} cols=${cols} frames=${frames} ` +
        `pixelSize=${pixelSizeKm} timestep=${timestepHours}`
      );
    }
    sequences.push({
      geometry: { rows, cols, pixelSizeKm, timestepHours },
      frames,
      t0,
      data: new Float32Array(0),
    });
    payloadBytes += frames * rows * cols * 4;
  }
  if (buf.length !== headBytes + payloadBytes + 8) {
    throw new DataError(
      `container is ${buf.length} bytes, layout implies ${headBytes + payloadBytes + 8}`
    );
  }
  const stored = buf.readBigUInt64LE(buf.length - 8);
  const computed = rnbChecksum(buf.subarray(0, buf.length - 8));
  if (stored !== computed) {
    throw new DataError("checksum mismatch");
  }
  let off = headBytes;
  for (const seq of sequences) {
    const n = seq.frames * seq.geometry.rows * seq.geometry.cols;
    // copy out of the pooled Buffer so the view owns exactly its bytes
    const bytes = Buffer.alloc(n * 4);
    buf.copy(bytes, 0, off, off + n * 4);
    const data = new Float32Array(bytes.buffer, 0, n);
    for (let i = 0; i < n; i += 1) {
      const v = data[i];
      if (!Number.isFinite(v)) {
        throw new DataError(`non-finite rain rate at flat index ${i}`);
      }
      if (v < 0) {
        if (options.sentinel !== undefined && v === Math.fround(options.sentinel)) {
          data[i] = 0;
        } else {
          throw new DataError(
            `negative rain rate at flat index ${i} ` +
            "(configure a sentinel if this is a no-data marker)"
          );
        }
      }
    }
    seq.data = data;
    off += n * 4;
  }
  return sequences;
}

export async function writeSequences(path: string, sequences: Sequence[]): Promise<void> {
  await fs.writeFile(path, encodeSequences(sequences));
}

export async function readSequences(path: string, options: ReadOptions = {}): Promise<Sequence[]> {
  return decodeSequences(await fs.readFile(path), options);
}

/** Write an aligned HR/LR pair (the monthly dataset unit). */
export async function writePair(path: string, hr: Sequence, lr: Sequence): Promise<void> {
  if (hr.frames !== lr.frames) {
    throw new ValidationError(`hr has ${hr.frames} frames but lr has ${lr.frames}`);
  }
  await writeSequences(path, [hr, lr]);
}

/** Read an aligned (hr, lr) pair. */
export async function readPair(
  path: string,
  options: ReadOptions = {}
): Promise<{ hr: Sequence; lr: Sequence }> {
  const sequences = await readSequences(path, options);
  if (sequences.length !== 2) {
    throw new DataError(`expected an hr/lr pair, found ${sequences.length} sequences`);
  }
  return { hr: sequences[0], lr: sequences[1] };
}
