/**
 * Bit-exact tensor container, byte-compatible with the training side.
 *
 * Layout of a `.mmct` file:
 *
 *     magic   4 bytes  "MMCT"
 *     version u32 LE   = 1
 *     dtype   u8       1 = float32, 2 = float64
 *     rank    u8
 *     dims    rank x u64 LE
 *     payload product(dims) * itemsize bytes, row-major, little-endian
 *
 * The sibling `.ids` file holds one sample id per line (utf-8, trailing
 * newline on every line). All writes go through write-then-rename so a
 * crashed run never leaves a truncated file under the final name.
 */

import { promises as fs } from "node:fs";
import * as path from "node:path";

const MAGIC = "MMCT";
const VERSION = 1;
const DTYPE_F64 = 2;

export interface Tensor2D {
  rows: number;
  cols: number;
  /** Row-major values, rows * cols long. */
  data: Float64Array;
}

export function encodeTensor2D(t: Tensor2D): Buffer {
  if (t.data.length !== t.rows * t.cols) {
    throw new Error(`tensor data length ${t.data.length} != ${t.rows}x${t.cols}`);
  }
  const header = Buffer.alloc(4 + 4 + 1 + 1 + 8 * 2);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt8(DTYPE_F64, 8);
  header.writeUInt8(2, 9); // rank
  header.writeBigUInt64LE(BigInt(t.rows), 10);
  header.writeBigUInt64LE(BigInt(t.cols), 18);
  const payload = Buffer.alloc(8 * t.data.length);
  for (let i = 0; i < t.data.length; i++) {
    payload.writeDoubleLE(t.data[i], 8 * i);
  }
  return Buffer.concat([header, payload]);
}

export function decodeTensor2D(buf: Buffer, source = "<buffer>"): Tensor2D {
  if (buf.length < 10 || buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error(`${source}: not a tensor container (bad magic)`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== VERSION) {
    throw new Error(`${source}: unsupported container version ${version}`);
  }
  const dtype = buf.readUInt8(8);
  if (dtype !== DTYPE_F64) {
    throw new Error(`${source}: expected float64 tensor, got dtype code ${dtype}`);
  }
  const rank = buf.readUInt8(9);
  if (rank !== 2) {
    throw new Error(`${source}: expected a rank-2 tensor, got rank ${rank}`);
  }
  const rows = Number(buf.readBigUInt64LE(10));
  const cols = Number(buf.readBigUInt64LE(18));
  const expected = 26 + 8 * rows * cols;
  if (buf.length !== expected) {
    throw new Error(`${source}: expected ${expected} bytes, got ${buf.length}`);
  }
  const data = new Float64Array(rows * cols);
  for (let i = 0; i < data.length; i++) {
    data[i] = buf.readDoubleLE(26 + 8 * i);
  }
  return { rows, cols, data };
}

export function encodeIdList(ids: string[]): Buffer {
  return Buffer.from(ids.map((id) => id + "\n").join(""), "utf-8");
}

export function decodeIdList(buf: Buffer): string[] {
  return buf
    .toString("utf-8")
    .split("\n")
    .filter((line) => line.trim() !== "");
}

export function idsPathFor(featuresPath: string): string {
  const parsed = path.parse(featuresPath);
  return path.join(parsed.dir, parsed.name + ".ids");
}

export async function writeFileAtomic(file: string, data: Buffer): Promise<void> {
  const tmp = file + ".tmp";
  const handle = await fs.open(tmp, "w");
  try {
    await handle.writeFile(data);
    await handle.sync();
  } finally {
    await handle.close();
  }
  await fs.rename(tmp, file);
}
