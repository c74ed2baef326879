/**
 * FDT1 binary tensors, byte-compatible with the engine's reader:
 * magic "FDT1", dtype byte (0 = float32 LE, 1 = uint8), ndim byte
 * (1..4), ndim x uint32 LE dims, row-major payload.
 */

import { readFileSync, writeFileSync } from "node:fs";

export type FdtData = Float32Array | Uint8Array;

export interface FdtTensor {
  dims: number[];
  data: FdtData;
}

const MAGIC = Buffer.from("FDT1", "ascii");
const MAX_NDIM = 4;

function elementCount(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

export function encodeFdt(tensor: FdtTensor): Buffer {
  const { dims, data } = tensor;
  if (dims.length < 1 || dims.length > MAX_NDIM) {
    throw new Error(`ndim must be in [1, ${MAX_NDIM}], got ${dims.length}`);
  }
  if (dims.some((d) => !Number.isInteger(d) || d < 1)) {
    throw new Error(`dims must be positive integers, got [${dims}]`);
  }
  if (elementCount(dims) !== data.length) {
    throw new Error(
      `dims [${dims}] demand ${elementCount(dims)} elements, data has ${data.length}`,
    );
  }
  const isFloat = data instanceof Float32Array;
  if (isFloat) {
    for (const v of data as Float32Array) {
      if (!Number.isFinite(v)) throw new Error("tensor contains NaN/Inf");
    }
  }
  const itemSize = isFloat ? 4 : 1;
  const header = Buffer.alloc(6 + 4 * dims.length);
  MAGIC.copy(header, 0);
  header.writeUInt8(isFloat ? 0 : 1, 4);
  header.writeUInt8(dims.length, 5);
  dims.forEach((d, i) => header.writeUInt32LE(d, 6 + 4 * i));
  const payload = Buffer.alloc(data.length * itemSize);
  const view = new DataView(payload.buffer, payload.byteOffset);
  if (isFloat) {
    (data as Float32Array).forEach((v, i) => view.setFloat32(4 * i, v, true));
  } else {
    payload.set(data as Uint8Array);
  }
  return Buffer.concat([header, payload]);
}

export function decodeFdt(buf: Buffer): FdtTensor {
  if (buf.length < 6 || !buf.subarray(0, 4).equals(MAGIC)) {
    throw new Error("not an FDT1 tensor (bad magic)");
  }
  const code = buf.readUInt8(4);
  const ndim = buf.readUInt8(5);
  if (code !== 0 && code !== 1) throw new Error(`unknown dtype code ${code}`);
  if (ndim < 1 || ndim > MAX_NDIM) throw new Error(`bad ndim ${ndim}`);
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) dims.push(buf.readUInt32LE(6 + 4 * i));
  const offset = 6 + 4 * ndim;
  const count = elementCount(dims);
  const itemSize = code === 0 ? 4 : 1;
  if (buf.length - offset !== count * itemSize) {
    throw new Error(
      `payload is ${buf.length - offset} bytes, dims [${dims}] demand ${count * itemSize}`,
    );
  }
  if (code === 1) {
    return { dims, data: Uint8Array.from(buf.subarray(offset)) };
  }
  const view = new DataView(buf.buffer, buf.byteOffset + offset);
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = view.getFloat32(4 * i, true);
  return { dims, data };
}

export function writeFdt(path: string, tensor: FdtTensor): void {
  writeFileSync(path, encodeFdt(tensor));
}

export function readFdt(path: string): FdtTensor {
  return decodeFdt(readFileSync(path));
}
