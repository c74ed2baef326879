/** Minimal binary PPM (P6) image I/O; the engine ingests PPM directly. */

import { readFileSync, writeFileSync } from "node:fs";

export interface RgbImage {
  height: number;
  width: number;
  pixels: Uint8Array; // height * width * 3, row-major RGB
}

export function writePpm(path: string, image: RgbImage): void {
  const { height, width, pixels } = image;
  if (pixels.length !== height * width * 3) {
    throw new Error(
      `pixel buffer is ${pixels.length} bytes for ${height}x${width}x3`,
    );
  }
  const header = Buffer.from(`P6\n${width} ${height}\n255\n`, "ascii");
  writeFileSync(path, Buffer.concat([header, Buffer.from(pixels)]));
}

export function readPpm(path: string): RgbImage {
  const buf = readFileSync(path);
  // header: magic, whitespace-separated width/height/maxval, one ws byte
  const text = buf.subarray(0, 64).toString("latin1");
  const m = /^P6\s+(\d+)\s+(\d+)\s+(\d+)\s/.exec(text);
  if (!m) throw new Error(`${path}: not a binary PPM`);
  const [, w, h, maxval] = m;
  if (maxval !== "255") throw new Error(`${path}: only 8-bit PPM supported`);
  const width = parseInt(w, 10);
  const height = parseInt(h, 10);
  const offset = m[0].length;
  const need = width * height * 3;
  if (buf.length - offset < need) {
    throw new Error(`${path}: truncated payload`);
  }
  return { height, width, pixels: Uint8Array.from(buf.subarray(offset, offset + need)) };
}
