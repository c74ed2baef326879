import assert from "node:assert/strict";
import { test } from "node:test";

import { decodeFdt, encodeFdt } from "../src/fdt.js";

test("float32 round-trip is byte-exact", () => {
  const data = Float32Array.from(
    { length: 24 }, (_, i) => Math.sin(i) * 1000);
  const buf = encodeFdt({ dims: [2, 3, 4], data });
  const back = decodeFdt(buf);
  assert.deepEqual(back.dims, [2, 3, 4]);
  assert.deepEqual(Array.from(back.data), Array.from(data));
  assert.deepEqual(encodeFdt(back), buf);
});

test("uint8 round-trip", () => {
  const data = Uint8Array.from({ length: 6 }, (_, i) => i * 40);
  const back = decodeFdt(encodeFdt({ dims: [6], data }));
  assert.deepEqual(Array.from(back.data), Array.from(data));
  assert.ok(back.data instanceof Uint8Array);
});

test("header layout matches the engine contract", () => {
  const buf = encodeFdt({ dims: [1], data: Float32Array.from([2.5]) });
  assert.equal(buf.length, 14); // 4 magic + 1 dtype + 1 ndim + 4 dim + 4 value
  assert.equal(buf.subarray(0, 4).toString("ascii"), "FDT1");
  assert.equal(buf.readUInt8(4), 0);
  assert.equal(buf.readUInt8(5), 1);
  assert.equal(buf.readUInt32LE(6), 1);
  assert.equal(buf.readFloatLE(10), 2.5);
});

test("row-major payload order", () => {
  const buf = encodeFdt({ dims: [2, 2],
                          data: Float32Array.from([1, 2, 3, 4]) });
  // header: 4 magic + 1 dtype + 1 ndim + 2 x 4 dims = 14 bytes
  assert.deepEqual(
    [14, 18, 22, 26].map((o) => buf.readFloatLE(o)), [1, 2, 3, 4]);
});

test("rejects bad shapes and values", () => {
  assert.throws(() => encodeFdt({ dims: [], data: new Float32Array(0) }));
  assert.throws(() => encodeFdt({ dims: [2], data: new Float32Array(3) }));
  assert.throws(
    () => encodeFdt({ dims: [1], data: Float32Array.from([NaN]) }));
  assert.throws(() => decodeFdt(Buffer.from("XXXX0000")));
  const truncated = encodeFdt(
    { dims: [4], data: new Float32Array(4) }).subarray(0, 16);
  assert.throws(() => decodeFdt(Buffer.from(truncated)));
});
