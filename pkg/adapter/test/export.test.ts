/**
 * Contract tests: synthetic exports must validate in the engine and
 * carry the backbone output geometry (37x37 grids for 518 inputs).
 * The engine is consumed only through its CLI and file formats.
 */

import assert from "node:assert/strict";
import { execFileSync } from "node:child_process";
import { existsSync, mkdtempSync, readdirSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { test } from "node:test";

import { exportCaptionAssets, exportInferenceAssets, makeJob } from "../src/export.js";
import { readFdt } from "../src/fdt.js";
import { writePpm } from "../src/ppm.js";
import { SyntheticProvider } from "../src/provider.js";

const CAPTIONS = [
  {
    captionId: "coco-261985-0",
    captionText: "A woman riding a horse next to a wooden fence",
    nouns: ["woman", "horse", "fence"],
  },
  {
    captionId: "coco-131074-2",
    captionText: "Two dogs play with a red frisbee on the grassy field",
    nouns: ["dogs", "frisbee", "field"],
  },
  {
    captionId: "coco-393226-1",
    captionText: "A kitchen with a white stove and a small window",
    nouns: ["kitchen", "stove", "window"],
  },
];

const FAST = { diffusionSteps: 2, attentionLayers: 2, attentionHeads: 2,
               dV: 32, dT: 16 };

function runEngine(args: string[], cwd: string): string {
  return execFileSync("python3", ["-m", "protoseg", ...args],
                      { cwd, encoding: "utf-8" });
}

function makeScenePpm(dir: string): string {
  const h = 300;
  const w = 600;
  const pixels = new Uint8Array(h * w * 3);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const o = (y * w + x) * 3;
      if (x < w / 2) {
        pixels[o] = 40; pixels[o + 1] = 40; pixels[o + 2] = 200;
      } else {
        pixels[o] = 200; pixels[o + 1] = 180; pixels[o + 2] = 40;
      }
    }
  }
  const path = join(dir, "scene.ppm");
  writePpm(path, { height: h, width: w, pixels });
  return path;
}

test("caption exports validate in the engine and feed an index", async () => {
  const dir = mkdtempSync(join(tmpdir(), "adapter-captions-"));
  const job = makeJob(join(dir, "assets"), FAST);
  const provider = new SyntheticProvider();
  const manifest = await exportCaptionAssets(provider, CAPTIONS, job);

  // geometry: 518/14 backbones give 37x37 dense grids
  const grid = readFdt(join(job.outDir, "coco-261985-0_grid.fdt"));
  assert.deepEqual(grid.dims, [37, 37, FAST.dV]);
  const sidecar = JSON.parse(readFileSync(
    join(job.outDir, "coco-261985-0_stack.json"), "utf-8"));
  assert.deepEqual(sidecar.image_hw, [518, 518]);
  assert.equal(sidecar.entries.length,
               FAST.diffusionSteps * FAST.attentionLayers
               * FAST.attentionHeads * sidecar.tokens);

  // the engine's loader is the validator (exit != 0 would throw)
  runEngine(["masks", "--manifest", manifest, "--out",
             join(dir, "masks")], dir);
  const masks = readdirSync(join(dir, "masks"))
    .filter((f) => f.endsWith(".fdt"));
  assert.equal(masks.length, 9); // 3 captions x 3 nouns

  runEngine(["build-index", "--manifest", manifest, "--out",
             join(dir, "index")], dir);
  const keys = readFdt(join(dir, "index", "keys.fdt"));
  assert.deepEqual(keys.dims, [9, FAST.dT]);
});

test("image exports drive the engine end to end", async () => {
  const dir = mkdtempSync(join(tmpdir(), "adapter-images-"));
  const provider = new SyntheticProvider();

  const capJob = makeJob(join(dir, "assets"), FAST);
  const manifest = await exportCaptionAssets(provider, CAPTIONS, capJob);
  runEngine(["build-index", "--manifest", manifest, "--out",
             join(dir, "index")], dir);

  const scene = makeScenePpm(dir);
  const inferJob = makeJob(join(dir, "infer"), FAST);
  const inputs = await exportInferenceAssets(
    provider, [scene], ["horse", "dog", "kitchen"], inferJob);

  // multi-window plan for a 300x600 image resized to 448x896
  const lines = readFileSync(inputs, "utf-8").trim().split("\n");
  assert.equal(lines.length, 1);
  const record = JSON.parse(lines[0]);
  assert.deepEqual(record.windows.map((w: any) => [w.top, w.left]),
                   [[0, 0], [0, 224], [0, 448]]);
  for (const w of record.windows) {
    assert.deepEqual(readFdt(join(inferJob.outDir, w.grid)).dims,
                     [37, 37, FAST.dV]);
  }

  runEngine(["segment", "--index", join(dir, "index"),
             "--inputs", inputs,
             "--categories", join(inferJob.outDir, "categories.txt"),
             "--category-embeds", join(inferJob.outDir, "category_embeds.fdt"),
             "--felz-k", "50", "--felz-sigma", "0", "--felz-min-size", "100",
             "--topk", "3",
             "--out", join(dir, "pred")], dir);
  const mask = readFdt(join(dir, "pred", "scene.fdt"));
  assert.deepEqual(mask.dims, [300, 600]); // back at original resolution
  const labels = new Set(mask.data as Uint8Array);
  for (const l of labels) assert.ok(l < 3, `label ${l} out of range`);
  assert.ok(existsSync(join(dir, "pred", "provenance.json")));
});

test("synthetic exports are deterministic", async () => {
  const a = mkdtempSync(join(tmpdir(), "adapter-det-a-"));
  const b = mkdtempSync(join(tmpdir(), "adapter-det-b-"));
  const provider = new SyntheticProvider();
  await exportCaptionAssets(provider, [CAPTIONS[0]],
                            makeJob(join(a, "out"), FAST));
  await exportCaptionAssets(provider, [CAPTIONS[0]],
                            makeJob(join(b, "out"), FAST));
  for (const name of readdirSync(join(a, "out")).sort()) {
    const fa = join(a, "out", name);
    const fb = join(b, "out", name);
    if (name.endsWith(".fdt") || name.endsWith(".ppm")) {
      assert.deepEqual(readFileSync(fa), readFileSync(fb), name);
    }
  }
});
