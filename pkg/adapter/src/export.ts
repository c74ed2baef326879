/**
 * Serialize provider output into the engine's on-disk contract:
 * FDT1 tensors, attention-stack sidecars, and JSON-lines manifests.
 */

import { appendFileSync, mkdirSync, writeFileSync } from "node:fs";
import { basename, join } from "node:path";

import { DEFAULTS, NEGATIVE_PROMPTS } from "./constants.js";
import { writeFdt } from "./fdt.js";
import { planWindows, resizedDims } from "./geometry.js";
import { readPpm, writePpm, type RgbImage } from "./ppm.js";
import type {
  CaptionInput,
  ExportJob,
  GridOut,
  Provider,
} from "./provider.js";

export function makeJob(outDir: string, overrides: Partial<ExportJob> = {}):
    ExportJob {
  return {
    outDir,
    imageSize: DEFAULTS.imageSize,
    patchSize: DEFAULTS.patchSize,
    diffusionSteps: DEFAULTS.diffusionSteps,
    attentionLayers: DEFAULTS.attentionLayers,
    attentionHeads: DEFAULTS.attentionHeads,
    dV: DEFAULTS.dV,
    dT: DEFAULTS.dT,
    windowSize: DEFAULTS.windowSize,
    windowStride: DEFAULTS.windowStride,
    seed: 0,
    negativePrompts: NEGATIVE_PROMPTS,
    backbones: {
      generator: "stable-diffusion-2-1",
      visual: "dinov2-vit-b-14",
      multimodal: "clip-vit-b-16",
    },
    ...overrides,
  };
}

function writeGrid(path: string, grid: GridOut): void {
  writeFdt(path, { dims: [grid.rows, grid.cols, grid.dim], data: grid.data });
}

function writeMatrix(path: string, grid: GridOut): void {
  writeFdt(path, { dims: [grid.rows, grid.cols], data: grid.data });
}

/**
 * Per caption: generated image, per-(t,l,h,token) attention maps with a
 * sidecar index, dense features, caption embedding, per-noun template
 * embeddings; appends one manifest line each. Returns the manifest path.
 */
export async function exportCaptionAssets(
  provider: Provider,
  captions: CaptionInput[],
  job: ExportJob,
): Promise<string> {
  mkdirSync(job.outDir, { recursive: true });
  const manifestPath = join(job.outDir, "manifest.jsonl");
  writeFileSync(manifestPath, "");
  for (const caption of captions) {
    const assets = await provider.captionAssets(caption, job);
    const id = caption.captionId;
    const stackDir = `${id}_stack`;
    mkdirSync(join(job.outDir, stackDir), { recursive: true });

    const entries = [];
    for (const m of assets.attention) {
      const rel = `${stackDir}/${m.t}_${m.l}_${m.h}_${m.token}.fdt`;
      writeFdt(join(job.outDir, rel),
               { dims: [m.rows, m.cols], data: m.data });
      entries.push({ t: m.t, l: m.l, h: m.h, token: m.token, path: rel,
                     rows: m.rows, cols: m.cols });
    }
    const sidecarRel = `${id}_stack.json`;
    writeFileSync(join(job.outDir, sidecarRel), JSON.stringify({
      image_hw: assets.imageHw,
      tokens: assets.nTokens,
      entries,
      provenance: {
        provider: provider.name,
        backbones: job.backbones,
        diffusion_steps: job.diffusionSteps,
        negative_prompts: job.negativePrompts,
        noun_extraction: "caller-supplied nouns; token indices from the "
          + "provider's tokenizer (whitespace positions for synthetic)",
      },
    }));

    const gridRel = `${id}_grid.fdt`;
    writeGrid(join(job.outDir, gridRel), assets.featureGrid);
    const capRel = `${id}_cap.fdt`;
    writeFdt(join(job.outDir, capRel),
             { dims: [assets.captionEmbed.length], data: assets.captionEmbed });
    const templateRels: Record<string, string> = {};
    for (const [noun, mat] of Object.entries(assets.templateEmbeds)) {
      const rel = `${id}_tmpl_${noun.replace(/\s+/g, "_")}.fdt`;
      writeMatrix(join(job.outDir, rel), mat);
      templateRels[noun] = rel;
    }
    writePpm(join(job.outDir, `${id}.ppm`), assets.generatedImage);

    appendFileSync(manifestPath, JSON.stringify({
      caption_id: id,
      caption_text: caption.captionText,
      nouns: caption.nouns.map((n) => ({ noun: n,
                                         tokens: assets.nounTokens[n] })),
      attention_stack: sidecarRel,
      feature_grid: gridRel,
      caption_embed: capRel,
      template_embeds: templateRels,
    }) + "\n");
  }
  return manifestPath;
}

/**
 * Per image: per-window dense grids following the resize/stride plan,
 * plus a whole-image embedding; per category: mean-template embedding.
 * Returns the inference manifest path.
 */
export async function exportInferenceAssets(
  provider: Provider,
  imagePaths: string[],
  categories: string[],
  job: ExportJob,
): Promise<string> {
  mkdirSync(job.outDir, { recursive: true });
  const manifestPath = join(job.outDir, "inputs.jsonl");
  writeFileSync(manifestPath, "");
  for (const imagePath of imagePaths) {
    const image = readPpm(imagePath);
    const imageId = basename(imagePath).replace(/\.[^.]+$/, "");
    const [hr, wr] = resizedDims(image.height, image.width, job.windowSize);
    const resized = resizeBilinear(image, hr, wr);
    const imageRel = `${imageId}.ppm`;
    writePpm(join(job.outDir, imageRel), image);

    const windows = [];
    const plan = planWindows(hr, wr, job.windowSize, job.windowStride);
    for (let i = 0; i < plan.length; i++) {
      const [top, left] = plan[i];
      const rel = `${imageId}_w${i}.fdt`;
      writeGrid(join(job.outDir, rel),
                await provider.windowGrid(resized, top, left, job));
      windows.push({ top, left, height: job.windowSize,
                     width: job.windowSize, grid: rel });
    }
    const embed = await provider.imageEmbed(resized, job);
    const embedRel = `${imageId}_embed.fdt`;
    writeFdt(join(job.outDir, embedRel),
             { dims: [embed.length], data: embed });
    appendFileSync(manifestPath, JSON.stringify({
      image_id: imageId, image: imageRel, image_embed: embedRel, windows,
    }) + "\n");
  }

  const names = categories.join("\n") + "\n";
  writeFileSync(join(job.outDir, "categories.txt"), names);
  const embeds = new Float32Array(categories.length * job.dT);
  for (let s = 0; s < categories.length; s++) {
    embeds.set(await provider.textEmbed(categories[s], job), s * job.dT);
  }
  writeFdt(join(job.outDir, "category_embeds.fdt"),
           { dims: [categories.length, job.dT], data: embeds });
  return manifestPath;
}

/** Same sampler family as the engine (align-corners=false, clamped). */
export function resizeBilinear(image: RgbImage, outH: number, outW: number):
    RgbImage {
  const { height: h, width: w, pixels } = image;
  const out = new Uint8Array(outH * outW * 3);
  for (let i = 0; i < outH; i++) {
    const sy = Math.min(Math.max(((i + 0.5) * h) / outH - 0.5, 0), h - 1);
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, h - 1);
    const fy = sy - y0;
    for (let j = 0; j < outW; j++) {
      const sx = Math.min(Math.max(((j + 0.5) * w) / outW - 0.5, 0), w - 1);
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, w - 1);
      const fx = sx - x0;
      for (let c = 0; c < 3; c++) {
        const v00 = pixels[(y0 * w + x0) * 3 + c];
        const v01 = pixels[(y0 * w + x1) * 3 + c];
        const v10 = pixels[(y1 * w + x0) * 3 + c];
        const v11 = pixels[(y1 * w + x1) * 3 + c];
        const top = v00 + fx * (v01 - v00);
        const bot = v10 + fx * (v11 - v10);
        out[(i * outW + j) * 3 + c] = Math.max(0, Math.min(255,
          Math.round(top + fy * (bot - top))));
      }
    }
  }
  return { height: outH, width: outW, pixels: out };
}
