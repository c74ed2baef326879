/**
 * Backbone providers. A provider is the only part that touches model
 * weights; everything else is serialization. `SyntheticProvider` is a
 * deterministic stand-in with the real backbones' output geometry
 * (correct grid sizes, token axes, embedding widths) so the export
 * contract is testable anywhere. `PythonBridgeProvider` (bridge.ts)
 * drives the actual generator/encoders when they are installed.
 */

import { TEMPLATES } from "./constants.js";
import { mulberry32, hashString, seededVector } from "./rng.js";
import type { RgbImage } from "./ppm.js";

export interface ExportJob {
  outDir: string;
  imageSize: number;
  patchSize: number;
  diffusionSteps: number;
  attentionLayers: number;
  attentionHeads: number;
  dV: number;
  dT: number;
  windowSize: number;
  windowStride: number;
  seed: number;
  negativePrompts: readonly string[];
  backbones: { generator: string; visual: string; multimodal: string };
}

export interface CaptionInput {
  captionId: string;
  captionText: string;
  nouns: string[];
}

export interface AttentionMapOut {
  t: number;
  l: number;
  h: number;
  token: number;
  rows: number;
  cols: number;
  data: Float32Array;
}

export interface GridOut {
  rows: number;
  cols: number;
  dim: number;
  data: Float32Array;
}

export interface CaptionAssets {
  imageHw: [number, number];
  nTokens: number;
  nounTokens: Record<string, number[]>;
  attention: AttentionMapOut[];
  featureGrid: GridOut;
  captionEmbed: Float32Array;
  templateEmbeds: Record<string, GridOut>; // T x dT per noun
  generatedImage: RgbImage;
}

export interface Provider {
  readonly name: string;
  captionAssets(caption: CaptionInput, job: ExportJob): Promise<CaptionAssets>;
  /** dense features for one window crop of the (resized) input image */
  windowGrid(image: RgbImage, top: number, left: number, job: ExportJob):
    Promise<GridOut>;
  /** text-aligned embedding of the whole image */
  imageEmbed(image: RgbImage, job: ExportJob): Promise<Float32Array>;
  /** mean-of-templates text embedding for a noun or category */
  textEmbed(term: string, job: ExportJob): Promise<Float32Array>;
  captionTextEmbed(text: string, job: ExportJob): Promise<Float32Array>;
}

function gridCells(job: ExportJob): number {
  return Math.floor(job.imageSize / job.patchSize);
}

function templateMatrix(term: string, job: ExportJob): GridOut {
  const dim = job.dT;
  const data = new Float32Array(TEMPLATES.length * dim);
  for (let i = 0; i < TEMPLATES.length; i++) {
    const filled = TEMPLATES[i].replace("{}", term);
    data.set(seededVector(`tmpl:${filled}`, dim, job.seed), i * dim);
  }
  return { rows: TEMPLATES.length, cols: dim, dim, data };
}

function meanRows(m: GridOut): Float32Array {
  const out = new Float32Array(m.dim);
  for (let r = 0; r < m.rows; r++) {
    for (let c = 0; c < m.dim; c++) out[c] += m.data[r * m.dim + c];
  }
  for (let c = 0; c < m.dim; c++) out[c] /= m.rows;
  return out;
}

/** Whitespace tokenizer; real bridges must emit their model's indices. */
export function tokenIndices(text: string, noun: string): number[] {
  const tokens = text.toLowerCase().split(/\s+/).filter(Boolean);
  const parts = noun.toLowerCase().split(/\s+/);
  for (let i = 0; i + parts.length <= tokens.length; i++) {
    if (parts.every((p, j) => tokens[i + j].replace(/[^a-z0-9]/g, "") === p)) {
      return parts.map((_, j) => i + j);
    }
  }
  return [];
}

export class SyntheticProvider implements Provider {
  readonly name = "synthetic";

  async captionAssets(caption: CaptionInput, job: ExportJob):
      Promise<CaptionAssets> {
    const size = job.imageSize;
    const tokens = caption.captionText.split(/\s+/).filter(Boolean);
    const nTokens = Math.max(tokens.length, 1);
    const nounTokens: Record<string, number[]> = {};
    const extra: string[] = [];
    for (const noun of caption.nouns) {
      let idx = tokenIndices(caption.captionText, noun);
      if (idx.length === 0) {
        // noun absent from the text: give it a virtual trailing token
        idx = [nTokens + extra.length];
        extra.push(noun);
      }
      nounTokens[noun] = idx;
    }
    const totalTokens = nTokens + extra.length;

    // each noun's attention concentrates in its own hashed region
    const centers: Array<[number, number, number]> = [];
    for (let tok = 0; tok < totalTokens; tok++) {
      const key = `${caption.captionId}:tok${tok}`;
      const r = mulberry32(hashString(key) ^ job.seed);
      centers.push([r() * 0.8 + 0.1, r() * 0.8 + 0.1, r() * 0.15 + 0.1]);
    }

    const attention: AttentionMapOut[] = [];
    for (let t = 0; t < job.diffusionSteps; t++) {
      for (let l = 0; l < job.attentionLayers; l++) {
        const cells = 8 * (1 << l);
        for (let h = 0; h < job.attentionHeads; h++) {
          for (let tok = 0; tok < totalTokens; tok++) {
            const [cy, cx, width] = centers[tok];
            const jitter = mulberry32(
              hashString(`${caption.captionId}:${t}:${l}:${h}:${tok}`)
              ^ job.seed);
            const data = new Float32Array(cells * cells);
            for (let i = 0; i < cells; i++) {
              for (let j = 0; j < cells; j++) {
                const dy = (i + 0.5) / cells - cy;
                const dx = (j + 0.5) / cells - cx;
                const g = Math.exp(-(dy * dy + dx * dx) / (2 * width * width));
                data[i * cells + j] = g + 0.02 * jitter();
              }
            }
            attention.push({ t, l, h, token: tok, rows: cells, cols: cells,
                             data });
          }
        }
      }
    }

    const cells = gridCells(job);
    const featureGrid = this.syntheticGrid(
      `feat:${caption.captionId}`, cells, job.dV, job.seed);
    const templateEmbeds: Record<string, GridOut> = {};
    for (const noun of caption.nouns) {
      templateEmbeds[noun] = templateMatrix(noun, job);
    }
    const captionEmbed = seededVector(
      `cap:${caption.captionText}`, job.dT, job.seed);

    const pixels = new Uint8Array(size * size * 3);
    const r = mulberry32(hashString(`img:${caption.captionId}`) ^ job.seed);
    for (let i = 0; i < pixels.length; i++) pixels[i] = Math.floor(r() * 256);

    return {
      imageHw: [size, size], nTokens: totalTokens, nounTokens, attention,
      featureGrid, captionEmbed, templateEmbeds,
      generatedImage: { height: size, width: size, pixels },
    };
  }

  private syntheticGrid(key: string, cells: number, dim: number,
                        seed: number): GridOut {
    const rng = mulberry32(hashString(key) ^ seed);
    const data = new Float32Array(cells * cells * dim);
    for (let i = 0; i < data.length; i++) data[i] = rng();
    return { rows: cells, cols: cells, dim, data };
  }

  async windowGrid(image: RgbImage, top: number, left: number,
                   job: ExportJob): Promise<GridOut> {
    // mean RGB of each cell's pixel block, tiled across the embedding;
    // content-dependent so nearby windows stitch coherently
    const cells = gridCells(job);
    const dim = job.dV;
    const patchPx = job.windowSize / cells;
    const data = new Float32Array(cells * cells * dim);
    for (let i = 0; i < cells; i++) {
      for (let j = 0; j < cells; j++) {
        const y0 = Math.min(Math.floor(top + i * patchPx), image.height - 1);
        const y1 = Math.min(Math.ceil(top + (i + 1) * patchPx), image.height);
        const x0 = Math.min(Math.floor(left + j * patchPx), image.width - 1);
        const x1 = Math.min(Math.ceil(left + (j + 1) * patchPx), image.width);
        let rs = 0, gs = 0, bs = 0, n = 0;
        for (let y = y0; y < y1; y++) {
          for (let x = x0; x < x1; x++) {
            const o = (y * image.width + x) * 3;
            rs += image.pixels[o];
            gs += image.pixels[o + 1];
            bs += image.pixels[o + 2];
            n++;
          }
        }
        const base = (i * cells + j) * dim;
        for (let c = 0; c < dim; c++) {
          const channel = c % 3 === 0 ? rs : c % 3 === 1 ? gs : bs;
          data[base + c] = channel / (n * 255);
        }
      }
    }
    return { rows: cells, cols: cells, dim, data };
  }

  async imageEmbed(image: RgbImage, job: ExportJob): Promise<Float32Array> {
    let rs = 0, gs = 0, bs = 0;
    for (let o = 0; o < image.pixels.length; o += 3) {
      rs += image.pixels[o];
      gs += image.pixels[o + 1];
      bs += image.pixels[o + 2];
    }
    const n = image.pixels.length / 3;
    const key = `imgembed:${(rs / n).toFixed(2)}:${(gs / n).toFixed(2)}:` +
      `${(bs / n).toFixed(2)}:${image.height}x${image.width}`;
    return seededVector(key, job.dT, job.seed);
  }

  async textEmbed(term: string, job: ExportJob): Promise<Float32Array> {
    return meanRows(templateMatrix(term, job));
  }

  async captionTextEmbed(text: string, job: ExportJob): Promise<Float32Array> {
    return seededVector(`cap:${text}`, job.dT, job.seed);
  }
}
