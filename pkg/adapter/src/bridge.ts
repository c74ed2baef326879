/**
 * Provider that drives the real backbones through a Python sidecar
 * (scripts/bridge_backbones.py): a latent-diffusion generator with
 * cross-attention capture, a self-supervised ViT for dense features,
 * and a multimodal text/image encoder. Requires GPU-class hardware and
 * downloaded weights; construction probes the sidecar and raises a
 * clear error when the stack is unavailable.
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { readFdt } from "./fdt.js";
import type { RgbImage } from "./ppm.js";
import { writePpm } from "./ppm.js";
import type {
  CaptionAssets,
  CaptionInput,
  ExportJob,
  GridOut,
  Provider,
} from "./provider.js";

const SCRIPT = join(dirname(fileURLToPath(import.meta.url)),
                    "..", "..", "scripts", "bridge_backbones.py");

export class PythonBridgeProvider implements Provider {
  readonly name = "python-bridge";

  constructor(private python: string = "python3") {
    const probe = this.call({ op: "probe" });
    if (!probe.ok) {
      throw new Error(
        `python backbone stack unavailable: ${probe.error}. ` +
        "Install torch, diffusers, and transformers with model weights, " +
        "or use the synthetic provider.");
    }
  }

  private call(request: object, extraArgs: string[] = []): any {
    const dir = mkdtempSync(join(tmpdir(), "bridge-"));
    try {
      const reqPath = join(dir, "request.json");
      writeFileSync(reqPath, JSON.stringify({ ...request, workdir: dir }));
      const out = execFileSync(
        this.python, [SCRIPT, reqPath, ...extraArgs],
        { encoding: "utf-8", maxBuffer: 1 << 28 });
      return JSON.parse(out.trim().split("\n").pop() ?? "{}");
    } catch (e: any) {
      return { ok: false, error: String(e.stderr ?? e.message ?? e) };
    } finally {
      if (!(request as any).keep) rmSync(dir, { recursive: true, force: true });
    }
  }

  async captionAssets(caption: CaptionInput, job: ExportJob):
      Promise<CaptionAssets> {
    const res = this.call({
      op: "caption",
      keep: true,
      caption_id: caption.captionId,
      caption_text: caption.captionText,
      nouns: caption.nouns,
      image_size: job.imageSize,
      diffusion_steps: job.diffusionSteps,
      negative_prompts: job.negativePrompts,
      backbones: job.backbones,
      seed: job.seed,
    });
    if (!res.ok) throw new Error(`caption export failed: ${res.error}`);
    const grid = (p: string): GridOut => {
      const t = readFdt(p);
      return { rows: t.dims[0], cols: t.dims[1],
               dim: t.dims[2] ?? t.dims[1], data: t.data as Float32Array };
    };
    const attention = res.attention.map((m: any) => {
      const t = readFdt(m.path);
      return { t: m.t, l: m.l, h: m.h, token: m.token,
               rows: t.dims[0], cols: t.dims[1],
               data: t.data as Float32Array };
    });
    const templateEmbeds: Record<string, GridOut> = {};
    for (const [noun, p] of Object.entries(res.template_embeds)) {
      templateEmbeds[noun] = grid(p as string);
    }
    return {
      imageHw: res.image_hw,
      nTokens: res.tokens,
      nounTokens: res.noun_tokens,
      attention,
      featureGrid: grid(res.feature_grid),
      captionEmbed: readFdt(res.caption_embed).data as Float32Array,
      templateEmbeds,
      generatedImage: {
        height: res.image_hw[0], width: res.image_hw[1],
        pixels: Uint8Array.from(readFileSync(res.image_rgb)),
      },
    };
  }

  async windowGrid(image: RgbImage, top: number, left: number,
                   job: ExportJob): Promise<GridOut> {
    const res = this.withImage(image, {
      op: "window_grid", top, left, window: job.windowSize,
      image_size: job.imageSize, backbones: job.backbones,
    });
    const t = readFdt(res.grid);
    return { rows: t.dims[0], cols: t.dims[1], dim: t.dims[2],
             data: t.data as Float32Array };
  }

  async imageEmbed(image: RgbImage, job: ExportJob): Promise<Float32Array> {
    const res = this.withImage(image, {
      op: "image_embed", backbones: job.backbones });
    return readFdt(res.embed).data as Float32Array;
  }

  async textEmbed(term: string, job: ExportJob): Promise<Float32Array> {
    const res = this.call({ op: "text_embed", term,
                            backbones: job.backbones });
    if (!res.ok) throw new Error(`text embed failed: ${res.error}`);
    return Float32Array.from(res.embed);
  }

  async captionTextEmbed(text: string, job: ExportJob):
      Promise<Float32Array> {
    const res = this.call({ op: "caption_embed", text,
                            backbones: job.backbones });
    if (!res.ok) throw new Error(`caption embed failed: ${res.error}`);
    return Float32Array.from(res.embed);
  }

  private withImage(image: RgbImage, request: object): any {
    const dir = mkdtempSync(join(tmpdir(), "bridge-img-"));
    try {
      const ppm = join(dir, "input.ppm");
      writePpm(ppm, image);
      const res = this.call({ ...request, image: ppm, keep: true });
      if (!res.ok) throw new Error(`bridge call failed: ${res.error}`);
      return res;
    } finally {
      rmSync(dir, { recursive: true, force: true });
    }
  }
}
