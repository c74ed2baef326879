/**
 * Exporter CLI.
 *
 *   export-captions --captions captions.jsonl --out DIR [options]
 *   export-images   --images a.ppm,b.ppm --categories names.txt --out DIR
 *
 * Caption input: one JSON object per line with caption_id, caption_text,
 * and nouns (array of strings). --provider synthetic (default) needs no
 * models; --provider python-bridge drives the real backbones.
 */

import { readFileSync } from "node:fs";
import { parseArgs } from "node:util";

import { PythonBridgeProvider } from "./bridge.js";
import { exportCaptionAssets, exportInferenceAssets, makeJob } from "./export.js";
import type { CaptionInput, ExportJob, Provider } from "./provider.js";
import { SyntheticProvider } from "./provider.js";

function makeProvider(name: string): Provider {
  if (name === "synthetic") return new SyntheticProvider();
  if (name === "python-bridge") return new PythonBridgeProvider();
  throw new Error(`unknown provider '${name}'`);
}

function parseCaptions(path: string): CaptionInput[] {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((l) => l.trim())
    .map((line, i) => {
      const obj = JSON.parse(line);
      for (const key of ["caption_id", "caption_text", "nouns"]) {
        if (!(key in obj)) {
          throw new Error(`captions line ${i + 1}: missing '${key}'`);
        }
      }
      return {
        captionId: obj.caption_id,
        captionText: obj.caption_text,
        nouns: obj.nouns,
      };
    });
}

function jobFromFlags(out: string, values: Record<string, any>):
    ExportJob {
  const num = (name: string) =>
    values[name] !== undefined ? Number(values[name]) : undefined;
  const overrides: Record<string, number> = {};
  for (const [flag, field] of Object.entries({
    "image-size": "imageSize", steps: "diffusionSteps",
    layers: "attentionLayers", heads: "attentionHeads",
    dv: "dV", dt: "dT", seed: "seed",
  })) {
    const v = num(flag);
    if (v !== undefined) overrides[field] = v;
  }
  return makeJob(out, overrides);
}

const FLAG_SPEC = {
  captions: { type: "string" as const },
  images: { type: "string" as const },
  categories: { type: "string" as const },
  out: { type: "string" as const },
  provider: { type: "string" as const, default: "synthetic" },
  "image-size": { type: "string" as const },
  steps: { type: "string" as const },
  layers: { type: "string" as const },
  heads: { type: "string" as const },
  dv: { type: "string" as const },
  dt: { type: "string" as const },
  seed: { type: "string" as const },
};

export async function main(argv: string[]): Promise<number> {
  const command = argv[0];
  const { values } = parseArgs({ args: argv.slice(1), options: FLAG_SPEC });
  if (!values.out) {
    console.error("error: --out is required");
    return 2;
  }
  const job = jobFromFlags(values.out, values);
  const provider = makeProvider(values.provider!);

  if (command === "export-captions") {
    if (!values.captions) {
      console.error("error: --captions is required");
      return 2;
    }
    const captions = parseCaptions(values.captions);
    const manifest = await exportCaptionAssets(provider, captions, job);
    console.log(`exported ${captions.length} captions -> ${manifest}`);
    return 0;
  }
  if (command === "export-images") {
    if (!values.images || !values.categories) {
      console.error("error: --images and --categories are required");
      return 2;
    }
    const images = values.images.split(",").filter(Boolean);
    const categories = readFileSync(values.categories, "utf-8")
      .split("\n").map((s) => s.trim()).filter(Boolean);
    const manifest = await exportInferenceAssets(provider, images,
                                                 categories, job);
    console.log(`exported ${images.length} images -> ${manifest}`);
    return 0;
  }
  console.error(
    "usage: cli.js <export-captions|export-images> --out DIR ...");
  return 2;
}

if ((process.argv[1] ?? "").endsWith("cli.js")) {
  main(process.argv.slice(2))
    .then((code) => process.exit(code))
    .catch((e) => {
      console.error(`error: ${e.message}`);
      process.exit(1);
    });
}
