/** Export-contract defaults shared by every provider. */

/** Text templates a noun or category is embedded in; keys and category
 * queries must use the same set, so it lives here once. */
export const TEMPLATES: readonly string[] = [
  "itap of a {}.",
  "a bad photo of the {}.",
  "a origami {}.",
  "a photo of the large {}.",
  "a {} in a video game.",
  "art of the {}.",
  "a photo of the small {}.",
];

/** Negative prompts steering the image generator toward photographic,
 * artifact-free output. */
export const NEGATIVE_PROMPTS: readonly string[] = [
  "3d", "abstract", "art", "asymmetric", "bad anatomy", "bad art",
  "bad proportions", "blurry", "canvas frame", "cartoon", "cartoonish",
  "cgi", "cloned face", "colorless", "computer graphic", "cropped",
  "cut off", "deformed", "dehydrated", "digital", "digital art",
  "disfigured", "doll", "duplicate", "error", "extra arms",
  "extra fingers", "extra legs", "extra limbs", "fused fingers", "fuzzy",
  "grainy", "graphic", "gross proportions", "inaccurate",
  "jpeg artifacts", "long neck", "low quality", "low-resolution",
  "lowres", "malformed limbs", "misshaped", "missing arms",
  "missing legs", "morbid", "mutant", "mutated", "mutated hands",
  "mutation", "mutilated", "octane", "out of focus", "out of frame",
  "oversaturated", "photoshop", "poorly drawn face",
  "poorly drawn hands", "render", "retro", "signature", "text",
  "too many fingers", "ugly", "unreal", "unreal engine", "unrealistic",
  "username", "video game", "watermark", "weird colors", "worst quality",
];

export const DEFAULTS = {
  /** backbone input edge; patch-14 models at 518 yield 37x37 grids */
  imageSize: 518,
  patchSize: 14,
  diffusionSteps: 50,
  /** synthetic-provider attention geometry */
  attentionLayers: 2,
  attentionHeads: 8,
  /** embedding widths (visual / text spaces) */
  dV: 768,
  dT: 512,
  /** inference-side sliding window */
  windowSize: 448,
  windowStride: 224,
} as const;
