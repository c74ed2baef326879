export { decodeFdt, encodeFdt, readFdt, writeFdt } from "./fdt.js";
export type { FdtData, FdtTensor } from "./fdt.js";
export { readPpm, writePpm } from "./ppm.js";
export type { RgbImage } from "./ppm.js";
export { planWindows, resizedDims, roundHalfEven } from "./geometry.js";
export { DEFAULTS, NEGATIVE_PROMPTS, TEMPLATES } from "./constants.js";
export { SyntheticProvider, tokenIndices } from "./provider.js";
export type {
  CaptionAssets,
  CaptionInput,
  ExportJob,
  GridOut,
  Provider,
} from "./provider.js";
export { PythonBridgeProvider } from "./bridge.js";
export {
  exportCaptionAssets,
  exportInferenceAssets,
  makeJob,
  resizeBilinear,
} from "./export.js";
