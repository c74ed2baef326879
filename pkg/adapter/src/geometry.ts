/**
 * Sliding-window geometry, mirrored from the engine's contract: the
 * engine re-derives the plan from the original image size and rejects
 * manifests whose windows disagree, so both sides must round the same
 * way (Python's round is half-to-even).
 */

export function roundHalfEven(x: number): number {
  const floor = Math.floor(x);
  const diff = x - floor;
  if (diff < 0.5) return floor;
  if (diff > 0.5) return floor + 1;
  return floor % 2 === 0 ? floor : floor + 1;
}

/** Target size with the shorter side pinned to `short`. */
export function resizedDims(
  h: number,
  w: number,
  short = 448,
): [number, number] {
  if (h <= w) return [short, Math.max(short, roundHalfEven((w * short) / h))];
  return [Math.max(short, roundHalfEven((h * short) / w)), short];
}

/** (top, left) placements covering h x w; the last window clamps. */
export function planWindows(
  h: number,
  w: number,
  window = 448,
  stride = 224,
): Array<[number, number]> {
  if (window > h || window > w) {
    throw new Error(`${window}px window does not fit a ${h}x${w} image`);
  }
  const axis = (dim: number): number[] => {
    const pos: number[] = [];
    for (let p = 0; p + window <= dim; p += stride) pos.push(p);
    if (pos[pos.length - 1] !== dim - window) pos.push(dim - window);
    return pos;
  };
  const out: Array<[number, number]> = [];
  for (const t of axis(h)) for (const l of axis(w)) out.push([t, l]);
  return out;
}
