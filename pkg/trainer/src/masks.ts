/**
 * Control-grid masking patterns.
 *
 * Each named pattern selects `count` indices per side at a fixed cell
 * interval, centered on the 12-point axis via offset = floor((11 - span)/2)
 * with span = (count - 1) * interval; the selected 2-D cells are the
 * Cartesian product of the side indices with themselves. Masked cells are
 * exact zeros, kept cells are bit-identical — the simulator package applies
 * the same rule, and the two sides are checked against shared fixtures.
 */
import { ComplexTensor, numElements } from "./pszd";

export const GRID_SIZE = 12;

export const MASK_PATTERNS: Record<string, { count: number; interval: number }> = {
  "Grid-12": { count: 12, interval: 1 },
  "Grid-6": { count: 6, interval: 2 },
  "Grid-4": { count: 4, interval: 3 },
  "Grid-3#1": { count: 3, interval: 4 },
  "Grid-3#2": { count: 3, interval: 3 },
  "Grid-3#3": { count: 3, interval: 2 },
  "Grid-2#1": { count: 2, interval: 6 },
  "Grid-2#2": { count: 2, interval: 4 },
  "Grid-2#3": { count: 2, interval: 1 },
  "Grid-1": { count: 1, interval: 1 },
};

export const MASK_NAMES = Object.keys(MASK_PATTERNS);

export function sideIndices(name: string): number[] {
  const spec = MASK_PATTERNS[name];
  if (!spec) {
    throw new Error(`unknown mask pattern ${name}; valid: ${MASK_NAMES.join(", ")}`);
  }
  const span = (spec.count - 1) * spec.interval;
  const offset = Math.floor((GRID_SIZE - 1 - span) / 2);
  return Array.from({ length: spec.count }, (_, i) => offset + i * spec.interval);
}

/** Boolean keep-table over the 12x12 grid, row-major. */
export function keepTable(name: string): boolean[] {
  const side = new Set(sideIndices(name));
  const keep: boolean[] = new Array(GRID_SIZE * GRID_SIZE).fill(false);
  for (let i = 0; i < GRID_SIZE; i++) {
    for (let j = 0; j < GRID_SIZE; j++) {
      keep[i * GRID_SIZE + j] = side.has(i) && side.has(j);
    }
  }
  return keep;
}

/**
 * Mask a (K, 12, 12) complex tensor: cells outside the pattern become
 * exact +0 in both components, kept cells are copied bit-for-bit.
 */
export function applyMask(tensor: ComplexTensor, name: string): ComplexTensor {
  const [k, nx, ny] = tensor.dims;
  if (tensor.dims.length !== 3 || nx !== GRID_SIZE || ny !== GRID_SIZE) {
    throw new Error(`expected dims (K, ${GRID_SIZE}, ${GRID_SIZE}), got [${tensor.dims}]`);
  }
  const keep = keepTable(name);
  const out = new Float32Array(2 * numElements(tensor.dims));
  const cells = GRID_SIZE * GRID_SIZE;
  for (let kk = 0; kk < k; kk++) {
    const base = kk * cells;
    for (let c = 0; c < cells; c++) {
      if (keep[c]) {
        out[2 * (base + c)] = tensor.data[2 * (base + c)];
        out[2 * (base + c) + 1] = tensor.data[2 * (base + c) + 1];
      }
    }
  }
  return { data: out, dims: [...tensor.dims] };
}
