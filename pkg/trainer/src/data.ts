/**
 * Layout transforms between dataset tensors and model tensors.
 *
 * Dataset samples are (K, 12, 12) complex; the network consumes
 * (12, 12, K, 2) real tensors (channels last). Monitor targets are the
 * bright-zone (K, nm, nm) fields; the loss additionally sees zero targets
 * for every dark-zone monitor row.
 */
import * as tf from "@tensorflow/tfjs";

import { applyMask } from "./masks";
import { ComplexTensor, DatasetReader } from "./pszd";

export const GRID = 12;

/** Masked control target -> network input layout (12, 12, K, 2). */
export function inputFromControlTarget(sample: ComplexTensor, mask: string): Float32Array {
  const [k, nx, ny] = sample.dims;
  if (nx !== GRID || ny !== GRID) {
    throw new Error(`control target must be (K, ${GRID}, ${GRID}), got [${sample.dims}]`);
  }
  const masked = applyMask(sample, mask);
  const out = new Float32Array(nx * ny * k * 2);
  for (let kk = 0; kk < k; kk++) {
    for (let i = 0; i < nx; i++) {
      for (let j = 0; j < ny; j++) {
        const src = 2 * (kk * nx * ny + i * ny + j);
        const dst = 2 * (((i * ny + j) * k) + kk);
        out[dst] = masked.data[src];
        out[dst + 1] = masked.data[src + 1];
      }
    }
  }
  return out;
}

/**
 * Bright monitor target (K, nm, nm) -> flat (K, M') with the dark half
 * zero-padded, split into real and imaginary planes.
 */
export function monitorTargetPlanes(
  sample: ComplexTensor,
  numMonitorTotal: number
): { re: Float32Array; im: Float32Array } {
  const [k, nm1, nm2] = sample.dims;
  const bright = nm1 * nm2;
  if (bright > numMonitorTotal) {
    throw new Error(`bright monitor grid ${bright} exceeds total ${numMonitorTotal}`);
  }
  const re = new Float32Array(k * numMonitorTotal);
  const im = new Float32Array(k * numMonitorTotal);
  for (let kk = 0; kk < k; kk++) {
    for (let m = 0; m < bright; m++) {
      re[kk * numMonitorTotal + m] = sample.data[2 * (kk * bright + m)];
      im[kk * numMonitorTotal + m] = sample.data[2 * (kk * bright + m) + 1];
    }
  }
  return { re, im };
}

export interface Batch {
  input: tf.Tensor5D; // (B, 12, 12, K, 2)
  targetRe: tf.Tensor3D; // (B, K, M')
  targetIm: tf.Tensor3D;
}

export function buildBatch(
  dataset: DatasetReader,
  indices: number[],
  mask: string | string[]
): Batch {
  const k = dataset.manifest.num_freqs;
  const mTotal = dataset.manifest.num_monitor_points;
  const masks = typeof mask === "string" ? indices.map(() => mask) : mask;
  if (masks.length !== indices.length) {
    throw new Error(`got ${masks.length} masks for ${indices.length} samples`);
  }
  const inputs = new Float32Array(indices.length * GRID * GRID * k * 2);
  const tRe = new Float32Array(indices.length * k * mTotal);
  const tIm = new Float32Array(indices.length * k * mTotal);
  indices.forEach((index, b) => {
    inputs.set(
      inputFromControlTarget(dataset.controlTarget(index), masks[b]),
      b * GRID * GRID * k * 2
    );
    const planes = monitorTargetPlanes(dataset.monitorTarget(index), mTotal);
    tRe.set(planes.re, b * k * mTotal);
    tIm.set(planes.im, b * k * mTotal);
  });
  return {
    input: tf.tensor5d(inputs, [indices.length, GRID, GRID, k, 2]),
    targetRe: tf.tensor3d(tRe, [indices.length, k, mTotal]),
    targetIm: tf.tensor3d(tIm, [indices.length, k, mTotal]),
  };
}

/** Network output (2, L, K) -> interleaved (K, L) pre-filter tensor. */
export function outputToPrefilters(out: Float32Array, l: number, k: number): ComplexTensor {
  if (out.length !== 2 * l * k) {
    throw new Error(`output has ${out.length} floats, expected ${2 * l * k}`);
  }
  const data = new Float32Array(2 * k * l);
  for (let kk = 0; kk < k; kk++) {
    for (let ll = 0; ll < l; ll++) {
      data[2 * (kk * l + ll)] = out[ll * k + kk]; // real plane
      data[2 * (kk * l + ll) + 1] = out[l * k + ll * k + kk]; // imag plane
    }
  }
  return { data, dims: [k, l] };
}
