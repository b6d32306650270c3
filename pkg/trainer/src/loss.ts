/**
 * Monitor-grid reproduction loss.
 *
 * For pre-filters a(k) and the fixed monitor transfer matrix H'(k), the loss
 * of one sample is
 *
 *     (1 / (M' * K)) * sum_k || H'(k) a(k) - g'(k) ||_2
 *
 * averaged over the batch. The norm is *not* squared by default; the
 * `squared` switch turns each term into the squared norm (a mean-squared
 * error variant of the same residual).
 */
import * as tf from "@tensorflow/tfjs";

import { ComplexTensor } from "./pszd";

export interface MonitorSystem {
  /** (K, M, L) real part of the monitor transfer tensor. */
  hRe: tf.Tensor3D;
  /** (K, M, L) imaginary part. */
  hIm: tf.Tensor3D;
  numMonitor: number;
  numFreqs: number;
  numSpeakers: number;
}

/** Split an interleaved (K, M, L) tensor into re/im tf tensors. */
export function monitorSystemFromTensor(h: ComplexTensor): MonitorSystem {
  const [k, m, l] = h.dims;
  const n = k * m * l;
  const re = new Float32Array(n);
  const im = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    re[i] = h.data[2 * i];
    im[i] = h.data[2 * i + 1];
  }
  return {
    hRe: tf.tensor3d(re, [k, m, l]),
    hIm: tf.tensor3d(im, [k, m, l]),
    numMonitor: m,
    numFreqs: k,
    numSpeakers: l,
  };
}

/**
 * Loss for a batch.
 *
 * `prefilters` is the network output (B, 2, L, K); `targetRe`/`targetIm`
 * hold the monitor target (B, K, M) with dark-zone entries zero.
 */
export function monitorLoss(
  prefilters: tf.Tensor4D,
  system: MonitorSystem,
  targetRe: tf.Tensor3D,
  targetIm: tf.Tensor3D,
  squared = false
): tf.Scalar {
  const [bsize, , l, k] = prefilters.shape;
  if (l !== system.numSpeakers || k !== system.numFreqs) {
    throw new Error(
      `prefilters (L=${l}, K=${k}) do not match the monitor system ` +
        `(L=${system.numSpeakers}, K=${system.numFreqs})`
    );
  }
  if (
    targetRe.shape[0] !== bsize ||
    targetRe.shape[1] !== k ||
    targetRe.shape[2] !== system.numMonitor
  ) {
    throw new Error(
      `target shape [${targetRe.shape}] does not match (B=${bsize}, K=${k}, M=${system.numMonitor})`
    );
  }
  return tf.tidy(() => {
    // (B, 2, L, K) -> (K, L, B) per component
    const aRe = tf.transpose(tf.squeeze(tf.slice(prefilters, [0, 0, 0, 0], [-1, 1, -1, -1]), [1]), [2, 1, 0]);
    const aIm = tf.transpose(tf.squeeze(tf.slice(prefilters, [0, 1, 0, 0], [-1, 1, -1, -1]), [1]), [2, 1, 0]);
    // complex matvec per frequency: (K, M, L) x (K, L, B) -> (K, M, B)
    const gRe = tf.sub(tf.matMul(system.hRe, aRe), tf.matMul(system.hIm, aIm));
    const gIm = tf.add(tf.matMul(system.hRe, aIm), tf.matMul(system.hIm, aRe));
    const tRe = tf.transpose(targetRe, [1, 2, 0]); // (K, M, B)
    const tIm = tf.transpose(targetIm, [1, 2, 0]);
    const resSq = tf.add(tf.square(tf.sub(gRe, tRe)), tf.square(tf.sub(gIm, tIm)));
    const normSqPerK = tf.sum(resSq, 1); // (K, B)
    const perK = squared ? normSqPerK : tf.sqrt(normSqPerK);
    const perSample = tf.sum(perK, 0); // (B,)
    return tf.div(
      tf.mean(perSample),
      system.numMonitor * system.numFreqs
    ) as tf.Scalar;
  });
}
