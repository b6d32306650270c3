/**
 * Inference and pre-filter export in the shared PSZD directory layout,
 * consumable by the simulator package's `evaluate` command.
 */
import * as tf from "@tensorflow/tfjs";

import { inputFromControlTarget, outputToPrefilters, GRID } from "./data";
import { NeuralPszModel } from "./model";
import { ComplexTensor, DatasetReader, writePrefilters } from "./pszd";

export function inferPrefilters(
  model: NeuralPszModel,
  dataset: DatasetReader,
  index: number,
  mask: string
): ComplexTensor {
  const k = dataset.manifest.num_freqs;
  const l = dataset.manifest.num_loudspeakers;
  const input = inputFromControlTarget(dataset.controlTarget(index), mask);
  const out = tf.tidy(() => {
    const x = tf.tensor5d(input, [1, GRID, GRID, k, 2]);
    return model.forward(x, false).dataSync() as Float32Array;
  });
  for (const v of out) {
    if (!Number.isFinite(v)) {
      throw new Error(`non-finite pre-filter output for sample ${index}`);
    }
  }
  return outputToPrefilters(out, l, k);
}

export function exportPrefilters(
  model: NeuralPszModel,
  datasetDir: string,
  outDir: string,
  mask: string,
  indices: number[] | "test",
  modelId: string
): number[] {
  const dataset = new DatasetReader(datasetDir);
  const idx = indices === "test" ? dataset.manifest.splits.test : indices;
  if (idx.length === 0) throw new Error("no samples selected for export");
  const sets = new Map<number, ComplexTensor>();
  for (const index of idx) {
    sets.set(index, inferPrefilters(model, dataset, index, mask));
  }
  writePrefilters(outDir, sets, {
    method: "neural",
    mask,
    scene_config_hash: dataset.manifest.scene_config_hash,
    freqs_hz: dataset.manifest.freqs_hz,
    num_loudspeakers: dataset.manifest.num_loudspeakers,
    extra: { model_id: modelId },
  });
  return idx;
}
