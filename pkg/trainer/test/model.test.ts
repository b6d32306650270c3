import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import * as tf from "@tensorflow/tfjs";
import { describe, expect, it } from "vitest";

import { NeuralPszModel, PRESETS, buildModel } from "../src/model";

describe("network architecture", () => {
  it("maps zero input to a finite (2, L, K) output", () => {
    const model = buildModel({ channels: 6, numBlocks: 1 }, 8, 5, 3);
    const x = tf.zeros([2, 12, 12, 8, 2]) as tf.Tensor5D;
    const y = model.forward(x, false);
    expect(y.shape).toEqual([2, 2, 5, 8]);
    for (const v of y.dataSync()) expect(Number.isFinite(v)).toBe(true);
  });

  it("keeps the desk preset under 2M parameters", () => {
    const model = buildModel("desk", 128, 30, 1);
    expect(model.paramCount()).toBeLessThanOrEqual(2_000_000);
  });

  it("puts the paper preset within 10% of 21.59M parameters", () => {
    const model = buildModel("paper", 512, 30, 1);
    const count = model.paramCount();
    expect(Math.abs(count - 21_590_000) / 21_590_000).toBeLessThanOrEqual(0.1);
  });

  it("rejects unknown presets", () => {
    expect(() => buildModel("huge", 8, 4)).toThrow(/unknown preset/);
  });

  it("routes feature bin k only to output bin k through the grouped head", () => {
    const model = buildModel({ channels: 4, numBlocks: 1 }, 6, 3, 7);
    const base = tf.randomNormal([1, 6, 4], 0, 1, "float32", 11) as tf.Tensor3D;
    const out0 = model.groupedHead(base).arraySync() as number[][][];
    for (const kPerturbed of [0, 3, 5]) {
      const delta = tf.buffer([1, 6, 4]);
      for (let c = 0; c < 4; c++) delta.set(0.5 + c, 0, kPerturbed, c);
      const out1 = model
        .groupedHead(tf.add(base, delta.toTensor()) as tf.Tensor3D)
        .arraySync() as number[][][];
      for (let k = 0; k < 6; k++) {
        const changed = out0[0][k].some((v, i) => Math.abs(v - out1[0][k][i]) > 1e-7);
        expect(changed).toBe(k === kPerturbed);
      }
    }
  });

  it("is deterministic for a fixed seed and differs across seeds", () => {
    const a = buildModel({ channels: 4, numBlocks: 1 }, 4, 3, 5);
    const b = buildModel({ channels: 4, numBlocks: 1 }, 4, 3, 5);
    const c = buildModel({ channels: 4, numBlocks: 1 }, 4, 3, 6);
    const x = tf.randomNormal([1, 12, 12, 4, 2], 0, 1, "float32", 42) as tf.Tensor5D;
    const ya = a.forward(x).dataSync();
    const yb = b.forward(x).dataSync();
    const yc = c.forward(x).dataSync();
    expect(Array.from(ya)).toEqual(Array.from(yb));
    expect(Array.from(ya)).not.toEqual(Array.from(yc));
  });

  it("checkpoints round-trip bit-exactly", () => {
    const model = buildModel({ channels: 4, numBlocks: 2 }, 4, 3, 5);
    const dir = fs.mkdtempSync(path.join(os.tmpdir(), "ckpt-"));
    const file = path.join(dir, "checkpoint.json");
    model.saveCheckpoint(file, { note: "test" });
    const loaded = NeuralPszModel.loadCheckpoint(file);
    const x = tf.randomNormal([2, 12, 12, 4, 2], 0, 1, "float32", 1) as tf.Tensor5D;
    expect(Array.from(loaded.forward(x).dataSync())).toEqual(
      Array.from(model.forward(x).dataSync())
    );
  });

  it("exposes the documented presets", () => {
    expect(Object.keys(PRESETS).sort()).toEqual(["desk", "paper"]);
  });
});
