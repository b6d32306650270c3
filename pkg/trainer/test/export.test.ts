import { execFileSync } from "child_process";
import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { describe, expect, it } from "vitest";

import { exportPrefilters, inferPrefilters } from "../src/export";
import { NeuralPszModel, buildModel } from "../src/model";
import { DatasetReader, readTensor } from "../src/pszd";

const DATASET = path.join(__dirname, "..", "fixtures", "dataset");

function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "export-"));
}

describe("pre-filter export", () => {
  const dataset = new DatasetReader(DATASET);
  const k = dataset.manifest.num_freqs;
  const l = dataset.manifest.num_loudspeakers;

  it("produces finite (K, L) pre-filters for every mask", () => {
    const model = buildModel({ channels: 4, numBlocks: 1 }, k, l, 9);
    for (const mask of ["Grid-12", "Grid-1"]) {
      const pf = inferPrefilters(model, dataset, 0, mask);
      expect(pf.dims).toEqual([k, l]);
      let nonzero = 0;
      for (const v of pf.data) {
        expect(Number.isFinite(v)).toBe(true);
        if (v !== 0) nonzero += 1;
      }
      expect(nonzero).toBeGreaterThan(0);
    }
  });

  it("writes the shared directory layout for the test split", () => {
    const model = buildModel({ channels: 4, numBlocks: 1 }, k, l, 9);
    const out = path.join(tmpdir(), "pf");
    const indices = exportPrefilters(model, DATASET, out, "Grid-3#1", "test", "model-x");
    expect(indices).toEqual(dataset.manifest.splits.test);
    const meta = JSON.parse(fs.readFileSync(path.join(out, "prefilters.json"), "utf-8"));
    expect(meta.kind).toBe("psz-prefilters");
    expect(meta.method).toBe("neural");
    expect(meta.mask).toBe("Grid-3#1");
    expect(meta.scene_config_hash).toBe(dataset.manifest.scene_config_hash);
    for (const entry of meta.samples) {
      const tensor = readTensor(path.join(out, entry.path), [k, l]);
      expect(tensor.dims).toEqual([k, l]);
    }
  });

  it("is deterministic: same checkpoint, identical bytes", () => {
    const model = buildModel({ channels: 4, numBlocks: 1 }, k, l, 9);
    const dir = tmpdir();
    const ckpt = path.join(dir, "checkpoint.json");
    model.saveCheckpoint(ckpt);
    const outA = path.join(dir, "a");
    const outB = path.join(dir, "b");
    exportPrefilters(model, DATASET, outA, "Grid-6", "test", "m");
    const reloaded = NeuralPszModel.loadCheckpoint(ckpt);
    exportPrefilters(reloaded, DATASET, outB, "Grid-6", "test", "m");
    for (const name of fs.readdirSync(outA)) {
      expect(fs.readFileSync(path.join(outA, name))).toEqual(
        fs.readFileSync(path.join(outB, name))
      );
    }
  });

  it("exports evaluate cleanly through the simulator CLI", () => {
    const model = buildModel({ channels: 4, numBlocks: 1 }, k, l, 9);
    const dir = tmpdir();
    const pf = path.join(dir, "pf");
    exportPrefilters(model, DATASET, pf, "Grid-12", "test", "m");
    const evalOut = path.join(dir, "eval");
    execFileSync(
      "python3",
      ["-m", "pszsim.cli", "evaluate", "--dataset", DATASET, "--out", evalOut,
       "--prefilters", pf],
      { stdio: "pipe" }
    );
    const summary = JSON.parse(
      fs.readFileSync(path.join(evalOut, "summary.json"), "utf-8")
    );
    expect(summary.method).toBe("neural");
    expect(Object.keys(summary.masks)).toEqual(["Grid-12"]);
    const perSample = summary.masks["Grid-12"].per_sample;
    expect(Object.keys(perSample)).toHaveLength(dataset.manifest.splits.test.length);
    for (const entry of Object.values(perSample) as Array<Record<string, number>>) {
      expect(Number.isFinite(entry.re_b_db)).toBe(true);
      expect(Number.isFinite(entry.ae_db)).toBe(true);
    }
  });
});
