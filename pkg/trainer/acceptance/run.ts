/**
 * End-to-end acceptance protocol for the neural trainer.
 *
 * Trains a flexible-mask model and a fixed-mask reference on a simulator
 * dataset, then closes the loop through the simulator CLI: export
 * pre-filters, tune the pressure-matching baseline to the neural model's
 * broadband effort, evaluate both on the monitor grid, and check:
 *
 *   A  validation loss of the trained model is >= 50% below the untrained model
 *   B  neural RE_B on Grid-3#1 beats effort-matched PM (direction only)
 *   C  neural RE_B spread across Grid-3#{1,2,3} stays within 1.0 dB
 *   D  flexible-trained RE_B on Grid-2#1 trails the fixed-Grid-2#1 model by
 *      a positive margin of at most 3 dB
 *
 * `--scale desk` is the specified configuration (N=2000, K=128, desk
 * preset); `--scale reduced` runs the identical mechanics sized for a
 * CPU-only session. Results are printed as one PASS/FAIL line per criterion
 * and written to <workdir>/acceptance_report.json. A criterion that fails
 * at reduced scale is a scale observation, not a defect, as long as desk
 * scale is out of reach of the hardware; see the package README.
 */
import { execFileSync } from "child_process";
import * as fs from "fs";
import * as path from "path";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { exportPrefilters } from "../src/export";
import { DatasetReader } from "../src/pszd";
import { TrainConfig, train, writeTrainingLog } from "../src/train";

interface Scale {
  nSamples: number;
  sceneYaml: string;
  preset: TrainConfig["preset"];
  epochs: number;
  batchSize: number;
  learningRate: number;
}

const SCALES: Record<string, Scale> = {
  desk: {
    nSamples: 2000,
    sceneYaml: [
      "room_dims: [8.0, 8.0, 3.0]",
      "rt60: 0.25",
      "num_loudspeakers: 30",
      "array_radius: 1.68",
      "zone_gap: 1.0",
      "control_n: 12",
      "monitor_n: 17",
      "plane_height: 1.5",
      "num_freqs: 128",
      "vsrc_r_min: 1.7",
      "vsrc_r_max: 3.5",
      "ism_max_order: 10",
      "seed: 20240601",
    ].join("\n"),
    preset: "desk",
    epochs: 8,
    batchSize: 16,
    learningRate: 1e-3,
  },
  reduced: {
    nSamples: 800,
    sceneYaml: [
      "room_dims: [6.0, 7.0, 3.0]",
      "rt60: 0.2",
      "num_loudspeakers: 16",
      "array_radius: 1.5",
      "zone_gap: 1.0",
      "control_n: 12",
      "monitor_n: 5",
      "plane_height: 1.4",
      "num_freqs: 8",
      "vsrc_r_min: 1.6",
      "vsrc_r_max: 2.4",
      "ism_max_order: 3",
      "seed: 20240601",
    ].join("\n"),
    preset: { channels: 8, numBlocks: 1 },
    epochs: 45,
    batchSize: 16,
    learningRate: 1e-3,
  },
};

function sh(args: string[], cwd?: string): string {
  return execFileSync("python3", ["-m", "pszsim.cli", ...args], {
    cwd,
    stdio: ["ignore", "pipe", "inherit"],
    encoding: "utf-8",
  });
}

function readSummary(dir: string): any {
  return JSON.parse(fs.readFileSync(path.join(dir, "summary.json"), "utf-8"));
}

function main(): void {
  const argv = yargs(hideBin(process.argv))
    .option("scale", { type: "string", choices: ["reduced", "desk"], default: "reduced" })
    .option("workdir", { type: "string" })
    .strict()
    .parseSync();
  const scale = SCALES[argv.scale];
  const work = path.resolve(argv.workdir ?? path.join(__dirname, "runs", argv.scale));
  fs.mkdirSync(work, { recursive: true });

  const dsDir = path.join(work, "dataset");
  if (!fs.existsSync(path.join(dsDir, "manifest.json"))) {
    const sceneFile = path.join(work, "scene.yaml");
    fs.writeFileSync(sceneFile, scale.sceneYaml + "\n");
    console.log(`[acceptance] generating dataset (N=${scale.nSamples}) ...`);
    sh(["gen-dataset", "--config", sceneFile, "--out", dsDir, "--n", String(scale.nSamples)]);
  }
  const dataset = new DatasetReader(dsDir);

  const baseCfg: TrainConfig = {
    epochs: scale.epochs,
    batchSize: scale.batchSize,
    learningRate: scale.learningRate,
    maskPolicy: "flexible",
    preset: scale.preset,
    seed: 7,
    lossForm: "norm",
  };

  console.log(`[acceptance] training flexible model (${scale.epochs} epochs) ...`);
  let t0 = Date.now();
  const flexible = train(dsDir, baseCfg, {
    onStep: (e) => {
      if (e.step % 50 === 0) console.log(`  flexible step ${e.step} loss ${e.loss.toExponential(3)}`);
    },
  });
  console.log(`  flexible trained in ${((Date.now() - t0) / 60000).toFixed(1)} min`);
  flexible.model.saveCheckpoint(path.join(work, "flexible", "checkpoint.json"));
  writeTrainingLog(path.join(work, "flexible", "training_log.json"), flexible, baseCfg,
    dataset.manifest.scene_config_hash);

  console.log(`[acceptance] training fixed Grid-2#1 model ...`);
  t0 = Date.now();
  const fixedCfg: TrainConfig = { ...baseCfg, maskPolicy: { fixed: "Grid-2#1" } };
  const fixed = train(dsDir, fixedCfg, {
    onStep: (e) => {
      if (e.step % 50 === 0) console.log(`  fixed step ${e.step} loss ${e.loss.toExponential(3)}`);
    },
  });
  console.log(`  fixed trained in ${((Date.now() - t0) / 60000).toFixed(1)} min`);
  fixed.model.saveCheckpoint(path.join(work, "fixed", "checkpoint.json"));
  writeTrainingLog(path.join(work, "fixed", "training_log.json"), fixed, fixedCfg,
    dataset.manifest.scene_config_hash);

  const results: Record<string, { pass: boolean; detail: string }> = {};
  const lossRatio = flexible.finalValLoss / flexible.initialValLoss;
  results.A_val_loss_halved = {
    pass: lossRatio <= 0.5,
    detail: `val loss ${flexible.initialValLoss.toExponential(3)} -> ` +
      `${flexible.finalValLoss.toExponential(3)} (ratio ${lossRatio.toFixed(3)})`,
  };

  const masks3 = ["Grid-3#1", "Grid-3#2", "Grid-3#3"];
  const neuralReB: Record<string, number> = {};
  const neuralAe: Record<string, number> = {};
  for (const mask of [...masks3, "Grid-2#1"]) {
    const safe = mask.replace("#", "_");
    const pfDir = path.join(work, "pf-flexible", safe);
    exportPrefilters(flexible.model, dsDir, pfDir, mask, "test", "flexible");
    const evalDir = path.join(work, "eval-flexible", safe);
    sh(["evaluate", "--dataset", dsDir, "--out", evalDir, "--prefilters", pfDir]);
    const mean = readSummary(evalDir).masks[mask].mean;
    neuralReB[mask] = mean.re_b_db;
    neuralAe[mask] = mean.ae_db;
    console.log(`  neural ${mask}: RE_B ${mean.re_b_db.toFixed(2)} dB, bAE ${mean.ae_db.toFixed(2)} dB`);
  }

  const fixedPf = path.join(work, "pf-fixed", "Grid-2_1");
  exportPrefilters(fixed.model, dsDir, fixedPf, "Grid-2#1", "test", "fixed");
  const fixedEval = path.join(work, "eval-fixed", "Grid-2_1");
  sh(["evaluate", "--dataset", dsDir, "--out", fixedEval, "--prefilters", fixedPf]);
  const fixedReB = readSummary(fixedEval).masks["Grid-2#1"].mean.re_b_db;
  console.log(`  fixed Grid-2#1: RE_B ${fixedReB.toFixed(2)} dB`);

  console.log(`[acceptance] tuning PM to the neural model's effort ...`);
  const tuneDir = path.join(work, "tune");
  sh([
    "tune-ae", "--dataset", dsDir, "--target-bae", String(neuralAe["Grid-3#1"]),
    "--mask", "Grid-3#1", "--split", "test", "--out", tuneDir,
  ]);
  const lambda = JSON.parse(fs.readFileSync(path.join(tuneDir, "tune.json"), "utf-8")).lambda;
  console.log(`  matched lambda = ${lambda.toExponential(3)}`);

  const pmEval = path.join(work, "eval-pm");
  sh([
    "evaluate", "--dataset", dsDir, "--out", pmEval,
    ...masks3.flatMap((m) => ["--mask", m]), "--lambda", String(lambda),
  ]);
  const pmSummary = readSummary(pmEval);
  const pmReB31 = pmSummary.masks["Grid-3#1"].mean.re_b_db;
  console.log(`  PM Grid-3#1 (AE-matched): RE_B ${pmReB31.toFixed(2)} dB`);

  results.B_neural_beats_pm = {
    pass: neuralReB["Grid-3#1"] < pmReB31,
    detail: `neural ${neuralReB["Grid-3#1"].toFixed(2)} dB vs PM ${pmReB31.toFixed(2)} dB on Grid-3#1`,
  };
  const spread = Math.max(...masks3.map((m) => neuralReB[m])) -
    Math.min(...masks3.map((m) => neuralReB[m]));
  results.C_grid3_spread_flat = {
    pass: spread <= 1.0,
    detail: `neural 3x3 RE_B spread ${spread.toFixed(2)} dB ` +
      `(${masks3.map((m) => neuralReB[m].toFixed(2)).join(" / ")})`,
  };
  const margin = neuralReB["Grid-2#1"] - fixedReB;
  results.D_flexible_degradation_bounded = {
    pass: margin > 0 && margin <= 3.0,
    detail: `flexible - fixed on Grid-2#1: ${margin.toFixed(2)} dB`,
  };

  for (const [name, r] of Object.entries(results)) {
    console.log(`[ACCEPTANCE:${argv.scale}] ${name}: ${r.pass ? "PASS" : "FAIL"} (${r.detail})`);
  }
  fs.writeFileSync(
    path.join(work, "acceptance_report.json"),
    JSON.stringify({ scale: argv.scale, lambda, results }, null, 2) + "\n"
  );
  const allPass = Object.values(results).every((r) => r.pass);
  process.exitCode = allPass ? 0 : 1;
}

main();
