/**
 * Trainer CLI: `train` fits a model on a PSZD dataset and saves a
 * checkpoint plus a JSON training log; `export` runs inference on a split
 * and writes pre-filter files for the evaluator.
 */
import * as path from "path";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { NeuralPszModel } from "./model";
import { DatasetReader } from "./pszd";
import { exportPrefilters } from "./export";
import { DEFAULT_TRAIN_CONFIG, TrainConfig, train, writeTrainingLog } from "./train";

export function runTrain(args: {
  dataset: string;
  out: string;
  preset: string;
  epochs: number;
  batchSize: number;
  lr: number;
  maskPolicy: string;
  fixedMask?: string;
  seed: number;
  loss: string;
}): void {
  const cfg: TrainConfig = {
    ...DEFAULT_TRAIN_CONFIG,
    epochs: args.epochs,
    batchSize: args.batchSize,
    learningRate: args.lr,
    preset: args.preset,
    seed: args.seed,
    lossForm: args.loss === "mse" ? "mse" : "norm",
    maskPolicy:
      args.maskPolicy === "fixed" ? { fixed: args.fixedMask ?? "Grid-12" } : "flexible",
  };
  const dataset = new DatasetReader(args.dataset);
  const result = train(args.dataset, cfg, {
    onStep: (entry) => {
      if (entry.step % 10 === 0) {
        console.log(
          `epoch ${entry.epoch} step ${entry.step} loss ${entry.loss.toExponential(4)}`
        );
      }
    },
  });
  const checkpoint = path.join(args.out, "checkpoint.json");
  result.model.saveCheckpoint(checkpoint, {
    scene_config_hash: dataset.manifest.scene_config_hash,
  });
  writeTrainingLog(
    path.join(args.out, "training_log.json"),
    result,
    cfg,
    dataset.manifest.scene_config_hash
  );
  console.log(
    `val loss ${result.initialValLoss.toExponential(4)} -> ${result.finalValLoss.toExponential(4)}`
  );
  console.log(`checkpoint written to ${checkpoint}`);
}

export function runExport(args: {
  dataset: string;
  checkpoint: string;
  out: string;
  mask: string;
  modelId: string;
}): void {
  const model = NeuralPszModel.loadCheckpoint(args.checkpoint);
  const indices = exportPrefilters(
    model,
    args.dataset,
    args.out,
    args.mask,
    "test",
    args.modelId
  );
  console.log(`wrote pre-filters for ${indices.length} samples to ${args.out}`);
}

export function main(argv: string[]): void {
  yargs(argv)
    .command(
      "train",
      "train a pre-filter network on a PSZD dataset",
      (y) =>
        y
          .option("dataset", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true })
          .option("preset", { type: "string", default: "desk" })
          .option("epochs", { type: "number", default: DEFAULT_TRAIN_CONFIG.epochs })
          .option("batch-size", { type: "number", default: DEFAULT_TRAIN_CONFIG.batchSize })
          .option("lr", { type: "number", default: DEFAULT_TRAIN_CONFIG.learningRate })
          .option("mask-policy", {
            type: "string",
            choices: ["flexible", "fixed"],
            default: "flexible",
          })
          .option("fixed-mask", { type: "string" })
          .option("seed", { type: "number", default: DEFAULT_TRAIN_CONFIG.seed })
          .option("loss", { type: "string", choices: ["norm", "mse"], default: "norm" }),
      (a) =>
        runTrain({
          dataset: a.dataset,
          out: a.out,
          preset: a.preset,
          epochs: a.epochs,
          batchSize: a["batch-size"],
          lr: a.lr,
          maskPolicy: a["mask-policy"],
          fixedMask: a["fixed-mask"],
          seed: a.seed,
          loss: a.loss,
        })
    )
    .command(
      "export",
      "write pre-filters for the test split from a checkpoint",
      (y) =>
        y
          .option("dataset", { type: "string", demandOption: true })
          .option("checkpoint", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true })
          .option("mask", { type: "string", default: "Grid-12" })
          .option("model-id", { type: "string", default: "neural" }),
      (a) =>
        runExport({
          dataset: a.dataset,
          checkpoint: a.checkpoint,
          out: a.out,
          mask: a.mask,
          modelId: a["model-id"],
        })
    )
    .demandCommand(1)
    .strict()
    .help()
    .parseSync();
}

if (require.main === module) {
  main(hideBin(process.argv));
}
