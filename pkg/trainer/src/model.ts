/**
 * 3D convolutional residual network mapping a masked bright-zone target
 * tensor to loudspeaker pre-filters.
 *
 * Input  (B, 12, 12, K, 2): grid-x, grid-y, frequency, real/imag channels.
 * Output (B, 2, L, K): real/imag, loudspeaker, frequency.
 *
 * Stem conv -> N residual blocks (conv-BN-PReLU-conv-BN + skip, PReLU after
 * the sum) -> average pool over the two grid axes -> a fully connected map
 * along the frequency axis shared across channels -> a per-frequency grouped
 * linear map to 2L outputs. Every frequency bin owns its own head weights,
 * so bin k of the pooled features only ever reaches output bin k.
 */
import * as tf from "@tensorflow/tfjs";
import * as fs from "fs";
import * as path from "path";

import { Rng } from "./rng";

export interface ArchConfig {
  numFreqs: number;
  numSpeakers: number;
  channels: number;
  numBlocks: number;
}

export const PRESETS: Record<string, { channels: number; numBlocks: number }> = {
  // desk: trains on a CPU at small scale, well under 2M parameters
  desk: { channels: 32, numBlocks: 4 },
  // paper: sized to land within 10% of the published 21.59M parameter count
  // at K = 512, L = 30
  paper: { channels: 192, numBlocks: 8 },
};

export const GRID = 12;
const BN_EPS = 1e-3;
const BN_MOMENTUM = 0.9;
const PRELU_INIT = 0.25;

interface BnStats {
  mean: tf.Variable;
  variance: tf.Variable;
}

export class NeuralPszModel {
  private static instances = 0;

  readonly cfg: ArchConfig;
  readonly vars = new Map<string, tf.Variable>();
  private bnStats = new Map<string, BnStats>();
  private pendingMoments = new Map<string, { mean: tf.Tensor; variance: tf.Tensor }>();
  /** tfjs registers variable names globally; namespace them per instance. */
  private readonly scope: string;

  constructor(cfg: ArchConfig, seed = 1) {
    this.cfg = cfg;
    this.scope = `pszmodel${NeuralPszModel.instances++}`;
    const rng = new Rng(seed);
    const c = cfg.channels;
    this.addConv("stem", 2, c, rng);
    this.addBn("stem_bn", c);
    this.addPrelu("stem_act", c);
    for (let b = 0; b < cfg.numBlocks; b++) {
      this.addConv(`block${b}_conv1`, c, c, rng);
      this.addBn(`block${b}_bn1`, c);
      this.addPrelu(`block${b}_act1`, c);
      this.addConv(`block${b}_conv2`, c, c, rng);
      this.addBn(`block${b}_bn2`, c);
      this.addPrelu(`block${b}_act_out`, c);
    }
    const k = cfg.numFreqs;
    this.addVar("freq_fc_w", [k, k], rng.normalArray(k * k, Math.sqrt(1 / k)));
    this.addVar("freq_fc_b", [k], new Float32Array(k));
    const out = 2 * cfg.numSpeakers;
    this.addVar(
      "head_w",
      [k, c, out],
      rng.normalArray(k * c * out, Math.sqrt(1 / c))
    );
    this.addVar("head_b", [k, 1, out], new Float32Array(k * out));
  }

  private addVar(name: string, shape: number[], values: Float32Array, trainable = true): void {
    this.vars.set(
      name,
      tf.variable(tf.tensor(values, shape), trainable, `${this.scope}/${name}`)
    );
  }

  private addConv(name: string, cin: number, cout: number, rng: Rng): void {
    const fanIn = 27 * cin;
    this.addVar(
      `${name}_w`,
      [3, 3, 3, cin, cout],
      rng.normalArray(27 * cin * cout, Math.sqrt(2 / fanIn))
    );
    this.addVar(`${name}_b`, [cout], new Float32Array(cout));
  }

  private addBn(name: string, c: number): void {
    this.addVar(`${name}_gamma`, [c], new Float32Array(c).fill(1));
    this.addVar(`${name}_beta`, [c], new Float32Array(c));
    this.bnStats.set(name, {
      mean: tf.variable(tf.zeros([c]), false, `${this.scope}/${name}_moving_mean`),
      variance: tf.variable(tf.ones([c]), false, `${this.scope}/${name}_moving_var`),
    });
  }

  private addPrelu(name: string, c: number): void {
    this.addVar(`${name}_alpha`, [c], new Float32Array(c).fill(PRELU_INIT));
  }

  private v(name: string): tf.Variable {
    const variable = this.vars.get(name);
    if (!variable) throw new Error(`no variable ${name}`);
    return variable;
  }

  private conv(name: string, x: tf.Tensor5D): tf.Tensor5D {
    const w = this.v(`${name}_w`) as unknown as tf.Tensor5D;
    const y = tf.conv3d(x, w, [1, 1, 1], "same");
    return tf.add(y, this.v(`${name}_b`)) as tf.Tensor5D;
  }

  private bn(name: string, x: tf.Tensor, training: boolean): tf.Tensor {
    const gamma = this.v(`${name}_gamma`);
    const beta = this.v(`${name}_beta`);
    const stats = this.bnStats.get(name)!;
    let mean: tf.Tensor;
    let variance: tf.Tensor;
    if (training) {
      const axes = Array.from({ length: x.rank - 1 }, (_, i) => i);
      ({ mean, variance } = tf.moments(x, axes));
      this.pendingMoments.set(name, {
        mean: tf.keep(mean.clone()),
        variance: tf.keep(variance.clone()),
      });
    } else {
      mean = stats.mean;
      variance = stats.variance;
    }
    // composed from primitives: the fused batchNorm gradient cannot handle
    // rank-5 inputs
    const inv = tf.rsqrt(tf.add(variance, BN_EPS));
    return tf.add(tf.mul(tf.mul(tf.sub(x, mean), inv), gamma), beta);
  }

  private prelu(name: string, x: tf.Tensor): tf.Tensor {
    const alpha = this.v(`${name}_alpha`);
    return tf.add(tf.relu(x), tf.mul(alpha, tf.neg(tf.relu(tf.neg(x)))));
  }

  /**
   * Forward pass. `x` is (B, 12, 12, K, 2); the result is (B, 2, L, K).
   * In training mode batch statistics drive the normalization layers and the
   * freshly seen moments are staged for `commitMovingStats`.
   */
  forward(x: tf.Tensor5D, training = false): tf.Tensor4D {
    const { numFreqs: k, numSpeakers: l, channels: c, numBlocks } = this.cfg;
    let h: tf.Tensor = this.prelu("stem_act", this.bn("stem_bn", this.conv("stem", x), training));
    for (let b = 0; b < numBlocks; b++) {
      const skip = h;
      let y: tf.Tensor = this.conv(`block${b}_conv1`, h as tf.Tensor5D);
      y = this.prelu(`block${b}_act1`, this.bn(`block${b}_bn1`, y, training));
      y = this.conv(`block${b}_conv2`, y as tf.Tensor5D);
      y = this.bn(`block${b}_bn2`, y, training);
      h = this.prelu(`block${b}_act_out`, tf.add(y, skip));
    }
    // collapse the two grid axes -> (B, K, C)
    const feat = tf.mean(h, [1, 2]) as tf.Tensor3D;
    const mixed = this.frequencyFc(feat);
    const grouped = this.groupedHead(mixed);
    const re = tf.slice(grouped, [0, 0, 0], [-1, -1, l]);
    const im = tf.slice(grouped, [0, 0, l], [-1, -1, l]);
    const stacked = tf.stack([re, im], 1); // (B, 2, K, L)
    return tf.transpose(stacked, [0, 1, 3, 2]) as tf.Tensor4D; // (B, 2, L, K)
  }

  /** Linear map along the frequency axis, shared across channels. */
  frequencyFc(feat: tf.Tensor3D): tf.Tensor3D {
    const [bsize, k, c] = feat.shape;
    let y = tf.transpose(feat, [0, 2, 1]).reshape([bsize * c, k]);
    y = tf.add(tf.matMul(y, this.v("freq_fc_w")), this.v("freq_fc_b"));
    return tf.transpose(y.reshape([bsize, c, k]), [0, 2, 1]) as tf.Tensor3D;
  }

  /**
   * Per-frequency grouped linear map (B, K, C) -> (B, K, 2L); bin k of the
   * features reaches only bin k of the output.
   */
  groupedHead(feat: tf.Tensor3D): tf.Tensor3D {
    const grouped = tf.add(
      tf.matMul(tf.transpose(feat, [1, 0, 2]), this.v("head_w")),
      this.v("head_b")
    );
    return tf.transpose(grouped, [1, 0, 2]) as tf.Tensor3D; // (B, K, 2L)
  }

  /** Fold the staged batch moments into the inference statistics. */
  commitMovingStats(): void {
    for (const [name, { mean, variance }] of this.pendingMoments) {
      const stats = this.bnStats.get(name)!;
      stats.mean.assign(
        tf.tidy(() => tf.add(tf.mul(stats.mean, BN_MOMENTUM), tf.mul(mean, 1 - BN_MOMENTUM)))
      );
      stats.variance.assign(
        tf.tidy(() =>
          tf.add(tf.mul(stats.variance, BN_MOMENTUM), tf.mul(variance, 1 - BN_MOMENTUM))
        )
      );
      mean.dispose();
      variance.dispose();
    }
    this.pendingMoments.clear();
  }

  discardPendingMoments(): void {
    for (const { mean, variance } of this.pendingMoments.values()) {
      mean.dispose();
      variance.dispose();
    }
    this.pendingMoments.clear();
  }

  trainableVariables(): tf.Variable[] {
    return [...this.vars.values()].filter((v) => v.trainable);
  }

  paramCount(): number {
    return this.trainableVariables().reduce((n, v) => n + v.size, 0);
  }

  saveCheckpoint(file: string, extra: Record<string, unknown> = {}): void {
    const weights: Record<string, { shape: number[]; data: string }> = {};
    const dump = (name: string, t: tf.Tensor) => {
      const arr = t.dataSync() as Float32Array;
      weights[name] = {
        shape: t.shape.slice(),
        data: Buffer.from(arr.buffer, arr.byteOffset, arr.byteLength).toString("base64"),
      };
    };
    for (const [name, v] of this.vars) dump(name, v);
    for (const [name, stats] of this.bnStats) {
      dump(`${name}_moving_mean`, stats.mean);
      dump(`${name}_moving_var`, stats.variance);
    }
    const blob = JSON.stringify({ config: this.cfg, weights, ...extra });
    const tmp = `${file}.tmp`;
    fs.mkdirSync(path.dirname(file), { recursive: true });
    fs.writeFileSync(tmp, blob);
    fs.renameSync(tmp, file); // atomic publish
  }

  static loadCheckpoint(file: string): NeuralPszModel {
    const raw = JSON.parse(fs.readFileSync(file, "utf-8"));
    const model = new NeuralPszModel(raw.config as ArchConfig);
    const load = (entry: { shape: number[]; data: string }): tf.Tensor => {
      const buf = Buffer.from(entry.data, "base64");
      const bytes = Uint8Array.prototype.slice.call(buf); // aligned copy
      return tf.tensor(new Float32Array(bytes.buffer), entry.shape);
    };
    for (const [name, v] of model.vars) {
      if (!raw.weights[name]) throw new Error(`checkpoint missing weight ${name}`);
      v.assign(load(raw.weights[name]));
    }
    for (const [name, stats] of model.bnStats) {
      stats.mean.assign(load(raw.weights[`${name}_moving_mean`]));
      stats.variance.assign(load(raw.weights[`${name}_moving_var`]));
    }
    return model;
  }
}

export function buildModel(
  preset: string | { channels: number; numBlocks: number },
  numFreqs: number,
  numSpeakers: number,
  seed = 1
): NeuralPszModel {
  const arch = typeof preset === "string" ? PRESETS[preset] : preset;
  if (!arch) {
    throw new Error(`unknown preset ${preset}; valid: ${Object.keys(PRESETS).join(", ")}`);
  }
  return new NeuralPszModel(
    { numFreqs, numSpeakers, channels: arch.channels, numBlocks: arch.numBlocks },
    seed
  );
}
