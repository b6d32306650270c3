/**
 * PSZD tensor files and the JSON manifests around them.
 *
 * Layout (little-endian): 4-byte magic "PSZD", u32 version (1), u32 dim
 * count, u64 dims, then the payload as interleaved (real, imag) float32
 * pairs in row-major order. This is the wire format shared with the
 * simulation/solver package; keep it frozen.
 */
import * as fs from "fs";
import * as path from "path";

export const MAGIC = "PSZD";
export const FORMAT_VERSION = 1;

export interface ComplexTensor {
  /** Interleaved (re, im) float32 pairs, row-major. */
  data: Float32Array;
  dims: number[];
}

export function numElements(dims: number[]): number {
  return dims.reduce((a, b) => a * b, 1);
}

export function encodeTensor(tensor: ComplexTensor): Buffer {
  const n = numElements(tensor.dims);
  if (tensor.data.length !== 2 * n) {
    throw new Error(
      `payload has ${tensor.data.length} floats, dims ${tensor.dims} need ${2 * n}`
    );
  }
  const header = Buffer.alloc(12 + 8 * tensor.dims.length);
  header.write(MAGIC, 0, "ascii");
  header.writeUInt32LE(FORMAT_VERSION, 4);
  header.writeUInt32LE(tensor.dims.length, 8);
  tensor.dims.forEach((d, i) => header.writeBigUInt64LE(BigInt(d), 12 + 8 * i));
  const payload = Buffer.from(tensor.data.buffer, tensor.data.byteOffset, tensor.data.byteLength);
  return Buffer.concat([header, payload]);
}

export function decodeTensor(buf: Buffer, source = "<buffer>"): ComplexTensor {
  if (buf.length < 12 || buf.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error(`${source}: not a PSZD tensor (bad magic)`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== FORMAT_VERSION) {
    throw new Error(`${source}: unsupported PSZD version ${version}`);
  }
  const ndims = buf.readUInt32LE(8);
  if (ndims === 0 || ndims > 8) {
    throw new Error(`${source}: implausible dimension count ${ndims}`);
  }
  const dims: number[] = [];
  for (let i = 0; i < ndims; i++) {
    dims.push(Number(buf.readBigUInt64LE(12 + 8 * i)));
  }
  const offset = 12 + 8 * ndims;
  const expected = offset + 8 * numElements(dims);
  if (buf.length !== expected) {
    throw new Error(
      `${source}: payload size ${buf.length} does not match the ${expected} bytes implied by dims [${dims}]`
    );
  }
  // aligned copy, independent of Node's pooled buffer; files are
  // little-endian and so are the supported platforms
  const bytes = Uint8Array.prototype.slice.call(buf, offset);
  const data = new Float32Array(bytes.buffer, 0, 2 * numElements(dims));
  return { data, dims };
}

export function readTensor(file: string, expectedDims?: number[]): ComplexTensor {
  const tensor = decodeTensor(fs.readFileSync(file), file);
  if (expectedDims && !dimsEqual(tensor.dims, expectedDims)) {
    throw new Error(`${file}: dims [${tensor.dims}] do not match expected [${expectedDims}]`);
  }
  return tensor;
}

export function writeTensor(file: string, tensor: ComplexTensor): void {
  fs.writeFileSync(file, encodeTensor(tensor));
}

export function dimsEqual(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

export interface DatasetManifest {
  schema_version: number;
  kind: string;
  scene_config: Record<string, unknown>;
  scene_config_hash: string;
  seed: number;
  n_samples: number;
  num_freqs: number;
  freqs_hz: number[];
  num_loudspeakers: number;
  control_grid: [number, number];
  monitor_grid: [number, number];
  num_control_points: number;
  num_monitor_points: number;
  source_positions: number[][];
  splits: { train: number[]; val: number[]; test: number[] };
  files: Record<string, { path: string; dims: number[]; size_bytes: number; sha256: string }>;
}

export class DatasetReader {
  readonly root: string;
  readonly manifest: DatasetManifest;
  private cache = new Map<string, ComplexTensor>();

  constructor(root: string) {
    this.root = root;
    const manifestPath = path.join(root, "manifest.json");
    if (!fs.existsSync(manifestPath)) {
      throw new Error(`${root}: no manifest.json found`);
    }
    this.manifest = JSON.parse(fs.readFileSync(manifestPath, "utf-8"));
    if (this.manifest.kind !== "psz-dataset") {
      throw new Error(`${manifestPath}: not a psz-dataset manifest`);
    }
    if (this.manifest.schema_version !== 1) {
      throw new Error(`${manifestPath}: unsupported schema ${this.manifest.schema_version}`);
    }
  }

  private tensor(key: string): ComplexTensor {
    const cached = this.cache.get(key);
    if (cached) return cached;
    const entry = this.manifest.files[key];
    if (!entry) throw new Error(`dataset has no file entry ${key}`);
    const t = readTensor(path.join(this.root, entry.path), entry.dims);
    this.cache.set(key, t);
    return t;
  }

  /** Local-room monitor tensor (K, M_mon, L). */
  hMon(): ComplexTensor {
    return this.tensor("h_mon");
  }

  /** Local-room control tensor (K, M_ctrl, L). */
  hCtrl(): ComplexTensor {
    return this.tensor("h_ctrl");
  }

  /** One sample's bright control target (K, nc, nc) as an interleaved slice. */
  controlTarget(index: number): ComplexTensor {
    const all = this.tensor("control_targets");
    return this.slice(all, index);
  }

  /** One sample's bright monitor target (K, nm, nm). */
  monitorTarget(index: number): ComplexTensor {
    const all = this.tensor("monitor_targets");
    return this.slice(all, index);
  }

  private slice(all: ComplexTensor, index: number): ComplexTensor {
    const [n, ...rest] = all.dims;
    if (index < 0 || index >= n) {
      throw new Error(`sample index ${index} out of range 0..${n - 1}`);
    }
    const per = 2 * numElements(rest);
    return { data: all.data.subarray(index * per, (index + 1) * per), dims: rest };
  }
}

export interface PrefilterSampleEntry {
  index: number;
  path: string;
  dims: number[];
  size_bytes: number;
  sha256: string;
}

/**
 * Write a pre-filter directory in the shared layout: one (K, L) PSZD file
 * per sample plus prefilters.json carrying the metadata the evaluator
 * checks (method, mask, scene hash, frequency grid).
 */
export function writePrefilters(
  outDir: string,
  sets: Map<number, ComplexTensor>,
  meta: {
    method: string;
    mask: string;
    scene_config_hash: string;
    freqs_hz: number[];
    num_loudspeakers: number;
    extra?: Record<string, unknown>;
  }
): void {
  if (sets.size === 0) throw new Error("no pre-filter sets to write");
  fs.mkdirSync(outDir, { recursive: true });
  const crypto = require("crypto") as typeof import("crypto");
  const samples: PrefilterSampleEntry[] = [];
  const indices = [...sets.keys()].sort((a, b) => a - b);
  for (const index of indices) {
    const tensor = sets.get(index)!;
    const name = `sample_${String(index).padStart(5, "0")}.pszd`;
    const blob = encodeTensor(tensor);
    fs.writeFileSync(path.join(outDir, name), blob);
    samples.push({
      index,
      path: name,
      dims: tensor.dims,
      size_bytes: blob.length,
      sha256: crypto.createHash("sha256").update(blob).digest("hex"),
    });
  }
  const first = sets.get(indices[0])!;
  const manifest = {
    schema_version: 1,
    kind: "psz-prefilters",
    method: meta.method,
    mask: meta.mask,
    scene_config_hash: meta.scene_config_hash,
    num_freqs: first.dims[0],
    freqs_hz: meta.freqs_hz,
    num_loudspeakers: meta.num_loudspeakers,
    samples,
    ...(meta.extra ?? {}),
  };
  fs.writeFileSync(
    path.join(outDir, "prefilters.json"),
    JSON.stringify(manifest, sortedKeysReplacer, 2) + "\n"
  );
}

function sortedKeysReplacer(this: unknown, _key: string, value: unknown): unknown {
  if (value && typeof value === "object" && !Array.isArray(value)) {
    return Object.fromEntries(
      Object.entries(value as Record<string, unknown>).sort(([a], [b]) => (a < b ? -1 : 1))
    );
  }
  return value;
}
