import * as fs from "fs";
import * as os from "os";
import * as path from "path";
import { describe, expect, it } from "vitest";

import {
  DatasetReader,
  decodeTensor,
  encodeTensor,
  numElements,
  readTensor,
  writePrefilters,
  writeTensor,
} from "../src/pszd";

const FIXTURES = path.join(__dirname, "..", "fixtures");

function tmpdir(): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), "pszd-"));
}

describe("PSZD tensor format", () => {
  it("round-trips through encode/decode", () => {
    const data = new Float32Array(2 * 6);
    for (let i = 0; i < data.length; i++) data[i] = Math.fround(Math.sin(i + 1));
    const tensor = { data, dims: [2, 3] };
    const decoded = decodeTensor(encodeTensor(tensor));
    expect(decoded.dims).toEqual([2, 3]);
    expect(Array.from(decoded.data)).toEqual(Array.from(data));
  });

  it("writes the frozen header layout", () => {
    const dir = tmpdir();
    const file = path.join(dir, "t.pszd");
    writeTensor(file, { data: new Float32Array(2 * 4), dims: [4] });
    const buf = fs.readFileSync(file);
    expect(buf.toString("ascii", 0, 4)).toBe("PSZD");
    expect(buf.readUInt32LE(4)).toBe(1);
    expect(buf.readUInt32LE(8)).toBe(1);
    expect(Number(buf.readBigUInt64LE(12))).toBe(4);
    expect(buf.length).toBe(20 + 8 * 4);
  });

  it("reads a tensor produced by the simulator package", () => {
    const tensor = readTensor(path.join(FIXTURES, "mask_input.pszd"), [4, 12, 12]);
    expect(tensor.dims).toEqual([4, 12, 12]);
    expect(tensor.data.length).toBe(2 * numElements(tensor.dims));
    for (const v of tensor.data) expect(Number.isFinite(v)).toBe(true);
  });

  it("rejects bad magic and truncation", () => {
    const dir = tmpdir();
    const bad = path.join(dir, "bad.pszd");
    fs.writeFileSync(bad, Buffer.from("NOPE0000000000000000"));
    expect(() => readTensor(bad)).toThrow(/magic/);
    const file = path.join(dir, "trunc.pszd");
    writeTensor(file, { data: new Float32Array(2 * 4), dims: [2, 2] });
    const blob = fs.readFileSync(file);
    fs.writeFileSync(file, blob.subarray(0, blob.length - 4));
    expect(() => readTensor(file)).toThrow(/payload size/);
  });

  it("reads the fixture dataset", () => {
    const ds = new DatasetReader(path.join(FIXTURES, "dataset"));
    expect(ds.manifest.n_samples).toBe(48);
    expect(ds.manifest.num_freqs).toBe(8);
    expect(ds.manifest.num_loudspeakers).toBe(16);
    const ctrl = ds.controlTarget(0);
    expect(ctrl.dims).toEqual([8, 12, 12]);
    const mon = ds.monitorTarget(3);
    expect(mon.dims).toEqual([8, 5, 5]);
    const hMon = ds.hMon();
    expect(hMon.dims).toEqual([8, 50, 16]);
    expect(() => ds.controlTarget(99)).toThrow(/out of range/);
  });
});

describe("pre-filter directory writer", () => {
  it("emits the shared layout with sorted metadata", () => {
    const dir = tmpdir();
    const out = path.join(dir, "pf");
    const k = 3;
    const l = 2;
    const mk = (seed: number) => {
      const data = new Float32Array(2 * k * l);
      for (let i = 0; i < data.length; i++) data[i] = Math.fround(seed + i * 0.25);
      return { data, dims: [k, l] };
    };
    writePrefilters(out, new Map([[4, mk(1)], [1, mk(2)]]), {
      method: "neural",
      mask: "Grid-3#1",
      scene_config_hash: "feedc0de",
      freqs_hz: [0, 1000, 2000],
      num_loudspeakers: l,
      extra: { model_id: "m1" },
    });
    const meta = JSON.parse(fs.readFileSync(path.join(out, "prefilters.json"), "utf-8"));
    expect(meta.kind).toBe("psz-prefilters");
    expect(meta.samples.map((s: { index: number }) => s.index)).toEqual([1, 4]);
    expect(meta.model_id).toBe("m1");
    const loaded = readTensor(path.join(out, "sample_00004.pszd"), [k, l]);
    expect(Array.from(loaded.data)).toEqual(Array.from(mk(1).data));
  });
});
