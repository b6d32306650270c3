import * as fs from "fs";
import * as path from "path";
import { describe, expect, it } from "vitest";

import { MASK_NAMES, applyMask, keepTable, sideIndices } from "../src/masks";
import { readTensor } from "../src/pszd";

const FIXTURES = path.join(__dirname, "..", "fixtures");
const EXPECTED = JSON.parse(
  fs.readFileSync(path.join(FIXTURES, "masks.json"), "utf-8")
) as Record<string, { side_indices: number[]; flat_indices: number[]; file: string }>;

describe("mask patterns", () => {
  it("covers all ten named patterns", () => {
    expect(MASK_NAMES).toHaveLength(10);
    expect(Object.keys(EXPECTED).sort()).toEqual([...MASK_NAMES].sort());
  });

  it.each(MASK_NAMES)("side indices of %s match the simulator package", (name) => {
    expect(sideIndices(name)).toEqual(EXPECTED[name].side_indices);
  });

  it.each(MASK_NAMES)("flat keep-set of %s matches the simulator package", (name) => {
    const keep = keepTable(name);
    const flat = keep.flatMap((v, i) => (v ? [i] : []));
    expect(flat).toEqual(EXPECTED[name].flat_indices);
  });

  it("rejects unknown patterns", () => {
    expect(() => sideIndices("Grid-5")).toThrow(/unknown mask/);
  });
});

describe("applyMask against shared fixtures", () => {
  const input = readTensor(path.join(FIXTURES, "mask_input.pszd"), [4, 12, 12]);

  it.each(MASK_NAMES)("masked output for %s is bit-identical", (name) => {
    const expected = readTensor(path.join(FIXTURES, EXPECTED[name].file), [4, 12, 12]);
    const got = applyMask(input, name);
    // compare raw bit patterns, not just numeric closeness
    const gotBits = new Uint32Array(got.data.buffer, 0, got.data.length);
    const expBits = new Uint32Array(
      expected.data.buffer,
      expected.data.byteOffset,
      expected.data.length
    );
    expect(gotBits).toEqual(expBits);
  });

  it("is idempotent", () => {
    const once = applyMask(input, "Grid-3#2");
    const twice = applyMask(once, "Grid-3#2");
    expect(Array.from(twice.data)).toEqual(Array.from(once.data));
  });

  it("keeps exactly count^2 nonzero cells per bin", () => {
    const out = applyMask(input, "Grid-4");
    for (let k = 0; k < 4; k++) {
      let nonzero = 0;
      for (let c = 0; c < 144; c++) {
        const re = out.data[2 * (k * 144 + c)];
        const im = out.data[2 * (k * 144 + c) + 1];
        if (re !== 0 || im !== 0) nonzero += 1;
      }
      expect(nonzero).toBe(16);
    }
  });

  it("rejects non 12x12 spatial dims", () => {
    expect(() =>
      applyMask({ data: new Float32Array(2 * 4 * 11 * 12), dims: [4, 11, 12] }, "Grid-6")
    ).toThrow(/expected dims/);
  });
});
