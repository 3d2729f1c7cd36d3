import { execFileSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import os from "node:os";
import path from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import {
  DataError,
  Sequence,
  ValidationError,
  decodeSequences,
  encodeSequences,
  readPair,
  readSequences,
  rnbChecksum,
  writeSequences,
} from "../src/index.js";
import { cliBinary } from "../src/cli.js";

const tmp = mkdtempSync(path.join(os.tmpdir(), "rnb-test-"));
afterAll(() => rmSync(tmp, { recursive: true, force: true }));

function sampleSequence(frames = 3, rows = 4, cols = 5, scale = 7.5): Sequence {
  const data = new Float32Array(frames * rows * cols);
  for (let i = 0; i < data.length; i += 1) {
    data[i] = i % 11 === 0 ? 0 : Math.fround((i * 37.3) % scale);
  }
  return {
    geometry: { rows, cols, pixelSizeKm: 4, timestepHours: 1 },
    frames,
    t0: 12,
    data,
  };
}

describe("rnb container", () => {
  it("round-trips bit-exactly in process", () => {
    const seq = sampleSequence();
    const buf = encodeSequences([seq, seq]);
    const back = decodeSequences(buf);
    expect(back).toHaveLength(2);
    expect(back[0].geometry).toEqual(seq.geometry);
    expect(back[0].t0).toBe(12);
    expect(Buffer.from(back[0].data.buffer).equals(Buffer.from(seq.data.buffer))).toBe(true);
  });

  it("computes the documented checksum", () => {
    // single zero word, length 8: sum = (0 xor SALT) * 1, digest = sum xor 8
    const salt = 0xa5a5a5a5a5a5a5a5n;
    expect(rnbChecksum(Buffer.alloc(8))).toBe(salt ^ 8n);
    // padding is zeros, so only the length term differs
    expect(rnbChecksum(Buffer.alloc(5))).toBe(salt ^ 5n);
  });

  it("detects single-byte corruption", () => {
    const buf = encodeSequences([sampleSequence()]);
    for (const offset of [9, 40, buf.length - 12]) {
      const bad = Buffer.from(buf);
      bad[offset] ^= 0x10;
      expect(() => decodeSequences(bad)).toThrow(DataError);
    }
  });

  it("detects truncation, trailing bytes, and bad magic", () => {
    const buf = encodeSequences([sampleSequence()]);
    expect(() => decodeSequences(buf.subarray(0, buf.length - 20))).toThrow(DataError);
    expect(() => decodeSequences(Buffer.concat([buf, Buffer.from([0])]))).toThrow(DataError);
    const bad = Buffer.from(buf);
    bad.write("NOPE", 0, "ascii");
    expect(() => decodeSequences(bad)).toThrow(/magic/);
  });

  it("rejects negatives unless they match the sentinel", () => {
    const seq = sampleSequence();
    seq.data[7] = -999;
    const buf = encodeSequences([seq]);
    expect(() => decodeSequences(buf)).toThrow(/negative rain rate/);
    const cleaned = decodeSequences(buf, { sentinel: -999 });
    expect(cleaned[0].data[7]).toBe(0);
  });

  it("validates write inputs", () => {
    const seq = sampleSequence();
    expect(() => encodeSequences([])).toThrow(ValidationError);
    const short = { ...seq, data: seq.data.subarray(0, 10) };
    expect(() => encodeSequences([short])).toThrow(/expected/);
  });
});

describe("cross-language interchange", () => {
  it("reads containers written by the toolkit and vice versa", async () => {
    // toolkit -> TS
    const pairPath = path.join(tmp, "pair.rnb");
    const hrPath = path.join(tmp, "hr.rnb");
    execFileSync(cliBinary(), [
      "generate", "--template", "squall", "--seed", "9", "--frames", "5",
      "--rows", "24", "--cols", "24", "--out", hrPath,
    ]);
    execFileSync(cliBinary(), ["degrade", "--in", hrPath, "--out", pairPath]);
    const { hr, lr } = await readPair(pairPath);
    expect(hr.geometry.rows).toBe(24);
    expect(hr.geometry.pixelSizeKm).toBe(4);
    expect(lr.geometry.rows).toBe(8);
    expect(lr.geometry.pixelSizeKm).toBe(12);
    expect(hr.frames).toBe(5);

    // TS -> toolkit: byte-identical re-encode proves checksum compatibility
    const original = readFileSync(pairPath);
    const reencoded = encodeSequences([hr, lr]);
    expect(reencoded.equals(original)).toBe(true);

    // and the toolkit accepts a TS-written container
    const tsPath = path.join(tmp, "ts-pair.rnb");
    writeFileSync(tsPath, reencoded);
    const out = execFileSync(
      cliBinary(),
      ["evaluate", "--pred", hrPath, "--obs", tsPath],
      { encoding: "utf8" }
    );
    expect(JSON.parse(out).rmse).toBe(0);
  });

  it("surfaces the toolkit's corruption errors through readSequences", async () => {
    const hrPath = path.join(tmp, "hr2.rnb");
    execFileSync(cliBinary(), [
      "generate", "--template", "hurricane", "--seed", "2", "--frames", "4",
      "--rows", "24", "--cols", "24", "--out", hrPath,
    ]);
    const raw = readFileSync(hrPath);
    raw[raw.length - 30] ^= 0x04;
    const badPath = path.join(tmp, "bad.rnb");
    writeFileSync(badPath, raw);
    await expect(readSequences(badPath)).rejects.toThrow(/checksum/);
  });
});
