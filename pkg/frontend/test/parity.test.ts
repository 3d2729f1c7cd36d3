/**
 * Bindings parity: metric values produced through this package must
 * equal the CLI's JSON output to 1e-9 relative on 50 fixture pairs, and
 * error cases must surface the toolkit's own messages.
 */

import { execFileSync } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import os from "node:os";
import path from "node:path";
import { afterAll, describe, expect, it } from "vitest";

import {
  ArrayView,
  DataError,
  DEFAULT_AMO,
  MetricReport,
  ValidationError,
  ammd,
  evaluate,
  evaluateFiles,
  pbias,
  pdem,
  pem,
  readPair,
  readSequences,
  rmse,
} from "../src/index.js";
import { cliBinary } from "../src/cli.js";

const tmp = mkdtempSync(path.join(os.tmpdir(), "parity-test-"));
afterAll(() => rmSync(tmp, { recursive: true, force: true }));

const FIXTURE_COUNT = 50;

function makeFixture(seed: number): { pairPath: string; predPath: string } {
  const hrPath = path.join(tmp, `hr-${seed}.rnb`);
  const pairPath = path.join(tmp, `pair-${seed}.rnb`);
  const predPath = path.join(tmp, `pred-${seed}.rnb`);
  const template = seed % 2 === 0 ? "hurricane" : "squall";
  execFileSync(cliBinary(), [
    "generate", "--template", template, "--seed", String(seed),
    "--frames", "4", "--rows", "24", "--cols", "24", "--out", hrPath,
  ]);
  execFileSync(cliBinary(), [
    "degrade", "--in", hrPath, "--gain", "1.1", "--noise-sigma", "0.05",
    "--seed", String(seed), "--out", pairPath,
  ]);
  execFileSync(cliBinary(), [
    "downscale", "--in", pairPath, "--method", seed % 3 === 0 ? "nearest" : "bilinear",
    "--out", predPath,
  ]);
  return { pairPath, predPath };
}

function cliReport(predPath: string, obsPath: string): MetricReport {
  const out = execFileSync(cliBinary(), ["evaluate", "--pred", predPath, "--obs", obsPath], {
    encoding: "utf8",
  });
  return JSON.parse(out) as MetricReport;
}

function toView(seq: { geometry: { rows: number; cols: number; pixelSizeKm: number; timestepHours: number }; frames: number; t0: number; data: Float32Array }): ArrayView {
  return {
    data: seq.data,
    frames: seq.frames,
    rows: seq.geometry.rows,
    cols: seq.geometry.cols,
    pixelSizeKm: seq.geometry.pixelSizeKm,
    timestepHours: seq.geometry.timestepHours,
    t0: seq.t0,
  };
}

function relClose(a: number, b: number, rel = 1e-9): boolean {
  return Math.abs(a - b) <= rel * Math.max(Math.abs(a), Math.abs(b), 1e-300);
}

describe("bindings parity with the CLI", () => {
  it(
    `matches CLI reports on ${FIXTURE_COUNT} fixture pairs to 1e-9 relative`,
    { timeout: 600_000 },
    async () => {
      for (let seed = 0; seed < FIXTURE_COUNT; seed += 1) {
        const { pairPath, predPath } = makeFixture(seed);
        const reference = cliReport(predPath, pairPath);
        const { hr } = await readPair(pairPath);
        const predSeq = (await readSequences(predPath))[0];
        const bound = await evaluate(toView(predSeq), toView(hr));
        for (const key of Object.keys(reference) as (keyof MetricReport)[]) {
          expect(relClose(bound[key], reference[key]), `${key} seed ${seed}`).toBe(true);
        }
        // aggregation arithmetic reproduces the report's own aggregates
        expect(relClose(pem(bound), bound.pem)).toBe(true);
        expect(relClose(pdem(bound), bound.pdem)).toBe(true);
        expect(relClose(pbias(bound.cmd, DEFAULT_AMO.cmd), bound.pbias_cmd)).toBe(true);
      }
    }
  );

  it("zero report when prediction equals observation", async () => {
    const { pairPath } = makeFixture(991);
    const { hr } = await readPair(pairPath);
    const report = await evaluate(toView(hr), toView(hr));
    expect(report.mppe).toBe(0);
    expect(report.rmse).toBe(0);
    expect(report.pem).toBe(0);
    expect(report.pdem).toBe(0);
  });

  it("single-metric helpers return the matching report field", async () => {
    const { pairPath, predPath } = makeFixture(992);
    const reference = cliReport(predPath, pairPath);
    const { hr } = await readPair(pairPath);
    const predSeq = (await readSequences(predPath))[0];
    expect(relClose(await rmse(toView(predSeq), toView(hr)), reference.rmse)).toBe(true);
    expect(relClose(await ammd(toView(predSeq), toView(hr)), reference.ammd)).toBe(true);
  });

  it("passes metric options through to the CLI", async () => {
    const { pairPath, predPath } = makeFixture(993);
    const { hr } = await readPair(pairPath);
    const predSeq = (await readSequences(predPath))[0];
    const base = await evaluate(toView(predSeq), toView(hr));
    const tweaked = await evaluate(toView(predSeq), toView(hr), {
      quantileTau: 0.9,
      heavyThreshold: 2.0,
      amo: { cmd: 13 },
    });
    expect(tweaked.mppe).not.toBe(base.mppe);
    expect(tweaked.hrre).not.toBe(base.hrre);
    expect(relClose(tweaked.pbias_cmd, tweaked.cmd / 13)).toBe(true);
  });

  it("names both shapes on a mismatch", async () => {
    const a: ArrayView = { data: new Float32Array(2 * 4 * 4), frames: 2, rows: 4, cols: 4 };
    const b: ArrayView = { data: new Float32Array(2 * 4 * 5), frames: 2, rows: 4, cols: 5 };
    await expect(evaluate(a, b)).rejects.toThrow(/2x4x4.*2x4x5/);
  });

  it("surfaces the toolkit's own data errors", async () => {
    const { predPath } = makeFixture(994);
    const badPath = path.join(tmp, "garbage.rnb");
    const { writeFileSync } = await import("node:fs");
    writeFileSync(badPath, Buffer.from("RNB1 not really a container"));
    await expect(evaluateFiles(predPath, badPath)).rejects.toThrow(DataError);
    await expect(evaluateFiles(predPath, badPath)).rejects.toThrow(/bad|truncated|corrupt/i);
  });

  it("validates aggregation inputs", () => {
    expect(() => pem({ mppe: 1, hrre: 2, ammd: 0.1 })).toThrow(ValidationError);
    expect(() => pbias(1, 0)).toThrow(/AMO/);
    // published aggregation spot check
    const kriging = { mppe: 4.036, hrre: 339.641, ammd: 0.204, cpmse: 4.891 };
    expect(Math.abs(pem(kriging) - 0.2584)).toBeLessThan(5e-5);
    expect(Math.abs(pdem({ hrts: 9.958, cmd: 12.277 }) - 0.568)).toBeLessThan(5e-4);
  });
});
