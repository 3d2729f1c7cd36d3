/**
 * TypeScript client for the precipeval toolkit.
 *
 * Scoring always runs through the toolkit itself (one `precipeval
 * evaluate` invocation on rnb containers written by this package), so
 * every metric value comes from the single numerical implementation;
 * this package only speaks the two stable interfaces: the rnb wire
 * format and the CLI's JSON reports. The PBIAS/PEM/PDEM helpers
 * reimplement nothing but the published aggregation arithmetic.
 */

import { promises as fs } from "node:fs";
import os from "node:os";
import path from "node:path";

import { runCli } from "./cli.js";
import { ValidationError } from "./errors.js";
import {
  AmoTable,
  DEFAULT_AMO,
  MetricReport,
  parseReport,
  pbias,
  pdem,
  pem,
} from "./report.js";
import {
  GridGeometry,
  ReadOptions,
  Sequence,
  decodeSequences,
  encodeSequences,
  readPair,
  readSequences,
  rnbChecksum,
  writePair,
  writeSequences,
} from "./rnb.js";

export {
  AmoTable,
  DEFAULT_AMO,
  GridGeometry,
  MetricReport,
  ReadOptions,
  Sequence,
  decodeSequences,
  encodeSequences,
  parseReport,
  pbias,
  pdem,
  pem,
  readPair,
  readSequences,
  rnbChecksum,
  writePair,
  writeSequences,
};
export { CliError, DataError, ValidationError } from "./errors.js";
export { cliBinary, runCli } from "./cli.js";

/** A rain-rate stack: `frames * rows * cols` row-major values (mm/hour). */
export interface ArrayView {
  data: Float32Array | Float64Array;
  frames: number;
  rows: number;
  cols: number;
  pixelSizeKm?: number;
  timestepHours?: number;
  t0?: number;
}

export interface EvaluateOptions {
  quantileTau?: number;
  heavyThreshold?: number;
  rainThreshold?: number;
  connectivity?: 4 | 8;
  mainBy?: "mass" | "pixel_count";
  amo?: Partial<AmoTable>;
  workers?: number;
}

function toSequence(view: ArrayView, label: string): Sequence {
  const { frames, rows, cols } = view;
  const expected = frames * rows * cols;
  if (view.data.length !== expected) {
    throw new ValidationError(
      `${label} has ${view.data.length} values, expected ${frames}x${rows}x${cols} = ${expected}`
    );
  }
  // float64 inputs are rounded to float32, the container precision
  const data =
    view.data instanceof Float32Array ? view.data : Float32Array.from(view.data);
  return {
    geometry: {
      rows,
      cols,
      pixelSizeKm: view.pixelSizeKm ?? 4.0,
      timestepHours: view.timestepHours ?? 1.0,
    },
    frames,
    t0: view.t0 ?? 0,
    data,
  };
}

function optionFlags(options: EvaluateOptions): string[] {
  const flags: string[] = [];
  if (options.quantileTau !== undefined) flags.push("--quantile-tau", String(options.quantileTau));
  if (options.heavyThreshold !== undefined) {
    flags.push("--heavy-threshold", String(options.heavyThreshold));
  }
  if (options.rainThreshold !== undefined) {
    flags.push("--rain-threshold", String(options.rainThreshold));
  }
  if (options.connectivity !== undefined) flags.push("--connectivity", String(options.connectivity));
  if (options.mainBy !== undefined) flags.push("--main-by", options.mainBy);
  if (options.workers !== undefined) flags.push("--workers", String(options.workers));
  if (options.amo) {
    for (const [key, value] of Object.entries(options.amo)) {
      flags.push(`--amo-${key}`, String(value));
    }
  }
  return flags;
}

/** Score two already-written containers (prediction: single sequence;
 * observation: single sequence or a pair whose HR side is used). */
export async function evaluateFiles(
  predPath: string,
  obsPath: string,
  options: EvaluateOptions = {}
): Promise<MetricReport> {
  const { stdout } = await runCli([
    "evaluate",
    "--pred",
    predPath,
    "--obs",
    obsPath,
    ...optionFlags(options),
  ]);
  return parseReport(JSON.parse(stdout));
}

/**
 * Score a prediction stack against an observation stack.
 *
 * Both stacks must share the same shape and at least 2 frames. The
 * arrays are staged as rnb containers in a temp directory and scored by
 * one toolkit invocation.
 */
export async function evaluate(
  pred: ArrayView,
  obs: ArrayView,
  options: EvaluateOptions = {}
): Promise<MetricReport> {
  if (pred.frames !== obs.frames || pred.rows !== obs.rows || pred.cols !== obs.cols) {
    throw new ValidationError(
      `shape mismatch: prediction ${pred.frames}x${pred.rows}x${pred.cols} ` +
      `vs observation ${obs.frames}x${obs.rows}x${obs.cols}`
    );
  }
  if (pred.frames < 2) {
    throw new ValidationError("evaluation needs at least 2 frames");
  }
  const dir = await fs.mkdtemp(path.join(os.tmpdir(), "precipeval-"));
  try {
    const predPath = path.join(dir, "pred.rnb");
    const obsPath = path.join(dir, "obs.rnb");
    await writeSequences(predPath, [toSequence(pred, "prediction")]);
    await writeSequences(obsPath, [toSequence(obs, "observation")]);
    return await evaluateFiles(predPath, obsPath, options);
  } finally {
    await fs.rm(dir, { recursive: true, force: true });
  }
}

function metricField(field: keyof MetricReport) {
  return async (
    pred: ArrayView,
    obs: ArrayView,
    options: EvaluateOptions = {}
  ): Promise<number> => {
    const report = await evaluate(pred, obs, options);
    return report[field];
  };
}

/** Top-quantile rain-rate difference, pooled over space and time (mm/hour). */
export const mppe = metricField("mppe");
/** Mean per-frame heavy-rain coverage difference (km^2). */
export const hrre = metricField("hrre");
/** Mean squared difference of per-pixel temporal mean rates (mm^2/hour^2). */
export const cpmse = metricField("cpmse");
/** Mean wrapped main-system orientation difference (radian). */
export const ammd = metricField("ammd");
/** Mean distance between main-system centroids (km). */
export const cmd = metricField("cmd");
/** RMSE of main-system speeds over consecutive frames (km/hour). */
export const hrts = metricField("hrts");
/** Pooled root mean squared rain-rate difference (mm/hour). */
export const rmse = metricField("rmse");
