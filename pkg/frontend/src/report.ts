/**
 * Metric report schema plus the published percent-bias aggregation
 * arithmetic (the only numbers this package computes itself; every
 * metric value originates from the toolkit).
 */

import { ValidationError } from "./errors.js";

/** Annual-mean-observation constants used to normalize each sub-metric. */
export interface AmoTable {
  mppe: number;
  hrre: number;
  ammd: number;
  cpmse: number;
  hrts: number;
  cmd: number;
}

export const DEFAULT_AMO: AmoTable = {
  mppe: 64,
  hrre: 533,
  ammd: 0.64,
  cpmse: 332,
  hrts: 15,
  cmd: 26,
};

export interface MetricReport {
  mppe: number;
  hrre: number;
  ammd: number;
  cpmse: number;
  hrts: number;
  cmd: number;
  rmse: number;
  rmse_x100: number;
  pbias_mppe: number;
  pbias_hrre: number;
  pbias_ammd: number;
  pbias_cpmse: number;
  pbias_hrts: number;
  pbias_cmd: number;
  pem: number;
  pdem: number;
  frames_used_mppe: number;
  frames_used_hrre: number;
  frames_used_ammd: number;
  frames_used_cpmse: number;
  frames_used_hrts: number;
  frames_used_cmd: number;
  frames_used_rmse: number;
}

const REPORT_FIELDS: (keyof MetricReport)[] = [
  "mppe", "hrre", "ammd", "cpmse", "hrts", "cmd", "rmse", "rmse_x100",
  "pbias_mppe", "pbias_hrre", "pbias_ammd", "pbias_cpmse", "pbias_hrts", "pbias_cmd",
  "pem", "pdem",
  "frames_used_mppe", "frames_used_hrre", "frames_used_ammd", "frames_used_cpmse",
  "frames_used_hrts", "frames_used_cmd", "frames_used_rmse",
];

export function parseReport(doc: unknown): MetricReport {
  if (typeof doc !== "object" || doc === null) {
    throw new ValidationError("report document is not an object");
  }
  const record = doc as Record<string, unknown>;
  const out: Partial<Record<keyof MetricReport, number>> = {};
  for (const field of REPORT_FIELDS) {
    const value = record[field];
    if (typeof value !== "number") {
      throw new ValidationError(`report is missing numeric field ${field}`);
    }
    out[field] = value;
  }
  return out as MetricReport;
}

/** Percent bias: |metric| / AMO. */
export function pbias(metricValue: number, amo: number): number {
  if (!(amo > 0)) {
    throw new ValidationError(`AMO must be > 0, got ${amo}`);
  }
  return Math.abs(metricValue) / amo;
}

function checkedPbias(
  sub: Partial<Record<string, number>>,
  names: (keyof AmoTable)[],
  amo: AmoTable
): number[] {
  return names.map((name) => {
    const value = sub[name];
    if (value === undefined || !Number.isFinite(value)) {
      throw new ValidationError(`sub-metric '${name}' missing or non-finite`);
    }
    return pbias(value, amo[name]);
  });
}

/** Reconstruction-error aggregate: 0.25 * sum of PBIAS over
 * {mppe, hrre, ammd, cpmse}. */
export function pem(
  subMetrics: Partial<Record<string, number>>,
  amo: AmoTable = DEFAULT_AMO
): number {
  const parts = checkedPbias(subMetrics, ["mppe", "hrre", "ammd", "cpmse"], amo);
  return 0.25 * parts.reduce((a, b) => a + b, 0);
}

/** Dynamics-error aggregate: 0.5 * sum of PBIAS over {hrts, cmd}. */
export function pdem(
  subMetrics: Partial<Record<string, number>>,
  amo: AmoTable = DEFAULT_AMO
): number {
  const parts = checkedPbias(subMetrics, ["hrts", "cmd"], amo);
  return 0.5 * parts.reduce((a, b) => a + b, 0);
}
