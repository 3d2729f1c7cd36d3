/** Thin runner around the toolkit CLI (the scoring engine itself). */

import { execFile } from "node:child_process";
import { promisify } from "node:util";

import { CliError, DataError, ValidationError } from "./errors.js";

const execFileAsync = promisify(execFile);

/** Override with PRECIPEVAL_BIN when the CLI is not on PATH. */
export function cliBinary(): string {
  return process.env.PRECIPEVAL_BIN ?? "precipeval";
}

export interface CliResult {
  stdout: string;
  stderr: string;
}

/**
 * Run one CLI subcommand; validation failures (exit 2) and data errors
 * (exit 3) surface as typed errors carrying the CLI's own message.
 */
export async function runCli(args: string[]): Promise<CliResult> {
  try {
    const { stdout, stderr } = await execFileAsync(cliBinary(), args, {
      maxBuffer: 64 * 1024 * 1024,
    });
    return { stdout, stderr };
  } catch (err) {
    // execFile rejections carry the numeric exit status in `code`
    // (or a string errno like ENOENT when spawning failed)
    const e = err as Error & {
      code?: number | string;
      stdout?: string;
      stderr?: string;
    };
    if (e.code === "ENOENT") {
      throw new CliError(
        `cannot find the '${cliBinary()}' executable; install the toolkit ` +
        "or set PRECIPEVAL_BIN",
        null,
        ""
      );
    }
    const stderr = (e.stderr ?? "").trim();
    const message = stderr.split("\n").filter(Boolean).pop() ?? "CLI failed";
    if (e.code === 2) {
      throw new ValidationError(message);
    }
    if (e.code === 3) {
      throw new DataError(message);
    }
    throw new CliError(message, typeof e.code === "number" ? e.code : null, stderr);
  }
}
