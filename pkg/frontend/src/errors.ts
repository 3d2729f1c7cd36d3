/** Error classes mirroring the toolkit's validation/data split. */

/** Caller handed us something malformed (CLI exit code 2). */
export class ValidationError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ValidationError";
  }
}

/** A file or dataset is wrong (CLI exit code 3). */
export class DataError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "DataError";
  }
}

/** The toolkit CLI failed in an unexpected way. */
export class CliError extends Error {
  readonly exitCode: number | null;
  readonly stderr: string;

  constructor(message: string, exitCode: number | null, stderr: string) {
    super(message);
    this.name = "CliError";
    this.exitCode = exitCode;
    this.stderr = stderr;
  }
}
