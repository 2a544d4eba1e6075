// Bindings for calling the avbench evaluation engine from a Node pipeline.
//
// The boundary is text in, text out: inputs are the engine's JSON file
// formats passed as strings, outputs are the exact bytes the engine's CLI
// would have written. Every entry point returns a BoundResult and never
// throws, whatever the input; internal parallelism follows the same
// AVBENCH_THREADS variable the CLI honors.

import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface BoundResult {
  status: "ok" | "error";
  /** Result-file text on success (metrics JSON, or for synth a JSON object
   *  mapping each generated filename to its file text). Empty on error. */
  payload: string;
  /** Diagnostic text on error (the engine's stderr). Empty on success. */
  message: string;
}

export const VERSION = "0.1.0";

const SYNTH_FILES = ["ground_truth.json", "detections.json", "tracks.json"];

function python(): string {
  return process.env.AVBENCH_PYTHON ?? "python3";
}

function invoke(
  build: (dir: string) => { argv: string[]; collect: () => string },
): BoundResult {
  let dir: string | undefined;
  try {
    dir = mkdtempSync(join(tmpdir(), "avbench-"));
    const { argv, collect } = build(dir);
    const run = spawnSync(python(), ["-m", "avbench", ...argv], {
      encoding: "utf8",
      maxBuffer: 1 << 28,
    });
    if (run.error) {
      return { status: "error", payload: "", message: String(run.error) };
    }
    if (run.status !== 0) {
      return { status: "error", payload: "", message: run.stderr ?? "" };
    }
    return { status: "ok", payload: collect(), message: "" };
  } catch (err) {
    return { status: "error", payload: "", message: String(err) };
  } finally {
    if (dir !== undefined) {
      rmSync(dir, { recursive: true, force: true });
    }
  }
}

function evaluate(
  command: string,
  gtText: string,
  submissionText: string,
  configText?: string,
): BoundResult {
  return invoke((dir) => {
    const gt = join(dir, "ground_truth.json");
    const submission = join(dir, "submission.json");
    const out = join(dir, "metrics.json");
    writeFileSync(gt, gtText);
    writeFileSync(submission, submissionText);
    const argv = [command, gt, submission, "--output", out];
    if (configText !== undefined) {
      const config = join(dir, "config.json");
      writeFileSync(config, configText);
      argv.push("--config", config);
    }
    return { argv, collect: () => readFileSync(out, "utf8") };
  });
}

/** Score a detection submission; payload is the metrics JSON text. */
export function evaluateDetectionText(
  gtText: string,
  submissionText: string,
  configText?: string,
): BoundResult {
  return evaluate("eval-detection", gtText, submissionText, configText);
}

/** Score a tracking submission; payload is the metrics JSON text. */
export function evaluateTrackingText(
  gtText: string,
  submissionText: string,
  configText?: string,
): BoundResult {
  return evaluate("eval-tracking", gtText, submissionText, configText);
}

/** Generate a synthetic fixture; payload maps each of the three generated
 *  filenames to its exact file text. */
export function generateSynthText(configText: string): BoundResult {
  return invoke((dir) => {
    const config = join(dir, "config.json");
    const out = join(dir, "out");
    writeFileSync(config, configText);
    return {
      argv: ["synth", config, out],
      collect: () =>
        JSON.stringify(
          Object.fromEntries(
            SYNTH_FILES.map((name) => [name, readFileSync(join(out, name), "utf8")]),
          ),
        ),
    };
  });
}

/** Engine version as reported by the installed package; falls back to the
 *  bindings' own pinned version if the engine cannot be queried. */
export function engineVersion(): string {
  const run = spawnSync(
    python(),
    ["-c", "import avbench; print(avbench.__version__)"],
    { encoding: "utf8" },
  );
  if (run.error || run.status !== 0) {
    return VERSION;
  }
  return run.stdout.trim();
}

export const evaluate_detection_text = evaluateDetectionText;
export const evaluate_tracking_text = evaluateTrackingText;
export const generate_synth_text = generateSynthText;
