/**
 * Global setup for the end-to-end suite: seeds a small retrieval backend
 * through the Python CLI (dataset, autoencoders, aligner) and serves it,
 * tearing the process down afterwards. State is handed to tests through a
 * JSON file next to this module.
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

const STATE_FILE = join(dirname(fileURLToPath(import.meta.url)), ".e2e-state.json");
const PORT = 8147;

let server: ChildProcess | null = null;
let workDir: string | null = null;

function run(args: string[], cwd: string): void {
  const proc = spawnSync("python3", ["-m", "tslatent.cli", ...args], {
    cwd,
    encoding: "utf-8",
  });
  if (proc.status !== 0) {
    throw new Error(
      `tslatent ${args[0]} failed (${proc.status}):\n${proc.stdout}\n${proc.stderr}`,
    );
  }
}

async function waitForHealth(url: string, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${url}/api/health`);
      if (response.ok) {
        const body = (await response.json()) as { status: string };
        if (body.status === "ok") return;
      }
    } catch {
      /* not up yet */
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error(`service at ${url} did not become healthy`);
}

export default async function setup(): Promise<() => Promise<void>> {
  if (!process.env.RUN_E2E) {
    writeFileSync(STATE_FILE, JSON.stringify({ enabled: false }));
    return async () => {};
  }

  workDir = mkdtempSync(join(tmpdir(), "tslatent-e2e-"));
  const dataset = join(workDir, "data.json");
  run(["gen", "--n", "96", "--seed", "11", "--out", dataset], workDir);
  run(
    ["train-ae", "--dataset", dataset, "--target", "trend", "--epochs", "80",
     "--batch-size", "32", "--out", join(workDir, "trend")],
    workDir,
  );
  run(
    ["train-ae", "--dataset", dataset, "--target", "vol", "--epochs", "80",
     "--batch-size", "32", "--out", join(workDir, "vol")],
    workDir,
  );
  run(
    ["train-align", "--dataset", dataset, "--ae-trend", join(workDir, "trend"),
     "--ae-vol", join(workDir, "vol"), "--epochs", "80", "--batch-size", "32",
     "--out", join(workDir, "aligner")],
    workDir,
  );

  const config = {
    host: "127.0.0.1",
    port: PORT,
    dataset_path: dataset,
    trend_ae_path: join(workDir, "trend"),
    vol_ae_path: join(workDir, "vol"),
    aligner_path: join(workDir, "aligner"),
    max_k: 20,
  };
  const configPath = join(workDir, "service.json");
  writeFileSync(configPath, JSON.stringify(config));

  server = spawn("python3", ["-m", "tslatent.cli", "serve", "--config", configPath], {
    cwd: workDir,
    stdio: "ignore",
  });

  const baseUrl = `http://127.0.0.1:${PORT}`;
  await waitForHealth(baseUrl);
  writeFileSync(
    STATE_FILE,
    JSON.stringify({ enabled: true, baseUrl, manifestPath: dataset }),
  );

  return async () => {
    server?.kill("SIGTERM");
    if (workDir) rmSync(workDir, { recursive: true, force: true });
    writeFileSync(STATE_FILE, JSON.stringify({ enabled: false }));
  };
}
