// End-to-end test against a real service process running the toy preset.
// Requires the Python package to be installed (pip install -e ..).

import { spawn, type ChildProcess } from "node:child_process";
import { readFile } from "node:fs/promises";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, ServiceClient } from "../src/api";
import { pollUntilDone } from "../src/polling";
import { UiSession } from "../src/session";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;
const STAGES = new Set(["UNTOUCHED", "OBJECT_AND_BG", "OBJECT_ONLY", "FREE"]);
const fixtures = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

let server: ChildProcess;
const client = new ServiceClient(BASE);

async function waitForHealth(timeoutMs = 30_000): Promise<void> {
  const start = Date.now();
  for (;;) {
    try {
      await client.health();
      return;
    } catch {
      if (Date.now() - start > timeoutMs) {
        throw new Error("service did not become healthy");
      }
      await new Promise((r) => setTimeout(r, 200));
    }
  }
}

beforeAll(async () => {
  server = spawn(
    "python3",
    ["-m", "uvicorn", "clickremoval.service:app", "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForHealth();
}, 40_000);

afterAll(() => {
  server?.kill();
});

describe("service round trip", () => {
  it("runs the full create, click, remove, poll flow", async () => {
    const png = await readFile(join(fixtures, "toy.png"));
    const sessionId = await client.createSession(new Uint8Array(png));
    expect(sessionId).toBeTruthy();

    const session = new UiSession(client, sessionId);
    await session.placeClick(0.22, 0.22, "+");
    expect(session.markers).toHaveLength(1);
    expect(session.markers[0]!.color).toBe("green");

    await session.startRemoval({ r: 1.0, steps: 20 });
    const stages: string[] = [];
    const result = await pollUntilDone(client, sessionId, {
      intervalMs: 20,
      onProgress: (res) => {
        if (res.progress?.stage) stages.push(res.progress.stage);
      },
    });
    await session.finishJob(result.status);

    expect(result.status).toBe("DONE");
    expect(result.image).toBeTruthy();
    expect(result.m_ob).toBeTruthy();
    for (const stage of stages) expect(STAGES.has(stage)).toBe(true);
    for (const entry of result.step_log ?? []) {
      expect(STAGES.has(entry.stage)).toBe(true);
    }

    await client.deleteSession(sessionId);
    await expect(client.getResult(sessionId)).rejects.toMatchObject({ status: 404 });
  }, 60_000);

  it("maps service errors to ApiError", async () => {
    await expect(client.getResult("nope")).rejects.toBeInstanceOf(ApiError);
    const png = await readFile(join(fixtures, "toy.png"));
    const sid = await client.createSession(new Uint8Array(png));
    // no positive clicks yet
    await expect(client.startRemoval(sid)).rejects.toMatchObject({ status: 412 });
    await client.deleteSession(sid);
  }, 30_000);
});
