import type { ResultResponse, ServiceClient } from "./api";

export const DEFAULT_POLL_INTERVAL_MS = 500;
const MAX_POLL_DURATION_MS = 10 * 60 * 1000;

export interface PollOptions {
  intervalMs?: number;
  maxDurationMs?: number;
  onProgress?: (result: ResultResponse) => void;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

/**
 * Poll the result endpoint until the job reaches a terminal state. Only one
 * request is in flight at a time: the next poll is scheduled after the
 * previous response arrives.
 */
export async function pollUntilDone(
  client: Pick<ServiceClient, "getResult">,
  sessionId: string,
  options: PollOptions = {},
): Promise<ResultResponse> {
  const intervalMs = options.intervalMs ?? DEFAULT_POLL_INTERVAL_MS;
  const maxDurationMs = options.maxDurationMs ?? MAX_POLL_DURATION_MS;
  const start = Date.now();

  for (;;) {
    const result = await client.getResult(sessionId);
    if (result.status === "DONE" || result.status === "FAILED") {
      return result;
    }
    options.onProgress?.(result);
    if (Date.now() - start > maxDurationMs) {
      throw new Error(`removal job still running after ${maxDurationMs}ms`);
    }
    await sleep(intervalMs);
  }
}
