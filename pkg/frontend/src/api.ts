// Thin fetch client for the clickremoval session service. The UI never
// touches removal math directly; every state change round-trips through
// these endpoints.

export type Polarity = "+" | "-";

export interface Click {
  u: number;
  v: number;
  polarity: Polarity;
}

export type JobStatus = "IDLE" | "RUNNING" | "DONE" | "FAILED";

export interface Progress {
  stage: string | null;
  step: number;
  total: number;
}

export interface ResultResponse {
  status: JobStatus;
  progress?: Progress;
  detail?: string;
  /** base64 PNG of the edited image, present when DONE */
  image?: string;
  /** base64 PNG of the object mask, present when DONE */
  m_ob?: string;
  step_log?: Array<{ stage: string; step: number }>;
  duration?: number;
  flags?: string[];
}

export interface RemovalParams {
  r?: number;
  steps?: number;
  preset?: string;
  seed?: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(resp.status, detail);
}

export class ServiceClient {
  constructor(private readonly baseUrl: string) {}

  async createSession(png: Blob | Uint8Array): Promise<string> {
    const body =
      png instanceof Uint8Array
        ? new Blob([png.slice().buffer as ArrayBuffer])
        : png;
    const resp = await fetch(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "content-type": "image/png" },
      body,
    });
    await raiseForStatus(resp);
    const data = await resp.json();
    return data.session_id as string;
  }

  /** Returns the server's echo of the full deduplicated click set. */
  async addClicks(sessionId: string, clicks: Click[]): Promise<Click[]> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/clicks`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ clicks }),
    });
    await raiseForStatus(resp);
    const data = await resp.json();
    return data.clicks as Click[];
  }

  async startRemoval(sessionId: string, params: RemovalParams = {}): Promise<void> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/remove`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(params),
    });
    await raiseForStatus(resp);
  }

  async getResult(sessionId: string): Promise<ResultResponse> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}/result`);
    await raiseForStatus(resp);
    return (await resp.json()) as ResultResponse;
  }

  async deleteSession(sessionId: string): Promise<void> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}`, {
      method: "DELETE",
    });
    await raiseForStatus(resp);
  }

  async health(): Promise<{ status: string; presets: string[] }> {
    const resp = await fetch(`${this.baseUrl}/healthz`);
    await raiseForStatus(resp);
    return await resp.json();
  }
}
