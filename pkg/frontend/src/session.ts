import {
  ApiError,
  type Click,
  type JobStatus,
  type Polarity,
  type RemovalParams,
  type ServiceClient,
} from "./api";

export const MARKER_COLORS: Record<Polarity, string> = {
  "+": "green",
  "-": "red",
};

export interface Marker extends Click {
  color: string;
}

export function markerFor(click: Click): Marker {
  return { ...click, color: MARKER_COLORS[click.polarity] };
}

export interface ParameterState {
  r: number;
  steps?: number;
  preset: string;
  seed: number;
}

/**
 * Client-side mirror of one server session. Markers always reflect the
 * server's deduplicated click set after each sync; clicks placed while a
 * job is running are buffered locally and flushed when it finishes.
 */
export class UiSession {
  markers: Marker[] = [];
  status: JobStatus = "IDLE";
  params: ParameterState = { r: 1.0, preset: "toy", seed: 0 };
  private buffered: Click[] = [];

  constructor(
    private readonly client: Pick<ServiceClient, "addClicks" | "startRemoval">,
    readonly sessionId: string,
  ) {}

  get busy(): boolean {
    return this.status === "RUNNING";
  }

  get bufferedCount(): number {
    return this.buffered.length;
  }

  /**
   * Place a click. While a job is running (known locally or reported by a
   * server 409) the click is queued rather than dropped.
   */
  async placeClick(u: number, v: number, polarity: Polarity): Promise<void> {
    const click: Click = { u, v, polarity };
    if (this.busy) {
      this.buffered.push(click);
      return;
    }
    try {
      const echo = await this.client.addClicks(this.sessionId, [click]);
      this.markers = echo.map(markerFor);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.status = "RUNNING";
        this.buffered.push(click);
        return;
      }
      throw err;
    }
  }

  async startRemoval(overrides: RemovalParams = {}): Promise<void> {
    await this.client.startRemoval(this.sessionId, {
      r: this.params.r,
      steps: this.params.steps,
      preset: this.params.preset,
      seed: this.params.seed,
      ...overrides,
    });
    this.status = "RUNNING";
  }

  /** Record a terminal job status and flush any clicks queued while busy. */
  async finishJob(status: JobStatus): Promise<void> {
    this.status = status;
    if (this.buffered.length === 0) return;
    const pending = this.buffered;
    this.buffered = [];
    const echo = await this.client.addClicks(this.sessionId, pending);
    this.markers = echo.map(markerFor);
  }
}
