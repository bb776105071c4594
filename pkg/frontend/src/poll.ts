/** Job polling with exponential backoff. */

import type { JobInfo } from "./types.js";

export interface PollOptions {
  initialDelayMs?: number;
  factor?: number;
  maxDelayMs?: number;
  timeoutMs?: number;
  /** injectable for tests. */
  sleep?: (ms: number) => Promise<void>;
  now?: () => number;
  /** called after each poll, e.g. to update a status line. */
  onPoll?: (job: JobInfo, attempt: number) => void;
}

export class PollTimeoutError extends Error {
  constructor(public readonly jobId: string, timeoutMs: number) {
    super(`job ${jobId} did not finish within ${timeoutMs}ms`);
    this.name = "PollTimeoutError";
  }
}

const defaultSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

/** Delay before poll number `attempt` (0-based): initial * factor^attempt, capped. */
export function backoffDelayMs(
  attempt: number,
  options: Pick<PollOptions, "initialDelayMs" | "factor" | "maxDelayMs"> = {},
): number {
  const initial = options.initialDelayMs ?? 250;
  const factor = options.factor ?? 1.6;
  const max = options.maxDelayMs ?? 4000;
  return Math.min(initial * Math.pow(factor, attempt), max);
}

/**
 * Poll `getJob` until the job reaches a terminal state ("done" or "failed"),
 * waiting a growing delay between polls. The terminal JobInfo is returned
 * either way — rendering a failed job's error is the caller's concern.
 */
export async function pollJob(
  getJob: () => Promise<JobInfo>,
  options: PollOptions = {},
): Promise<JobInfo> {
  const sleep = options.sleep ?? defaultSleep;
  const now = options.now ?? Date.now;
  const timeoutMs = options.timeoutMs ?? 120_000;
  const started = now();
  for (let attempt = 0; ; attempt++) {
    const job = await getJob();
    options.onPoll?.(job, attempt);
    if (job.state === "done" || job.state === "failed") {
      return job;
    }
    if (now() - started >= timeoutMs) {
      throw new PollTimeoutError(job.job_id, timeoutMs);
    }
    await sleep(backoffDelayMs(attempt, options));
  }
}
