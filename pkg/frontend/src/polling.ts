/** Job progress polling at a fixed interval until a terminal status. */

import type { ExplorerApi, JobState } from "./api.js";

export const POLL_INTERVAL_MS = 500;

const TERMINAL: JobState["status"][] = ["done", "cancelled", "error"];

export interface PollOptions {
  intervalMs?: number;
  signal?: AbortSignal;
  sleep?: (ms: number) => Promise<void>;
}

function defaultSleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function pollUntilDone(
  api: Pick<ExplorerApi, "pollJob">,
  jobId: string,
  onUpdate: (job: JobState) => void,
  options: PollOptions = {},
): Promise<JobState> {
  const interval = options.intervalMs ?? POLL_INTERVAL_MS;
  const sleep = options.sleep ?? defaultSleep;
  for (;;) {
    if (options.signal?.aborted) throw new Error("polling aborted");
    const job = await api.pollJob(jobId);
    onUpdate(job);
    if (TERMINAL.includes(job.status)) return job;
    await sleep(interval);
  }
}
