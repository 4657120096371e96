// Recording and replaying dashboard sessions as HTTP transcripts.
//
// The dashboard is a pure API client, so any session reduces to the ordered
// HTTP requests it issued. A recorded transcript replays against a fresh
// engine with the same status-code sequence; identifiers minted by the server
// (event ids, entry URLs, tokens) are captured as symbolic references and
// re-bound during replay.

import type { FetchLike } from './api.js';

export interface TranscriptStep {
  method: string;
  // path with ${ref} placeholders for server-minted identifiers
  path: string;
  body?: unknown;
  credential?: string;
  status: number;
  // bind a response field to a symbolic name usable in later paths
  bind?: { ref: string; from: 'event_id' | 'token' | 'first_entry_url' };
  // repeat this request until the response body's `state` equals the value
  // (bounded); models the dashboard's status polling as one logical step
  untilState?: string;
}

export interface Transcript {
  steps: TranscriptStep[];
}

export class TranscriptRecorder {
  readonly steps: TranscriptStep[] = [];

  record(step: TranscriptStep): void {
    this.steps.push(step);
  }

  transcript(): Transcript {
    return { steps: [...this.steps] };
  }
}

function extract(body: unknown, from: NonNullable<TranscriptStep['bind']>['from']): string {
  const data = body as Record<string, unknown>;
  if (from === 'event_id') return String(data['event_id']);
  if (from === 'token') return String(data['token']);
  const entries = data['entries'] as Array<{ url?: string | null }>;
  const url = entries.find((e) => e.url)?.url;
  if (!url) throw new Error('no entry URL in response');
  return url;
}

function substitute(template: string, refs: Map<string, string>): string {
  return template.replace(/\$\{([a-z_]+)\}/g, (_, name: string) => {
    const value = refs.get(name);
    if (value === undefined) throw new Error(`unbound transcript ref ${name}`);
    return value;
  });
}

export interface ReplayResult {
  statuses: number[];
}

export interface ReplayTarget {
  apiUrl: string;
  // issue a request against an absolute URL (entry URLs resolve via the proxy)
  fetchImpl: FetchLike;
  // rewrites a recorded entry URL host to the replay proxy listener
  resolveEntryUrl?: (url: string) => string;
  pollLimit?: number;
  pollDelayMs?: number;
}

export async function replayTranscript(
  transcript: Transcript,
  target: ReplayTarget,
): Promise<ReplayResult> {
  const refs = new Map<string, string>();
  const statuses: number[] = [];
  const pollLimit = target.pollLimit ?? 100;
  const pollDelayMs = target.pollDelayMs ?? 200;

  for (const step of transcript.steps) {
    const path = substitute(step.path, refs);
    const url = path.startsWith('http')
      ? (target.resolveEntryUrl?.(path) ?? path)
      : target.apiUrl.replace(/\/$/, '') + path;
    const headers: Record<string, string> = {};
    if (step.credential) headers['Authorization'] = `Bearer ${step.credential}`;
    if (step.body !== undefined) headers['Content-Type'] = 'application/json';

    const issue = () =>
      target.fetchImpl(url, {
        method: step.method,
        headers,
        body: step.body === undefined ? undefined : JSON.stringify(step.body),
      });

    let resp = await issue();
    let data: unknown = null;
    const parse = async (r: Response) => {
      const text = await r.text();
      return text ? (JSON.parse(text) as unknown) : null;
    };
    data = await parse(resp);

    if (step.untilState) {
      let polls = 0;
      while (
        (data as Record<string, unknown> | null)?.['state'] !== step.untilState &&
        polls < pollLimit
      ) {
        polls += 1;
        await new Promise((r) => setTimeout(r, pollDelayMs));
        resp = await issue();
        data = await parse(resp);
      }
    }

    statuses.push(resp.status);
    if (step.bind && resp.ok) {
      refs.set(step.bind.ref, extract(data, step.bind.from));
    }
  }
  return { statuses };
}
