// Typed client for the conductor REST API. The dashboard performs every
// action through this module; it holds no state beyond the credential.

export interface ToolDescriptor {
  name: string;
  version: string;
  description: string;
  input_schema: InputSchema;
  output_schema: InputSchema;
  invoke_hint: string;
}

export interface InputSchema {
  type: 'object';
  properties: Record<string, PropertySchema>;
  required: string[];
}

export interface PropertySchema {
  type: string;
  format?: string;
  description?: string;
  default?: unknown;
}

export interface ServiceRow {
  name: string;
  version: string;
  status: string;
  web_entry: boolean;
  live_entry_count: number;
}

export interface EntryView {
  entry_id: string;
  service: [string, string];
  state: string;
  restart_count: number;
  url: string | null;
  endpoint: [string, number] | null;
}

export interface EventView {
  event_id: string;
  state: string;
  created_at: number;
  owner: { subject: string; provider: string; display_name: string };
  entries: EntryView[];
  token?: string;
}

export interface StartResult {
  event_id: string;
  entry_id: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ConductorClient {
  constructor(
    readonly baseUrl: string,
    private credential: string | null = null,
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  setCredential(credential: string | null): void {
    this.credential = credential;
  }

  get loggedIn(): boolean {
    return this.credential !== null;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (this.credential) headers['Authorization'] = `Bearer ${this.credential}`;
    if (body !== undefined) headers['Content-Type'] = 'application/json';
    const resp = await this.fetchImpl(this.baseUrl.replace(/\/$/, '') + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    const data = text ? JSON.parse(text) : null;
    if (!resp.ok) {
      const code = data?.code ?? String(resp.status);
      const message = data?.message ?? `HTTP ${resp.status}`;
      throw new ApiError(resp.status, code, message);
    }
    return data as T;
  }

  // Login validates the credential by listing the caller's events; the engine
  // rejects unknown credentials with 401, so success means authenticated.
  async login(credential: string): Promise<void> {
    const previous = this.credential;
    this.credential = credential;
    try {
      await this.request<EventView[]>('GET', '/events');
    } catch (err) {
      this.credential = previous;
      throw err;
    }
  }

  manifest(): Promise<ToolDescriptor[]> {
    return this.request('GET', '/manifest');
  }

  services(): Promise<ServiceRow[]> {
    return this.request('GET', '/services');
  }

  events(): Promise<EventView[]> {
    return this.request('GET', '/events');
  }

  event(eventId: string): Promise<EventView> {
    return this.request('GET', `/events/${eventId}`);
  }

  start(
    service: string,
    inputs: Record<string, unknown>,
    options: { version?: string; eventId?: string } = {},
  ): Promise<StartResult> {
    return this.request('POST', `/start/${service}`, {
      inputs,
      ...(options.version ? { version: options.version } : {}),
      ...(options.eventId ? { event_id: options.eventId } : {}),
    });
  }

  share(eventId: string, subject: string, provider = 'static'): Promise<unknown> {
    return this.request('POST', `/events/${eventId}/share`, { subject, provider });
  }

  terminate(eventId: string): Promise<EventView> {
    return this.request('DELETE', `/events/${eventId}`);
  }
}

// Entry URLs carry the session token as a query parameter so a plain browser
// navigation authenticates against the proxy.
export function entryOpenUrl(entry: EntryView, sessionToken: string): string | null {
  if (!entry.url) return null;
  const joiner = entry.url.includes('?') ? '&' : '?';
  return `${entry.url}${joiner}token=${encodeURIComponent(sessionToken)}`;
}
