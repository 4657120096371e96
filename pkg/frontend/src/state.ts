// Session, polling, and the client-side pinned-services list. Polling is the
// only liveness mechanism: the API is eventually consistent and the dashboard
// simply re-reads it every 2 seconds.

export const POLL_INTERVAL_MS = 2000;

type Timer = ReturnType<typeof setInterval>;

export class Poller {
  private timer: Timer | null = null;
  private inFlight = false;

  constructor(
    private readonly tick: () => Promise<void>,
    private readonly intervalMs: number = POLL_INTERVAL_MS,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    void this.run();
    this.timer = setInterval(() => void this.run(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  get running(): boolean {
    return this.timer !== null;
  }

  // concurrent polls are idempotent reads, but skipping overlaps keeps a slow
  // server from stacking requests
  private async run(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    try {
      await this.tick();
    } catch {
      // rendering decides what to do with stale data; polling never throws
    } finally {
      this.inFlight = false;
    }
  }
}

export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
}

const PINNED_KEY = 'conductor.pinned';

export class PinnedServices {
  constructor(private readonly store: KeyValueStore) {}

  list(): string[] {
    try {
      const raw = this.store.getItem(PINNED_KEY);
      const parsed: unknown = raw ? JSON.parse(raw) : [];
      return Array.isArray(parsed) ? parsed.filter((x) => typeof x === 'string') : [];
    } catch {
      return [];
    }
  }

  toggle(name: string): string[] {
    const current = this.list();
    const next = current.includes(name)
      ? current.filter((n) => n !== name)
      : [...current, name];
    this.store.setItem(PINNED_KEY, JSON.stringify(next));
    return next;
  }
}
