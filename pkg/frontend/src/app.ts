// Browser wiring: binds the pure renderers and the API client to the DOM.
// All state shown on screen comes from the last poll; nothing is fabricated.

import { ApiError, ConductorClient, type EventView, type ToolDescriptor } from './api.js';
import { buildForm, collectValues, validateForm, type FormField } from './forms.js';
import {
  renderCatalog,
  renderEventList,
  renderLaunchForm,
  renderLogin,
  renderShareDialog,
} from './render.js';
import { PinnedServices, Poller } from './state.js';

interface AppElements {
  login: HTMLElement;
  catalog: HTMLElement;
  events: HTMLElement;
  dialog: HTMLElement;
}

export class DashboardApp {
  private tools: ToolDescriptor[] = [];
  private eventViews: EventView[] = [];
  private readonly poller: Poller;
  private readonly pinned: PinnedServices;

  constructor(
    private readonly client: ConductorClient,
    private readonly el: AppElements,
    storage: Storage = localStorage,
  ) {
    this.pinned = new PinnedServices(storage);
    this.poller = new Poller(() => this.refresh());
  }

  async boot(): Promise<void> {
    this.el.login.innerHTML = renderLogin();
    this.bindLogin();
  }

  private bindLogin(): void {
    const form = this.el.login.querySelector<HTMLFormElement>('#login-form');
    form?.addEventListener('submit', (ev) => {
      ev.preventDefault();
      const credential = new FormData(form).get('credential');
      void this.login(String(credential ?? ''));
    });
  }

  private async login(credential: string): Promise<void> {
    try {
      await this.client.login(credential);
    } catch (err) {
      this.el.login.innerHTML = renderLogin(messageOf(err));
      this.bindLogin();
      return;
    }
    this.el.login.innerHTML = '';
    this.poller.start();
  }

  private async refresh(): Promise<void> {
    const [services, tools, events] = await Promise.all([
      this.client.services(),
      this.client.manifest(),
      this.client.events(),
    ]);
    this.tools = tools;
    // the event list endpoint omits tokens; fetch details for open links
    this.eventViews = await Promise.all(
      events.map((e) => this.client.event(e.event_id)),
    );
    this.el.catalog.innerHTML = renderCatalog(services, tools, this.pinned.list());
    this.el.events.innerHTML = renderEventList(this.eventViews);
    this.bindCatalog();
    this.bindEvents();
  }

  private bindCatalog(): void {
    for (const button of this.el.catalog.querySelectorAll<HTMLButtonElement>('[data-pin]')) {
      button.addEventListener('click', () => {
        this.pinned.toggle(button.dataset['pin'] ?? '');
        void this.refresh();
      });
    }
    for (const button of this.el.catalog.querySelectorAll<HTMLButtonElement>('[data-launch]')) {
      button.addEventListener('click', () => {
        const name = button.dataset['launch'] ?? '';
        const tool = this.tools.find((t) => t.name === name);
        if (tool) this.openLaunchForm(tool);
      });
    }
  }

  private openLaunchForm(tool: ToolDescriptor, apiError?: string): void {
    const fields = buildForm(tool.input_schema);
    this.el.dialog.innerHTML = renderLaunchForm(tool, fields, [], apiError);
    const form = this.el.dialog.querySelector<HTMLFormElement>('#launch-form');
    form?.addEventListener('submit', (ev) => {
      ev.preventDefault();
      void this.submitLaunch(tool, fields, form);
    });
  }

  private async submitLaunch(
    tool: ToolDescriptor,
    fields: FormField[],
    form: HTMLFormElement,
  ): Promise<void> {
    const raw: Record<string, string | boolean> = {};
    for (const field of fields) {
      const input = form.elements.namedItem(field.name) as HTMLInputElement | null;
      if (!input) continue;
      raw[field.name] = field.inputType === 'checkbox' ? input.checked : input.value;
    }
    const values = collectValues(fields, raw);
    const errors = validateForm(fields, values);
    if (errors.length > 0) {
      this.el.dialog.innerHTML = renderLaunchForm(tool, fields, errors);
      const reform = this.el.dialog.querySelector<HTMLFormElement>('#launch-form');
      reform?.addEventListener('submit', (ev) => {
        ev.preventDefault();
        void this.submitLaunch(tool, fields, reform);
      });
      return;
    }
    try {
      await this.client.start(tool.name, values, { version: tool.version });
      this.el.dialog.innerHTML = '';
      await this.refresh();
    } catch (err) {
      this.openLaunchForm(tool, messageOf(err));
    }
  }

  private bindEvents(): void {
    for (const button of this.el.events.querySelectorAll<HTMLButtonElement>('[data-share]')) {
      button.addEventListener('click', () =>
        this.openShareDialog(button.dataset['share'] ?? ''),
      );
    }
    for (const button of this.el.events.querySelectorAll<HTMLButtonElement>('[data-stop]')) {
      button.addEventListener('click', () => {
        void this.client
          .terminate(button.dataset['stop'] ?? '')
          .then(() => this.refresh());
      });
    }
  }

  private openShareDialog(eventId: string, error?: string): void {
    this.el.dialog.innerHTML = renderShareDialog(eventId, error);
    const form = this.el.dialog.querySelector<HTMLFormElement>('#share-form');
    form?.addEventListener('submit', (ev) => {
      ev.preventDefault();
      const subject = String(new FormData(form).get('subject') ?? '');
      void this.client
        .share(eventId, subject)
        .then(() => {
          this.el.dialog.innerHTML = '';
          return this.refresh();
        })
        .catch((err) => this.openShareDialog(eventId, messageOf(err)));
    });
  }
}

function messageOf(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  return err instanceof Error ? err.message : String(err);
}

declare global {
  interface Window {
    conductorApp?: DashboardApp;
  }
}

export function mount(apiUrl: string): DashboardApp {
  const byId = (id: string): HTMLElement => {
    const node = document.getElementById(id);
    if (!node) throw new Error(`missing #${id}`);
    return node;
  };
  const app = new DashboardApp(new ConductorClient(apiUrl), {
    login: byId('login'),
    catalog: byId('catalog'),
    events: byId('events'),
    dialog: byId('dialog'),
  });
  window.conductorApp = app;
  void app.boot();
  return app;
}
