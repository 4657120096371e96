// Pure HTML-string renderers: every view is a function of API data plus the
// session, so the whole UI layer is testable without a browser.

import type { EventView, ServiceRow, ToolDescriptor } from './api.js';
import { entryOpenUrl } from './api.js';
import type { FieldError, FormField } from './forms.js';

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function renderLogin(error?: string): string {
  return `
    <form id="login-form" class="card login">
      <h2>Sign in</h2>
      <label>Credential
        <input type="password" name="credential" autocomplete="current-password" required />
      </label>
      ${error ? `<p class="error">${escapeHtml(error)}</p>` : ''}
      <button type="submit">Sign in</button>
    </form>`;
}

export function renderCatalog(
  services: ServiceRow[],
  tools: ToolDescriptor[],
  pinned: string[],
): string {
  const byKey = new Map(tools.map((t) => [`${t.name}@${t.version}`, t]));
  const active = services.filter((s) => s.status === 'active');
  const order = [...active].sort((a, b) => {
    const ap = pinned.includes(a.name) ? 0 : 1;
    const bp = pinned.includes(b.name) ? 0 : 1;
    return ap - bp || a.name.localeCompare(b.name);
  });
  const rows = order
    .map((s) => {
      const tool = byKey.get(`${s.name}@${s.version}`);
      const pin = pinned.includes(s.name) ? '★' : '☆';
      return `
      <tr data-service="${escapeHtml(s.name)}" data-version="${escapeHtml(s.version)}">
        <td><button class="pin" data-pin="${escapeHtml(s.name)}">${pin}</button></td>
        <td>${escapeHtml(s.name)}</td>
        <td>${escapeHtml(s.version)}</td>
        <td>${escapeHtml(tool?.description ?? '')}</td>
        <td>${s.live_entry_count}</td>
        <td><button class="launch" data-launch="${escapeHtml(s.name)}">Launch</button></td>
      </tr>`;
    })
    .join('');
  return `
    <section class="card catalog">
      <h2>Service catalog</h2>
      <table>
        <thead><tr><th></th><th>Service</th><th>Version</th><th>Description</th>
          <th>Live</th><th></th></tr></thead>
        <tbody>${rows || '<tr><td colspan="6" class="empty">No services registered</td></tr>'}</tbody>
      </table>
    </section>`;
}

export function renderLaunchForm(
  tool: ToolDescriptor,
  fields: FormField[],
  errors: FieldError[] = [],
  apiError?: string,
): string {
  const errorFor = (name: string) =>
    errors.find((e) => e.name === name)?.message ?? '';
  const inputs = fields
    .map((f) => {
      const err = errorFor(f.name);
      const value =
        f.defaultValue !== null && !f.secret ? String(f.defaultValue) : '';
      return `
      <label class="${err ? 'invalid' : ''}">
        ${escapeHtml(f.label)}${f.required ? ' *' : ''}
        <input type="${f.inputType}" name="${escapeHtml(f.name)}"
               value="${escapeHtml(value)}"
               ${f.required ? 'required' : ''}
               ${f.secret ? 'autocomplete="off"' : ''} />
        ${f.description ? `<small>${escapeHtml(f.description)}</small>` : ''}
        ${err ? `<span class="error">${escapeHtml(err)}</span>` : ''}
      </label>`;
    })
    .join('');
  return `
    <form id="launch-form" class="card" data-service="${escapeHtml(tool.name)}"
          data-version="${escapeHtml(tool.version)}">
      <h2>Launch ${escapeHtml(tool.name)} ${escapeHtml(tool.version)}</h2>
      ${inputs}
      ${apiError ? `<p class="error api">${escapeHtml(apiError)}</p>` : ''}
      <button type="submit">Start</button>
    </form>`;
}

export function renderEventCard(event: EventView): string {
  const token = event.token ?? '';
  const entries = event.entries
    .map((entry) => {
      const open = token ? entryOpenUrl(entry, token) : null;
      return `
      <li>
        <code>${escapeHtml(entry.service[0])}@${escapeHtml(entry.service[1])}</code>
        <span class="state state-${entry.state.toLowerCase()}">${entry.state}</span>
        <span class="restarts">restarts: ${entry.restart_count}</span>
        ${open ? `<a class="open" href="${escapeHtml(open)}" target="_blank" rel="noopener">Open</a>` : ''}
      </li>`;
    })
    .join('');
  return `
    <article class="card event" data-event="${escapeHtml(event.event_id)}">
      <header>
        <h3>${escapeHtml(event.event_id)}</h3>
        <span class="state state-${event.state.toLowerCase()}">${event.state}</span>
      </header>
      <ul>${entries}</ul>
      <footer>
        <button class="share" data-share="${escapeHtml(event.event_id)}">Share</button>
        <button class="stop" data-stop="${escapeHtml(event.event_id)}">Stop</button>
      </footer>
    </article>`;
}

export function renderShareDialog(eventId: string, error?: string): string {
  return `
    <form id="share-form" class="card" data-event="${escapeHtml(eventId)}">
      <h2>Share event</h2>
      <label>Subject
        <input type="text" name="subject" required />
      </label>
      ${error ? `<p class="error api">${escapeHtml(error)}</p>` : ''}
      <button type="submit">Share</button>
    </form>`;
}

export function renderEventList(events: EventView[]): string {
  if (events.length === 0) {
    return '<section class="card"><p class="empty">No events yet</p></section>';
  }
  return events.map(renderEventCard).join('');
}
