import { describe, expect, it } from 'vitest';

import type { InputSchema } from '../src/api.js';
import { buildForm, collectValues, validateForm } from '../src/forms.js';

const schema: InputSchema = {
  type: 'object',
  properties: {
    api_key: { type: 'string', format: 'password', description: 'upstream key' },
    upstream_url: { type: 'string', format: 'uri' },
    replicas: { type: 'integer', default: 2 },
    verbose: { type: 'boolean', default: false },
    note: { type: 'string' },
  },
  required: ['api_key', 'upstream_url'],
};

describe('buildForm', () => {
  const fields = buildForm(schema);
  const byName = new Map(fields.map((f) => [f.name, f]));

  it('maps schema formats onto input types', () => {
    expect(byName.get('api_key')?.inputType).toBe('password');
    expect(byName.get('upstream_url')?.inputType).toBe('url');
    expect(byName.get('replicas')?.inputType).toBe('number');
    expect(byName.get('verbose')?.inputType).toBe('checkbox');
    expect(byName.get('note')?.inputType).toBe('text');
  });

  it('marks required fields and secrets', () => {
    expect(byName.get('api_key')?.required).toBe(true);
    expect(byName.get('api_key')?.secret).toBe(true);
    expect(byName.get('note')?.required).toBe(false);
    expect(byName.get('note')?.secret).toBe(false);
  });

  it('carries defaults and descriptions, humanizes labels', () => {
    expect(byName.get('replicas')?.defaultValue).toBe(2);
    expect(byName.get('note')?.defaultValue).toBeNull();
    expect(byName.get('api_key')?.description).toBe('upstream key');
    expect(byName.get('upstream_url')?.label).toBe('upstream url');
  });
});

describe('validateForm', () => {
  const fields = buildForm(schema);

  it('rejects blank required fields', () => {
    const errors = validateForm(fields, { upstream_url: 'http://x.test/' });
    expect(errors).toEqual([{ name: 'api_key', message: 'api key is required' }]);
  });

  it('rejects non-numeric numbers and non-URL urls', () => {
    const errors = validateForm(fields, {
      api_key: 'k',
      upstream_url: 'not a url',
      replicas: 'many',
    });
    expect(errors.map((e) => e.name).sort()).toEqual(['replicas', 'upstream_url']);
  });

  it('accepts a fully valid submission and ignores blank optionals', () => {
    expect(
      validateForm(fields, { api_key: 'k', upstream_url: 'https://x.test/', note: '' }),
    ).toEqual([]);
  });
});

describe('collectValues', () => {
  const fields = buildForm(schema);

  it('coerces numbers and booleans, passes strings through', () => {
    const values = collectValues(fields, {
      api_key: 's3cret',
      upstream_url: 'https://x.test/',
      replicas: '5',
      verbose: true,
    });
    expect(values).toEqual({
      api_key: 's3cret',
      upstream_url: 'https://x.test/',
      replicas: 5,
      verbose: true,
    });
  });

  it('omits blank fields so server defaults apply', () => {
    const values = collectValues(fields, { api_key: 'k', upstream_url: 'https://x.test/', note: '' });
    expect('note' in values).toBe(false);
    expect('replicas' in values).toBe(false);
  });
});
