// Launch forms are generated from the tool manifest's input schemas; nothing
// about a service's inputs is hardcoded in the dashboard.

import type { InputSchema, PropertySchema } from './api.js';

export interface FormField {
  name: string;
  label: string;
  // maps directly onto <input type=...>; secrets become password fields
  inputType: 'text' | 'number' | 'checkbox' | 'url' | 'password';
  required: boolean;
  defaultValue: unknown;
  description: string;
  secret: boolean;
}

export interface FieldError {
  name: string;
  message: string;
}

function inputTypeOf(prop: PropertySchema): FormField['inputType'] {
  if (prop.format === 'password') return 'password';
  if (prop.format === 'uri') return 'url';
  if (prop.type === 'integer' || prop.type === 'number') return 'number';
  if (prop.type === 'boolean') return 'checkbox';
  return 'text';
}

export function buildForm(schema: InputSchema): FormField[] {
  const required = new Set(schema.required);
  return Object.entries(schema.properties).map(([name, prop]) => ({
    name,
    label: name.replace(/_/g, ' '),
    inputType: inputTypeOf(prop),
    required: required.has(name),
    defaultValue: prop.default ?? null,
    description: prop.description ?? '',
    secret: prop.format === 'password',
  }));
}

// Client-side gate only; the engine re-validates everything server-side.
export function validateForm(
  fields: FormField[],
  values: Record<string, unknown>,
): FieldError[] {
  const errors: FieldError[] = [];
  for (const field of fields) {
    const value = values[field.name];
    const blank = value === undefined || value === null || value === '';
    if (field.required && blank) {
      errors.push({ name: field.name, message: `${field.label} is required` });
      continue;
    }
    if (blank) continue;
    if (field.inputType === 'number' && Number.isNaN(Number(value))) {
      errors.push({ name: field.name, message: `${field.label} must be a number` });
    }
    if (field.inputType === 'url' && !/^[a-z][a-z0-9+.-]*:\/\//i.test(String(value))) {
      errors.push({ name: field.name, message: `${field.label} must be a URL` });
    }
  }
  return errors;
}

// Coerce raw form strings into the JSON types the API expects; blanks for
// optional fields are omitted so server-side defaults apply.
export function collectValues(
  fields: FormField[],
  raw: Record<string, string | boolean>,
): Record<string, unknown> {
  const out: Record<string, unknown> = {};
  for (const field of fields) {
    const value = raw[field.name];
    if (value === undefined || value === '') continue;
    if (field.inputType === 'checkbox') {
      out[field.name] = Boolean(value);
    } else if (field.inputType === 'number') {
      out[field.name] = Number(value);
    } else {
      out[field.name] = value;
    }
  }
  return out;
}
