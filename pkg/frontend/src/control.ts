// POST /control with a typed ack.

import type { ControlAck } from './types';

export type FetchLike = (url: string, init: {
  method: string;
  headers: Record<string, string>;
  body: string;
}) => Promise<{ json(): Promise<unknown> }>;

export async function issueControl(
  baseUrl: string,
  cmd: { cmd: 'stop_worker'; id: string } | { cmd: 'stop_training' },
  fetchImpl: FetchLike = fetch,
): Promise<ControlAck> {
  try {
    const response = await fetchImpl(`${baseUrl}/control`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(cmd),
    });
    const body = (await response.json()) as ControlAck;
    if (typeof body?.ok !== 'boolean') {
      return { ok: false, error: 'malformed ack' };
    }
    return body;
  } catch (error) {
    return { ok: false, error: String(error) };
  }
}
