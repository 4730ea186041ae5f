// SSE subscription with automatic reconnect and backoff.

export interface EventSourceLike {
  onmessage: ((event: { data: string }) => void) | null;
  onerror: ((event: unknown) => void) | null;
  onopen: ((event: unknown) => void) | null;
  close(): void;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface StreamHandle {
  close(): void;
}

export interface StreamCallbacks {
  onEvent(data: unknown): void;
  onStatus?(connected: boolean): void;
}

export function subscribeStream(
  url: string,
  callbacks: StreamCallbacks,
  makeSource: EventSourceFactory = (u) => new EventSource(u) as unknown as EventSourceLike,
  initialBackoffMs = 1000,
  maxBackoffMs = 15000,
): StreamHandle {
  let source: EventSourceLike | null = null;
  let closed = false;
  let backoff = initialBackoffMs;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const connect = () => {
    if (closed) return;
    source = makeSource(url);
    source.onopen = () => {
      backoff = initialBackoffMs;
      callbacks.onStatus?.(true);
    };
    source.onmessage = (event) => {
      try {
        callbacks.onEvent(JSON.parse(event.data));
      } catch {
        console.warn('unparsable stream frame dropped');
      }
    };
    source.onerror = () => {
      callbacks.onStatus?.(false);
      source?.close();
      source = null;
      if (!closed) {
        timer = setTimeout(connect, backoff);
        backoff = Math.min(backoff * 2, maxBackoffMs);
      }
    };
  };

  connect();
  return {
    close() {
      closed = true;
      if (timer !== null) clearTimeout(timer);
      source?.close();
    },
  };
}
