// Wire shapes of the monitor service (GET /metrics, /metrics/stream, /run).

export type MetricKind =
  | 'worker_loss'
  | 'worker_perf'
  | 'global_perf'
  | 'epoch_time'
  | 'join'
  | 'leave'
  | 'bytes';

export interface MetricEvent {
  source_id: string;
  timestamp: number;
  kind: MetricKind;
  value: number;
  version?: number;
  epoch?: number;
  direction?: string;
}

export interface RunInfo {
  name?: string;
  strategy?: string;
  lr_regime?: string;
  workers?: string[];
  tester?: string | null;
  target_performance?: number | null;
  max_versions?: number | null;
}

export type SeriesStatus = 'active' | 'stopped' | 'failed';

export interface LiveSeries {
  sourceId: string;
  kind: MetricKind;
  points: Array<[number, number]>; // strictly time-ordered
  status: SeriesStatus;
}

export interface ControlAck {
  ok: boolean;
  cmd?: string;
  id?: string;
  error?: string;
  applied_at?: number;
}

export interface WorkerRow {
  workerId: string;
  status: SeriesStatus;
  lastLoss: number | null;
  lastAccuracy: number | null;
  epochsDone: number;
  lastSeen: number | null;
}
