// Page wiring: stream -> store -> charts/table, plus the stop controls.

import { renderChart } from './chart';
import { issueControl } from './control';
import { DashboardStore } from './store';
import { subscribeStream } from './stream';
import type { RunInfo } from './types';

const CHART_TITLES: Record<string, string> = {
  worker_loss: 'Per-worker loss',
  worker_perf: 'Per-worker accuracy',
  global_perf: 'Global model accuracy (tester)',
  epoch_time: 'Epoch duration',
};

function monitorBase(): string {
  const param = new URLSearchParams(window.location.search).get('monitor');
  return (param ?? window.location.origin).replace(/\/$/, '');
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const base = monitorBase();
  let run: RunInfo = {};
  try {
    run = (await (await fetch(`${base}/run`)).json()) as RunInfo;
  } catch {
    // run info is cosmetic; the stream still works without it
  }
  const store = new DashboardStore(run);
  const banner = el<HTMLDivElement>('banner');
  const charts = el<HTMLDivElement>('charts');
  const table = el<HTMLTableSectionElement>('worker-rows');
  const heading = el<HTMLSpanElement>('run-name');
  const toast = el<HTMLDivElement>('toast');
  heading.textContent = run.name
    ? `${run.name} — ${run.strategy ?? '?'} / ${run.lr_regime ?? '?'}`
    : 'training run';

  let renderQueued = false;
  const scheduleRender = () => {
    if (renderQueued) return;
    renderQueued = true;
    requestAnimationFrame(() => {
      renderQueued = false;
      render();
    });
  };

  const showToast = (message: string) => {
    toast.textContent = message;
    toast.classList.add('visible');
    setTimeout(() => toast.classList.remove('visible'), 4000);
  };

  const stopWorker = async (workerId: string, button: HTMLButtonElement) => {
    button.disabled = true;
    const cmd = { cmd: 'stop_worker' as const, id: workerId };
    const ack = await issueControl(base, cmd);
    store.applyAck(cmd, ack);
    if (!ack.ok) {
      showToast(ack.error ?? 'stop failed');
      button.disabled = false;
    }
    scheduleRender();
  };

  el<HTMLButtonElement>('stop-training').addEventListener('click', async (event) => {
    const button = event.currentTarget as HTMLButtonElement;
    button.disabled = true;
    const cmd = { cmd: 'stop_training' as const };
    const ack = await issueControl(base, cmd);
    store.applyAck(cmd, ack);
    if (!ack.ok) {
      showToast(ack.error ?? 'stop failed');
      button.disabled = false;
    }
    scheduleRender();
  });

  const render = () => {
    const sections: string[] = [];
    for (const kind of store.chartedKinds()) {
      const target =
        kind === 'global_perf' || kind === 'worker_perf' ? run.target_performance : null;
      sections.push(
        renderChart(store.chartSeries(kind), {
          title: CHART_TITLES[kind] ?? kind,
          targetLine: target ?? null,
        }),
      );
    }
    charts.innerHTML = sections.join('\n');

    table.innerHTML = '';
    for (const row of store.workerRows()) {
      if (row.workerId === run.tester) continue;
      const tr = document.createElement('tr');
      tr.innerHTML =
        `<td>${row.workerId}</td><td class="status-${row.status}">${row.status}</td>` +
        `<td>${row.lastLoss?.toFixed(4) ?? '—'}</td>` +
        `<td>${row.lastAccuracy?.toFixed(4) ?? '—'}</td>` +
        `<td>${row.epochsDone}</td><td>${row.lastSeen?.toFixed(1) ?? '—'}</td>`;
      const td = document.createElement('td');
      const button = document.createElement('button');
      button.textContent = 'stop';
      button.disabled = row.status !== 'active' || store.trainingStopped;
      button.addEventListener('click', () => void stopWorker(row.workerId, button));
      td.appendChild(button);
      tr.appendChild(td);
      table.appendChild(tr);
    }
    el<HTMLButtonElement>('stop-training').disabled = store.trainingStopped;
  };

  subscribeStream(`${base}/metrics/stream`, {
    onEvent(data) {
      if (store.isMetricEvent(data)) {
        store.apply(data);
        scheduleRender();
      }
    },
    onStatus(connected) {
      banner.classList.toggle('visible', !connected);
    },
  });

  render();
}

void boot();
