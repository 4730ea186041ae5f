// Dependency-free SVG line charts, one polyline per series.

import type { LiveSeries } from './types';

const PALETTE = ['#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd', '#8c564b', '#17becf'];

export interface ChartOptions {
  title: string;
  width?: number;
  height?: number;
  targetLine?: number | null;
}

export function renderChart(series: LiveSeries[], options: ChartOptions): string {
  const width = options.width ?? 560;
  const height = options.height ?? 300;
  const margin = 42;
  const points = series.flatMap((s) => s.points);
  let xLo = 0;
  let xHi = 1;
  let yLo = 0;
  let yHi = 1;
  if (points.length > 0) {
    xLo = Math.min(...points.map((p) => p[0]));
    xHi = Math.max(...points.map((p) => p[0]));
    yLo = Math.min(0, ...points.map((p) => p[1]));
    yHi = Math.max(1e-9, ...points.map((p) => p[1]));
    if (options.targetLine != null) yHi = Math.max(yHi, options.targetLine);
  }
  if (xHi === xLo) xHi = xLo + 1;
  if (yHi === yLo) yHi = yLo + 1;

  const sx = (x: number) => margin + ((x - xLo) / (xHi - xLo)) * (width - 2 * margin);
  const sy = (y: number) => height - margin - ((y - yLo) / (yHi - yLo)) * (height - 2 * margin);

  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${width} ${height}" class="chart">`,
    `<text x="${width / 2}" y="16" text-anchor="middle" class="chart-title">${options.title}</text>`,
    `<line x1="${margin}" y1="${height - margin}" x2="${width - margin}" y2="${height - margin}" stroke="#444"/>`,
    `<line x1="${margin}" y1="${margin}" x2="${margin}" y2="${height - margin}" stroke="#444"/>`,
    `<text x="${margin - 6}" y="${sy(yHi) + 4}" text-anchor="end" font-size="10">${yHi.toPrecision(3)}</text>`,
    `<text x="${margin - 6}" y="${sy(yLo) + 4}" text-anchor="end" font-size="10">${yLo.toPrecision(3)}</text>`,
    `<text x="${width - margin}" y="${height - margin + 14}" text-anchor="end" font-size="10">t=${xHi.toFixed(1)}</text>`,
  ];
  if (options.targetLine != null) {
    const y = sy(options.targetLine);
    parts.push(
      `<line x1="${margin}" y1="${y}" x2="${width - margin}" y2="${y}" ` +
        `stroke="#b30000" stroke-dasharray="6 4" class="target-line"/>`,
      `<text x="${width - margin}" y="${y - 4}" text-anchor="end" font-size="10" ` +
        `fill="#b30000">target ${options.targetLine}</text>`,
    );
  }
  series.forEach((line, index) => {
    const color = PALETTE[index % PALETTE.length];
    if (line.points.length > 0) {
      const coords = line.points.map(([x, y]) => `${sx(x).toFixed(1)},${sy(y).toFixed(1)}`).join(' ');
      const dash = line.status === 'active' ? '' : ' stroke-dasharray="2 3"';
      parts.push(
        `<polyline points="${coords}" fill="none" stroke="${color}" stroke-width="1.6"` +
          `${dash} data-series="${line.sourceId}"/>`,
      );
    }
    parts.push(
      `<text x="${width - margin + 4}" y="${margin + 13 * index}" font-size="10" ` +
        `fill="${color}">${line.sourceId}${line.status !== 'active' ? ` (${line.status})` : ''}</text>`,
    );
  });
  parts.push('</svg>');
  return parts.join('\n');
}
