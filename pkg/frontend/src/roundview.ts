// View model for one round: histogram rows with error bars, OOV/end-token
// flags, per-feature grouping, and a stable estimate-descending order.

import type { PublishedResultDoc, RoundDoc } from "./types.js";

export type BinKind = "value" | "oov" | "end-token";

export interface HistogramRow {
  index: number;
  label: string;
  group: string; // first feature's part of the label
  estimate: number;
  stderr: number;
  lo: number;
  hi: number;
  kind: BinKind;
  /** bar extents as fractions of the axis scale, for rendering */
  bar: { from: number; to: number; loFrac: number; hiFrac: number };
}

export interface RoundView {
  gated: boolean;
  gateNotice?: { minCohort: number; reason: string };
  pending?: boolean;
  failed?: string;
  cohortSize?: number;
  certified?: { epsilon: number; delta: number } | null;
  charged?: { epsilon: number; delta: number };
  rows: HistogramRow[];
  groups: string[];
}

function classify(label: string): BinKind {
  const parts = label.split("|").map((part) => part.slice(part.indexOf("=") + 1));
  if (parts.some((value) => value === "OOV" || value.endsWith(" OOV"))) return "oov";
  if (parts.some((value) => value === "end-token" || value.endsWith(" end-token"))) {
    return "end-token";
  }
  return "value";
}

function axisScale(result: PublishedResultDoc): number {
  let scale = 1e-9;
  for (let i = 0; i < result.estimates.length; i += 1) {
    scale = Math.max(scale, Math.abs(result.estimates[i]) + result.stderr[i]);
  }
  return scale;
}

export function viewRound(doc: RoundDoc): RoundView {
  if (doc.status === "pending") {
    return { gated: false, pending: true, rows: [], groups: [] };
  }
  if (doc.status === "failed") {
    return { gated: false, failed: doc.code, rows: [], groups: [] };
  }
  if (doc.status === "gated") {
    return {
      gated: true,
      gateNotice: { minCohort: doc.min_cohort, reason: doc.reason },
      rows: [],
      groups: [],
    };
  }
  const result = doc.result;
  const scale = axisScale(result);
  const rows: HistogramRow[] = result.labels.map((label, i) => {
    const estimate = result.estimates[i];
    const stderr = result.stderr[i];
    const lo = estimate - stderr;
    const hi = estimate + stderr;
    return {
      index: i,
      label,
      group: label.split("|")[0],
      estimate,
      stderr,
      lo,
      hi,
      kind: classify(label),
      bar: {
        from: Math.min(0, estimate) / scale,
        to: Math.max(0, estimate) / scale,
        loFrac: lo / scale,
        hiFrac: hi / scale,
      },
    };
  });
  const groups: string[] = [];
  for (const row of rows) {
    if (!groups.includes(row.group)) groups.push(row.group);
  }
  return {
    gated: false,
    cohortSize: result.cohort_size,
    certified: result.certified_bound
      ? { epsilon: result.certified_bound.epsilon, delta: result.certified_bound.delta }
      : null,
    charged: result.charged,
    rows,
    groups,
  };
}

/** Stable sort by estimate descending (ties keep bin order). */
export function sortedByEstimate(rows: HistogramRow[]): HistogramRow[] {
  return [...rows].sort((a, b) => b.estimate - a.estimate);
}

export function groupedRows(view: RoundView): Map<string, HistogramRow[]> {
  const out = new Map<string, HistogramRow[]>();
  for (const group of view.groups) out.set(group, []);
  for (const row of view.rows) out.get(row.group)!.push(row);
  return out;
}
