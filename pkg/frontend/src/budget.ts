// Budget dashboard view model: the per-analysis and per-field tables with
// used/allowed progress, mirroring the device accountant's snapshot shape.

import type { BudgetDoc, BudgetRow } from "./types.js";

export interface ProgressCell {
  used: number;
  allowed: number;
  fraction: number; // 0 when nothing is allowed
}

export interface DashboardRow {
  name: string;
  allowedLocalEpsilon: number | null;
  epsilon: ProgressCell;
  reports: ProgressCell;
}

export interface Dashboard {
  devices: number;
  consistent: boolean;
  analysis: DashboardRow;
  fields: DashboardRow[];
  chargedByEngine: { epsilon: number; delta: number; rounds: number };
}

function progress(used: number, allowed: number): ProgressCell {
  return { used, allowed, fraction: allowed > 0 ? used / allowed : 0 };
}

function toRow(name: string, row: BudgetRow): DashboardRow {
  return {
    name,
    allowedLocalEpsilon: row.allowed_local_epsilon ?? null,
    epsilon: progress(row.used_epsilon, row.allowed_epsilon),
    reports: progress(row.used_reports, row.allowed_reports),
  };
}

export function budgetDashboard(doc: BudgetDoc): Dashboard {
  return {
    devices: doc.devices,
    consistent: doc.consistent,
    analysis: toRow("analysis", doc.analysis),
    fields: Object.entries(doc.fields).map(([name, row]) => toRow(name, row)),
    chargedByEngine: {
      epsilon: doc.engine_ledger.charged_epsilon,
      delta: doc.engine_ledger.charged_delta,
      rounds: doc.engine_ledger.rounds,
    },
  };
}
