// Shapes of the /v1 API documents the console consumes.

export interface RoundBudgets {
  local_epsilon: number;
  aggregate_epsilon: number;
  delta: number;
  min_cohort: number;
}

export interface PlanDoc {
  analysis_id: string;
  stream: string;
  field: string;
  vocab: string[];
  max_ngram_len: number;
  tau?: number;
  round_budgets: RoundBudgets;
  total_epsilon: number;
  total_delta: number;
}

export interface NumericFeatureDoc {
  name: string;
  kind: "numeric_buckets";
  field: string;
  boundaries: number[];
}

export interface TreeFeatureDoc {
  name: string;
  kind: "prefix_tree";
  field: string;
  prefixes?: string[][];
  prefixes_hash?: string;
  vocab: string[];
}

export type FeatureDoc = NumericFeatureDoc | TreeFeatureDoc;

export interface RecipeDoc {
  recipe_id: string;
  version: number;
  analysis_id: string;
  query: { stream: string; fields: string[] };
  non_sensitive_fields: string[];
  budgets: RoundBudgets;
  data_content_type: { features: FeatureDoc[] };
}

export interface PublishedResultDoc {
  recipe_id: string;
  gated: false;
  cohort_size: number;
  labels: string[];
  estimates: number[];
  stderr: number[];
  certified_bound: { epsilon: number; delta: number; n: number; model: string } | null;
  charged: { epsilon: number; delta: number };
  mode: string;
  random_reports: number;
}

export type RoundDoc =
  | { status: "pending" }
  | { status: "failed"; code: string }
  | { status: "gated"; recipe_id: string; min_cohort: number; reason: string }
  | { status: "published"; result: PublishedResultDoc };

export interface AcceptedPrefix {
  length: number;
  prefix: string[];
  estimate: number;
}

export interface StateDoc {
  analysis_id: string;
  status: string;
  rounds_submitted: number;
  accepted: AcceptedPrefix[];
  terminal: { prefix: string[]; estimate: number }[];
  ledger: { entries: [number, number][]; total_epsilon: number; total_delta: number };
  plan: {
    max_ngram_len: number;
    tau: number;
    total_epsilon: number;
    total_delta: number;
    round_budgets: RoundBudgets;
    vocab: string[];
  };
}

export interface BudgetRow {
  allowed_local_epsilon?: number;
  allowed_epsilon: number;
  used_epsilon: number;
  allowed_reports: number;
  used_reports: number;
  allowed_delta?: number;
  used_delta?: number;
}

export interface BudgetDoc {
  analysis_id: string;
  devices: number;
  consistent: boolean;
  analysis: BudgetRow;
  fields: Record<string, BudgetRow>;
  engine_ledger: { charged_epsilon: number; charged_delta: number; rounds: number };
}
