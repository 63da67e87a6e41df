// Compose-next-round: selection plus budget inputs become a recipe preview,
// and a submit gate that mirrors the server's own 403 conditions so the
// button is disabled exactly when the API would refuse.

import { buildNextRecipe, totalBins, validRecipePreview } from "./binmath.js";
import type { PlanDoc, RecipeDoc, RoundBudgets } from "./types.js";

export interface SubmitGate {
  allowed: boolean;
  /** machine-readable reason; "busy" maps to the API's 409, others to 403 */
  reason: string | null;
}

export function submitGate(
  sessionStatus: string,
  plan: PlanDoc,
  ledgerEntries: [number, number][],
  budgets: RoundBudgets,
): SubmitGate {
  if (sessionStatus === "round-running") {
    return { allowed: false, reason: "busy" };
  }
  if (sessionStatus === "done" || sessionStatus === "exhausted") {
    return { allowed: false, reason: `analysis-${sessionStatus}` };
  }
  let eps = plan.round_budgets.aggregate_epsilon;
  let delta = plan.round_budgets.delta;
  for (const [e, d] of ledgerEntries) {
    eps += e;
    delta += d;
  }
  if (eps > plan.total_epsilon || delta > plan.total_delta) {
    return { allowed: false, reason: "plan-budget-exceeded" };
  }
  if (
    budgets.aggregate_epsilon > plan.round_budgets.aggregate_epsilon ||
    budgets.delta > plan.round_budgets.delta
  ) {
    return { allowed: false, reason: "recipe-exceeds-round-budget" };
  }
  return { allowed: true, reason: null };
}

export interface ComposePreview {
  recipe: RecipeDoc | null;
  totalBins: number;
  schemaError: string | null;
  gate: SubmitGate;
  submitEnabled: boolean;
  body: { recipe: RecipeDoc } | { auto_extend: true } | null;
}

export function composeNextRound(
  plan: PlanDoc,
  sessionStatus: string,
  ledgerEntries: [number, number][],
  selectedPrefixes: string[][],
  budgets: RoundBudgets,
  autoExtend: boolean,
): ComposePreview {
  const gate = submitGate(sessionStatus, plan, ledgerEntries, budgets);
  if (autoExtend) {
    // selection deferred to the engine; only the gate applies
    return {
      recipe: null,
      totalBins: 0,
      schemaError: null,
      gate,
      submitEnabled: gate.allowed,
      body: gate.allowed ? { auto_extend: true } : null,
    };
  }
  const nextLength = selectedPrefixes.length ? selectedPrefixes[0].length + 1 : 0;
  const recipe = selectedPrefixes.length
    ? buildNextRecipe(plan, selectedPrefixes, budgets, nextLength)
    : null;
  const schemaError = recipe ? validRecipePreview(recipe) : "no prefixes selected";
  const bins = recipe && !schemaError ? totalBins(recipe.data_content_type.features) : 0;
  const enabled = gate.allowed && schemaError === null;
  return {
    recipe,
    totalBins: bins,
    schemaError,
    gate,
    submitEnabled: enabled,
    body: enabled && recipe ? { recipe } : null,
  };
}
