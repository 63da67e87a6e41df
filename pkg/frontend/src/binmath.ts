// Client-side bin arithmetic, recomputed only for display previews; the
// server's encoding stays authoritative.

import type { FeatureDoc, PlanDoc, RecipeDoc, RoundBudgets } from "./types.js";

export function prefixTreeBins(leafCount: number, vocabSize: number): number {
  return 1 + leafCount * (2 + vocabSize);
}

export function numericBins(boundaries: number[]): number {
  return boundaries.length; // (k+1 boundaries - 1) buckets + OOV
}

export function featureBins(feature: FeatureDoc): number {
  if (feature.kind === "numeric_buckets") {
    return numericBins(feature.boundaries);
  }
  const leaves = feature.prefixes ? feature.prefixes.length : 0;
  return prefixTreeBins(leaves, feature.vocab.length);
}

export function totalBins(features: FeatureDoc[]): number {
  return features.reduce((acc, f) => acc * featureBins(f), 1);
}

/** The next-round recipe for the analyst's selected prefixes (engine mirror). */
export function buildNextRecipe(
  plan: PlanDoc,
  selectedPrefixes: string[][],
  budgets: RoundBudgets,
  nextLength: number,
): RecipeDoc {
  return {
    recipe_id: `${plan.analysis_id}-round${nextLength}`,
    version: 1,
    analysis_id: plan.analysis_id,
    query: { stream: plan.stream, fields: [plan.field] },
    non_sensitive_fields: [],
    budgets,
    data_content_type: {
      features: [
        {
          name: "ngram",
          kind: "prefix_tree",
          field: plan.field,
          prefixes: selectedPrefixes.map((p) => [...p]),
          vocab: [...plan.vocab],
        },
      ],
    },
  };
}

/** Client-side schema sanity for a preview recipe; submit stays disabled otherwise. */
export function validRecipePreview(recipe: RecipeDoc): string | null {
  if (!recipe.recipe_id) return "recipe_id empty";
  const feature = recipe.data_content_type.features[0];
  if (!feature || feature.kind !== "prefix_tree") return "preview needs one prefix-tree feature";
  const prefixes = feature.prefixes ?? [];
  if (prefixes.length === 0) return "no prefixes selected";
  const depths = new Set(prefixes.map((p) => p.length));
  if (depths.size !== 1) return "selected prefixes have unequal length";
  if (new Set(prefixes.map((p) => p.join(" "))).size !== prefixes.length) {
    return "duplicate prefixes selected";
  }
  if (feature.vocab.length === 0) return "vocabulary is empty";
  const b = recipe.budgets;
  if (b.local_epsilon <= 0 || b.aggregate_epsilon <= 0 || b.delta <= 0 || b.min_cohort < 1) {
    return "budgets must be positive";
  }
  return null;
}
