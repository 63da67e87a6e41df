// Thin fetch client for the /v1 API; the console holds no state the server
// does not serve.

import type { BudgetDoc, PlanDoc, RecipeDoc, RoundDoc, StateDoc } from "./types.js";

export class ApiRefusal extends Error {
  constructor(
    public status: number,
    public code: string,
  ) {
    super(`${status}: ${code}`);
  }
}

export class ConsoleApi {
  constructor(
    private baseUrl: string = "",
    private token: string | null = null,
  ) {}

  private headers(): Record<string, string> {
    const out: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) out["Authorization"] = `Bearer ${this.token}`;
    return out;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const doc = await response.json();
    if (!response.ok) {
      throw new ApiRefusal(response.status, doc?.error?.code ?? "unknown");
    }
    return doc as T;
  }

  createAnalysis(plan: PlanDoc): Promise<{ analysis_id: string }> {
    return this.request("POST", "/v1/analyses", plan);
  }

  submitRound(
    analysisId: string,
    body: { recipe: RecipeDoc } | { auto_extend: true },
  ): Promise<{ round_token: string }> {
    return this.request("POST", `/v1/analyses/${analysisId}/rounds`, body);
  }

  getRound(analysisId: string, token: string): Promise<RoundDoc> {
    return this.request("GET", `/v1/analyses/${analysisId}/rounds/${token}`);
  }

  getBudget(analysisId: string): Promise<BudgetDoc> {
    return this.request("GET", `/v1/analyses/${analysisId}/budget`);
  }

  getState(analysisId: string): Promise<StateDoc> {
    return this.request("GET", `/v1/analyses/${analysisId}/state`);
  }

  /** Poll a round token every intervalMs until it leaves "pending". */
  async pollRound(
    analysisId: string,
    token: string,
    onUpdate: (doc: RoundDoc) => void,
    intervalMs = 1000,
  ): Promise<RoundDoc> {
    for (;;) {
      const doc = await this.getRound(analysisId, token);
      onUpdate(doc);
      if (doc.status !== "pending") return doc;
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }
}
