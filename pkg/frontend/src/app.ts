// Single-page console wiring: poll the API, render the round histogram,
// the prefix drill-down, the budget dashboard, and the compose panel.

import { ConsoleApi, ApiRefusal } from "./api.js";
import { budgetDashboard } from "./budget.js";
import { composeNextRound } from "./compose.js";
import { groupedRows, sortedByEstimate, viewRound, type RoundView } from "./roundview.js";
import type { PlanDoc, RoundBudgets, RoundDoc, StateDoc } from "./types.js";

const api = new ConsoleApi("");

interface ConsoleSession {
  analysisId: string;
  state: StateDoc | null;
  lastRound: RoundDoc | null;
  checked: Set<string>; // selected prefixes, joined by spaces
  sortDescending: boolean;
  autoExtend: boolean;
  budgetInputs: RoundBudgets | null;
  polling: boolean;
}

const session: ConsoleSession = {
  analysisId: "",
  state: null,
  lastRound: null,
  checked: new Set(),
  sortDescending: true,
  autoExtend: false,
  budgetInputs: null,
  polling: false,
};

function esc(text: string): string {
  return text.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]!);
}

function el(id: string): HTMLElement {
  return document.getElementById(id)!;
}

function planOf(state: StateDoc): PlanDoc {
  return {
    analysis_id: state.analysis_id,
    stream: "",
    field: "",
    vocab: state.plan.vocab,
    max_ngram_len: state.plan.max_ngram_len,
    tau: state.plan.tau,
    round_budgets: state.plan.round_budgets,
    total_epsilon: state.plan.total_epsilon,
    total_delta: state.plan.total_delta,
  };
}

function renderRound(view: RoundView): string {
  if (view.pending) return `<p class="notice">round running…</p>`;
  if (view.failed) return `<p class="notice error">round failed: ${esc(view.failed)}</p>`;
  if (view.gated && view.gateNotice) {
    return `<p class="notice gated">gated: fewer than m=${view.gateNotice.minCohort} reports (${esc(
      view.gateNotice.reason,
    )}); nothing was released.</p>`;
  }
  const certified = view.certified
    ? `certified (ε=${view.certified.epsilon.toFixed(3)}, δ=${view.certified.delta})`
    : "no certified bound at this cohort size";
  const header = `<p>cohort ${view.cohortSize}; charged ε=${view.charged?.epsilon}, δ=${view.charged?.delta}; ${certified}</p>`;
  const rows = session.sortDescending ? sortedByEstimate(view.rows) : view.rows;
  const groups = groupedRows({ ...view, rows });
  let html = header;
  for (const [group, groupRows] of groups) {
    html += `<details open><summary>${esc(group)} (${groupRows.length} bins)</summary><div class="bars">`;
    for (const row of groupRows) {
      const left = 50 + Math.min(row.bar.from, 0) * 50;
      const width = Math.max(0.2, (row.bar.to - row.bar.from) * 50);
      const loPct = 50 + row.bar.loFrac * 50;
      const hiPct = 50 + row.bar.hiFrac * 50;
      html += `
        <div class="bin kind-${row.kind}" title="${esc(row.label)}: ${row.estimate.toFixed(2)} ± ${row.stderr.toFixed(2)}">
          <span class="lbl">${esc(row.label)}</span>
          <span class="track">
            <span class="bar" style="left:${left}%;width:${width}%"></span>
            <span class="err" style="left:${loPct}%;width:${Math.max(0.2, hiPct - loPct)}%"></span>
          </span>
          <span class="val">${row.estimate.toFixed(1)} ± ${row.stderr.toFixed(1)}</span>
        </div>`;
    }
    html += `</div></details>`;
  }
  return html;
}

function renderState(state: StateDoc): string {
  const byLevel = new Map<number, { prefix: string[]; estimate: number }[]>();
  for (const entry of state.accepted) {
    if (!byLevel.has(entry.length)) byLevel.set(entry.length, []);
    byLevel.get(entry.length)!.push(entry);
  }
  let html = `<p>status: <b>${esc(state.status)}</b>; ledger ε=${state.ledger.total_epsilon.toFixed(
    3,
  )}/${state.plan.total_epsilon}, δ=${state.ledger.total_delta}/${state.plan.total_delta}</p>`;
  for (const [length, entries] of [...byLevel.entries()].sort((a, b) => a[0] - b[0])) {
    html += `<details open><summary>${length}-grams (${entries.length})</summary><ul>`;
    for (const entry of entries) {
      const key = entry.prefix.join(" ");
      const checked = session.checked.has(key) ? "checked" : "";
      html += `<li><label><input type="checkbox" data-prefix="${esc(key)}" ${checked}/> ${esc(
        key,
      )} <small>≈ ${entry.estimate.toFixed(1)}</small></label></li>`;
    }
    html += `</ul></details>`;
  }
  if (state.terminal.length) {
    html += `<details open><summary>completed phrases (${state.terminal.length})</summary><ul>`;
    for (const t of state.terminal) {
      html += `<li class="kind-end-token">${esc(t.prefix.join(" "))} ⏎ <small>≈ ${t.estimate.toFixed(1)}</small></li>`;
    }
    html += `</ul></details>`;
  }
  return html;
}

async function renderBudget(): Promise<void> {
  const doc = await api.getBudget(session.analysisId);
  const dash = budgetDashboard(doc);
  const row = (r: (typeof dash)["analysis"]) => `
    <tr><td>${esc(r.name)}</td>
      <td>${r.allowedLocalEpsilon ?? "—"}</td>
      <td>${r.epsilon.used.toFixed(3)} / ${r.epsilon.allowed}
        <span class="meter"><span style="width:${Math.min(1, r.epsilon.fraction) * 100}%"></span></span></td>
      <td>${r.reports.used} / ${r.reports.allowed}</td></tr>`;
  el("budget").innerHTML = `
    <p>${dash.devices} devices, ${dash.consistent ? "consistent" : "INCONSISTENT"};
       engine charged ε=${dash.chargedByEngine.epsilon} over ${dash.chargedByEngine.rounds} rounds</p>
    <table><thead><tr><th></th><th>ε local allowed</th><th>ε used/allowed</th><th>reports</th></tr></thead>
    <tbody>${row(dash.analysis)}${dash.fields.map(row).join("")}</tbody></table>`;
}

function currentBudgets(state: StateDoc): RoundBudgets {
  return session.budgetInputs ?? state.plan.round_budgets;
}

function renderCompose(state: StateDoc): void {
  const prefixes = [...session.checked].map((key) => key.split(" "));
  const preview = composeNextRound(
    planOf(state),
    session.polling ? "round-running" : state.status,
    state.ledger.entries,
    prefixes,
    currentBudgets(state),
    session.autoExtend,
  );
  const reason = preview.schemaError ?? preview.gate.reason;
  el("preview").innerHTML = session.autoExtend
    ? `<p>auto-extend: the engine selects the frequent prefixes.</p>`
    : preview.recipe
      ? `<p>preview: ${prefixes.length} prefixes × (${state.plan.vocab.length} words + end-token + OOV) + OOV
         = <b>${preview.totalBins} bins</b></p>`
      : `<p>select accepted prefixes to extend.</p>`;
  const button = el("submit") as HTMLButtonElement;
  button.disabled = !preview.submitEnabled;
  el("submit-reason").textContent = preview.submitEnabled ? "" : `blocked: ${reason}`;
  button.onclick = async () => {
    if (!preview.body) return;
    try {
      const { round_token } = await api.submitRound(session.analysisId, preview.body);
      session.polling = true;
      renderCompose(state);
      const doc = await api.pollRound(session.analysisId, round_token, (update) => {
        session.lastRound = update;
        el("round").innerHTML = renderRound(viewRound(update));
      });
      session.polling = false;
      session.lastRound = doc;
      await refresh();
    } catch (err) {
      session.polling = false;
      el("submit-reason").textContent =
        err instanceof ApiRefusal ? `API refused: ${err.code}` : String(err);
    }
  };
}

async function refresh(): Promise<void> {
  const state = await api.getState(session.analysisId);
  session.state = state;
  el("state").innerHTML = renderState(state);
  for (const box of el("state").querySelectorAll("input[type=checkbox]")) {
    (box as HTMLInputElement).onchange = (event) => {
      const target = event.target as HTMLInputElement;
      const key = target.dataset.prefix!;
      if (target.checked) session.checked.add(key);
      else session.checked.delete(key);
      renderCompose(state);
    };
  }
  if (session.lastRound) el("round").innerHTML = renderRound(viewRound(session.lastRound));
  await renderBudget();
  renderCompose(state);
}

export function boot(): void {
  (el("connect") as HTMLButtonElement).onclick = async () => {
    session.analysisId = (el("analysis-id") as HTMLInputElement).value.trim();
    session.checked.clear();
    session.lastRound = null;
    try {
      await refresh();
      el("console").style.display = "block";
    } catch (err) {
      el("connect-error").textContent =
        err instanceof ApiRefusal ? `API refused: ${err.code}` : String(err);
    }
  };
  (el("auto-extend") as HTMLInputElement).onchange = (event) => {
    session.autoExtend = (event.target as HTMLInputElement).checked;
    if (session.state) renderCompose(session.state);
  };
  (el("sort-desc") as HTMLInputElement).onchange = (event) => {
    session.sortDescending = (event.target as HTMLInputElement).checked;
    if (session.lastRound) el("round").innerHTML = renderRound(viewRound(session.lastRound));
  };
  for (const field of ["eps0", "eps", "delta", "m"]) {
    (el(`budget-${field}`) as HTMLInputElement).onchange = () => {
      const state = session.state;
      if (!state) return;
      session.budgetInputs = {
        local_epsilon: Number((el("budget-eps0") as HTMLInputElement).value || state.plan.round_budgets.local_epsilon),
        aggregate_epsilon: Number((el("budget-eps") as HTMLInputElement).value || state.plan.round_budgets.aggregate_epsilon),
        delta: Number((el("budget-delta") as HTMLInputElement).value || state.plan.round_budgets.delta),
        min_cohort: Number((el("budget-m") as HTMLInputElement).value || state.plan.round_budgets.min_cohort),
      };
      renderCompose(state);
    };
  }
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
