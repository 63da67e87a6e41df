"""HTTP service exposing the analysis engine to the analyst console.

Versioned under /v1: create analyses, submit rounds (explicit recipe or
auto-extend), poll round results, and inspect the fleet budget posture.
Responses never carry per-device payloads: gated rounds expose only the gate
metadata, budget summaries are fleet-level roll-ups, and results are the
published aggregates.  Round execution is asynchronous; polling the round
token is the normative completion contract.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.responses import JSONResponse

from .amplification import CompositionLedger, compose_basic
from .engine import (
    DiscoveryPlan,
    EngineError,
    FrequentSelection,
    GatedRound,
    RoundResult,
    extend_prefixes,
    initial_recipe,
    plan_allows_next_round,
    run_round,
    select_frequent,
    verify_query_class,
)
from .recipe import Budgets, Recipe, RecipeError, parse_recipe


class ApiError(HTTPException):
    def __init__(self, status_code: int, code: str, detail: str = "") -> None:
        super().__init__(status_code=status_code, detail={"code": code, "detail": detail})


def parse_plan(doc: dict) -> DiscoveryPlan:
    required = {
        "analysis_id",
        "stream",
        "field",
        "vocab",
        "max_ngram_len",
        "round_budgets",
        "total_epsilon",
        "total_delta",
    }
    allowed = required | {"tau"}
    unknown = set(doc) - allowed
    if unknown:
        raise RecipeError(f"plan: unknown fields {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise RecipeError(f"plan: missing fields {sorted(missing)}")
    rb = doc["round_budgets"]
    budgets = Budgets(
        local_epsilon=float(rb["local_epsilon"]),
        aggregate_epsilon=float(rb["aggregate_epsilon"]),
        delta=float(rb["delta"]),
        min_cohort=int(rb["min_cohort"]),
    )
    return DiscoveryPlan(
        analysis_id=doc["analysis_id"],
        stream=doc["stream"],
        field=doc["field"],
        vocab=tuple(doc["vocab"]),
        max_ngram_len=int(doc["max_ngram_len"]),
        round_budgets=budgets,
        total_epsilon=float(doc["total_epsilon"]),
        total_delta=float(doc["total_delta"]),
        tau=float(doc.get("tau", 3.0)),
    )


@dataclass
class AnalysisSession:
    analysis_id: str
    plan: DiscoveryPlan
    status: str = "idle"  # idle | round-running | gated | exhausted | done
    rounds: dict[str, object] = field(default_factory=dict)  # token -> outcome | "pending"
    order: list[str] = field(default_factory=list)
    ledger: CompositionLedger = field(default_factory=CompositionLedger)
    levels: list[list[tuple[tuple[str, ...], float]]] = field(default_factory=list)
    terminal: list[tuple[tuple[str, ...], float]] = field(default_factory=list)
    last_selection: FrequentSelection | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def next_token(self) -> str:
        return f"round-{len(self.order) + 1}"

    def published_rounds(self) -> int:
        return sum(1 for o in self.rounds.values() if isinstance(o, RoundResult))

    def state_doc(self) -> dict:
        total_eps, total_delta = compose_basic(self.ledger)
        return {
            "analysis_id": self.analysis_id,
            "status": self.status,
            "rounds_submitted": len(self.order),
            "accepted": [
                {"length": level + 1, "prefix": list(p), "estimate": est}
                for level, entries in enumerate(self.levels)
                for p, est in entries
            ],
            "terminal": [{"prefix": list(p), "estimate": est} for p, est in self.terminal],
            "ledger": {
                "entries": [[e, d] for e, d in self.ledger.entries],
                "total_epsilon": total_eps,
                "total_delta": total_delta,
            },
            "plan": {
                "max_ngram_len": self.plan.max_ngram_len,
                "tau": self.plan.tau,
                "total_epsilon": self.plan.total_epsilon,
                "total_delta": self.plan.total_delta,
                "round_budgets": {
                    "local_epsilon": self.plan.round_budgets.local_epsilon,
                    "aggregate_epsilon": self.plan.round_budgets.aggregate_epsilon,
                    "delta": self.plan.round_budgets.delta,
                    "min_cohort": self.plan.round_budgets.min_cohort,
                },
                "vocab": list(self.plan.vocab),
            },
        }


class AnalystServer:
    """In-memory session store bound to one simulated fleet."""

    def __init__(
        self,
        fleet,
        trust_config,
        *,
        global_max_epsilon: float = 50.0,
        global_max_delta: float = 0.05,
        global_max_rounds: int = 16,
        auth_token: str | None = None,
        synchronous: bool = False,
    ) -> None:
        self.fleet = fleet
        self.trust_config = trust_config
        self.global_max_epsilon = global_max_epsilon
        self.global_max_delta = global_max_delta
        self.global_max_rounds = global_max_rounds
        self.auth_token = auth_token
        self.synchronous = synchronous
        self.sessions: dict[str, AnalysisSession] = {}
        self._lock = threading.Lock()

    def create_analysis(self, plan: DiscoveryPlan) -> AnalysisSession:
        if plan.total_epsilon > self.global_max_epsilon or plan.total_delta > self.global_max_delta:
            raise ApiError(403, "plan-exceeds-global-budget")
        if plan.max_ngram_len > self.global_max_rounds:
            raise ApiError(403, "plan-exceeds-global-rounds")
        if self.trust_config.rules_for(plan.analysis_id) is None:
            raise ApiError(403, "analysis-prefix-unknown")
        with self._lock:
            if plan.analysis_id in self.sessions:
                raise ApiError(409, "analysis-exists")
            session = AnalysisSession(analysis_id=plan.analysis_id, plan=plan)
            self.sessions[plan.analysis_id] = session
        return session

    def session(self, analysis_id: str) -> AnalysisSession:
        session = self.sessions.get(analysis_id)
        if session is None:
            raise ApiError(404, "analysis-not-found")
        return session

    def _build_auto_recipe(self, session: AnalysisSession) -> Recipe:
        next_length = len(session.levels) + 1
        if next_length == 1:
            return initial_recipe(session.plan)
        if session.last_selection is None or not session.last_selection.extendable:
            raise ApiError(409, "empty-frequent-set")
        return extend_prefixes(session.last_selection, session.plan, next_length)

    def submit_round(self, analysis_id: str, body: dict) -> str:
        session = self.session(analysis_id)
        with session.lock:
            if session.status == "round-running":
                raise ApiError(409, "round-running")
            if session.status in ("done", "exhausted"):
                raise ApiError(403, f"analysis-{session.status}")
            if not plan_allows_next_round(session.plan, session.ledger):
                session.status = "exhausted"
                raise ApiError(403, "plan-budget-exceeded")
            if body.get("auto_extend"):
                recipe = self._build_auto_recipe(session)
            else:
                if "recipe" not in body:
                    raise ApiError(400, "missing-recipe")
                try:
                    recipe = parse_recipe(body["recipe"])
                except RecipeError as exc:
                    raise ApiError(400, "recipe-parse-error", str(exc)) from exc
            verdict = verify_query_class(recipe, self.trust_config)
            if not verdict.approved:
                raise ApiError(403, verdict.reason)
            if recipe.budgets.aggregate_epsilon > session.plan.round_budgets.aggregate_epsilon or (
                recipe.budgets.delta > session.plan.round_budgets.delta
            ):
                raise ApiError(403, "recipe-exceeds-round-budget")
            token = session.next_token()
            session.order.append(token)
            session.rounds[token] = "pending"
            session.status = "round-running"
        if self.synchronous:
            self._execute(session, token, recipe)
        else:
            thread = threading.Thread(target=self._execute, args=(session, token, recipe), daemon=True)
            thread.start()
        return token

    def _execute(self, session: AnalysisSession, token: str, recipe: Recipe) -> None:
        try:
            outcome = run_round(
                recipe, self.fleet, self.trust_config, ledger=session.ledger
            )
        except Exception as exc:  # noqa: BLE001 - surfaced through the poll endpoint
            with session.lock:
                session.rounds[token] = EngineError(str(exc))
                session.status = "idle"
            return
        with session.lock:
            session.rounds[token] = outcome
            if isinstance(outcome, GatedRound):
                session.status = "gated"
                return
            try:
                selection = select_frequent(outcome, session.plan.tau)
            except EngineError:
                selection = None  # multi-feature recipe: nothing to extend
            if selection is not None:
                session.last_selection = selection
                session.levels.append(
                    [(prefix + (word,), est) for prefix, word, est in selection.extendable]
                )
                session.terminal.extend(selection.terminal)
            if len(session.levels) >= session.plan.max_ngram_len or (
                selection is not None and not selection.extendable
            ):
                session.status = "done"
            elif not plan_allows_next_round(session.plan, session.ledger):
                session.status = "exhausted"
            else:
                session.status = "idle"

    def round_doc(self, analysis_id: str, token: str) -> dict:
        session = self.session(analysis_id)
        with session.lock:
            if token not in session.rounds:
                raise ApiError(404, "round-not-found")
            outcome = session.rounds[token]
        if outcome == "pending":
            return {"status": "pending"}
        if isinstance(outcome, EngineError):
            return {"status": "failed", "code": str(outcome)}
        if isinstance(outcome, GatedRound):
            # the received count stays withheld below the gate
            return {
                "status": "gated",
                "recipe_id": outcome.recipe_id,
                "min_cohort": outcome.min_cohort,
                "reason": "insufficient",
            }
        return {"status": "published", "result": outcome.to_doc()}

    def budget_doc(self, analysis_id: str) -> dict:
        session = self.session(analysis_id)
        snapshots = self.fleet.budget_snapshots()
        rules = self.trust_config.rules_for(analysis_id)
        per_device = [snap[rules.prefix] for snap in snapshots if rules.prefix in snap]
        consistent = all(s == per_device[0] for s in per_device[1:]) if per_device else True
        common = per_device[0] if per_device else {"analysis": {}, "fields": {}}
        charged_eps, charged_delta = compose_basic(session.ledger)
        return {
            "analysis_id": analysis_id,
            "devices": len(per_device),
            "consistent": consistent,
            "analysis": common["analysis"],
            "fields": common["fields"],
            "engine_ledger": {
                "charged_epsilon": charged_eps,
                "charged_delta": charged_delta,
                "rounds": len(session.ledger),
            },
        }


def create_app(server: AnalystServer) -> FastAPI:
    app = FastAPI(title="fedstats analyst API", version="1")

    def authorized(authorization: str | None = Header(default=None)) -> None:
        if server.auth_token is None:
            return
        if authorization != f"Bearer {server.auth_token}":
            raise ApiError(401, "unauthorized")

    @app.exception_handler(ApiError)
    async def _api_error(request, exc: ApiError):  # noqa: ANN001
        return JSONResponse(status_code=exc.status_code, content={"error": exc.detail})

    @app.post("/v1/analyses", status_code=201)
    def create_analysis(body: dict, _=Depends(authorized)):
        try:
            plan = parse_plan(body)
        except (RecipeError, KeyError, TypeError, ValueError) as exc:
            raise ApiError(400, "plan-parse-error", str(exc)) from exc
        session = server.create_analysis(plan)
        return {"analysis_id": session.analysis_id}

    @app.post("/v1/analyses/{analysis_id}/rounds", status_code=202)
    def submit_round(analysis_id: str, body: dict, _=Depends(authorized)):
        token = server.submit_round(analysis_id, body)
        return {"round_token": token}

    @app.get("/v1/analyses/{analysis_id}/rounds/{token}")
    def get_round(analysis_id: str, token: str, _=Depends(authorized)):
        return server.round_doc(analysis_id, token)

    @app.get("/v1/analyses/{analysis_id}/budget")
    def get_budget(analysis_id: str, _=Depends(authorized)):
        return server.budget_doc(analysis_id)

    @app.get("/v1/analyses/{analysis_id}/state")
    def get_state(analysis_id: str, _=Depends(authorized)):
        return server.session(analysis_id).state_doc()

    return app
