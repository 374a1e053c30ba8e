"""HTTP JSON API for designing and conducting trials.

All statistical output served here is computed by the trial/posterior
modules; clients (including the bundled UI) only render it. Errors use a
single envelope {code, message, detail} whose code fixes the HTTP status.
"""

from __future__ import annotations

import numpy as np
from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse

from . import trial
from .errors import (
    ConfigError,
    ConflictError,
    DomainError,
    EstimateUnavailableError,
    EwocError,
    NotFoundError,
    TrialHaltedError,
)
from .store import TrialRecord, TrialStore
from .trial import TrialState

__all__ = ["create_app", "CODE_STATUS"]

CODE_STATUS = {
    "not_found": 404,
    "conflict": 409,
    "invalid_config": 422,
    "trial_halted": 409,
    "bad_request": 400,
    "unauthorized": 401,
}


def _error(code: str, message: str, detail=None) -> JSONResponse:
    body = {"code": code, "message": message}
    if detail is not None:
        body["detail"] = detail
    return JSONResponse(status_code=CODE_STATUS[code], content=body)


def _translate(exc: Exception) -> JSONResponse:
    if isinstance(exc, ConfigError):
        return _error("invalid_config", "configuration failed validation",
                      detail=exc.field_errors)
    if isinstance(exc, TrialHaltedError):
        return _error("trial_halted", str(exc))
    if isinstance(exc, ConflictError):
        return _error("conflict", str(exc))
    if isinstance(exc, NotFoundError):
        return _error("not_found", f"trial {exc.args[0]!r} not found")
    if isinstance(exc, (DomainError, EstimateUnavailableError)):
        return _error("bad_request", str(exc))
    raise exc


def _patient_view(p) -> dict:
    return {
        "patient_id": p.patient_id,
        "dose": p.dose,
        "covariates": list(p.covariates),
        "status": "resolved" if p.resolved else "pending",
        "dlt": p.dlt,
        "recommended": p.recommended,
        "advisory": p.advisory,
    }


def _trial_view(record: TrialRecord) -> dict:
    state = record.state
    return {
        "id": record.id,
        "label": state.config.label,
        "created_at": record.created_at,
        "updated_at": record.updated_at,
        "version": state.version,
        "halted": state.halted,
        "halt_reason": state.halt_reason,
        "alpha": trial.alpha_at(state),
        "resolved_count": state.resolved_count,
        "covariate_dim": state.config.covariate_dim,
        "config": trial.config_to_dict(state.config),
        "patients": [_patient_view(p) for p in state.patients],
    }


def _marginal_for(state: TrialState, w):
    return trial.posterior_for(state).mtd_marginal(w if w else None)


def _summaries_payload(marg) -> dict:
    return {
        "mean": marg.mean(),
        "sd": marg.sd(),
        "mode": marg.mode(),
        "median": marg.median(),
        "hpd95": list(marg.hpd(0.95)),
    }


def _recommendation_payload(state: TrialState, w) -> dict:
    continuous = trial.recommend_continuous(state, w if w else None)
    payload: dict = {
        "alpha": trial.alpha_at(state),
        "continuous": continuous,
        "snapped": None,
        "advisory": False,
    }
    if state.config.dose_levels is not None:
        snapped = trial.snap_discrete(continuous, state, w if w else None)
        payload["snapped"] = snapped.dose
        payload["advisory"] = snapped.fallback
    marg = _marginal_for(state, w)
    payload["hpd95"] = list(marg.hpd(0.95))
    payload["posterior"] = _summaries_payload(marg)
    return payload


def _parse_covariates(state: TrialState, raw: str | None):
    dim = state.config.covariate_dim
    if raw is None or raw == "":
        if dim > 0:
            raise DomainError(f"this trial requires {dim} covariate value(s)")
        return None
    try:
        values = tuple(float(v) for v in raw.split(","))
    except ValueError:
        raise DomainError(f"could not parse covariates {raw!r}") from None
    if dim == 0:
        raise DomainError("this trial has no covariates")
    return values


def _mtd_curve(state: TrialState, samples: int = 41) -> dict:
    """Conditional-MTD quantile band across the covariate range, evaluated on a
    mass-weighted resample of the posterior support (server-side only)."""
    cov = state.config.covariates
    grid = trial.posterior_for(state)
    masses = grid.masses()
    rng = np.random.default_rng(0)
    take = min(20_000, masses.size)
    idx = rng.choice(masses.size, size=take, p=masses)
    sup = grid._support
    ws = np.linspace(cov.c_lo, cov.c_hi, samples)
    rows = {"w": ws.tolist(), "median": [], "lo": [], "hi": []}
    group = (cov.group_levels[0],) if cov.group_levels is not None else ()
    for w in ws:
        values = sup.mtd_values((float(w),) + group)[idx]
        lo, med, hi = np.quantile(values, [0.025, 0.5, 0.975])
        rows["lo"].append(float(lo))
        rows["median"].append(float(med))
        rows["hi"].append(float(hi))
    return rows


def create_app(store: TrialStore, token: str | None = None,
               static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="ewoc", docs_url=None, redoc_url=None)

    if token:
        @app.middleware("http")
        async def _auth(request: Request, call_next):
            if request.url.path.startswith("/api/"):
                header = request.headers.get("authorization", "")
                if header != f"Bearer {token}":
                    return _error("unauthorized", "missing or invalid bearer token")
            return await call_next(request)

    @app.post("/api/trials")
    def create_trial(body: dict = Body(...)):
        try:
            config = trial.config_from_dict(body.get("config", body))
            covariates = body.get("covariates")
            record = store.create(config, covariates=tuple(covariates) if covariates else None)
        except EwocError as exc:
            return _translate(exc)
        view = _trial_view(record)
        view["first_dose"] = record.state.patients[0].dose
        return view

    @app.get("/api/trials")
    def list_trials():
        return [
            {
                "id": r.id,
                "label": r.state.config.label,
                "version": r.state.version,
                "halted": r.state.halted,
                "patients": len(r.state.patients),
                "resolved_count": r.state.resolved_count,
                "created_at": r.created_at,
                "updated_at": r.updated_at,
            }
            for r in store.list_records()
        ]

    @app.get("/api/trials/{trial_id}")
    def get_trial(trial_id: str):
        try:
            return _trial_view(store.get(trial_id))
        except EwocError as exc:
            return _translate(exc)

    @app.post("/api/trials/{trial_id}/patients")
    def enroll(trial_id: str, body: dict = Body(default={})):
        try:
            covariates = body.get("covariates")
            record = store.enroll(
                trial_id,
                covariates=tuple(covariates) if covariates else None,
                expected_version=body.get("expected_version"),
            )
        except EwocError as exc:
            return _translate(exc)
        view = _trial_view(record)
        view["patient"] = _patient_view(record.state.patients[-1])
        return view

    @app.post("/api/trials/{trial_id}/patients/{patient_id}/outcome")
    def post_outcome(trial_id: str, patient_id: str, body: dict = Body(...)):
        try:
            if "dlt" not in body:
                raise DomainError("body must include dlt (0 or 1)")
            record = store.resolve(
                trial_id, patient_id, int(body["dlt"]),
                expected_version=body.get("expected_version"),
            )
        except EwocError as exc:
            return _translate(exc)
        state = record.state
        payload = {
            "id": record.id,
            "version": state.version,
            "halted": state.halted,
            "halt_reason": state.halt_reason,
            "alpha": trial.alpha_at(state),
            "resolved_count": state.resolved_count,
            "patient": _patient_view(state.patient(patient_id)),
            "recommendation": None,
        }
        if not state.halted:
            if state.config.covariate_dim == 0:
                payload["recommendation"] = _recommendation_payload(state, None)
            else:
                ref = state.config.covariates.reference()
                marg = _marginal_for(state, ref)
                payload["posterior_at_reference"] = _summaries_payload(marg)
        return payload

    @app.get("/api/trials/{trial_id}/recommendation")
    def get_recommendation(trial_id: str, covariates: str | None = None):
        try:
            record = store.get(trial_id)
            state = record.state
            if state.halted:
                raise TrialHaltedError(f"trial halted: {state.halt_reason}")
            w = _parse_covariates(state, covariates)
            trial._check_covariates(state.config, w if w else None, "recommendation")
            if state.resolved_count == 0 and state.patients:
                # nobody can be enrolled until patient 1 resolves; the dose to
                # give now is patient 1's protocol-fixed assignment
                first = state.patients[0]
                marg = _marginal_for(state, w)
                payload = {
                    "alpha": trial.alpha_at(state),
                    "continuous": first.dose,
                    "snapped": None,
                    "advisory": False,
                    "protocol_first_dose": True,
                    "for_patient": first.patient_id,
                    "hpd95": list(marg.hpd(0.95)),
                    "posterior": _summaries_payload(marg),
                }
            else:
                payload = _recommendation_payload(state, w)
        except EwocError as exc:
            return _translate(exc)
        payload["id"] = record.id
        payload["version"] = record.state.version
        payload["covariates"] = list(w) if w else []
        return payload

    @app.get("/api/trials/{trial_id}/posterior")
    def get_posterior(trial_id: str, covariates: str | None = None, samples: int = 201,
                      curve_samples: int = 41):
        try:
            record = store.get(trial_id)
            state = record.state
            if state.config.covariate_dim > 0:
                w = (_parse_covariates(state, covariates)
                     if covariates else state.config.covariates.reference())
                trial._check_covariates(state.config, w, "posterior query")
            else:
                w = _parse_covariates(state, covariates)
            marg = _marginal_for(state, w)
            xs, ys = marg.density_samples(max(2, min(2001, samples)))
            payload = {
                "id": record.id,
                "version": state.version,
                "n_obs": state.resolved_count,
                "covariates": list(w) if w else [],
                "density": {"dose": xs.tolist(), "density": ys.tolist()},
                "summaries": _summaries_payload(marg),
            }
            if state.config.covariate_dim > 0:
                payload["mtd_curve"] = _mtd_curve(state, max(2, min(201, curve_samples)))
        except EwocError as exc:
            return _translate(exc)
        return payload

    @app.get("/api/trials/{trial_id}/export")
    def export(trial_id: str):
        try:
            return store.export(trial_id)
        except EwocError as exc:
            return _translate(exc)

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
