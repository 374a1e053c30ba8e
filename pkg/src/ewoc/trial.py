"""Sequential dose-escalation state machine.

A trial is an immutable value: every mutation (enroll, resolve, halt) yields
a new state with the version bumped by one, and the full event log can be
re-derived from any state for audit and replay. Dose recommendations are the
posterior alpha-quantile of the MTD given the resolved observations only;
pending patients never influence a recommendation.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, replace
from typing import NamedTuple

from .errors import (
    ConfigError,
    ConflictError,
    DomainError,
    EstimateUnavailableError,
    EwocError,
    TrialHaltedError,
)
from .models import DesignConstants, Link, OneParamDesign, mtd_one_param
from .posterior import (
    CovariateSpec,
    Observation,
    PosteriorGrid,
    PriorKind,
    PriorSpec,
    build_posterior,
    with_observation,
)

__all__ = [
    "AlphaSchedule",
    "SnapTolerances",
    "TrialConfig",
    "PatientRecord",
    "TrialState",
    "MtdEstimate",
    "SnappedDose",
    "start_trial",
    "enroll_patient",
    "alpha_at",
    "record_outcome",
    "recommend_continuous",
    "snap_discrete",
    "final_mtd",
    "posterior_for",
    "state_to_events",
    "events_since",
    "replay_events",
    "config_to_dict",
    "config_from_dict",
    "validate_config",
]

HALT_FIRST_PATIENT_DLT = "first-patient-dlt"


@dataclass(frozen=True)
class AlphaSchedule:
    """Feasibility bound as a function of resolved patient count.

    Stays at ``start`` for the first ``hold_count`` resolved patients, then
    grows by ``increment`` per additional resolution, capped at ``cap``.
    ``increment=0`` is the fixed-alpha design.
    """

    start: float
    increment: float = 0.0
    cap: float = 0.5
    hold_count: int = 0

    def at(self, resolved_count: int) -> float:
        if resolved_count <= self.hold_count or self.increment == 0.0:
            return self.start
        return min(self.cap, self.start + self.increment * (resolved_count - self.hold_count))


@dataclass(frozen=True)
class SnapTolerances:
    """Discrete snapping tolerances: max dose overshoot above the continuous
    recommendation, and max cdf excess over the feasibility bound."""

    dose: float = 0.0
    cdf: float = 0.05


@dataclass(frozen=True)
class TrialConfig:
    constants: DesignConstants
    prior: PriorSpec
    alpha: AlphaSchedule
    dose_levels: tuple[float, ...] | None = None
    tolerances: SnapTolerances | None = None
    halt_on_first_dlt: bool = True
    resolution: tuple[int, ...] | None = None
    label: str = ""

    @property
    def covariates(self) -> CovariateSpec | None:
        return self.prior.covariates

    @property
    def covariate_dim(self) -> int:
        return self.prior.covariate_dim


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    dose: float
    covariates: tuple[float, ...] = ()
    dlt: int | None = None
    recommended: float | None = None  # continuous recommendation before snapping
    advisory: bool = False  # snap fell back to the lowest level
    assigned_version: int = 0
    resolved_version: int | None = None

    @property
    def resolved(self) -> bool:
        return self.dlt is not None


@dataclass(frozen=True)
class TrialState:
    config: TrialConfig
    patients: tuple[PatientRecord, ...] = ()
    resolved_order: tuple[str, ...] = ()
    halted: bool = False
    halt_reason: str | None = None
    halt_version: int | None = None
    version: int = 0

    @property
    def resolved_count(self) -> int:
        return len(self.resolved_order)

    def patient(self, patient_id: str) -> PatientRecord:
        for p in self.patients:
            if p.patient_id == patient_id:
                return p
        raise ConflictError(f"unknown patient {patient_id!r}")

    def resolved_observations(self) -> tuple[Observation, ...]:
        cached = self.__dict__.get("_resolved_obs")
        if cached is None:
            by_id = {p.patient_id: p for p in self.patients}
            cached = tuple(
                Observation(dose=by_id[pid].dose, dlt=by_id[pid].dlt,
                            covariates=by_id[pid].covariates, patient_id=pid)
                for pid in self.resolved_order
            )
            object.__setattr__(self, "_resolved_obs", cached)
        return cached


class SnappedDose(NamedTuple):
    dose: float
    fallback: bool  # no level satisfied the tolerances; lowest level returned


@dataclass(frozen=True)
class MtdEstimate:
    point: float
    hpd95: tuple[float, float]
    alpha_used: float
    loss_risk: float


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------

def validate_config(config: TrialConfig) -> None:
    """Raise ConfigError with per-field messages if the config is inconsistent."""
    errors: dict[str, str] = {}
    c = config.constants
    a = config.alpha
    if not (0.0 < a.start <= a.cap):
        errors["alpha.start"] = f"need 0 < start <= cap, got start={a.start}, cap={a.cap}"
    if not (a.cap < 1.0):
        errors["alpha.cap"] = f"cap must be below 1, got {a.cap}"
    if a.increment < 0.0:
        errors["alpha.increment"] = f"increment must be nonnegative, got {a.increment}"
    if a.hold_count < 0:
        errors["alpha.hold_count"] = f"hold_count must be nonnegative, got {a.hold_count}"
    if config.dose_levels is not None:
        levels = config.dose_levels
        if len(levels) == 0:
            errors["dose_levels"] = "at least one dose level required"
        elif any(b <= a_ for a_, b in zip(levels, levels[1:])):
            errors["dose_levels"] = "levels must be strictly increasing"
        elif not (c.x_min <= levels[0] and levels[-1] <= c.x_max):
            errors["dose_levels"] = (
                f"levels must lie within [{c.x_min}, {c.x_max}], got {levels}"
            )
        if config.tolerances is None:
            errors["tolerances"] = "tolerances are required when dose_levels are configured"
        else:
            if config.tolerances.dose < 0.0:
                errors["tolerances.dose"] = "dose tolerance must be nonnegative"
            if config.tolerances.cdf < 0.0:
                errors["tolerances.cdf"] = "cdf tolerance must be nonnegative"
    if config.prior.constants != c:
        errors["prior.constants"] = "prior constants differ from the trial constants"
    if config.resolution is not None:
        if any(r < 21 for r in config.resolution):
            errors["resolution"] = "resolution must be at least 21 per axis"
    if errors:
        raise ConfigError(errors)


# ---------------------------------------------------------------------------
# posterior cache
# ---------------------------------------------------------------------------

_POSTERIOR_CACHE: OrderedDict = OrderedDict()
_POSTERIOR_CACHE_MAX = 64
_POSTERIOR_CACHE_MAX_LARGE = 6  # grids above ~10^5 nodes are tens of MB each


def _cached_posterior(prior: PriorSpec, resolution, obs: tuple[Observation, ...]) -> PosteriorGrid:
    sig = tuple((o.dose, o.dlt, o.covariates) for o in obs)
    key = (prior, resolution, sig)
    grid = _POSTERIOR_CACHE.get(key)
    if grid is not None:
        _POSTERIOR_CACHE.move_to_end(key)
        return grid
    if obs:
        prev = _cached_posterior(prior, resolution, obs[:-1])
        grid = with_observation(prev, obs[-1])
    else:
        grid = build_posterior(prior, (), resolution)
    _POSTERIOR_CACHE[key] = grid
    cap = _POSTERIOR_CACHE_MAX if grid.log_weights.size <= 100_000 else _POSTERIOR_CACHE_MAX_LARGE
    while len(_POSTERIOR_CACHE) > cap:
        _POSTERIOR_CACHE.popitem(last=False)
    return grid


def posterior_for(state: TrialState) -> PosteriorGrid:
    """Posterior over the resolved observations, folded in resolution order."""
    grid = state.__dict__.get("_posterior")
    if grid is None:
        grid = _cached_posterior(state.config.prior, state.config.resolution,
                                 state.resolved_observations())
        object.__setattr__(state, "_posterior", grid)
    return grid


# ---------------------------------------------------------------------------
# state machine
# ---------------------------------------------------------------------------

def _first_dose(config: TrialConfig) -> float:
    if config.dose_levels is not None:
        return config.dose_levels[0]
    if PriorKind(config.prior.kind) is PriorKind.UNIFORM_1P:
        # lowest dose any slope in the prior support could name as the MTD
        return float(mtd_one_param(config.prior.one_param.beta_lo, config.prior.one_param))
    return config.constants.x_min


def _check_covariates(config: TrialConfig, w, what: str) -> tuple[float, ...]:
    dim = config.covariate_dim
    if dim == 0:
        if w not in (None, ()):
            raise DomainError(f"{what}: this trial has no covariates")
        return ()
    if w is None or len(w) != dim:
        got = 0 if w is None else len(w)
        raise DomainError(f"{what}: expected {dim} covariate value(s), got {got}")
    w = tuple(float(v) for v in w)
    cov = config.covariates
    if not (cov.c_lo <= w[0] <= cov.c_hi):
        raise DomainError(
            f"{what}: {cov.name}={w[0]} outside [{cov.c_lo}, {cov.c_hi}]"
        )
    if dim == 2 and w[1] not in cov.group_levels:
        raise DomainError(
            f"{what}: {cov.group_name}={w[1]} not one of {cov.group_levels}"
        )
    return w


def start_trial(config: TrialConfig, covariates=None) -> TrialState:
    """Validate the configuration and enroll patient 1 at the protocol dose."""
    validate_config(config)
    w = _check_covariates(config, covariates, "patient 1")
    record = PatientRecord(patient_id="p1", dose=_first_dose(config), covariates=w,
                           assigned_version=1)
    return TrialState(config=config, patients=(record,), version=1)


def alpha_at(state: TrialState) -> float:
    """Feasibility bound currently in force, from the resolved patient count."""
    return state.config.alpha.at(state.resolved_count)


def recommend_continuous(state: TrialState, w=None) -> float:
    """Posterior alpha-quantile of the MTD, clamped to the allowed dose range."""
    if state.halted:
        raise TrialHaltedError(f"trial halted: {state.halt_reason}")
    w = _check_covariates(state.config, w, "recommendation")
    grid = posterior_for(state)
    q = grid.mtd_marginal(w if w else None).quantile(alpha_at(state))
    c = state.config.constants
    return float(min(c.x_max, max(c.x_min, q)))


def snap_discrete(x: float, state: TrialState, w=None) -> SnappedDose:
    """Highest configured level within the dose tolerance of ``x`` whose
    posterior overdose probability exceeds the bound by at most the cdf
    tolerance; lowest level (flagged) when none qualifies."""
    config = state.config
    if config.dose_levels is None:
        raise DomainError("no discrete dose levels configured")
    w = _check_covariates(config, w, "snap")
    marg = posterior_for(state).mtd_marginal(w if w else None)
    alpha = alpha_at(state)
    t1, t2 = config.tolerances.dose, config.tolerances.cdf
    best = None
    for d in config.dose_levels:
        if d - x <= t1 and marg.cdf(d) - alpha <= t2:
            best = d
    if best is None:
        return SnappedDose(dose=config.dose_levels[0], fallback=True)
    return SnappedDose(dose=best, fallback=False)


def enroll_patient(state: TrialState, covariates=None) -> TrialState:
    """Add the next patient at the currently recommended (optionally snapped) dose."""
    if state.halted:
        raise TrialHaltedError(f"trial halted: {state.halt_reason}")
    if state.patients and state.resolved_count == 0:
        raise ConflictError("patient 1 must be resolved before enrolling another patient")
    w = _check_covariates(state.config, covariates, "enrollment")
    continuous = recommend_continuous(state, w if w else None)
    advisory = False
    dose = continuous
    if state.config.dose_levels is not None:
        snapped = snap_discrete(continuous, state, w if w else None)
        dose, advisory = snapped.dose, snapped.fallback
    record = PatientRecord(
        patient_id=f"p{len(state.patients) + 1}",
        dose=dose,
        covariates=w,
        recommended=continuous,
        advisory=advisory,
        assigned_version=state.version + 1,
    )
    return replace(state, patients=state.patients + (record,), version=state.version + 1)


def record_outcome(state: TrialState, patient_id: str, dlt: int) -> TrialState:
    """Resolve a pending patient's DLT assessment."""
    if state.halted:
        raise TrialHaltedError(f"trial halted: {state.halt_reason}")
    if dlt not in (0, 1):
        raise DomainError(f"dlt must be 0 or 1, got {dlt!r}")
    target = state.patient(patient_id)
    if target.resolved:
        raise ConflictError(f"patient {patient_id!r} is already resolved")
    version = state.version + 1
    patients = tuple(
        replace(p, dlt=int(dlt), resolved_version=version)
        if p.patient_id == patient_id else p
        for p in state.patients
    )
    new = replace(
        state,
        patients=patients,
        resolved_order=state.resolved_order + (patient_id,),
        version=version,
    )
    is_first_patient = state.patients[0].patient_id == patient_id
    if dlt and is_first_patient and state.config.halt_on_first_dlt:
        version += 1
        new = replace(new, halted=True, halt_reason=HALT_FIRST_PATIENT_DLT,
                      halt_version=version, version=version)
    return new


def final_mtd(state: TrialState, w=None) -> MtdEstimate:
    """MTD estimate minimising the posterior expected asymmetric loss.

    The point estimate is the alpha-quantile of the final posterior; the
    attached risk is the posterior expected loss at that point. For covariate
    trials the estimate refers to the reference covariate unless ``w`` is given.
    """
    if state.resolved_count == 0:
        raise EstimateUnavailableError("no resolved observations")
    if state.halted and state.resolved_count == 1 and state.patients[0].dlt == 1:
        raise EstimateUnavailableError(
            "trial halted on a first-patient DLT; no estimate is defined"
        )
    if w is None and state.config.covariate_dim > 0:
        w = state.config.covariates.reference()
    w = _check_covariates(state.config, w, "estimate")
    marg = posterior_for(state).mtd_marginal(w if w else None)
    alpha = alpha_at(state)
    point = marg.quantile(alpha)
    c = state.config.constants
    point = float(min(c.x_max, max(c.x_min, point)))
    return MtdEstimate(
        point=point,
        hpd95=marg.hpd(0.95),
        alpha_used=alpha,
        loss_risk=marg.expected_loss(point, alpha),
    )


# ---------------------------------------------------------------------------
# event log
# ---------------------------------------------------------------------------

def state_to_events(state: TrialState) -> list[dict]:
    """Chronological event list {assign, resolve, halt}; replay reproduces the state."""
    events: list[dict] = []
    for p in state.patients:
        events.append({
            "type": "assign",
            "version": p.assigned_version,
            "patient_id": p.patient_id,
            "dose": p.dose,
            "covariates": list(p.covariates),
            "recommended": p.recommended,
            "advisory": p.advisory,
        })
        if p.resolved:
            events.append({
                "type": "resolve",
                "version": p.resolved_version,
                "patient_id": p.patient_id,
                "dlt": p.dlt,
            })
    if state.halted:
        events.append({
            "type": "halt",
            "version": state.halt_version,
            "reason": state.halt_reason,
        })
    events.sort(key=lambda e: e["version"])
    return events


def events_since(state: TrialState, version: int) -> list[dict]:
    """Events newer than ``version`` (what a store must append after a mutation)."""
    return [e for e in state_to_events(state) if e["version"] > version]


def replay_events(config: TrialConfig, events: list[dict]) -> TrialState:
    """Rebuild a state from its event log.

    Recorded doses are trusted verbatim; nothing is recomputed, so a replayed
    state is field-for-field identical to the state that emitted the log.
    """
    state = TrialState(config=config)
    patients: list[PatientRecord] = []
    resolved: list[str] = []
    halted, halt_reason, halt_version = False, None, None
    version = 0
    for e in events:
        version = int(e["version"])
        if e["type"] == "assign":
            patients.append(PatientRecord(
                patient_id=e["patient_id"],
                dose=float(e["dose"]),
                covariates=tuple(e.get("covariates") or ()),
                recommended=e.get("recommended"),
                advisory=bool(e.get("advisory", False)),
                assigned_version=version,
            ))
        elif e["type"] == "resolve":
            for i, p in enumerate(patients):
                if p.patient_id == e["patient_id"]:
                    patients[i] = replace(p, dlt=int(e["dlt"]), resolved_version=version)
                    break
            else:
                raise ConflictError(f"resolve event for unknown patient {e['patient_id']!r}")
            resolved.append(e["patient_id"])
        elif e["type"] == "halt":
            halted, halt_reason, halt_version = True, e.get("reason"), version
        else:
            raise DomainError(f"unknown event type {e['type']!r}")
    return replace(state, patients=tuple(patients), resolved_order=tuple(resolved),
                   halted=halted, halt_reason=halt_reason, halt_version=halt_version,
                   version=version)


# ---------------------------------------------------------------------------
# config (de)serialization
# ---------------------------------------------------------------------------

def config_to_dict(config: TrialConfig) -> dict:
    prior = config.prior
    doc: dict = {
        "label": config.label,
        "constants": {
            "theta": config.constants.theta,
            "x_min": config.constants.x_min,
            "x_max": config.constants.x_max,
            "epsilon": config.constants.epsilon,
            "link": config.constants.link.value,
        },
        "prior": {"kind": PriorKind(prior.kind).value},
        "alpha": {
            "start": config.alpha.start,
            "increment": config.alpha.increment,
            "cap": config.alpha.cap,
            "hold_count": config.alpha.hold_count,
        },
        "halt_on_first_dlt": config.halt_on_first_dlt,
    }
    if PriorKind(prior.kind) is PriorKind.UNIFORM_1P:
        d = prior.one_param
        doc["prior"].update({"beta_lo": d.beta_lo, "beta_hi": d.beta_hi,
                             "x_floor": d.x_floor, "x_ceil": d.x_ceil})
    if PriorKind(prior.kind) is PriorKind.UNIFORM_COV4:
        doc["prior"].update({"mc_draws": prior.mc_draws, "mc_seed": prior.mc_seed})
    if prior.covariates is not None:
        cov = prior.covariates
        doc["covariates"] = {"name": cov.name, "c_lo": cov.c_lo, "c_hi": cov.c_hi}
        if cov.group_levels is not None:
            doc["covariates"]["group_name"] = cov.group_name
            doc["covariates"]["group_levels"] = list(cov.group_levels)
    if config.dose_levels is not None:
        doc["dose_levels"] = list(config.dose_levels)
        doc["tolerances"] = {"dose": config.tolerances.dose, "cdf": config.tolerances.cdf}
    if config.resolution is not None:
        doc["resolution"] = list(config.resolution)
    return doc


def _field(errors: dict, doc: dict, path: str, key: str, kind, default=None, required=False):
    value = doc.get(key, default)
    if value is None:
        if required:
            errors[f"{path}{key}"] = "required"
        return None
    try:
        return kind(value)
    except (TypeError, ValueError):
        errors[f"{path}{key}"] = f"expected {kind.__name__}, got {value!r}"
        return None


def config_from_dict(doc: dict) -> TrialConfig:
    """Parse and validate a configuration document; collects field errors."""
    errors: dict[str, str] = {}
    if not isinstance(doc, dict):
        raise ConfigError({"": "configuration must be a JSON object"})

    cdoc = doc.get("constants")
    constants = None
    if not isinstance(cdoc, dict):
        errors["constants"] = "required object"
    else:
        theta = _field(errors, cdoc, "constants.", "theta", float, required=True)
        x_min = _field(errors, cdoc, "constants.", "x_min", float, required=True)
        x_max = _field(errors, cdoc, "constants.", "x_max", float, required=True)
        epsilon = _field(errors, cdoc, "constants.", "epsilon", float, default=0.05)
        link = cdoc.get("link", "logistic")
        if None not in (theta, x_min, x_max, epsilon):
            try:
                constants = DesignConstants(theta=theta, x_min=x_min, x_max=x_max,
                                            epsilon=epsilon, link=Link(link))
            except (EwocError, ValueError) as exc:
                errors["constants"] = str(exc)

    pdoc = doc.get("prior")
    kind = None
    if not isinstance(pdoc, dict):
        errors["prior"] = "required object"
    else:
        try:
            kind = PriorKind(pdoc.get("kind"))
        except ValueError:
            errors["prior.kind"] = (
                f"unknown prior kind {pdoc.get('kind')!r}; expected one of "
                f"{[k.value for k in PriorKind]}"
            )

    one_param = None
    if kind is PriorKind.UNIFORM_1P and constants is not None:
        beta_lo = _field(errors, pdoc, "prior.", "beta_lo", float, required=True)
        beta_hi = _field(errors, pdoc, "prior.", "beta_hi", float, required=True)
        x_floor = _field(errors, pdoc, "prior.", "x_floor", float, default=constants.x_min)
        x_ceil = _field(errors, pdoc, "prior.", "x_ceil", float, default=constants.x_max)
        if None not in (beta_lo, beta_hi):
            try:
                one_param = OneParamDesign.from_constants(
                    constants, beta_lo, beta_hi, x_floor, x_ceil)
            except EwocError as exc:
                errors["prior"] = str(exc)

    covariates = None
    vdoc = doc.get("covariates")
    if kind in (PriorKind.UNIFORM_COV3, PriorKind.UNIFORM_COV4):
        if not isinstance(vdoc, dict):
            errors["covariates"] = f"required object for prior kind {kind.value}"
        else:
            name = vdoc.get("name", "covariate")
            c_lo = _field(errors, vdoc, "covariates.", "c_lo", float, required=True)
            c_hi = _field(errors, vdoc, "covariates.", "c_hi", float, required=True)
            group_name = vdoc.get("group_name")
            levels = vdoc.get("group_levels")
            if kind is PriorKind.UNIFORM_COV4 and levels is None:
                errors["covariates.group_levels"] = "required for the two-covariate model"
            elif None not in (c_lo, c_hi):
                try:
                    covariates = CovariateSpec(
                        name=str(name), c_lo=c_lo, c_hi=c_hi,
                        group_name=str(group_name) if group_name is not None else None,
                        group_levels=tuple(float(v) for v in levels) if levels else None,
                    )
                except EwocError as exc:
                    errors["covariates"] = str(exc)
    elif vdoc is not None:
        errors["covariates"] = f"not allowed for prior kind {kind.value if kind else '?'}"

    adoc = doc.get("alpha")
    alpha = None
    if not isinstance(adoc, dict):
        errors["alpha"] = "required object"
    else:
        start = _field(errors, adoc, "alpha.", "start", float, required=True)
        increment = _field(errors, adoc, "alpha.", "increment", float, default=0.0)
        cap = _field(errors, adoc, "alpha.", "cap", float, default=0.5)
        hold = _field(errors, adoc, "alpha.", "hold_count", int, default=0)
        if None not in (start, increment, cap, hold):
            alpha = AlphaSchedule(start=start, increment=increment, cap=cap, hold_count=hold)

    dose_levels = None
    if doc.get("dose_levels") is not None:
        try:
            dose_levels = tuple(float(v) for v in doc["dose_levels"])
        except (TypeError, ValueError):
            errors["dose_levels"] = "expected a list of doses"

    tolerances = None
    tdoc = doc.get("tolerances")
    if tdoc is not None:
        if not isinstance(tdoc, dict):
            errors["tolerances"] = "expected an object {dose, cdf}"
        else:
            t1 = _field(errors, tdoc, "tolerances.", "dose", float, required=True)
            t2 = _field(errors, tdoc, "tolerances.", "cdf", float, required=True)
            if None not in (t1, t2):
                tolerances = SnapTolerances(dose=t1, cdf=t2)

    resolution = None
    if doc.get("resolution") is not None:
        try:
            resolution = tuple(int(v) for v in doc["resolution"])
        except (TypeError, ValueError):
            errors["resolution"] = "expected a list of per-axis counts"

    prior = None
    if constants is not None and kind is not None and not errors:
        try:
            prior = PriorSpec(
                kind=kind, constants=constants, one_param=one_param, covariates=covariates,
                mc_draws=int(pdoc.get("mc_draws", 1_000_000)),
                mc_seed=int(pdoc.get("mc_seed", 0)),
            )
        except EwocError as exc:
            errors["prior"] = str(exc)

    if errors or prior is None or alpha is None:
        raise ConfigError(errors or {"": "incomplete configuration"})

    config = TrialConfig(
        constants=constants,
        prior=prior,
        alpha=alpha,
        dose_levels=dose_levels,
        tolerances=tolerances,
        halt_on_first_dlt=bool(doc.get("halt_on_first_dlt", True)),
        resolution=resolution,
        label=str(doc.get("label", "")),
    )
    validate_config(config)
    return config
