"""Trial state machine: protocol rules, schedules, snapping, halting,
event-log replay, and the recommendation contracts."""

import numpy as np
import pytest

from ewoc import trial
from ewoc.configs import load_builtin
from ewoc.errors import (
    ConfigError,
    ConflictError,
    DomainError,
    EstimateUnavailableError,
    TrialHaltedError,
)
from ewoc.models import DesignConstants
from ewoc.posterior import PriorKind, PriorSpec
from ewoc.trial import (
    AlphaSchedule,
    SnapTolerances,
    TrialConfig,
    alpha_at,
    config_from_dict,
    config_to_dict,
    enroll_patient,
    final_mtd,
    posterior_for,
    recommend_continuous,
    record_outcome,
    replay_events,
    snap_discrete,
    start_trial,
    state_to_events,
)


def two_param_config(alpha_start=0.3, increment=0.0, resolution=(81, 81), **kw) -> TrialConfig:
    constants = DesignConstants(theta=1 / 3, x_min=60.0, x_max=600.0, epsilon=0.05)
    return TrialConfig(
        constants=constants,
        prior=PriorSpec(kind=PriorKind.UNIFORM_2P, constants=constants),
        alpha=AlphaSchedule(start=alpha_start, increment=increment, cap=0.5),
        resolution=resolution,
        **kw,
    )


# ---------------------------------------------------------------------------
# start_trial
# ---------------------------------------------------------------------------

def test_r115777_first_dose():
    state = start_trial(load_builtin("r115777"))
    assert state.patients[0].dose == 60.0
    assert state.patients[0].patient_id == "p1"
    assert not state.patients[0].resolved


def test_abr217620_first_dose():
    state = start_trial(load_builtin("abr217620"), covariates=(80.0,))
    assert state.patients[0].dose == 1.0


def test_discrete_levels_first_dose():
    config = two_param_config(dose_levels=(60.0, 120.0, 240.0, 480.0),
                              tolerances=SnapTolerances(dose=0.0, cdf=1.0))
    state = start_trial(config)
    assert state.patients[0].dose == 60.0


def test_start_trial_rejects_bad_alpha():
    with pytest.raises(ConfigError) as exc:
        start_trial(two_param_config(alpha_start=0.6, increment=0.0))
    assert "alpha.start" in exc.value.field_errors


# ---------------------------------------------------------------------------
# alpha schedule
# ---------------------------------------------------------------------------

def test_abr_schedule_values():
    schedule = AlphaSchedule(start=0.25, increment=0.05, cap=0.5, hold_count=9)
    assert schedule.at(0) == 0.25
    assert schedule.at(9) == 0.25
    assert schedule.at(10) == pytest.approx(0.30)
    assert schedule.at(14) == pytest.approx(0.50)
    assert schedule.at(30) == 0.50


def test_constant_alpha():
    schedule = AlphaSchedule(start=0.25, increment=0.0)
    assert all(schedule.at(n) == 0.25 for n in range(50))


def test_alpha_at_tracks_resolutions():
    config = load_builtin("abr217620")
    state = start_trial(config, covariates=(0.0,))
    assert alpha_at(state) == 0.25
    state = record_outcome(state, "p1", 0)
    assert alpha_at(state) == 0.25


# ---------------------------------------------------------------------------
# record_outcome and halting
# ---------------------------------------------------------------------------

def test_first_patient_dlt_halts():
    state = start_trial(two_param_config())
    state = record_outcome(state, "p1", 1)
    assert state.halted
    assert state.halt_reason == trial.HALT_FIRST_PATIENT_DLT
    with pytest.raises(TrialHaltedError):
        recommend_continuous(state)
    with pytest.raises(TrialHaltedError):
        enroll_patient(state)


def test_first_patient_no_dlt_continues():
    state = start_trial(two_param_config())
    state = record_outcome(state, "p1", 0)
    assert not state.halted
    assert state.resolved_count == 1


def test_halt_overridable():
    state = start_trial(two_param_config(halt_on_first_dlt=False))
    state = record_outcome(state, "p1", 1)
    assert not state.halted


def test_double_resolution_conflicts():
    state = start_trial(two_param_config())
    state = record_outcome(state, "p1", 0)
    with pytest.raises(ConflictError):
        record_outcome(state, "p1", 0)


def test_unknown_patient_conflicts():
    state = start_trial(two_param_config())
    with pytest.raises(ConflictError):
        record_outcome(state, "p9", 0)


def test_version_increments():
    state = start_trial(two_param_config())
    assert state.version == 1
    state = record_outcome(state, "p1", 0)
    assert state.version == 2
    state = enroll_patient(state)
    assert state.version == 3
    # a halting resolution is two mutations: resolve then halt
    halting = record_outcome(start_trial(two_param_config()), "p1", 1)
    assert halting.version == 3


# ---------------------------------------------------------------------------
# recommendations
# ---------------------------------------------------------------------------

def test_prior_recommendation_is_prior_quantile():
    state = start_trial(two_param_config(alpha_start=0.3, resolution=(201, 201)))
    assert recommend_continuous(state) == pytest.approx(222.0, abs=1e-6)


def test_enrollment_requires_first_resolution():
    state = start_trial(two_param_config())
    with pytest.raises(ConflictError):
        enroll_patient(state)


def test_escalation_after_no_dlt():
    state = start_trial(two_param_config(alpha_start=0.3, resolution=(201, 201)))
    state = record_outcome(state, "p1", 0)
    rec = recommend_continuous(state)
    assert rec >= 222.0 - 540.0 / 201


def test_deescalation_after_dlt():
    state = start_trial(two_param_config(alpha_start=0.3))
    state = record_outcome(state, "p1", 0)
    state = enroll_patient(state)
    rec_before = state.patients[-1].dose
    state = record_outcome(state, "p2", 1)
    rec_after = recommend_continuous(state)
    cell = 540.0 / state.config.resolution[1]
    assert rec_after <= rec_before + cell


def test_pending_patients_do_not_change_recommendation():
    state = start_trial(two_param_config())
    state = record_outcome(state, "p1", 0)
    before = recommend_continuous(state)
    state = enroll_patient(state)
    assert recommend_continuous(state) == before


def test_identical_histories_identical_recommendations():
    def run():
        state = start_trial(two_param_config())
        state = record_outcome(state, "p1", 0)
        state = enroll_patient(state)
        state = record_outcome(state, "p2", 1)
        return recommend_continuous(state)

    trial._POSTERIOR_CACHE.clear()
    a = run()
    b = run()
    trial._POSTERIOR_CACHE.clear()
    c = run()
    assert a == b == c


def test_feasibility_bound_at_each_recommendation():
    state = start_trial(two_param_config(alpha_start=0.25))
    outcomes = [0, 0, 1, 0, 1, 0, 0, 0]
    for dlt in outcomes:
        state = record_outcome(state, state.patients[-1].patient_id, dlt)
        if state.halted:
            break
        rec = recommend_continuous(state)
        marg = posterior_for(state).mtd_marginal()
        res = state.config.resolution[1]
        assert marg.cdf(rec) <= alpha_at(state) + 2.0 / res
        state = enroll_patient(state)


def test_covariate_trial_requires_covariates():
    config = load_builtin("abr217620")
    with pytest.raises(DomainError):
        start_trial(config)
    state = start_trial(config, covariates=(50.0,))
    state = record_outcome(state, "p1", 0)
    with pytest.raises(DomainError):
        recommend_continuous(state)
    with pytest.raises(DomainError):
        recommend_continuous(state, w=(250.0,))  # outside declared bounds
    assert recommend_continuous(state, w=(50.0,)) >= 1.0


# ---------------------------------------------------------------------------
# discrete snapping
# ---------------------------------------------------------------------------

def snap_fixture():
    constants = DesignConstants(theta=1 / 3, x_min=100.0, x_max=300.0, epsilon=0.05)
    config = TrialConfig(
        constants=constants,
        prior=PriorSpec(kind=PriorKind.UNIFORM_2P, constants=constants),
        alpha=AlphaSchedule(start=0.25),
        dose_levels=(100.0, 200.0, 300.0),
        tolerances=SnapTolerances(dose=0.0, cdf=1.0),  # cdf condition vacuous
        resolution=(41, 41),
    )
    return start_trial(config)


def test_snap_rounds_down_within_tolerance():
    state = snap_fixture()
    assert snap_discrete(250.0, state) == (200.0, False)


def test_snap_exact_level_above():
    state = snap_fixture()
    assert snap_discrete(305.0, state) == (300.0, False)


def test_snap_below_lowest_level_falls_back():
    state = snap_fixture()
    snapped = snap_discrete(50.0, state)
    assert snapped.dose == 100.0
    assert snapped.fallback


def test_snap_cdf_tolerance_binds():
    # a tight cdf tolerance disqualifies levels deep in the posterior tail
    state = snap_fixture()
    config = state.config
    tight = TrialConfig(**{**config.__dict__, "tolerances": SnapTolerances(dose=0.0, cdf=0.05)})
    state_tight = start_trial(tight)
    marg = posterior_for(state_tight).mtd_marginal()
    snapped = snap_discrete(290.0, state_tight)
    assert marg.cdf(snapped.dose) <= 0.25 + 0.05 or snapped.fallback


def test_snap_requires_levels():
    state = start_trial(two_param_config())
    with pytest.raises(DomainError):
        snap_discrete(100.0, state)


def test_discrete_enrollment_assigns_snapped_dose():
    state = snap_fixture()
    state = record_outcome(state, "p1", 0)
    state = enroll_patient(state)
    p2 = state.patients[-1]
    assert p2.dose in (100.0, 200.0, 300.0)
    assert p2.recommended is not None


# ---------------------------------------------------------------------------
# final estimate
# ---------------------------------------------------------------------------

def test_final_mtd_is_median_at_alpha_half():
    state = start_trial(two_param_config(alpha_start=0.5))
    state = record_outcome(state, "p1", 0)
    state = enroll_patient(state)
    state = record_outcome(state, "p2", 1)
    est = final_mtd(state)
    marg = posterior_for(state).mtd_marginal()
    assert est.point == pytest.approx(marg.quantile(0.5), abs=1e-9)
    assert est.alpha_used == 0.5
    assert est.hpd95[0] < est.point < est.hpd95[1]


def test_final_mtd_matches_brute_force_loss_minimiser():
    state = start_trial(two_param_config(alpha_start=0.25, resolution=(201, 201)))
    for dlt in (0, 0, 1, 0):
        state = record_outcome(state, state.patients[-1].patient_id, dlt)
        if not state.halted:
            state = enroll_patient(state)
    est = final_mtd(state)
    marg = posterior_for(state).mtd_marginal()
    # brute force: evaluate the expected loss on a fine dose sweep
    candidates = np.linspace(60.0, 600.0, 2001)
    losses = [marg.expected_loss(float(x), est.alpha_used) for x in candidates]
    best = candidates[int(np.argmin(losses))]
    cell = 540.0 / 201
    assert abs(est.point - best) <= cell
    assert est.loss_risk == pytest.approx(min(losses), rel=1e-3, abs=1e-9)


def test_final_mtd_unavailable_cases():
    state = start_trial(two_param_config())
    with pytest.raises(EstimateUnavailableError):
        final_mtd(state)
    halted = record_outcome(state, "p1", 1)
    with pytest.raises(EstimateUnavailableError):
        final_mtd(halted)


# ---------------------------------------------------------------------------
# event log
# ---------------------------------------------------------------------------

def test_event_log_round_trip():
    state = start_trial(two_param_config())
    state = record_outcome(state, "p1", 0)
    state = enroll_patient(state)
    state = record_outcome(state, "p2", 1)
    state = enroll_patient(state)
    events = state_to_events(state)
    assert [e["type"] for e in events] == ["assign", "resolve", "assign", "resolve", "assign"]
    assert [e["version"] for e in events] == [1, 2, 3, 4, 5]
    rebuilt = replay_events(state.config, events)
    assert rebuilt == state


def test_halt_event_round_trip():
    state = record_outcome(start_trial(two_param_config()), "p1", 1)
    events = state_to_events(state)
    assert events[-1]["type"] == "halt"
    rebuilt = replay_events(state.config, events)
    assert rebuilt == state
    assert rebuilt.halted and rebuilt.halt_version == 3


def test_random_event_sequences_replay_exactly():
    rng = np.random.default_rng(2024)
    for _ in range(25):
        state = start_trial(two_param_config(alpha_start=0.25, resolution=(41, 41),
                                             halt_on_first_dlt=bool(rng.random() < 0.5)))
        for _ in range(int(rng.integers(1, 8))):
            pending = [p for p in state.patients if not p.resolved]
            if pending and (rng.random() < 0.7 or len(pending) > 2):
                state = record_outcome(state, pending[0].patient_id,
                                       int(rng.random() < 0.3))
                if state.halted:
                    break
            elif state.resolved_count > 0:
                state = enroll_patient(state)
        assert replay_events(state.config, state_to_events(state)) == state


# ---------------------------------------------------------------------------
# config serialization
# ---------------------------------------------------------------------------

def test_config_dict_round_trip():
    for name in ("r115777", "abr217620"):
        config = load_builtin(name)
        assert config_from_dict(config_to_dict(config)) == config


def test_config_rejects_theta_at_ceiling():
    doc = config_to_dict(load_builtin("r115777"))
    doc["constants"]["theta"] = 0.7
    doc["constants"]["epsilon"] = 0.5
    with pytest.raises(ConfigError) as exc:
        config_from_dict(doc)
    assert "constants" in exc.value.field_errors


def test_config_field_errors_accumulate():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"constants": {"theta": 0.3}, "prior": {"kind": "nope"}})
    errs = exc.value.field_errors
    assert "constants.x_min" in errs
    assert "prior.kind" in errs
    assert "alpha" in errs
