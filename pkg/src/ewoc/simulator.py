"""Simulation harness for design operating characteristics.

Every replicate draws its randomness from a stream keyed by (seed,
replicate), with covariate and outcome draws on separate child streams, so
results are reproducible byte-for-byte regardless of execution order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import models, trial
from .errors import DomainError, EstimateUnavailableError
from .models import CovariateState, TwoParamState, mtd_one_param
from .posterior import PriorKind
from .trial import MtdEstimate, TrialConfig

__all__ = [
    "Scenario",
    "ReplicateResult",
    "OperatingCharacteristics",
    "ConsistencyTable",
    "SampleSizeTable",
    "run_replicate",
    "operating_chars",
    "consistency_check",
    "sample_size_table",
    "default_scenarios",
    "oc_to_csv",
    "oc_to_json",
    "scenario_from_dict",
    "scenario_to_dict",
]


@dataclass(frozen=True, eq=False)
class Scenario:
    """Ground truth used to generate DLT outcomes.

    Exactly one of ``two_param``, ``cov_state``, ``one_param_beta`` or
    ``curve`` must be set. ``curve`` is an off-model tabulated dose-toxicity
    relation, interpolated piecewise-linearly, and needs an explicit
    ``true_mtd``. ``covariate_sampler`` (rng -> covariate tuple) overrides the
    default uniform draw over the declared bounds.
    """

    label: str = ""
    two_param: TwoParamState | None = None
    cov_state: CovariateState | None = None
    one_param_beta: float | None = None
    curve: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    true_mtd: float | None = None
    covariate_sampler: object | None = None

    def __post_init__(self):
        set_count = sum(x is not None for x in
                        (self.two_param, self.cov_state, self.one_param_beta, self.curve))
        if set_count != 1:
            raise DomainError("exactly one ground-truth specification required")
        if self.curve is not None:
            doses, probs = self.curve
            if len(doses) != len(probs) or len(doses) < 2:
                raise DomainError("curve needs matching dose/probability lists (>= 2 points)")
            if any(b < a for a, b in zip(doses, doses[1:])):
                raise DomainError("curve doses must be nondecreasing")
            if any(b < a for a, b in zip(probs, probs[1:])) or not all(
                    0.0 <= p <= 1.0 for p in probs):
                raise DomainError("curve probabilities must be nondecreasing within [0, 1]")
            if self.true_mtd is None:
                raise DomainError("off-model scenarios must supply true_mtd")

    def _natural(self, config: TrialConfig) -> models.NaturalParams:
        cov = config.covariates
        z_levels = cov.group_levels if cov is not None else None
        return models.covariate_natural_params(self.cov_state, config.constants, z_levels)

    def prob_dlt(self, dose: float, w: tuple[float, ...], config: TrialConfig) -> float:
        if self.two_param is not None:
            return float(models.prob_dlt_two_param(dose, self.two_param, config.constants))
        if self.one_param_beta is not None:
            return float(models.prob_dlt_one_param(
                dose, self.one_param_beta, config.prior.one_param, config.constants))
        if self.cov_state is not None:
            return float(models.prob_dlt_covariate(dose, w, self._natural(config)))
        doses, probs = self.curve
        return float(np.interp(dose, doses, probs))

    def true_mtd_at(self, w: tuple[float, ...], config: TrialConfig) -> float:
        if self.two_param is not None:
            return self.two_param.gamma
        if self.one_param_beta is not None:
            return float(mtd_one_param(self.one_param_beta, config.prior.one_param))
        if self.cov_state is not None:
            return float(models.conditional_mtd(w, self._natural(config),
                                                config.constants.theta))
        return float(self.true_mtd)

    def draw_covariates(self, rng: np.random.Generator, config: TrialConfig) -> tuple[float, ...]:
        cov = config.covariates
        if cov is None:
            return ()
        if self.covariate_sampler is not None:
            return tuple(float(v) for v in self.covariate_sampler(rng))
        w = (float(rng.uniform(cov.c_lo, cov.c_hi)),)
        if cov.group_levels is not None:
            w += (float(cov.group_levels[int(rng.integers(0, 2))]),)
        return w

    def validate(self, config: TrialConfig) -> None:
        """Check the truth is usable under this configuration."""
        if self.cov_state is not None and config.covariates is None:
            raise DomainError("covariate scenario requires a covariate trial config")
        if self.one_param_beta is not None:
            if PriorKind(config.prior.kind) is not PriorKind.UNIFORM_1P:
                raise DomainError("one-parameter scenario requires a uniform_1p prior")
        if self.curve is None and self.cov_state is None:
            w = config.covariates.reference() if config.covariates else ()
            g = self.true_mtd_at(w, config)
            p = self.prob_dlt(g, w, config)
            if abs(p - config.constants.theta) > 1e-6:
                raise DomainError("true MTD inconsistent with the ground-truth curve")


@dataclass(frozen=True)
class ReplicateResult:
    """One simulated trial: per-patient assignments and the final estimate."""

    replicate: int
    seed: int
    doses: tuple[float, ...]
    dlts: tuple[int, ...]
    covariates: tuple[tuple[float, ...], ...]
    recommended: tuple[float | None, ...]  # continuous recommendation at enrollment
    cdf_at_assignment: tuple[float | None, ...]  # posterior Pr(MTD <= dose), None for patient 1
    alphas: tuple[float | None, ...]
    sd_by_n: tuple[float, ...]  # posterior sd after n resolutions
    hpd90_by_n: tuple[float, ...]
    hpd95_by_n: tuple[float, ...]
    estimate: MtdEstimate | None
    halted: bool

    def __post_init__(self):
        n = len(self.doses)
        if not all(len(x) == n for x in (self.dlts, self.covariates, self.recommended,
                                         self.cdf_at_assignment, self.alphas)):
            raise DomainError("per-patient traces must have equal lengths")


def run_replicate(scenario: Scenario, config: TrialConfig, n_patients: int,
                  seed: int, replicate: int = 0) -> ReplicateResult:
    """Simulate one trial of ``n_patients`` sequential patients."""
    if n_patients < 1:
        raise DomainError("n_patients must be at least 1")
    scenario.validate(config)
    ss = np.random.SeedSequence([int(seed), int(replicate)])
    outcome_stream, covariate_stream = [np.random.default_rng(s) for s in ss.spawn(2)]
    uniforms = outcome_stream.random(n_patients)
    covs = [scenario.draw_covariates(covariate_stream, config) for _ in range(n_patients)]

    state = trial.start_trial(config, covariates=covs[0] if covs[0] else None)
    doses = [state.patients[0].dose]
    recommended: list[float | None] = [None]
    cdf_at: list[float | None] = [None]
    alphas: list[float | None] = [None]
    dlts: list[int] = []
    sd_by_n: list[float] = []
    hpd90: list[float] = []
    hpd95: list[float] = []

    for i in range(n_patients):
        patient = state.patients[i]
        p = scenario.prob_dlt(patient.dose, patient.covariates, config)
        dlt = int(uniforms[i] < p)
        dlts.append(dlt)
        state = trial.record_outcome(state, patient.patient_id, dlt)
        ref = config.covariates.reference() if config.covariates else None
        marg = trial.posterior_for(state).mtd_marginal(ref)
        sd_by_n.append(marg.sd())
        a90, b90 = marg.hpd(0.90)
        a95, b95 = marg.hpd(0.95)
        hpd90.append(b90 - a90)
        hpd95.append(b95 - a95)
        if state.halted:
            break
        if i + 1 < n_patients:
            w_next = covs[i + 1]
            state = trial.enroll_patient(state, covariates=w_next if w_next else None)
            new = state.patients[-1]
            doses.append(new.dose)
            recommended.append(new.recommended)
            alphas.append(trial.alpha_at(state))
            assign_marg = trial.posterior_for(state).mtd_marginal(
                w_next if w_next else None)
            cdf_at.append(assign_marg.cdf(new.dose))

    try:
        estimate = trial.final_mtd(state)
    except EstimateUnavailableError:
        estimate = None
    n = len(doses)
    return ReplicateResult(
        replicate=replicate, seed=seed,
        doses=tuple(doses), dlts=tuple(dlts[:n]),
        covariates=tuple(covs[:n]),
        recommended=tuple(recommended), cdf_at_assignment=tuple(cdf_at),
        alphas=tuple(alphas),
        sd_by_n=tuple(sd_by_n), hpd90_by_n=tuple(hpd90), hpd95_by_n=tuple(hpd95),
        estimate=estimate, halted=state.halted,
    )


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Aggregates across replicates of one (scenario, config) pair."""

    scenario: str
    label: str
    alpha_start: float
    n_patients: int
    n_replicates: int
    dlt_fraction: float
    overdose_fraction: float
    mean_abs_error: float
    bias: float
    halt_fraction: float
    recommendation_trace_quantiles: tuple[tuple[float, float, float], ...]  # 10/50/90% by index
    avg_posterior_sd_by_n: tuple[float, ...]
    avg_hpd90_length_by_n: tuple[float, ...]
    avg_hpd95_length_by_n: tuple[float, ...]

    def __post_init__(self):
        for name in ("dlt_fraction", "overdose_fraction", "halt_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0 or math.isnan(v)):
                raise DomainError(f"{name} must be a fraction, got {v}")
        if len(self.recommendation_trace_quantiles) != self.n_patients:
            raise DomainError("trace length must equal the patient count")


def operating_chars(scenario: Scenario, config: TrialConfig, n_patients: int,
                    n_replicates: int, seed: int) -> OperatingCharacteristics:
    """Run replicates and aggregate with a fixed reduction order."""
    if n_replicates < 2:
        raise DomainError("n_replicates must be at least 2")
    results = [run_replicate(scenario, config, n_patients, seed, r)
               for r in range(n_replicates)]
    return summarize_replicates(scenario, config, n_patients, results)


def summarize_replicates(scenario: Scenario, config: TrialConfig, n_patients: int,
                         results: list[ReplicateResult]) -> OperatingCharacteristics:
    n_replicates = len(results)
    total_patients = sum(len(r.doses) for r in results)
    total_dlts = sum(sum(r.dlts) for r in results)
    overdoses = 0
    for r in results:
        for dose, w in zip(r.doses, r.covariates):
            if dose > scenario.true_mtd_at(w, config):
                overdoses += 1
    ref = config.covariates.reference() if config.covariates else ()
    true_ref = scenario.true_mtd_at(ref, config)
    errors = [r.estimate.point - true_ref for r in results if r.estimate is not None]

    dose_matrix = np.full((n_replicates, n_patients), np.nan)
    sd_matrix = np.full((n_replicates, n_patients), np.nan)
    h90_matrix = np.full((n_replicates, n_patients), np.nan)
    h95_matrix = np.full((n_replicates, n_patients), np.nan)
    for i, r in enumerate(results):
        dose_matrix[i, :len(r.doses)] = r.doses
        sd_matrix[i, :len(r.sd_by_n)] = r.sd_by_n
        h90_matrix[i, :len(r.hpd90_by_n)] = r.hpd90_by_n
        h95_matrix[i, :len(r.hpd95_by_n)] = r.hpd95_by_n
    with np.errstate(all="ignore"):
        trace = np.nanquantile(dose_matrix, [0.1, 0.5, 0.9], axis=0).T

    return OperatingCharacteristics(
        scenario=scenario.label or "scenario",
        label=config.label,
        alpha_start=config.alpha.start,
        n_patients=n_patients,
        n_replicates=n_replicates,
        dlt_fraction=total_dlts / total_patients if total_patients else float("nan"),
        overdose_fraction=overdoses / total_patients if total_patients else float("nan"),
        mean_abs_error=float(np.mean(np.abs(errors))) if errors else float("nan"),
        bias=float(np.mean(errors)) if errors else float("nan"),
        halt_fraction=sum(r.halted for r in results) / n_replicates,
        recommendation_trace_quantiles=tuple(map(tuple, trace)),
        avg_posterior_sd_by_n=tuple(np.nanmean(sd_matrix, axis=0)),
        avg_hpd90_length_by_n=tuple(np.nanmean(h90_matrix, axis=0)),
        avg_hpd95_length_by_n=tuple(np.nanmean(h95_matrix, axis=0)),
    )


# ---------------------------------------------------------------------------
# consistency of the one-parameter design
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConsistencyTable:
    """Median |z_n - target| of the log-standardised dose by patient count."""

    beta0: float
    target_z: float
    checkpoints: tuple[int, ...]
    median_abs_error: tuple[float, ...]
    n_replicates: int

    def rows(self) -> list[dict]:
        return [{"n": n, "median_abs_error": e}
                for n, e in zip(self.checkpoints, self.median_abs_error)]


def consistency_check(beta0_true: float, config: TrialConfig, n_max: int,
                      n_replicates: int, seed: int,
                      checkpoints: tuple[int, ...] = (10, 25, 50, 100, 200)) -> ConsistencyTable:
    """Empirical convergence of the assigned log-dose toward -phi/beta0."""
    prior = config.prior
    if PriorKind(prior.kind) is not PriorKind.UNIFORM_1P:
        raise DomainError("consistency check applies to the one-parameter design")
    d = prior.one_param
    if d.beta_lo < d.beta_hi:
        if not (d.beta_lo < beta0_true < d.beta_hi):
            raise DomainError(
                f"true slope must lie strictly inside ({d.beta_lo}, {d.beta_hi})"
            )
    elif beta0_true != d.beta_lo:
        raise DomainError("degenerate prior support requires beta0 equal to it")
    checkpoints = tuple(n for n in checkpoints if n <= n_max)
    if not checkpoints:
        raise DomainError("no checkpoints at or below n_max")
    scenario = Scenario(label=f"one-param beta0={beta0_true}", one_param_beta=beta0_true)
    target = -d.phi / beta0_true
    errors = np.full((n_replicates, len(checkpoints)), np.nan)
    for r in range(n_replicates):
        result = run_replicate(scenario, config, n_max, seed, r)
        z = d.log_standardised(np.asarray(result.doses))
        for j, n in enumerate(checkpoints):
            if n <= len(result.doses):
                errors[r, j] = abs(z[n - 1] - target)
    return ConsistencyTable(
        beta0=beta0_true,
        target_z=target,
        checkpoints=checkpoints,
        median_abs_error=tuple(np.nanmedian(errors, axis=0)),
        n_replicates=n_replicates,
    )


# ---------------------------------------------------------------------------
# sample size by simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleSizeTable:
    """Average posterior spread after n patients, for each candidate n."""

    n_list: tuple[int, ...]
    avg_posterior_sd: tuple[float, ...]
    avg_hpd90_length: tuple[float, ...]
    avg_hpd95_length: tuple[float, ...]
    n_replicates: int
    sd_margin: float | None
    smallest_n_within_margin: int | None  # None means "not reached"

    def rows(self) -> list[dict]:
        return [{"n": n, "avg_posterior_sd": s, "avg_hpd90_length": h90,
                 "avg_hpd95_length": h95}
                for n, s, h90, h95 in zip(self.n_list, self.avg_posterior_sd,
                                          self.avg_hpd90_length, self.avg_hpd95_length)]


def sample_size_table(config: TrialConfig, scenario: Scenario, n_list,
                      n_replicates: int, seed: int,
                      sd_margin: float | None = None) -> SampleSizeTable:
    """Tabulate posterior spread against sample size on one scenario.

    Trials are simulated once at max(n_list); the state after the first n
    resolutions is identical to a trial of length n, so each checkpoint reads
    straight off the spread traces.
    """
    n_list = tuple(int(n) for n in n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])) or not n_list:
        raise DomainError("n_list must be strictly increasing and nonempty")
    n_max = n_list[-1]
    sd = np.full((n_replicates, len(n_list)), np.nan)
    h90 = np.full((n_replicates, len(n_list)), np.nan)
    h95 = np.full((n_replicates, len(n_list)), np.nan)
    for r in range(n_replicates):
        result = run_replicate(scenario, config, n_max, seed, r)
        for j, n in enumerate(n_list):
            if n <= len(result.sd_by_n):
                sd[r, j] = result.sd_by_n[n - 1]
                h90[r, j] = result.hpd90_by_n[n - 1]
                h95[r, j] = result.hpd95_by_n[n - 1]
    avg_sd = tuple(np.nanmean(sd, axis=0))
    smallest = None
    if sd_margin is not None:
        for n, s in zip(n_list, avg_sd):
            if s <= sd_margin:
                smallest = n
                break
    return SampleSizeTable(
        n_list=n_list,
        avg_posterior_sd=avg_sd,
        avg_hpd90_length=tuple(np.nanmean(h90, axis=0)),
        avg_hpd95_length=tuple(np.nanmean(h95, axis=0)),
        n_replicates=n_replicates,
        sd_margin=sd_margin,
        smallest_n_within_margin=smallest,
    )


# ---------------------------------------------------------------------------
# default scenario suite and I/O
# ---------------------------------------------------------------------------

def default_scenarios() -> list[Scenario]:
    """On-model grid spanning early, middle and late true MTD positions."""
    out = []
    for gamma in (90.0, 200.0, 330.0, 500.0):
        for rho0 in (0.01, 0.05, 0.15):
            out.append(Scenario(
                label=f"on-model gamma={gamma:g} rho0={rho0:g}",
                two_param=TwoParamState(rho0=rho0, gamma=gamma),
            ))
    return out


def scenario_to_dict(s: Scenario) -> dict:
    doc: dict = {"label": s.label}
    if s.two_param is not None:
        doc["two_param"] = {"rho0": s.two_param.rho0, "gamma": s.two_param.gamma}
    if s.cov_state is not None:
        cs = s.cov_state
        doc["cov_state"] = {"gamma_max": cs.gamma_max, "rho1": cs.rho1, "rho2": cs.rho2,
                            "c1": cs.c1, "c2": cs.c2}
        if cs.rho3 is not None:
            doc["cov_state"]["rho3"] = cs.rho3
    if s.one_param_beta is not None:
        doc["one_param_beta"] = s.one_param_beta
    if s.curve is not None:
        doc["curve"] = {"doses": list(s.curve[0]), "probs": list(s.curve[1])}
        doc["true_mtd"] = s.true_mtd
    return doc


def scenario_from_dict(doc: dict) -> Scenario:
    kwargs: dict = {"label": str(doc.get("label", ""))}
    if "two_param" in doc:
        kwargs["two_param"] = TwoParamState(**doc["two_param"])
    if "cov_state" in doc:
        kwargs["cov_state"] = CovariateState(**doc["cov_state"])
    if "one_param_beta" in doc:
        kwargs["one_param_beta"] = float(doc["one_param_beta"])
    if "curve" in doc:
        kwargs["curve"] = (tuple(doc["curve"]["doses"]), tuple(doc["curve"]["probs"]))
        kwargs["true_mtd"] = float(doc["true_mtd"])
    return Scenario(**kwargs)


def oc_to_csv(oc_list: list[OperatingCharacteristics]) -> str:
    if not oc_list:
        return ""
    n = max(oc.n_patients for oc in oc_list)
    header = (["scenario", "label", "alpha", "n", "dlt_fraction", "overdose_fraction",
               "mae", "bias", "halt_fraction"]
              + [f"avg_sd_{i + 1}" for i in range(n)]
              + [f"hpd90_{i + 1}" for i in range(n)]
              + [f"hpd95_{i + 1}" for i in range(n)])
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    for oc in oc_list:
        pad = [""] * (n - oc.n_patients)
        writer.writerow(
            [oc.scenario, oc.label, oc.alpha_start, oc.n_patients, oc.dlt_fraction,
             oc.overdose_fraction, oc.mean_abs_error, oc.bias, oc.halt_fraction]
            + list(oc.avg_posterior_sd_by_n) + pad
            + list(oc.avg_hpd90_length_by_n) + pad
            + list(oc.avg_hpd95_length_by_n) + pad)
    return buf.getvalue()


def oc_to_json(oc_list: list[OperatingCharacteristics]) -> str:
    docs = []
    for oc in oc_list:
        docs.append({
            "scenario": oc.scenario,
            "label": oc.label,
            "alpha": oc.alpha_start,
            "n": oc.n_patients,
            "n_replicates": oc.n_replicates,
            "dlt_fraction": oc.dlt_fraction,
            "overdose_fraction": oc.overdose_fraction,
            "mae": oc.mean_abs_error,
            "bias": oc.bias,
            "halt_fraction": oc.halt_fraction,
            "recommendation_trace_quantiles": [list(q) for q in
                                               oc.recommendation_trace_quantiles],
            "avg_posterior_sd_by_n": list(oc.avg_posterior_sd_by_n),
            "avg_hpd90_length_by_n": list(oc.avg_hpd90_length_by_n),
            "avg_hpd95_length_by_n": list(oc.avg_hpd95_length_by_n),
        })
    return json.dumps(docs, indent=2)
