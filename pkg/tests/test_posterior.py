"""Grid posterior behaviour: analytic prior checks, frozen likelihood values,
agreement with the importance-sampling oracle, and marginal-query contracts."""

import json
import math

import numpy as np
import pytest

from ewoc import models, posterior
from ewoc.errors import DegeneratePosteriorError, DomainError
from ewoc.models import CovariateState, DesignConstants, OneParamDesign, TwoParamState
from ewoc.posterior import (
    CovariateSpec,
    MtdMarginal,
    Observation,
    PriorKind,
    PriorSpec,
    build_posterior,
    grid_from_json,
    grid_to_json,
    hpd_interval,
    likelihood_log,
    marginal_cdf_mtd,
    mc_oracle,
    quantile_mtd,
    summaries,
    with_observation,
)

R115 = DesignConstants(theta=1 / 3, x_min=60.0, x_max=600.0, epsilon=0.05)
PRIOR_2P = PriorSpec(kind=PriorKind.UNIFORM_2P, constants=R115)
THREE_OBS = [Observation(60.0, 0), Observation(120.0, 0), Observation(240.0, 1)]

ABR = DesignConstants(theta=0.2, x_min=1.0, x_max=100.0, epsilon=0.05)
ABR_COV = CovariateSpec(name="anti_sea_e120", c_lo=0.0, c_hi=200.0)
PRIOR_COV3 = PriorSpec(kind=PriorKind.UNIFORM_COV3, constants=ABR, covariates=ABR_COV)

# log 0.95 + log p(195 | rho0=.05, gamma=330), mpmath 40 digits
LOGLIK_TWO_OBS = -2.020419566275428799588952826003038775887


# ---------------------------------------------------------------------------
# likelihood_log
# ---------------------------------------------------------------------------

def test_likelihood_empty_data_is_zero():
    assert likelihood_log([], TwoParamState(0.05, 330.0), PRIOR_2P) == 0.0


def test_likelihood_single_factor():
    got = likelihood_log([Observation(60.0, 0)], TwoParamState(0.05, 330.0), PRIOR_2P)
    assert got == pytest.approx(math.log(0.95), rel=1e-12)


def test_likelihood_two_factors_frozen():
    obs = [Observation(60.0, 0), Observation(195.0, 1)]
    got = likelihood_log(obs, TwoParamState(0.05, 330.0), PRIOR_2P)
    assert got == pytest.approx(LOGLIK_TWO_OBS, rel=1e-12)


def test_likelihood_impossible_outcome_is_minus_inf():
    design = OneParamDesign.from_constants(R115, 1.0, 8.0, x_floor=60.0, x_ceil=600.0)
    prior = PriorSpec(kind=PriorKind.UNIFORM_1P, constants=R115, one_param=design)
    assert likelihood_log([Observation(60.0, 1)], 2.0, prior) == -math.inf
    assert likelihood_log([Observation(60.0, 0)], 2.0, prior) == 0.0


# ---------------------------------------------------------------------------
# build_posterior
# ---------------------------------------------------------------------------

def test_prior_only_weights_are_uniform():
    g = build_posterior(PRIOR_2P, resolution=41)
    m = g.masses()
    assert np.allclose(m, m[0])
    assert abs(m.sum() - 1.0) < 1e-10


def test_single_observation_weights_proportional_to_survival():
    # a non-DLT at x_min multiplies every gamma slice by (1 - rho0)
    g = build_posterior(PRIOR_2P, [Observation(60.0, 0)], resolution=41)
    w = g.masses().reshape(41, 41)
    rho0 = g._support.params["rho0"].reshape(41, 41)[:, 0]
    ratio = w[:, 0] / (1.0 - rho0)
    assert np.allclose(ratio, ratio[0], rtol=1e-12)
    # and the likelihood is flat in gamma at x = x_min
    assert np.allclose(w[0, :], w[0, 0], rtol=1e-12)


def test_degenerate_posterior_raises():
    design = OneParamDesign.from_constants(R115, 1.0, 8.0, x_floor=60.0, x_ceil=600.0)
    prior = PriorSpec(kind=PriorKind.UNIFORM_1P, constants=R115, one_param=design)
    with pytest.raises(DegeneratePosteriorError):
        build_posterior(prior, [Observation(60.0, 1)], resolution=101)


def test_resolution_floor_enforced():
    with pytest.raises(DomainError):
        build_posterior(PRIOR_2P, resolution=11)


def test_observation_outside_bounds_rejected():
    with pytest.raises(DomainError):
        build_posterior(PRIOR_2P, [Observation(601.0, 0)], resolution=41)


def test_incremental_update_matches_scratch_build_bitwise():
    g = build_posterior(PRIOR_2P, resolution=61)
    for ob in THREE_OBS:
        g = with_observation(g, ob)
    scratch = build_posterior(PRIOR_2P, THREE_OBS, resolution=61)
    assert np.array_equal(g.log_weights, scratch.log_weights)
    assert g.log_norm == scratch.log_norm
    assert g.n_obs == scratch.n_obs == 3


def test_normalization_after_every_update():
    g = build_posterior(PRIOR_2P, resolution=61)
    for ob in THREE_OBS * 5:
        g = with_observation(g, ob)
        assert abs(g.masses().sum() - 1.0) < 1e-10


# ---------------------------------------------------------------------------
# marginal cdf / quantile
# ---------------------------------------------------------------------------

def test_prior_cdf_below_support_is_zero():
    g = build_posterior(PRIOR_2P)
    assert marginal_cdf_mtd(g, 59.0) == 0.0
    assert marginal_cdf_mtd(g, 601.0) == 1.0


def test_prior_cdf_is_uniform():
    g = build_posterior(PRIOR_2P)
    assert marginal_cdf_mtd(g, 222.0) == pytest.approx(0.30, abs=1e-12)


def test_prior_quantile_exact():
    g = build_posterior(PRIOR_2P)
    assert quantile_mtd(g, 0.3) == pytest.approx(222.0, abs=1e-9)


def test_posterior_cdf_of_median_is_half():
    g = build_posterior(PRIOR_2P, THREE_OBS)
    med = quantile_mtd(g, 0.5)
    assert marginal_cdf_mtd(g, med) == pytest.approx(0.5, abs=2 / 201)


def test_quantile_of_symmetric_marginal_is_centre():
    mid = np.linspace(0.05, 0.95, 19)
    masses = np.exp(-0.5 * ((mid - 0.5) / 0.2) ** 2)
    marg = MtdMarginal.from_cells(mid - 0.025, mid + 0.025, masses)
    assert marg.quantile(0.5) == pytest.approx(0.5, abs=1e-12)


def test_cdf_monotone_over_sweep():
    rng = np.random.default_rng(7)
    for _ in range(5):
        n = rng.integers(1, 8)
        obs = [Observation(float(rng.uniform(60, 600)), int(rng.random() < 0.3))
               for _ in range(n)]
        g = build_posterior(PRIOR_2P, obs, resolution=81)
        ts = np.linspace(0.0, 700.0, 1000)
        vals = np.array([marginal_cdf_mtd(g, float(t)) for t in ts])
        assert np.all(np.diff(vals) >= -1e-15)
        assert vals[0] == 0.0 and vals[-1] == 1.0


def test_quantile_cdf_inversion():
    g = build_posterior(PRIOR_2P, THREE_OBS)
    res = g.resolution[1]
    for alpha in np.arange(0.05, 0.96, 0.05):
        q = quantile_mtd(g, float(alpha))
        assert abs(marginal_cdf_mtd(g, q) - alpha) <= 2 / res


def test_refinement_stability():
    base = build_posterior(PRIOR_2P, THREE_OBS, resolution=(201, 201))
    fine = build_posterior(PRIOR_2P, THREE_OBS, resolution=(402, 402))
    for alpha in (0.1, 0.25, 0.5, 0.9):
        move = abs(quantile_mtd(base, alpha) - quantile_mtd(fine, alpha))
        assert move < 0.005 * 540.0


# ---------------------------------------------------------------------------
# HPD
# ---------------------------------------------------------------------------

def test_hpd_full_level_returns_support():
    g = build_posterior(PRIOR_2P, resolution=(54, 54))
    lo, hi = hpd_interval(g, 0.9999)
    assert lo == pytest.approx(60.0, abs=1e-9)
    assert hi == pytest.approx(600.0, abs=1e-9)


def test_hpd_triangular_matches_closed_form():
    # symmetric triangle on [0, 1]: the level-0.5 HPD has width 1 - sqrt(0.5)
    n = 400
    edges = np.linspace(0.0, 1.0, n + 1)
    lo, hi = edges[:-1], edges[1:]
    mid = 0.5 * (lo + hi)
    masses = np.where(mid <= 0.5, mid, 1.0 - mid)
    marg = MtdMarginal.from_cells(lo, hi, masses)
    a, b = marg.hpd(0.5)
    width_expected = 1.0 - math.sqrt(0.5)
    assert (a + b) / 2 == pytest.approx(0.5, abs=3 / n)
    assert b - a == pytest.approx(width_expected, abs=3 / n)


def test_hpd_flat_density_tie_breaks_centred():
    g = build_posterior(PRIOR_2P, resolution=(54, 54))
    lo, hi = hpd_interval(g, 0.95)
    assert hi - lo == pytest.approx(0.95 * 540.0, abs=2 * 540.0 / 54)
    assert (lo + hi) / 2 == pytest.approx(330.0, abs=2 * 540.0 / 54)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def test_prior_moments_match_uniform():
    g = build_posterior(PRIOR_2P)
    s = summaries(g)
    assert s["mean"] == pytest.approx(330.0, abs=1e-9)
    assert s["sd"] == pytest.approx(540.0 / math.sqrt(12.0), rel=1e-9)
    assert s["median"] == pytest.approx(330.0, abs=1e-6)


def test_near_point_mass_summaries_agree():
    n = 201
    edges = np.linspace(60.0, 600.0, n + 1)
    masses = np.full(n, 1e-12)
    masses[120] = 1.0
    marg = MtdMarginal.from_cells(edges[:-1], edges[1:], masses)
    cell_mid = 0.5 * (edges[120] + edges[121])
    width = edges[1] - edges[0]
    assert abs(marg.mean() - cell_mid) < width
    assert abs(marg.mode() - cell_mid) < width
    assert abs(marg.median() - cell_mid) < width


# ---------------------------------------------------------------------------
# Monte Carlo oracle and quadrature agreement
# ---------------------------------------------------------------------------

def test_mc_oracle_prior_mean():
    mc = mc_oracle(PRIOR_2P, sample_count=100_000, seed=11)
    tol = 3.0 * (540.0 / math.sqrt(12.0)) / math.sqrt(100_000)
    assert mc.mean() == pytest.approx(330.0, abs=tol)
    assert not mc.low_ess


def test_mc_oracle_deterministic():
    a = mc_oracle(PRIOR_2P, THREE_OBS, sample_count=20_000, seed=3)
    b = mc_oracle(PRIOR_2P, THREE_OBS, sample_count=20_000, seed=3)
    assert np.array_equal(a.weights, b.weights)
    assert all(np.array_equal(a.draws[k], b.draws[k]) for k in a.draws)


def test_mc_oracle_rejects_small_samples():
    with pytest.raises(DomainError):
        mc_oracle(PRIOR_2P, sample_count=100)


def test_mc_oracle_flags_low_effective_sample_size():
    # a long trial concentrates the likelihood onto a thin ridge of the prior
    rng = np.random.default_rng(0)
    truth = TwoParamState(0.05, 330.0)
    obs = []
    for _ in range(600):
        x = float(rng.uniform(60.0, 600.0))
        p = float(models.prob_dlt_two_param(x, truth, R115))
        obs.append(Observation(x, int(rng.random() < p)))
    mc = mc_oracle(PRIOR_2P, obs, sample_count=10_000, seed=3)
    assert mc.ess < 100.0
    assert mc.low_ess


def test_grid_median_and_mean_match_mc_oracle():
    g = build_posterior(PRIOR_2P, THREE_OBS)
    mc = mc_oracle(PRIOR_2P, THREE_OBS, sample_count=1_000_000, seed=5)
    assert quantile_mtd(g, 0.5) == pytest.approx(mc.quantile(0.5), abs=0.5)
    assert summaries(g)["mean"] == pytest.approx(mc.mean(), abs=0.5)
    assert quantile_mtd(g, 0.25) == pytest.approx(mc.quantile(0.25), abs=1.0)


# ---------------------------------------------------------------------------
# covariate models
# ---------------------------------------------------------------------------

def test_cov3_prior_conditional_mtd_at_reference_is_uniform():
    g = build_posterior(PRIOR_COV3, resolution=(61, 61, 61))
    # at the reference covariate the conditional MTD is the gamma_max axis itself;
    # node values sit at cell midpoints, so allow one cell of discretisation
    cell = 99.0 / 61
    assert quantile_mtd(g, 0.25, w=(200.0,)) == pytest.approx(1.0 + 0.25 * 99.0, abs=cell)
    assert marginal_cdf_mtd(g, 50.5, w=(200.0,)) == pytest.approx(0.5, abs=0.01)


def test_cov3_requires_covariate_vector():
    g = build_posterior(PRIOR_COV3, resolution=(41, 41, 41))
    with pytest.raises(DomainError):
        quantile_mtd(g, 0.25)
    with pytest.raises(DomainError):
        quantile_mtd(build_posterior(PRIOR_2P, resolution=41), 0.25, w=(100.0,))


def test_cov3_grid_agrees_with_mc_oracle():
    obs = [Observation(1.0, 0, (50.0,)), Observation(10.0, 0, (120.0,)),
           Observation(30.0, 1, (80.0,))]
    g = build_posterior(PRIOR_COV3, obs, resolution=(61, 61, 61))
    mc = mc_oracle(PRIOR_COV3, obs, sample_count=400_000, seed=23)
    for w in ((0.0,), (100.0,), (200.0,)):
        assert quantile_mtd(g, 0.25, w=w) == pytest.approx(mc.quantile(0.25, w=w), abs=1.5)


def test_cov4_monte_carlo_posterior():
    cov = CovariateSpec(name="anti_sea_e120", c_lo=0.0, c_hi=200.0,
                        group_name="cancer_type", group_levels=(1.0, 0.0))
    prior = PriorSpec(kind=PriorKind.UNIFORM_COV4, constants=ABR, covariates=cov,
                      mc_draws=200_000, mc_seed=42)
    g = build_posterior(prior)
    # prior-only: conditional MTD at the reference covariate is uniform on [1, 100]
    assert quantile_mtd(g, 0.5, w=(200.0, 1.0)) == pytest.approx(50.5, abs=1.0)
    obs = [Observation(1.0, 0, (50.0, 1.0)), Observation(20.0, 1, (50.0, 0.0))]
    g2 = build_posterior(prior, obs)
    assert g2.n_obs == 2
    q = quantile_mtd(g2, 0.25, w=(100.0, 1.0))
    assert 1.0 <= q <= 100.0


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_grid_json_round_trip():
    g = build_posterior(PRIOR_2P, THREE_OBS, resolution=41)
    doc = grid_to_json(g)
    parsed = json.loads(doc)
    assert set(parsed) == {"axes", "log_weights", "log_norm", "n_obs"}
    assert len(parsed["log_weights"]) == 41 * 41
    g2 = grid_from_json(PRIOR_2P, doc)
    assert np.array_equal(g.log_weights, g2.log_weights)
    assert g2.n_obs == 3
    assert quantile_mtd(g2, 0.3) == quantile_mtd(g, 0.3)


def test_density_samples_integrate_to_one():
    g = build_posterior(PRIOR_2P, THREE_OBS, resolution=81)
    xs, ys = g.mtd_marginal().density_samples(256)
    assert xs.size == ys.size == 256
    assert np.trapezoid(ys, xs) == pytest.approx(1.0, abs=1e-9)
