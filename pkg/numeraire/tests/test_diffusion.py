import numpy as np
import pytest
from numpy.testing import assert_allclose

from numeraire.classes import NAA, SAA, RankError
from numeraire.diagnostics import TerminalLaw
from numeraire.diffusion import (
    DiffusionModelSpec,
    bundle_moments,
    constant_lambda_hellinger,
    constant_lambda_tail,
    driver_increments,
    market_price_of_risk,
    model_family,
    refine_increments,
    replicate_numeraire,
    risk_premium_diagnostic,
    simulate,
    verify_tail_transfer,
)


def test_market_price_of_risk():
    assert_allclose(market_price_of_risk([[0.5, 0.0]], [0.1]), [0.2, 0.0])
    assert_allclose(market_price_of_risk([[1.0, 1.0]], [0.2]), [0.1, 0.1])


def test_market_price_of_risk_rank():
    with pytest.raises(RankError) as err:
        market_price_of_risk([[1.0, 1.0], [2.0, 2.0]], [0.1, 0.2])
    assert err.value.smallest_singular_value < 1e-10
    with pytest.raises(ValueError):
        market_price_of_risk([[1.0, 0.0]], [0.1, 0.2])


def test_spec_checks():
    with pytest.raises(ValueError):
        DiffusionModelSpec([0.1, 0.1], [[1.0], [1.0]], 1.0)
    with pytest.raises(ValueError):
        DiffusionModelSpec([0.1], [[1.0]], 0.0)


def test_constant_lambda_laws():
    assert_allclose(constant_lambda_hellinger(np.array([0.5]), 4.0, 0.5), np.exp(-0.125))
    assert_allclose(constant_lambda_tail(np.array([0.5]), 4.0, np.exp(0.5)), 0.5)


@pytest.fixture(scope="module")
def half_lambda_bundle():
    # lambda = 0.5, T = 4: ln V_T ~ N(0.5, 1).
    spec = DiffusionModelSpec([0.5], [[1.0]], 4.0)
    return simulate(spec, 8, 100000, seed=11)


def test_hellinger_identity_by_simulation(half_lambda_bundle):
    law = TerminalLaw(half_lambda_bundle.V_T)
    for alpha in (0.25, 0.5):
        est, se = law.mean(lambda v: v ** -alpha)
        exact = constant_lambda_hellinger(np.array([0.5]), 4.0, alpha)
        assert abs(est - exact) <= 3 * se

    tail, se = law.prob(law.values >= np.exp(0.5))
    assert abs(tail - 0.5) <= 3 * se


def test_log_numeraire_moments(half_lambda_bundle):
    lnV = half_lambda_bundle.log_V_T
    P = lnV.size
    assert abs(lnV.mean() - 0.5) <= 3 * lnV.std(ddof=1) / np.sqrt(P)

    centred = (lnV - lnV.mean()) ** 2
    assert abs(lnV.var(ddof=1) - 1.0) <= 3 * centred.std(ddof=1) / np.sqrt(P)


def test_inverse_numeraire_is_supermartingale(half_lambda_bundle):
    moments = bundle_moments(half_lambda_bundle)
    assert moments["mean_inverse_V_T"] <= 1.0 + 3 * moments["se_inverse_V_T"]


def test_mean_price_growth():
    spec = DiffusionModelSpec([0.1], [[0.2]], 1.0, s0=2.0)
    bundle = simulate(spec, 10, 20000, seed=5)
    S_T = bundle.S_T[:, 0]
    se = S_T.std(ddof=1) / np.sqrt(S_T.size)
    assert abs(S_T.mean() - 2.0 * np.exp(0.1)) <= 3 * se


def test_zero_drift_gives_unit_numeraire():
    spec = DiffusionModelSpec([0.0], [[0.3]], 2.0)
    bundle = simulate(spec, 5, 100, seed=1)
    assert_allclose(bundle.log_V_T, 0.0, rtol=0, atol=0)
    assert_allclose(bundle.V_T, 1.0, rtol=0, atol=0)
    assert_allclose(bundle.integral, 0.0, rtol=0, atol=0)


def test_chunking_and_pool_do_not_change_paths():
    from numeraire.classes import Pool

    spec = DiffusionModelSpec([0.1, 0.05], [[0.2, 0.0], [0.1, 0.3]], 1.0)
    a = simulate(spec, 10, 50, seed=3)
    with Pool(3) as pool:
        b = simulate(spec, 10, 50, seed=3, chunk=7, pool=pool)
    assert_allclose(a.log_V_T, b.log_V_T, rtol=0, atol=0)
    assert_allclose(a.S_T, b.S_T, rtol=0, atol=0)


def test_given_increments_are_used():
    spec = DiffusionModelSpec([0.1], [[0.2]], 1.0)
    dW = driver_increments(spec, 4, 10, seed=1)
    bundle = simulate(spec, 4, 10, seed=99, dW=dW)
    lam = 0.5
    assert_allclose(bundle.log_V_T, 0.5 * lam ** 2 + lam * dW.sum(axis=(1, 2)))
    with pytest.raises(ValueError):
        simulate(spec, 5, 10, seed=1, dW=dW)


def test_refine_increments():
    dW = np.arange(12.0).reshape(2, 3, 2)
    fine = refine_increments(dW)
    assert fine.shape == (2, 6, 2)
    assert_allclose(fine.sum(axis=1), dW.sum(axis=1))


def test_refinement_is_exact_for_constant_coefficients():
    spec = DiffusionModelSpec([0.1, 0.05], [[0.2, 0.0], [0.1, 0.3]], 1.0)
    dW = driver_increments(spec, 20, 200, seed=6)
    coarse = simulate(spec, 20, 200, seed=6, dW=dW)
    fine = simulate(spec, 40, 200, seed=6, dW=refine_increments(dW))
    assert_allclose(fine.log_V_T, coarse.log_V_T, rtol=0, atol=1e-12)
    assert_allclose(fine.S_T, coarse.S_T, rtol=1e-12)


def _local_volatility():
    return DiffusionModelSpec(
        lambda t, S: 0.05 * np.ones_like(S),
        lambda t, S: (0.2 + 0.1 * np.tanh(np.log(S)))[:, :, None],
        1.0,
        d=1,
        m=1,
    )


def test_refinement_error_shrinks_with_step():
    spec = _local_volatility()
    steps = 50
    dW = driver_increments(spec, steps, 2000, seed=12)
    coarse = simulate(spec, steps, 2000, seed=12, dW=dW)
    fine = simulate(spec, 2 * steps, 2000, seed=12, dW=refine_increments(dW))
    rms = np.sqrt(np.mean((fine.log_V_T - coarse.log_V_T) ** 2))
    assert 0 < rms <= spec.T / steps


def test_replication_tracks_closed_form():
    spec = DiffusionModelSpec([0.02], [[0.2]], 1.0)
    steps = 1000
    bundle = simulate(spec, steps, 50, seed=4, keep_paths=True)
    wealth = replicate_numeraire(bundle)
    diff = wealth[:, -1] - bundle.paths["log_V"][:, -1]
    assert np.sqrt(np.mean(diff ** 2)) <= 2 * spec.T / steps


def test_local_volatility_model():
    bundle = simulate(_local_volatility(), 20, 100, seed=2)
    assert bundle.n_paths == 100
    assert bundle.excluded == 0
    assert np.all(bundle.integral > 0)
    moments = bundle_moments(bundle)
    assert moments["paths"] == 100


def test_tail_transfer_holds():
    spec = DiffusionModelSpec([0.3], [[1.0]], 2.0)
    bundle = simulate(spec, 10, 2000, seed=8)
    for alpha in (0.1, 0.5):
        for M, N in ((1.0, 1.0), (2.0, 0.5), (5.0, 3.0)):
            res = verify_tail_transfer(bundle, alpha, M, N)
            assert res["value_tail"]["ok"]
            assert res["integral_tail"]["ok"]


def test_model_family_power():
    family = model_family({"type": "scalar-power-family", "a": 0.5, "p": 1, "b": 1, "q": 0})
    spec = family(4)
    assert_allclose(spec.mu, [0.125])
    with pytest.raises(ValueError):
        model_family({"type": "nope"})


MC = {"paths": 200, "steps": 5, "seed": 7}


def test_shrinking_premium_is_naa():
    family = model_family({"type": "scalar-power-family", "a": 0.5, "p": 1, "b": 1, "q": 0})
    diag = risk_premium_diagnostic(family, list(range(1, 21)), np.logspace(0, 2, 5), MC)
    assert diag.verdict == NAA
    assert diag.agree


def test_growing_horizon_is_saa():
    family = model_family({"type": "scalar-power-family", "a": 3, "b": 1, "c": 1, "r": 1})
    diag = risk_premium_diagnostic(family, list(range(1, 21)), np.logspace(0, 2, 5), MC)
    assert diag.verdict == SAA
    assert diag.companion.verdict == SAA
    assert len(diag.moments) == 20
