import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from econdeepc.plant import (
    CSTR_INPUT_BOUNDS,
    CstrParams,
    CstrPlant,
    LtiSystem,
    NoiseConfig,
    SimulationDiverged,
    cstr_derivative,
    lti_rollout,
    lti_step,
    output,
    random_lti,
    rk4,
    stage_profit,
    step,
)

U_MID = CSTR_INPUT_BOUNDS.center
X0 = np.array([1.954, 401.9, 1.954, 401.9])


def test_params_validation(cstr_params):
    with pytest.raises(ValueError):
        replace(cstr_params, V1=0.0)
    with pytest.raises(ValueError, match="missing"):
        CstrParams.from_dict({"V1": 1.0})
    assert CstrParams.from_dict(cstr_params.to_dict()) == cstr_params


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseConfig(conc_std=-1)
    with pytest.raises(ValueError):
        NoiseConfig(temp_clip=0)


def test_derivative_zero_flux(cstr_params):
    d = cstr_derivative([0.0, 350.0, 1.0, 350.0], [0.0, 0.0, 1.0, 0.0], cstr_params)
    assert d[0] == 0.0


def test_derivative_reaction_term_collapses(cstr_params):
    p = replace(cstr_params, k0=1.0, E=0.0)
    # feed concentration equals the tank's so only the reaction remains
    d = cstr_derivative([2.0, 300.0, 1.0, 300.0], [2.0, 0.0, 1.0, 0.0], p)
    assert d[0] == pytest.approx(-4.0)


def test_derivative_deterministic_and_linear_in_heat(cstr_params):
    x = np.array([1.5, 420.0, 1.2, 430.0])
    u = np.array([4.0, 2e4, 3.0, 1e4])
    np.testing.assert_array_equal(cstr_derivative(x, u, cstr_params), cstr_derivative(x, u, cstr_params))
    d0 = cstr_derivative(x, u * [1, 0, 1, 0], cstr_params)
    d1 = cstr_derivative(x, u, cstr_params)
    d2 = cstr_derivative(x, u * [1, 2, 1, 2], cstr_params)
    np.testing.assert_allclose(d2 - d0, 2 * (d1 - d0), rtol=1e-12)
    # heat only enters the temperature equations
    assert (d1 - d0)[0] == 0 and (d1 - d0)[2] == 0


def test_derivative_nonfinite_state(cstr_params):
    with pytest.raises(SimulationDiverged):
        cstr_derivative([np.nan, 300, 1, 300], U_MID, cstr_params)


def test_step_zero_dt_is_identity(cstr_params):
    x = np.array([1.0, 350.0, 1.0, 360.0])
    np.testing.assert_array_equal(step(x, U_MID, cstr_params, 0.0, NoiseConfig(enabled=False)), x)


def test_step_noise_free_is_bitwise_deterministic(cstr_params):
    a = step(X0, U_MID, cstr_params, 0.025)
    b = step(X0, U_MID, cstr_params, 0.025)
    assert a.tobytes() == b.tobytes()


def test_step_clamps_inputs_with_warning(cstr_params, caplog):
    u_bad = CSTR_INPUT_BOUNDS.hi_arr + [1.0, 10.0, 0.0, 0.0]
    with caplog.at_level(logging.WARNING):
        a = step(X0, u_bad, cstr_params, 0.025)
    assert "clamping" in caplog.text
    np.testing.assert_array_equal(a, step(X0, CSTR_INPUT_BOUNDS.hi_arr, cstr_params, 0.025))


def test_disturbances_within_clip_bounds():
    cfg = NoiseConfig()
    rng = np.random.default_rng(0)
    d = np.array([cfg.draw(rng) for _ in range(100_000 // 2)])
    assert np.all(np.abs(d[:, [0, 2]]) <= 1.0)
    assert np.all(np.abs(d[:, [1, 3]]) <= 50.0)
    # tight clips are hit and respected exactly
    tight = NoiseConfig(conc_std=1.0, conc_clip=0.5, temp_std=10.0, temp_clip=2.0)
    d = np.array([tight.draw(rng) for _ in range(5000)])
    assert np.abs(d[:, [0, 2]]).max() == 0.5 and np.abs(d[:, [1, 3]]).max() == 2.0


def test_disturbance_statistics():
    rng = np.random.default_rng(2)
    d = np.array([NoiseConfig().draw(rng) for _ in range(20000)])
    assert d[:, 0].std() == pytest.approx(0.01, rel=0.05)
    assert d[:, 1].std() == pytest.approx(1.0, rel=0.05)


def test_seeded_noise_reproducible(cstr_params):
    p1 = CstrPlant(cstr_params, NoiseConfig(), X0)
    p2 = CstrPlant(cstr_params, NoiseConfig(), X0)
    p1.reset(7)
    p2.reset(7)
    a = [p1.step(U_MID) for _ in range(5)]
    b = [p2.step(U_MID) for _ in range(5)]
    np.testing.assert_array_equal(a, b)
    p2.reset(8)
    assert not np.array_equal(a[0], p2.step(U_MID))


def test_concentrations_clamped_at_zero(cstr_params):
    big = NoiseConfig(conc_std=0.05, conc_clip=0.1)
    rng = np.random.default_rng(0)
    x = np.array([0.01, 400.0, 0.01, 400.0])
    for _ in range(50):
        x = step(x, U_MID, cstr_params, 0.025, big, rng)
        assert x[0] >= 0 and x[2] >= 0


def test_rk4_convergence_order(cstr_params):
    # Richardson estimate on a noise-free period: error ratio for h vs h/2 ~ 2^4
    x = np.array([2.5, 380.0, 2.0, 390.0])
    u = np.array([5.0, 3e4, 3.0, 6e4])
    dt = 0.1
    ref = rk4(x, u, cstr_params, dt, 2048)
    errs = [np.abs(rk4(x, u, cstr_params, dt, n) - ref).max() for n in (4, 8, 16)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.5


def test_output_identity():
    x = np.array([1.0, 300.0, 1.0, 300.0])
    y = output(x)
    np.testing.assert_array_equal(y, x)
    assert y.shape == (4,)
    np.testing.assert_array_equal(output(output(x)), y)


def test_profit_examples(cstr_params):
    assert stage_profit(U_MID, [0.0, 400.0, 0.0, 410.0], cstr_params) == 0.0
    p = replace(cstr_params, k0=1.0, E=0.0)
    assert stage_profit(U_MID, [1.0, 350.0, 2.0, 360.0], p) == pytest.approx(5.0)
    one = stage_profit(U_MID, [1.3, 420.0, 0.0, 420.0], cstr_params)
    two = stage_profit(U_MID, [1.3, 420.0, 1.3, 420.0], cstr_params)
    assert two == pytest.approx(2 * one, rel=1e-14)


def test_profit_domain_error(cstr_params):
    with pytest.raises(ValueError):
        stage_profit(U_MID, [1.0, 0.0, 1.0, 300.0], cstr_params)


def test_profit_vectorized(cstr_params):
    Y = np.array([[1.0, 400.0, 1.0, 400.0], [2.0, 450.0, 1.0, 500.0]])
    np.testing.assert_allclose(stage_profit(None, Y, cstr_params),
                               [stage_profit(None, y, cstr_params) for y in Y])


@settings(max_examples=60, deadline=None)
@given(C=st.floats(0.01, 5.0), dC=st.floats(0.01, 1.0), T=st.floats(250.0, 800.0), dT=st.floats(0.5, 50.0))
def test_profit_monotone(cstr_params, C, dC, T, dT):
    base = stage_profit(None, [C, T, C, T], cstr_params)
    assert stage_profit(None, [C + dC, T, C, T], cstr_params) > base
    assert stage_profit(None, [C, T, C + dC, T], cstr_params) > base
    assert stage_profit(None, [C, T + dT, C, T], cstr_params) > base
    assert stage_profit(None, [C, T, C, T + dT], cstr_params) > base


def test_lti_step_examples():
    sys = LtiSystem(np.eye(2), np.zeros((2, 1)), np.eye(2), np.zeros((2, 1)))
    x, _ = lti_step(sys, np.array([1.0, -2.0]), np.array([5.0]))
    np.testing.assert_array_equal(x, [1.0, -2.0])
    s = LtiSystem(np.array([[0.5]]), np.array([[1.0]]), np.array([[1.0]]), np.array([[0.0]]))
    x, y = lti_step(s, np.array([2.0]), np.array([0.0]))
    assert x[0] == 1.0 and y[0] == 2.0
    with pytest.raises(ValueError):
        lti_step(s, np.array([1.0, 2.0]), np.array([0.0]))


def test_lti_superposition():
    rng = np.random.default_rng(0)
    sys = random_lti(rng, 3, 2, 2, feedthrough=True)
    u1, u2 = rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
    y1, _ = lti_rollout(sys, np.zeros(3), u1)
    y2, _ = lti_rollout(sys, np.zeros(3), u2)
    y12, _ = lti_rollout(sys, np.zeros(3), u1 + u2)
    np.testing.assert_allclose(y12, y1 + y2, atol=1e-12)


def test_random_lti_controllable_and_stable():
    sys = random_lti(np.random.default_rng(3), n_x=4, n_u=1, n_y=1)
    assert sys.is_controllable()
    assert max(abs(np.linalg.eigvals(sys.A))) == pytest.approx(0.8)
