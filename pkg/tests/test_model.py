import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vsdeeponet.model import (
    ModelConfig,
    Scaler,
    SDeepONet,
    UnfittedScalerError,
    apply_scaler,
    combine,
    combine_naive,
    count_params,
    fit_scaler,
    invert_scaler,
    trunk_only_count,
)
from vsdeeponet.nn import gradcheck

TOY = ModelConfig(n_steps=5, n_components=2, hd=4, trunk_hidden=(7, 7), branch_hidden=(8, 4, 4, 8))


def zero_model(cfg=TOY, beta=0.0):
    m = SDeepONet(cfg, seed=0)
    for v in m.params.values():
        v[...] = 0.0
    m.beta[0] = beta
    return m


def test_zero_branch_is_zero():
    m = zero_model()
    assert np.all(m.branch_forward(np.ones(5)) == 0.0)


def test_branch_shape_paper_scale():
    cfg = ModelConfig(n_steps=25, n_components=3, hd=32, branch_hidden=(8, 8, 8, 8), trunk_hidden=(4,))
    m = SDeepONet(cfg, seed=0)
    assert m.branch_forward(np.linspace(-1, 1, 25)).shape == (32, 25)


def test_branch_rejects_wrong_length():
    with pytest.raises(ValueError):
        SDeepONet(TOY).branch_forward(np.zeros(6))


def test_branch_is_order_sensitive(rng):
    m = SDeepONet(TOY, seed=3)
    x = rng.normal(size=5)
    perm = np.array([4, 2, 0, 1, 3])
    assert not np.allclose(m.branch_forward(x), m.branch_forward(x[perm]))


def test_trunk_shape_and_duplicate_rows(rng):
    cfg = ModelConfig(n_steps=2, n_components=3, hd=32, trunk_hidden=(5,), branch_hidden=(2,))
    m = SDeepONet(cfg, seed=0)
    xy = rng.uniform(size=(4961, 2))
    xy[7] = xy[3]
    T = m.trunk_forward(xy)
    assert T.shape == (4961, 32, 3)
    np.testing.assert_array_equal(T[7], T[3])


def test_trunk_slot_ordering(rng):
    m = SDeepONet(TOY, seed=0)
    xy = rng.uniform(size=(3, 2))
    h = xy
    for d in m.trunk:
        h = d.forward(h)
    T = m.trunk_forward(xy)
    for hh in range(TOY.hd):
        for c in range(TOY.n_components):
            np.testing.assert_array_equal(T[:, hh, c], h[:, hh * TOY.n_components + c])


def test_zero_final_trunk_layer():
    m = SDeepONet(TOY, seed=0)
    m.trunk[-1].params["W"][...] = 0.0
    assert np.all(m.trunk_forward(np.random.default_rng(0).uniform(size=(6, 2))) == 0.0)


def test_combine_zero_branch_gives_beta(rng):
    G = combine(np.zeros((4, 3)), rng.normal(size=(5, 4, 2)), 0.75)
    assert G.shape == (3, 5, 2) and np.all(G == 0.75)


def test_combine_hand_value():
    G = combine(np.array([[1.0], [2.0]]), np.array([[[3.0], [4.0]]]), 0.5)
    assert G[0, 0, 0] == 11.5


def test_combine_matches_naive_loop(rng):
    B = rng.normal(size=(32, 25))
    T = rng.normal(size=(100, 32, 3))
    assert np.max(np.abs(combine(B, T, 0.3) - combine_naive(B, T, 0.3))) <= 1e-12


def test_combine_dimension_mismatch():
    with pytest.raises(ValueError):
        combine(np.zeros((3, 2)), np.zeros((4, 4, 1)), 0.0)


def test_combine_linear_in_trunk(rng):
    B = rng.normal(size=(6, 4))
    T1, T2 = rng.normal(size=(5, 6, 2)), rng.normal(size=(5, 6, 2))
    a, b, beta = 0.7, -1.3, 0.2
    lhs = combine(B, a * T1 + b * T2, beta)
    rhs = a * combine(B, T1, beta) + b * combine(B, T2, beta) - (a + b - 1) * beta
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_zero_model_forward_is_beta():
    m = zero_model(beta=0.25)
    out = m.forward(np.ones(5), np.zeros((6, 2)))
    assert out.shape == (6, 5, 2) and np.all(out == 0.25)


def test_identical_loads_identical_outputs(rng):
    m = SDeepONet(TOY, seed=1)
    x = rng.normal(size=5)
    out = m.forward(np.stack([x, x]), rng.uniform(size=(6, 2)))
    np.testing.assert_array_equal(out[0], out[1])


def test_random_model_output_finite(rng):
    m = SDeepONet(TOY, seed=1)
    out = m.forward(rng.normal(size=5), rng.uniform(size=(9, 2)))
    assert out.shape == (9, 5, 2) and np.all(np.isfinite(out))


def test_basis_reconstruction(rng):
    cfg = ModelConfig(n_steps=5, n_components=2, hd=32, trunk_hidden=(7,), branch_hidden=(4,))
    m = SDeepONet(cfg, seed=2)
    m.beta[0] = -0.4
    load, xy = rng.normal(size=5), rng.uniform(size=(6, 2))
    basis, weights = m.extract_basis(load, xy)
    assert basis.shape == (32, 6, 2)  # HD basis fields for each component
    assert weights.shape == (32, 5)
    recon = np.einsum("hs,hnc->nsc", weights, basis) + m.beta[0]
    np.testing.assert_allclose(recon, m.forward(load, xy), rtol=0, atol=1e-12)


def test_model_gradcheck(rng):
    m = SDeepONet(TOY, seed=1)
    m.beta[0] = 0.3
    batch = (rng.normal(size=(3, 5)), rng.uniform(size=(6, 2)), rng.normal(size=(3, 5, 6, 2)))
    assert gradcheck(m, batch, n_coords=200) <= 1e-5


def test_param_count_matches_instantiated_model():
    for cfg in (TOY, ModelConfig(n_steps=3, n_components=3, hd=8, trunk_hidden=(32, 32), branch_hidden=(16, 8))):
        assert count_params(cfg) == SDeepONet(cfg).n_params()


def test_trunk_only_hand_count():
    assert trunk_only_count([2, 3, 1]) == 13


def test_vector_minus_scalar_paper_delta():
    vec = ModelConfig(n_steps=40, n_components=2, hd=32)
    sca = ModelConfig(n_steps=40, n_components=1, hd=32)
    assert count_params(vec) - count_params(sca) == 101 * 32 + 32 == 3264
    assert 3264 / 797711 == pytest.approx(0.00409, abs=1e-5)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 64),
    st.integers(1, 6),
    st.lists(st.integers(1, 128), min_size=1, max_size=6),
    st.lists(st.integers(1, 64), min_size=1, max_size=4),
)
def test_vector_scalar_delta_formula(hd, c, trunk, branch):
    v = ModelConfig(n_steps=3, n_components=c, hd=hd, trunk_hidden=tuple(trunk), branch_hidden=tuple(branch))
    s = ModelConfig(n_steps=3, n_components=1, hd=hd, trunk_hidden=tuple(trunk), branch_hidden=tuple(branch))
    assert count_params(v) - count_params(s) == (c - 1) * (trunk[-1] * hd + hd)


def test_config_round_trip():
    assert ModelConfig.from_dict(TOY.to_dict()) == TOY
    assert TOY.trunk_widths == (2, 7, 7, 8)


# -- scalers -------------------------------------------------------------------

def test_step_maxabs_zero_step_clamped(rng):
    data = rng.normal(size=(3, 4, 5, 2))
    data[:, 0] = 0.0
    sc = fit_scaler(data, "step-maxabs")
    assert np.all(sc.scale[0] == 1e-8)
    out = apply_scaler(sc, data)
    assert np.all(out[:, 0] == 0.0)
    np.testing.assert_allclose(np.abs(out[:, 1:]).max(axis=(0, 2)), 1.0, rtol=1e-15)


def test_minmax_range(rng):
    data = rng.normal(size=(3, 4, 5, 2)) * np.array([300.0, 0.01])
    out = apply_scaler(fit_scaler(data, "minmax"), data)
    np.testing.assert_allclose(out.reshape(-1, 2).min(axis=0), 0.0, atol=1e-15)
    np.testing.assert_allclose(out.reshape(-1, 2).max(axis=0), 1.0, rtol=1e-15)


@pytest.mark.parametrize("kind", Scaler.KINDS)
def test_scaler_round_trip(kind, rng):
    data = rng.normal(size=(3, 4, 5, 2)) * 50.0
    sc = fit_scaler(data, kind)
    back = invert_scaler(sc, apply_scaler(sc, data))
    np.testing.assert_allclose(back, data, rtol=1e-6)


def test_unfitted_scaler_raises():
    with pytest.raises(UnfittedScalerError):
        invert_scaler(Scaler("minmax"), np.zeros(3))
    with pytest.raises(ValueError):
        Scaler("zscore")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(1e-3, 1e6))
def test_scaler_round_trip_property(seed, mag):
    data = np.random.default_rng(seed).normal(size=(2, 3, 4, 2)) * mag
    for kind in Scaler.KINDS:
        sc = fit_scaler(data, kind)
        np.testing.assert_allclose(invert_scaler(sc, apply_scaler(sc, data)), data, rtol=1e-6, atol=1e-12 * mag)
