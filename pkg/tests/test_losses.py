import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusedprop import autograd as ag
from fusedprop import losses as L
from fusedprop.errors import ConfigError, SingularScaleError, UnsupportedLambdaError
from fusedprop.tensor import Rng

# frozen hand-evaluated values at y = 0.5: (L_D^R, L_D, L_G, lam, lam_inv)
SP = np.log1p(np.exp(-0.5))  # softplus(-0.5)
FROZEN = {
    "minimax": (SP, SP + 0.5, -(SP + 0.5), -1.0, -1.0),
    "ns": (SP, SP + 0.5, SP, -np.exp(-0.5), -np.exp(0.5)),
    "wasserstein": (-0.5, 0.5, -0.5, -1.0, -1.0),
    "ls": (0.25, 0.25, 0.25, -1.0, -1.0),
    "hinge": (0.5, 1.5, -0.5, None, -1.0),
}


@pytest.mark.parametrize("name", L.CLI_NAMES)
def test_frozen_values(name):
    spec = L.get_loss(name)
    ldr, ld, lg = L.eval_losses(spec, [0.5], [0.5])
    want = FROZEN[name]
    np.testing.assert_allclose([ldr[0], ld[0], lg[0]], want[:3], rtol=1e-15)
    if want[3] is None:
        with pytest.raises(UnsupportedLambdaError):
            L.lambda_of(spec, [0.5])
    else:
        assert L.lambda_of(spec, [0.5])[0] == pytest.approx(want[3], rel=1e-15)
    assert L.lambda_inv_of(spec, [0.5])[0] == pytest.approx(want[4], rel=1e-15)


def test_aliases_and_unknown():
    assert L.get_loss("ns") is L.get_loss("nonsaturating")
    assert L.get_loss("wgan").name == "wasserstein"
    with pytest.raises(ConfigError):
        L.get_loss("rsgan")


def test_hinge_step_at_zero_is_zero():
    # H(y + 1) at y = -1 is H(0) = 0, so lam_inv is 0 there
    np.testing.assert_array_equal(L.lambda_inv_of("hinge", [-1.5, -1.0, -0.5]), [0.0, 0.0, -1.0])


def test_ls_poles_raise_with_sample_index():
    with pytest.raises(SingularScaleError) as e:
        L.lambda_of("ls", [0.3, 0.0])
    assert e.value.code == "SINGULAR_LAMBDA" and e.value.sample == 1
    with pytest.raises(SingularScaleError) as e:
        L.lambda_inv_of("ls", [1.0])
    assert e.value.code == "SINGULAR_LAMBDA_INV"


def test_ns_large_outputs_stay_finite():
    y = np.array([-700.0, 700.0])
    for v in L.eval_losses("ns", y, y):
        assert np.all(np.isfinite(v))


def test_sample_regular_points_avoid_kinks():
    y = L.sample_regular_points("hinge", 5000, Rng(0))
    assert y.size == 5000
    assert np.all(np.abs(np.abs(y) - 1) >= 1e-3)
    assert y.min() >= -5 and y.max() <= 5


@pytest.mark.parametrize("name", L.CLI_NAMES)
def test_closed_form_derivatives_match_tape(name):
    spec = L.get_loss(name)
    y = L.sample_regular_points(spec, 200, Rng(3))
    (gd,) = ag.grad(lambda v: ag.sum(spec.l_d_fake(v, ag)), y)
    (gg,) = ag.grad(lambda v: ag.sum(spec.l_g(v, ag)), y)
    np.testing.assert_allclose(gd, spec.d_fake(y), rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(gg, spec.d_gen(y), rtol=1e-13, atol=1e-300)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(L.CLI_NAMES), st.floats(-5, 5))
def test_scaling_identity_property(name, y):
    spec = L.get_loss(name)
    if spec.lam_pole is not None and abs(y - spec.lam_pole) < 1e-3:
        return
    if spec.lam_inv_pole is not None and abs(y - spec.lam_inv_pole) < 1e-3:
        return
    if any(abs(y - k) < 1e-3 for k in spec.kinks):
        return
    y = np.array([y])
    dd, dg = spec.d_fake(y), spec.d_gen(y)
    np.testing.assert_allclose(spec.lam_inv(y) * dg, dd, rtol=1e-12, atol=0)
    if spec.has_lambda:
        np.testing.assert_allclose(spec.lam(y) * dd, dg, rtol=1e-12, atol=0)
        np.testing.assert_allclose(spec.lam(y) * spec.lam_inv(y), 1.0, rtol=1e-12)
