import numpy as np
import pytest

from ous import autograd as ag
from ous.autograd import Parameter, Tape
from ous.errors import NumericError
from ous.gradcheck import FULL_TOL, MODULE_TOL, OP_TOL, full_check, grad_check, module_suite, op_suite


def test_quadratic_is_exact(f64, rng):
    theta = Parameter(rng.standard_normal(7))
    assert grad_check(lambda: ag.sum_(theta * theta), [theta], eps=1e-5) < 1e-9


def test_frozen_coordinate_has_zero_analytic_gradient(f64):
    frozen = Parameter([1.5, -2.0], trainable=False)
    live = Parameter([0.3, 0.7])
    with Tape() as tape:
        loss = ag.sum_(frozen * live * live)
    tape.backward(loss)
    assert np.all(frozen.grad == 0.0)
    worst, report = grad_check(lambda: ag.sum_(frozen * live * live), [frozen, live], per_param=True)
    assert list(report) == [None] and worst < 1e-8


def test_non_finite_objective_raises(f64):
    p = Parameter([1.0])
    with pytest.raises(NumericError):
        grad_check(lambda: ag.log(p - 1.0), [p])


def test_probe_restores_parameters(f64, rng):
    p = Parameter(rng.standard_normal(4))
    before = p.data.copy()
    grad_check(lambda: ag.sum_(ag.tanh(p)), [p])
    np.testing.assert_array_equal(p.data, before)


def test_every_primitive_passes(f64):
    results = op_suite()
    assert len(results) >= 25
    bad = [(name, err) for name, err, _ in results if err >= OP_TOL]
    assert not bad


def test_every_module_passes(f64):
    bad = [(name, err) for name, err, _ in module_suite() if err >= MODULE_TOL]
    assert not bad


def test_deep_fusion_stack(f64):
    from ous.config import TFEConfig
    from ous.fusion import TypeFusionEncoder

    rng = np.random.default_rng(3)
    tfe = TypeFusionEncoder(TFEConfig(blocks=12, n_q=2, D_f=8, heads=2, mlp_hidden=8, sigma=0.5), 4, 8, 8, rng, seed=2)
    inputs = [Parameter(rng.standard_normal(s)) for s in ((2, 8), (2, 8), (2, 4))]
    w = rng.standard_normal((2, 8))
    # probing the ends of the stack still differentiates through all twelve blocks
    probed = tfe.queries.parameters() + tfe.blocks[0].parameters() + tfe.blocks[-1].parameters() + inputs
    err = grad_check(lambda: ag.sum_(tfe(*inputs).pooled * w), probed)
    assert err < 1e-3


def test_end_to_end(f64):
    [(_, err, tol)] = full_check()
    assert tol == FULL_TOL
    assert err < FULL_TOL
