import numpy as np
import pytest

from ecgraph.crtnet import autograd as ag
from ecgraph.crtnet.gradcheck import OPS, UnknownOp, example_case, grad_check


def test_linear_is_exact_to_rounding():
    params, x, kw = example_case("linear")
    assert grad_check("linear", params, x, **kw) < 1e-8


@pytest.mark.parametrize("op", sorted(OPS))
def test_registered_op_passes(op):
    params, x, kw = example_case(op, seed=1)
    assert grad_check(op, params, x, epsilon=1e-5, **kw) < 1e-4


def test_details_cover_every_block():
    params, x, kw = example_case("gru_step")
    worst, details = grad_check("gru_step", params, x, return_details=True, **kw)
    assert set(details) == set(params) | {"<input>"}
    assert worst == max(details.values())


def test_unknown_op():
    with pytest.raises(UnknownOp):
        grad_check("nope", {}, np.zeros(1))
    with pytest.raises(UnknownOp):
        example_case("nope")


@pytest.mark.parametrize("eps", [1e-8, 1e-2])
def test_epsilon_range(eps):
    params, x, kw = example_case("linear")
    with pytest.raises(ValueError):
        grad_check("linear", params, x, epsilon=eps, **kw)


def test_detects_a_wrong_backward(monkeypatch):
    def doubled_tanh(p, x, **_):
        a = x @ p["W"]

        def back(out):
            a._accum(2.0 * out.grad * (1 - out.data ** 2))
        return ag.make(np.tanh(a.data), (a,), back)

    monkeypatch.setitem(OPS, "broken", doubled_tanh)
    params, x, _ = example_case("linear")
    assert grad_check("broken", {"W": params["W"]}, x) > 0.1
