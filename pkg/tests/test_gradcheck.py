import numpy as np
import pytest

from mgfi_tvr import gradcheck as gc
from mgfi_tvr import tensor as T


def test_numeric_grad_of_quadratic():
    x = np.array([1.0, -2.0, 3.0])
    g = gc.numeric_grad(lambda: float((x**2).sum()), x)
    np.testing.assert_allclose(g, 2 * x, atol=1e-8)
    np.testing.assert_array_equal(x, [1.0, -2.0, 3.0])


def test_rel_error_floor_turns_into_absolute_check():
    assert gc.rel_error(np.zeros(3), np.full(3, 1e-12)) < 1e-7
    assert gc.rel_error(np.ones(3), np.ones(3) * 1.1) == pytest.approx(0.1 / 1.1)


@pytest.mark.parametrize("op", sorted(gc.CHECKS))
def test_each_check_passes_at_every_dim(op):
    for c in gc.DIMS:
        assert gc.CHECKS[op](c, np.random.default_rng([0, c])) < gc.TOLERANCE


def _broken_softmax_backward(dy, y):
    return y * dy  # drops the centring term


def test_fault_in_softmax_backward_is_caught(monkeypatch):
    monkeypatch.setattr(T, "softmax_backward", _broken_softmax_backward)
    rng = np.random.default_rng(0)
    assert gc.CHECKS["softmax"](4, rng) > gc.TOLERANCE
    assert gc.CHECKS["mgfi_sentence_frame"](4, rng) > gc.TOLERANCE


def test_fault_in_layer_norm_backward_is_caught(monkeypatch):
    real = T.layer_norm_backward

    def scaled(dy, x, p):
        dx, dg, db = real(dy, x, p)
        return dx * 1.01, dg, db

    monkeypatch.setattr(T, "layer_norm_backward", scaled)
    assert gc.CHECKS["layer_norm"](4, np.random.default_rng(0)) > gc.TOLERANCE
    assert gc.CHECKS["cmfi"](4, np.random.default_rng(0)) > gc.TOLERANCE


def test_fault_in_max_routing_is_caught(monkeypatch):
    real = T.row_max_backward
    monkeypatch.setattr(T, "row_max_backward", lambda dy, idx, n: real(dy, (idx + 1) % n, n))
    assert gc.CHECKS["mgfi_word_frame"](4, np.random.default_rng(0)) > gc.TOLERANCE


def test_report_bookkeeping():
    rep = gc.GradcheckReport(0, [gc.GradcheckEntry("a", 2, 1e-6), gc.GradcheckEntry("a", 4, 2e-4)])
    assert not rep.passed
    assert [(e.op, e.dim) for e in rep.failures()] == [("a", 4)]
    assert rep.worst() == {"a": 2e-4}
    assert "FAIL" in rep.lines()[0]


def test_gradcheck_all_subset_is_deterministic():
    a = gc.gradcheck_all(3, dims=(2,))
    b = gc.gradcheck_all(3, dims=(2,))
    assert [e.max_rel_error for e in a.entries] == [e.max_rel_error for e in b.entries]
    assert a.passed and len(a.entries) == len(gc.CHECKS)
