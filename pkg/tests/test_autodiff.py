import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relaxadv import autodiff as ad
from relaxadv.autodiff import Tensor
from relaxadv.errors import DegenerateVectorError, DimensionError, RankError, TokenIndexError
from oracles import central_difference, max_relative_error

rng = np.random.default_rng(0)


def check_grad(build, *shapes, tol=1e-4):
    """Compare the tape gradient of scalar ``build(*tensors)`` with central differences."""
    values = [rng.uniform(-2, 2, size=s) for s in shapes]
    tensors = [Tensor(v, requires_grad=True) for v in values]
    build(*tensors).backward()
    for i, t in enumerate(tensors):
        def fn(x, i=i):
            args = [Tensor(v) for v in values]
            args[i] = Tensor(x)
            return build(*args).item()
        numeric = central_difference(fn, values[i])
        assert max_relative_error(t.grad, numeric) < tol


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)) @ a).data, a.data)
    col = Tensor([[5.0], [7.0]])
    np.testing.assert_array_equal((Tensor(np.eye(2)).T @ col).data, [[5.0], [7.0]])


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(3, 4\).*\(3, 2\)"):
        ad.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))


def test_matmul_gradient_tight():
    check_grad(lambda a, b: ad.sum(a @ b), (3, 4), (4, 2), tol=1e-6)


def test_batched_matmul_broadcast_gradient():
    check_grad(lambda a, b: ad.sum(ad.mul(a @ b, a @ b)), (2, 3, 4), (4, 3))


def test_softmax_values():
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])
    big = ad.softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert np.all(np.isfinite(big))
    np.testing.assert_allclose(big, [[1.0, 0.0]], atol=1e-12)
    exps = [mpmath.e ** k for k in (1, 2, 3)]
    expected = [float(e / mpmath.fsum(exps)) for e in exps]
    out = ad.softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data[0]
    np.testing.assert_allclose(out, expected, atol=1e-12)
    np.testing.assert_allclose(out, [0.09003, 0.24473, 0.66524], atol=1e-4)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_rows_sum_and_shift_invariance(x, c):
    y = ad.softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)
    assert (y >= 0).all()
    np.testing.assert_allclose(ad.softmax_rows(Tensor(x + c)).data, y, atol=1e-9)


def test_cross_entropy_values():
    assert ad.cross_entropy(Tensor(np.zeros((1, 4))), [3]).item() == pytest.approx(np.log(4), abs=1e-12)
    certain = np.zeros((1, 5))
    certain[0, 1] = 1e6
    assert ad.cross_entropy(Tensor(certain), [1]).item() == pytest.approx(0.0, abs=1e-9)
    expected = float(-mpmath.log(mpmath.e ** 3 / (mpmath.e + mpmath.e ** 2 + mpmath.e ** 3)))
    value = ad.cross_entropy(Tensor([[1.0, 2.0, 3.0]]), [2]).item()
    assert value == pytest.approx(expected, abs=1e-12)
    assert value == pytest.approx(0.40761, abs=1e-4)


def test_cross_entropy_excludes_padding_from_mean():
    logits = rng.normal(size=(4, 6))
    full = ad.cross_entropy(Tensor(logits[:2]), [1, 2]).item()
    padded = ad.cross_entropy(Tensor(logits), [1, 2, 0, 0], ignore_index=0).item()
    assert padded == pytest.approx(full, abs=1e-12)


def test_cross_entropy_index_error():
    with pytest.raises(TokenIndexError):
        ad.cross_entropy(Tensor(np.zeros((2, 4))), [1, 4])


def test_cross_entropy_gradient():
    targets = [2, 0, 5]
    check_grad(lambda z: ad.cross_entropy(z, targets), (3, 6))
    check_grad(lambda z: ad.cross_entropy(z, [[2, 0, 5], [1, 0, 0]], ignore_index=0), (2, 3, 6))


def test_cosine_rows_values():
    a = Tensor([[1.0, 2.0], [3.0, -1.0]])
    np.testing.assert_allclose(ad.cosine_rows(a, a).data, [1.0, 1.0], atol=1e-15)
    assert ad.cosine_rows(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])).data[0] == 0.0
    assert ad.cosine_rows(Tensor([[1.0, 2.0]]), Tensor([[2.0, 1.0]])).data[0] == pytest.approx(0.8, abs=1e-9)


def test_cosine_rows_degenerate():
    with pytest.raises(DegenerateVectorError):
        ad.cosine_rows(Tensor([[0.0, 0.0]]), Tensor([[1.0, 0.0]]))


@pytest.mark.parametrize("name,build,shapes", [
    ("add", lambda a, b: ad.sum(ad.mul(a + b, a + b)), [(3, 4), (1, 4)]),
    ("sub", lambda a, b: ad.sum(ad.mul(a - b, a)), [(3, 4), (3, 4)]),
    ("mul", lambda a, b: ad.sum(a * b * a), [(2, 3), (2, 3)]),
    ("scale", lambda a: ad.sum(ad.mul(ad.scale(a, -2.5), a)), [(4,)]),
    ("relu", lambda a: ad.sum(ad.mul(ad.relu(a), a)), [(5, 3)]),
    ("exp", lambda a: ad.sum(ad.exp(a)), [(3, 3)]),
    ("log", lambda a: ad.sum(ad.log(ad.exp(a) + 1.0)), [(3, 3)]),
    ("mean", lambda a: ad.mean(ad.mul(a, a)), [(2, 5)]),
    ("mean_axis", lambda a: ad.sum(ad.mul(ad.mean(a, axis=1), ad.mean(a, axis=1))), [(2, 5)]),
    ("softmax", lambda a: ad.sum(ad.mul(ad.softmax_rows(a), a)), [(3, 5)]),
    ("softmax_axis0", lambda a: ad.sum(ad.mul(ad.softmax(a, axis=0), a)), [(4, 3)]),
    ("log_softmax", lambda a: ad.sum(ad.mul(ad.log_softmax(a), a)), [(3, 5)]),
    ("layer_norm", lambda x, g, b: ad.sum(ad.mul(ad.layer_norm(x, g, b), x)), [(4, 6), (6,), (6,)]),
    ("cosine", lambda a, b: ad.sum(ad.mul(ad.cosine_rows(a, b), ad.cosine_rows(a, b))), [(3, 4), (3, 4)]),
    ("concat_rows", lambda a, b: ad.sum(ad.mul(ad.concat_rows([a, b]), ad.concat_rows([b, a]))), [(2, 3), (2, 3)]),
    ("transpose", lambda a, b: ad.sum(a.T @ b), [(3, 2), (3, 4)]),
    ("transpose_axes", lambda a: ad.sum(ad.mul(ad.transpose(a, (1, 0, 2)), ad.transpose(a, (1, 0, 2)))), [(2, 3, 4)]),
    ("reshape", lambda a: ad.sum(ad.mul(ad.reshape(a, (6, 2)), ad.reshape(a, (6, 2)))), [(3, 4)]),
])
def test_op_gradients_against_finite_differences(name, build, shapes):
    check_grad(build, *shapes)


def test_backward_sum_gives_ones():
    x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    ad.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_backward_quadratic():
    x = Tensor([[3.0, -1.0]], requires_grad=True)
    ad.scale(x @ x.T, 0.5).backward()
    np.testing.assert_allclose(x.grad, [[3.0, -1.0]])


def test_backward_accumulates_across_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ad.sum(x).backward()
    ad.sum(x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(RankError):
        ad.scale(x, 2.0).backward()


def test_two_consumers_sum_contributions():
    xv = rng.normal(size=(3, 3))
    x = Tensor(xv, requires_grad=True)
    shared = ad.exp(x)
    ad.sum(ad.mul(shared, shared) + shared).backward()

    y1 = Tensor(xv, requires_grad=True)
    a, b, c = ad.exp(y1), ad.exp(y1), ad.exp(y1)
    ad.sum(ad.mul(a, b) + c).backward()
    np.testing.assert_allclose(x.grad, y1.grad, atol=1e-12)


def test_no_grad_records_nothing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with ad.no_grad():
        y = ad.exp(x)
    assert not y.requires_grad


def test_ops_are_deterministic():
    x = rng.normal(size=(4, 5))
    a = ad.layer_norm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5))).data
    b = ad.layer_norm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5))).data
    np.testing.assert_array_equal(a, b)
