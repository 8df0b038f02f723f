import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stn.diffcore import AffineParams, grad_check
from stn.errors import ConfigError, EmptyInputError
from stn.losses import (
    ClassIndex,
    LabeledProjectedBatch,
    classification_loss,
    conditional_mmd,
    marginal_mmd,
    one_hot,
    soft_mmd,
)
from stn.model import ModelConfig, SoftLabelMatrix, StnParams, init_params


def hard_partition_mmd(Z_s, y_s, Z_l, y_l, Z_u, y_u, C):
    """Class-wise centroid distance with unlabeled rows assigned by label."""
    total = 0.0
    for k in range(C):
        src = [Z_s[i] for i in range(len(y_s)) if y_s[i] == k]
        tgt = [Z_l[i] for i in range(len(y_l)) if y_l[i] == k]
        tgt += [Z_u[i] for i in range(len(y_u)) if y_u[i] == k]
        diff = sum(src) / len(src) - sum(tgt) / len(tgt)
        total += float(sum(v * v for v in diff))
    return total


def random_instance(rng, C=3, d=4, n_s=15, n_l=6, n_u=11):
    y_s = np.concatenate([np.arange(C), rng.integers(0, C, n_s - C)])
    y_l = np.concatenate([np.arange(C), rng.integers(0, C, n_l - C)])
    return (rng.normal(size=(n_s, d)), y_s, rng.normal(size=(n_l, d)), y_l,
            rng.normal(size=(n_u, d)), ClassIndex.from_labels(y_s, y_l, C))


def test_one_hot_rows():
    assert one_hot([2, 0], 3).tolist() == [[0, 0, 1], [1, 0, 0]]


def test_class_index_rejects_missing_class():
    with pytest.raises(ConfigError, match="class 2"):
        ClassIndex.from_labels([0, 1, 0], [0, 1, 2], 3)
    with pytest.raises(ConfigError, match="class 1"):
        ClassIndex.from_labels([0, 1, 2], [0, 2], 3)


def test_class_index_members():
    idx = ClassIndex.from_labels([0, 1, 0, 2], [2, 1, 0], 3)
    src, tgt = idx.members(0)
    assert src.tolist() == [0, 2] and tgt.tolist() == [2]


# classification loss

def _params(C=3, d=4):
    return init_params(ModelConfig(d_s=3, d_t=2, n_classes=C, d=d, hidden=5, init_seed=0))


def _with_clf(p, W, b):
    return StnParams(p.phi_s1, p.phi_s2, p.phi_t1, p.phi_t2, AffineParams(W, b))


def test_classification_loss_perfect_prediction():
    p = _with_clf(_params(), 100.0 * np.eye(4)[:, :3], np.zeros((1, 3)))
    Z = np.eye(4)[:3]
    res = classification_loss(LabeledProjectedBatch(Z, np.eye(3)), p, 0.0)
    assert res.cls_loss <= 1e-10 and res.reg_term == 0.0


def test_classification_loss_uniform_prediction():
    p = _with_clf(_params(), np.zeros((4, 3)), np.zeros((1, 3)))
    Z = np.random.default_rng(0).normal(size=(7, 4))
    Y = one_hot([0, 1, 2, 0, 1, 2, 0], 3)
    res = classification_loss(LabeledProjectedBatch(Z, Y), p, 0.0)
    assert res.cls_loss == pytest.approx(math.log(3), abs=1e-12)


def test_regularizer_is_hand_sum_of_squared_weights():
    p = _params()
    hand = 0.0
    for _, layer in p.layers():
        for v in layer.weight.ravel():
            hand += v * v
    Z = np.ones((3, 4))
    res = classification_loss(LabeledProjectedBatch(Z, np.eye(3)), p, 0.001)
    assert res.reg_term == pytest.approx(0.001 * hand, rel=1e-12)
    p_b = p.map(lambda a: a + 0.0)
    p_b = StnParams(*(AffineParams(l.weight, l.bias + 5.0) for _, l in p_b.layers()))
    res_b = classification_loss(LabeledProjectedBatch(Z, np.eye(3)), p_b, 0.001)
    assert res_b.reg_term == pytest.approx(res.reg_term, rel=1e-15)  # biases excluded


def test_classification_loss_empty_batch():
    with pytest.raises(EmptyInputError):
        classification_loss(LabeledProjectedBatch(np.zeros((0, 4)), np.zeros((0, 3))), _params(), 0.0)


def test_classification_loss_gradient(rng):
    p = _params()
    Z = rng.normal(size=(9, 4))
    Y = one_hot(rng.integers(0, 3, 9), 3)
    res = classification_loss(LabeledProjectedBatch(Z, Y), p, 0.01)

    def f_params(v):
        r = classification_loss(LabeledProjectedBatch(Z, Y), p.unflat(v), 0.01)
        return r.cls_loss + r.reg_term

    assert grad_check(f_params, res.dparams.flat(), p.flat(), n_coords=None).passed

    def f_z(v):
        r = classification_loss(LabeledProjectedBatch(v.reshape(Z.shape), Y), p, 0.01)
        return r.cls_loss + r.reg_term

    assert grad_check(f_z, res.dZ_a, Z, n_coords=None).passed


# marginal term

def test_marginal_mmd_hand_cases(rng):
    A = rng.normal(size=(6, 3))
    assert marginal_mmd(A, A).value == 0.0
    assert marginal_mmd([[0, 0], [2, 0]], [[1, 1]]).value == pytest.approx(1.0, abs=1e-12)
    assert marginal_mmd(A[::-1], A[[1, 0, 2, 3, 4, 5]]).value == pytest.approx(0.0, abs=1e-28)


def test_marginal_mmd_permutation_invariance(rng):
    A, B = rng.normal(size=(8, 3)), rng.normal(size=(5, 3))
    v = marginal_mmd(A, B).value
    assert marginal_mmd(A[rng.permutation(8)], B[rng.permutation(5)]).value == pytest.approx(v, rel=1e-12)


def test_marginal_mmd_empty():
    with pytest.raises(EmptyInputError):
        marginal_mmd(np.zeros((0, 2)), np.ones((2, 2)))


def test_marginal_mmd_gradient(rng):
    A, B = rng.normal(size=(8, 3)), rng.normal(size=(5, 3))
    res = marginal_mmd(A, B)
    assert grad_check(lambda v: marginal_mmd(v.reshape(8, 3), B).value, res.dZ_s, A, n_coords=None).passed
    assert grad_check(lambda v: marginal_mmd(A, v.reshape(5, 3)).value, res.dZ_t, B, n_coords=None).passed


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(3)), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, st.tuples(st.integers(1, 6), st.just(3)), elements=st.floats(-1e3, 1e3)))
def test_marginal_mmd_nonnegative_and_zero_on_self(a, b):
    assert marginal_mmd(a, b).value >= 0.0
    assert marginal_mmd(a, a).value == 0.0


# conditional term

def test_conditional_at_r0_uses_labeled_data_only(rng):
    Z_s, y_s, Z_l, y_l, Z_u, idx = random_instance(rng)
    soft = SoftLabelMatrix(rng.dirichlet(np.ones(3), size=11), 0, 10)
    v = conditional_mmd(Z_s, Z_l, Z_u, idx, soft).value
    oracle = hard_partition_mmd(Z_s, y_s, Z_l, y_l, Z_u, np.full(11, -1), 3)
    assert v == pytest.approx(oracle, rel=1e-12)
    moved = conditional_mmd(Z_s, Z_l, Z_u + rng.normal(size=Z_u.shape) * 100, idx, soft).value
    assert abs(moved - v) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_conditional_reduces_to_hard_labels(seed):
    rng = np.random.default_rng(seed)
    Z_s, y_s, Z_l, y_l, Z_u, idx = random_instance(rng)
    y_u = rng.integers(0, 3, 11)
    soft = SoftLabelMatrix(one_hot(y_u, 3), 40, 40)
    v = conditional_mmd(Z_s, Z_l, Z_u, idx, soft).value
    assert v == pytest.approx(hard_partition_mmd(Z_s, y_s, Z_l, y_l, Z_u, y_u, 3), abs=1e-10)


def test_conditional_zero_when_class_centroids_coincide():
    # every class projects to its own point in both domains
    pts = np.array([[1.0, 0.0], [0.0, 2.0], [-1.0, -1.0]])
    y_s, y_l, y_u = np.array([0, 1, 2, 0, 1]), np.array([2, 1, 0]), np.array([1, 1, 0])
    idx = ClassIndex.from_labels(y_s, y_l, 3)
    soft = SoftLabelMatrix(one_hot(y_u, 3), 5, 10)
    v = conditional_mmd(pts[y_s], pts[y_l], pts[y_u], idx, soft).value
    assert v == pytest.approx(0.0, abs=1e-12)


def test_conditional_permutation_invariance(rng):
    Z_s, y_s, Z_l, y_l, Z_u, idx = random_instance(rng)
    soft = SoftLabelMatrix(rng.dirichlet(np.ones(3), size=11), 7, 10)
    v = conditional_mmd(Z_s, Z_l, Z_u, idx, soft).value
    ps, pl, pu = rng.permutation(15), rng.permutation(6), rng.permutation(11)
    idx_p = ClassIndex.from_labels(y_s[ps], y_l[pl], 3)
    soft_p = SoftLabelMatrix(soft.probs[pu], 7, 10)
    assert conditional_mmd(Z_s[ps], Z_l[pl], Z_u[pu], idx_p, soft_p).value == pytest.approx(v, rel=1e-12)


def test_conditional_gradient(rng):
    Z_s, y_s, Z_l, y_l, Z_u, idx = random_instance(rng)
    soft = SoftLabelMatrix(rng.dirichlet(np.ones(3), size=11), 6, 10)
    res = conditional_mmd(Z_s, Z_l, Z_u, idx, soft)
    for arr, g, pos in ((Z_s, res.dZ_s, 0), (Z_l, res.dZ_l, 1), (Z_u, res.dZ_u, 2)):
        def f(v, pos=pos, shape=arr.shape):
            args = [Z_s, Z_l, Z_u]
            args[pos] = v.reshape(shape)
            return conditional_mmd(*args, idx, soft).value
        assert grad_check(f, g, arr, n_coords=None).passed


# combined

def test_soft_mmd_is_sum_of_parts(rng):
    Z_s, y_s, Z_l, y_l, Z_u, idx = random_instance(rng)
    soft = SoftLabelMatrix(rng.dirichlet(np.ones(3), size=11), 3, 10)
    res = soft_mmd(Z_s, Z_l, Z_u, idx, soft)
    q_m = marginal_mmd(Z_s, np.vstack([Z_l, Z_u])).value
    q_c = conditional_mmd(Z_s, Z_l, Z_u, idx, soft).value
    assert res.q_m == q_m and res.q_c == q_c
    assert res.value == pytest.approx(q_m + q_c, abs=1e-12)
    assert soft_mmd(Z_s, Z_l, Z_u, idx, soft, use_conditional=False).q_c == 0.0


def test_soft_mmd_zero_when_both_parts_vanish():
    Z = np.array([[1.0, 2.0], [3.0, 4.0]])
    idx = ClassIndex.from_labels([0, 1], [0, 1], 2)
    soft = SoftLabelMatrix(np.eye(2), 10, 10)
    assert soft_mmd(Z, Z, Z, idx, soft).value == pytest.approx(0.0, abs=1e-12)


def test_soft_mmd_gradient(rng):
    Z_s, y_s, Z_l, y_l, Z_u, idx = random_instance(rng)
    soft = SoftLabelMatrix(rng.dirichlet(np.ones(3), size=11), 4, 10)
    res = soft_mmd(Z_s, Z_l, Z_u, idx, soft)
    stacked = np.vstack([Z_s, Z_l, Z_u])
    grad = np.vstack([res.dZ_s, res.dZ_l, res.dZ_u])

    def f(v):
        v = v.reshape(stacked.shape)
        return soft_mmd(v[:15], v[15:21], v[21:], idx, soft).value

    assert grad_check(f, grad, stacked, tol=1e-5, n_coords=None).passed
