import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seaintent import autograd as ag
from seaintent.errors import InvalidArgument
from seaintent.nn import Mlp
from seaintent.tree import (build_tree, classify, encode_observed, encode_prototypes, teacher_forced_tree,
                            topk_ids)


def identity_net(width: int, name: str) -> Mlp:
    net = Mlp((width, width), name)
    net.weights[0].data = np.eye(width, dtype=np.float32)
    return net


def test_encoder_shapes_and_rows():
    rng = np.random.default_rng(0)
    E_o = Mlp((12, 32, 64), "E_o", rng)
    x = rng.normal(size=(3, 6, 2))
    z = encode_observed(E_o, x, 6).data
    assert z.shape == (3, 64)
    z_same = encode_observed(E_o, np.repeat(x[:1], 2, axis=0), 6).data
    np.testing.assert_array_equal(z_same[0], z_same[1])
    with pytest.raises(InvalidArgument):
        encode_observed(E_o, np.zeros((3, 5, 2)), 6)
    zero = Mlp((12, 8, 64), "E_o", zero=True)
    assert not encode_observed(zero, np.zeros((2, 6, 2)), 6).data.any()


def test_prototype_encoding_is_row_wise():
    rng = np.random.default_rng(1)
    E_i = Mlp((36, 16, 64), "E_i", rng)
    protos = rng.normal(size=(30, 18, 2))
    z = encode_prototypes(E_i, protos, 18).data
    assert z.shape == (30, 64)
    perm = rng.permutation(30)
    np.testing.assert_array_equal(encode_prototypes(E_i, protos[perm], 18).data, z[perm])
    dup = encode_prototypes(E_i, protos[[4, 4]], 18).data
    np.testing.assert_array_equal(dup[0], dup[1])


def test_classify_examples():
    rng = np.random.default_rng(2)
    Q = Mlp((4, 8, 4), "Q", rng)
    K = Mlp((4, 8, 4), "K", zero=True)
    out = classify(Q, K, ag.Tensor(rng.normal(size=(3, 4))), ag.Tensor(rng.normal(size=(5, 4))))
    np.testing.assert_allclose(out.data, np.full((3, 5), 0.2), rtol=1e-6)
    # width 1, identity projections: logits are z_o * z_i
    probs = classify(identity_net(1, "Q"), identity_net(1, "K"), ag.Tensor([[1.0]]),
                     ag.Tensor([[math.log(3.0)], [0.0]])).data
    np.testing.assert_allclose(probs, [[0.75, 0.25]], rtol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_classify_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    Q, K = Mlp((6, 8, 5), "Q", rng), Mlp((6, 8, 5), "K", rng)
    out = classify(Q, K, ag.Tensor(rng.normal(size=(4, 6))), ag.Tensor(rng.normal(size=(7, 6)))).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_topk_examples():
    probs = np.array([[0.1, 0.4, 0.2, 0.3]])
    assert topk_ids(probs, 4).tolist() == [[1, 3, 2, 0]]
    assert topk_ids(np.array([[0.5, 0.25, 0.25]]), 2).tolist() == [[0, 1]]  # tie -> lower index
    with pytest.raises(InvalidArgument):
        topk_ids(probs, 5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 30))
def test_topk_matches_full_sort_oracle(seed, k):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(30), size=4)
    probs[:, 5] = probs[:, 9]  # force a tie
    got = topk_ids(probs, k)
    for row, ids in zip(probs, got):
        oracle = sorted(range(30), key=lambda c: (-row[c], c))[:k]
        assert ids.tolist() == oracle


def test_tree_single_branch_and_concatenation():
    rng = np.random.default_rng(3)
    z_o = ag.Tensor(rng.normal(size=(2, 4)))
    z_i = ag.Tensor(rng.normal(size=(10, 4)))
    y = np.full((2, 10), 0.05)
    y[0, 7], y[1, 2] = 0.55, 0.55
    t = build_tree(z_o, z_i, y, 1)
    assert t.branch_ids.tolist() == [[7], [2]] and t.branch_probs.tolist() == [[1.0], [1.0]]
    t = build_tree(z_o, z_i, y, 10)
    assert t.branches.shape == (2, 10, 8)
    for j in range(10):
        np.testing.assert_array_equal(t.branches.data[:, j, :4], z_o.data)
        np.testing.assert_array_equal(t.branches.data[0, j, 4:], z_i.data[t.branch_ids[0, j]])
    assert sorted(t.branch_ids[1].tolist()) == list(range(10))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_branch_probs_renormalised_and_ordered(seed, k):
    rng = np.random.default_rng(seed)
    y = rng.dirichlet(np.ones(12), size=3)
    t = build_tree(ag.Tensor(np.zeros((3, 2))), ag.Tensor(np.zeros((12, 2))), y, k)
    np.testing.assert_allclose(t.branch_probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diff(t.branch_probs, axis=1) <= 0)
    picked = np.take_along_axis(y, t.branch_ids, axis=1)
    np.testing.assert_allclose(t.branch_probs, picked / picked.sum(axis=1, keepdims=True))


def test_teacher_forced_tree():
    z_o = ag.Tensor(np.arange(6.0).reshape(3, 2))
    z_i = ag.Tensor(np.arange(8.0).reshape(4, 2) * 10)
    t = teacher_forced_tree(z_o, z_i, [3, 0, 3])
    assert t.k == 1 and t.branch_ids.ravel().tolist() == [3, 0, 3]
    np.testing.assert_array_equal(t.branches.data[:, 0, 2:], z_i.data[[3, 0, 3]])
    with pytest.raises(InvalidArgument):
        teacher_forced_tree(z_o, z_i, [4, 0, 0])
