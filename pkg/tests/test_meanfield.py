import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcmc import diffcore as dc
from dcmc.dataio import LabelSet
from dcmc.diffcore import Tensor
from dcmc.meanfield import (
    build_compatibility,
    meanfield_layer,
    meanfield_stack,
    meanfield_stack_factored,
    prepare_similarity,
)

from conftest import numeric_grad
from oracles import naive_meanfield


def random_instance(r, K, p):
    Q = r.random((K, p)) + 1e-3
    Q /= Q.sum(axis=1, keepdims=True)
    A = r.random((K, K))
    S = (A + A.T) / 2
    np.fill_diagonal(S, 1.0)
    return Q, S, -np.log(Q)


def test_compatibility_values():
    C = build_compatibility(LabelSet((1, 2, 3, 4, 5)), tau=12)
    assert C[0, 4] == 12.0  # (1-5)^2 = 16 truncated
    assert C[1, 4] == 9.0
    assert np.all(np.diag(C) == 0.0)
    assert np.array_equal(C, C.T)
    with pytest.raises(ValueError):
        build_compatibility(LabelSet((1, 2)), tau=0)


def test_single_layer_by_hand():
    """Two nodes, two labels: energies worked out explicitly."""
    Q = np.array([[0.8, 0.2], [0.3, 0.7]])
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    Phi = -np.log(Q)
    C = build_compatibility(LabelSet((1, 2)), tau=12)  # [[0,1],[1,0]]
    gamma = 0.5
    out = meanfield_layer(Q, S, Phi, C, gamma)
    # message for node 0, label 0: sum_l S[0,l] * Q[l,1] = 0.2 + 0.5*0.7 = 0.55
    # message for node 0, label 1: sum_l S[0,l] * Q[l,0] = 0.8 + 0.5*0.3 = 0.95
    e0 = np.array([-np.log(0.8) + 0.5 * 0.55, -np.log(0.2) + 0.5 * 0.95])
    expect = np.exp(-e0) / np.exp(-e0).sum()
    np.testing.assert_allclose(out[0], expect, rtol=1e-14)


@given(st.integers(1, 6), st.integers(2, 4), st.sampled_from([0.0, 0.05, 0.7]), st.integers(0, 4),
       st.booleans(), st.booleans(), st.integers(0, 2**31 - 1))
def test_stack_matches_naive_loop(K, p, gamma, T, normalize, exclude_self, seed):
    if exclude_self and K == 1 and normalize:
        return  # no neighbours to average over
    r = np.random.default_rng(seed)
    Q, S, Phi = random_instance(r, K, p)
    labels = tuple(float(v) for v in range(1, p + 1))
    tau = 4.0
    C = build_compatibility(LabelSet(labels), tau)
    got = meanfield_stack(Q, S, Phi, C, gamma, T, exclude_self=exclude_self, normalize=normalize)
    ref = naive_meanfield(Q, S, Phi, labels, tau, gamma, T, normalize=normalize, exclude_self=exclude_self)
    np.testing.assert_allclose(got, ref, atol=1e-12, rtol=0)


@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 2**31 - 1), st.integers(0, 6))
def test_output_rows_are_distributions(K, p, seed, T):
    r = np.random.default_rng(seed)
    Q, S, Phi = random_instance(r, K, p)
    C = build_compatibility(LabelSet.arange(1, p), 12.0)
    out = meanfield_stack(Q, 5 * S, Phi, C, 0.5, T)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 2**31 - 1), st.sampled_from([0, 1, 5, 30]))
def test_zero_gamma_is_identity(K, p, seed, T):
    r = np.random.default_rng(seed)
    Q, S, Phi = random_instance(r, K, p)
    C = build_compatibility(LabelSet.arange(1, p), 12.0)
    np.testing.assert_allclose(meanfield_stack(Q, S, Phi, C, 0.0, T), Q, atol=1e-12, rtol=0)


def test_tensor_and_numpy_paths_agree(rng):
    Q, S, Phi = random_instance(rng, 5, 3)
    C = build_compatibility(LabelSet((1, 2, 3)), 12.0)
    a = meanfield_stack(Tensor(Q), Tensor(S), Tensor(Phi), C, 0.3, 4, normalize=True).data
    b = meanfield_stack(Q, S, Phi, C, 0.3, 4, normalize=True)
    np.testing.assert_allclose(a, b, atol=1e-14)


@pytest.mark.parametrize("normalize", [False, True])
def test_stack_gradients(rng, normalize):
    """The unrolled layers are differentiable in Q, S and Phi."""
    Q, S, Phi = random_instance(rng, 4, 3)
    C = build_compatibility(LabelSet((1, 2, 3)), 12.0)
    W = rng.standard_normal((4, 3))
    tQ, tS, tP = (Tensor(x.copy(), requires_grad=True) for x in (Q, S, Phi))
    out = meanfield_stack(tQ, tS, tP, C, 0.2, 3, normalize=normalize)
    dc.sum(dc.mul(out, Tensor(W))).backward()

    def f():
        return float((meanfield_stack(tQ.data, tS.data, tP.data, C, 0.2, 3, normalize=normalize) * W).sum())

    for t in (tQ, tS, tP):
        np.testing.assert_allclose(t.grad, numeric_grad(f, t.data), atol=1e-8)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(2, 4), st.booleans(), st.booleans(),
       st.integers(0, 2**31 - 1))
def test_factored_matches_dense_kronecker(n, m, p, normalize, exclude_self, seed):
    if exclude_self and normalize and n * m == 1:
        return
    r = np.random.default_rng(seed)
    Q, _, Phi = random_instance(r, n * m, p)
    _, Sr, _ = random_instance(r, n, 2)
    _, Sc, _ = random_instance(r, m, 2)
    C = build_compatibility(LabelSet.arange(1, p), 4.0)
    dense = meanfield_stack(Q, np.kron(Sr, Sc), Phi, C, 0.3, 3, exclude_self=exclude_self, normalize=normalize)
    fact = meanfield_stack_factored(
        Q.reshape(n, m, p), Phi.reshape(n, m, p), Sr, Sc, C, 0.3, 3, exclude_self=exclude_self, normalize=normalize
    )
    np.testing.assert_allclose(fact.reshape(n * m, p), dense, atol=1e-12)


def test_normalised_messages_do_not_grow_with_node_count(rng):
    """Averaging keeps the pairwise term bounded when many similar nodes are added."""
    p = 5
    C = build_compatibility(LabelSet.arange(1, p), 12.0)
    base = np.full(p, 1.0 / p)
    base[3] += 0.1
    base /= base.sum()
    for K in (10, 1000):
        Q = np.tile(base, (K, 1))
        S = np.ones((K, K))
        out = meanfield_stack(Q, S, -np.log(Q), C, 0.05, 1, normalize=True)
        np.testing.assert_allclose(out, out[:1].repeat(K, axis=0))
        if K == 10:
            small = out[0]
    np.testing.assert_allclose(out[0], small, rtol=1e-12)


def test_prepare_similarity_rows_sum_to_one(rng):
    _, S, _ = random_instance(rng, 6, 2)
    P = prepare_similarity(S, exclude_self=True, normalize=True)
    np.testing.assert_allclose(P.sum(axis=1), 1.0)
    assert np.all(np.diag(P) == 0.0)


def test_negative_layer_count_rejected(rng):
    Q, S, Phi = random_instance(rng, 2, 2)
    with pytest.raises(ValueError):
        meanfield_stack(Q, S, Phi, np.zeros((2, 2)), 0.1, -1)
