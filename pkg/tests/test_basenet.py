import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcmc import diffcore as dc
from dcmc.basenet import (
    BaseNetwork,
    BranchSpec,
    bilinear_scores,
    branch_forward,
    label_probabilities,
    scaled_cosine,
    unary_potentials,
)
from dcmc.dataio import LabelSet, RatingDataset, make_batch

FIVE = LabelSet((1, 2, 3, 4, 5))


@pytest.fixture
def small():
    r = np.random.default_rng(0)
    n, m = 9, 11
    cells = np.flatnonzero(r.random(n * m) < 0.5)
    ds = RatingDataset(n, m, cells // m, cells % m, r.integers(0, 5, len(cells)), FIVE)
    net = BaseNetwork.create(n, m, 5, BranchSpec((6, 4), 0.5), seed=1)
    batch = make_batch(ds, np.array([0, 2, 3, 5, 8]), np.array([1, 2, 4, 6, 7, 10]))
    return ds, net, batch


def test_branch_spec_validation():
    assert BranchSpec().d == 128
    with pytest.raises(ValueError):
        BranchSpec((8, 0))
    with pytest.raises(ValueError):
        BranchSpec((8,), 1.0)


def test_parameter_inventory(small):
    _, net, _ = small
    names = set(net.store.names())
    assert {"row.0.W", "row.1.W", "col.0.W", "col.1.W", "decoder.B"} <= names
    assert net.store["row.0.W"].shape == (11, 6)  # row inputs span the items
    assert net.store["col.0.W"].shape == (9, 6)
    assert net.store["decoder.B"].shape == (5, 4, 4)
    np.testing.assert_allclose(net.decoder(), net.store["decoder.B"].data / 4)


def test_bundle_potentials(small):
    _, net, batch = small
    b = net.bundle(batch, training=True, rng=np.random.default_rng(0))
    assert b.K == batch.c
    Q, Phi, S = b.Q.data, b.Phi.data, b.S.data
    np.testing.assert_allclose(Q.sum(axis=1), 1.0)
    np.testing.assert_allclose(Phi, -np.log(Q))
    assert np.array_equal(S, S.T)
    assert np.all((S >= 0) & (S <= 1))
    np.testing.assert_allclose(np.diag(S), 1.0)


def test_entry_similarity_is_product_of_user_and_item_similarity(small):
    ds, net, batch = small
    b = net.bundle(batch, training=False)
    U, V = net.embed(batch, training=False)
    Sr, Sc = scaled_cosine(U.data), scaled_cosine(V.data)
    r, c = batch.obs_rows, batch.obs_cols
    for k in range(b.K):
        for l in range(b.K):
            assert b.S.data[k, l] == pytest.approx(Sr[r[k], r[l]] * Sc[c[k], c[l]], abs=1e-14)


def test_training_path_matches_block_scoring_in_eval_mode(small):
    """The node-wise differentiable scores equal the dense block scores used at test time."""
    ds, net, batch = small
    b = net.bundle(batch, training=False)
    U, V = net.embeddings_eval(ds.train_matrix)
    P = label_probabilities(bilinear_scores(U, V, net.decoder()))
    rows = batch.row_indices[batch.obs_rows]
    cols = batch.col_indices[batch.obs_cols]
    np.testing.assert_allclose(b.Q.data, P[rows, cols], atol=1e-12)


def test_eval_mode_is_deterministic_and_leaves_buffers(small):
    _, net, batch = small
    before = {k: v.copy() for k, v in net.store.buffers.items()}
    a = net.bundle(batch, training=False).Q.data
    b = net.bundle(batch, training=False).Q.data
    assert np.array_equal(a, b)
    for k, v in before.items():
        assert np.array_equal(net.store.buffers[k], v)
    net.bundle(batch, training=True, rng=np.random.default_rng(0))
    assert not np.array_equal(net.store.buffers["row.0.bn_mean"], before["row.0.bn_mean"])


def test_every_parameter_receives_gradient(small):
    _, net, batch = small
    b = net.bundle(batch, training=True, rng=np.random.default_rng(3))
    loss = dc.add(dc.sum(b.Phi), dc.sum(b.S))
    loss.backward()
    for name, g in net.store.grads().items():
        assert np.abs(g).sum() > 0, name


def test_branch_rejects_wrong_width(small):
    ds, net, _ = small
    with pytest.raises(dc.ShapeError):
        net.embeddings_eval(ds.train_matrix[:, :-1])


def test_scaled_cosine_reference_points():
    X = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 3.0], [-1.0, 0.0]])
    S = scaled_cosine(X)
    assert S[0, 1] == pytest.approx(1.0)  # identical direction
    assert S[0, 2] == pytest.approx(0.5)  # orthogonal
    assert S[0, 3] == pytest.approx(0.0)  # opposite
    np.testing.assert_allclose(S, scaled_cosine(dc.Tensor(X)).data, atol=1e-15)


@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_scaled_cosine_range_and_symmetry(n, d, seed):
    X = np.random.default_rng(seed).standard_normal((n, d))
    S = scaled_cosine(X)
    assert np.array_equal(S, S.T)
    assert np.all(S >= -1e-15) and np.all(S <= 1 + 1e-15)
    assert np.all(np.diag(S) == 1.0)


def test_unary_floor():
    Q = np.array([[1.0, 0.0]])
    assert unary_potentials(Q)[0, 1] == pytest.approx(-np.log(1e-12))


@given(st.integers(0, 2**31 - 1))
def test_bilinear_scores_definition(seed):
    r = np.random.default_rng(seed)
    U, V, B = r.standard_normal((3, 4)), r.standard_normal((2, 4)), r.standard_normal((5, 4, 4))
    G = bilinear_scores(U, V, B)
    for i in range(3):
        for j in range(2):
            for u in range(5):
                assert G[i, j, u] == pytest.approx(U[i] @ B[u] @ V[j], rel=1e-10, abs=1e-12)


def test_recalibrated_eval_equals_full_batch_training_pass(small):
    ds, net, _ = small
    X = ds.train_matrix
    net.recalibrate(X)
    U, V = net.embeddings_eval(X)
    plain = BranchSpec(net.spec.hidden_sizes, 0.0)
    for branch, x, got in (("row", X, U), ("col", X.T, V)):
        ref = branch_forward(x, branch, plain, net.store.copy(), training=True)
        np.testing.assert_allclose(got, ref.data, atol=1e-10)
