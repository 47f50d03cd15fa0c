"""Adjacency normalization, subset structure, and the GCN stack forward pass."""

import numpy as np
import pytest

from coskel import autodiff as ad
from coskel.autodiff import Tensor
from coskel.backbone import (
    AdjacencySet,
    BackboneConfig,
    SkeletonBackbone,
    adjacency_from_matrices,
    build_adjacency_subsets,
    classify,
    global_mean_pool,
    normalize_adjacency,
    spatial_gcn,
)
from coskel.errors import ConfigError, DataError
from coskel.rng import substream
from coskel.skeleton import GraphTopology

STAR4 = GraphTopology(parent=(0, 0, 0, 0))
CHAIN3 = GraphTopology(parent=(0, 0, 1))


def test_normalized_three_node_path():
    # path 0-1-2 (undirected): degree(1) = 2, the end nodes have degree 1,
    # so the off-diagonal entries become 1/sqrt(2).
    a = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=np.float64)
    n = normalize_adjacency(a)
    r = 1.0 / np.sqrt(2.0)
    expected = np.array([[0, r, 0], [r, 0, r], [0, r, 0]])
    assert np.allclose(n, expected, atol=1e-12), n


def test_normalization_keeps_zero_rows_zero():
    a = np.zeros((3, 3))
    a[0, 1] = 1.0
    n = normalize_adjacency(a)
    # rows 1 and 2 have no outgoing edges; degree is clamped to 1, rows stay 0
    assert np.array_equal(n[1], np.zeros(3))
    assert np.array_equal(n[2], np.zeros(3))
    assert n[0, 1] == 1.0  # deg(0)=1, deg(1) clamped to 1


def test_normalization_rejects_negative_entries():
    with pytest.raises(DataError):
        normalize_adjacency(np.array([[0.0, -1.0], [0.0, 0.0]]))


def test_subsets_identity_centripetal_centrifugal():
    adj = build_adjacency_subsets(CHAIN3)
    s_id, s_cp, s_cf = adj.subsets
    assert np.array_equal(s_id, np.eye(3))
    # child -> parent edges: 1->0 and 2->1
    expected_cp = np.zeros((3, 3))
    expected_cp[1, 0] = 1.0
    expected_cp[2, 1] = 1.0
    assert np.array_equal(s_cp, expected_cp)
    assert np.array_equal(s_cf, expected_cp.T)


def test_identity_subset_normalizes_to_itself():
    adj = build_adjacency_subsets(STAR4)
    assert np.allclose(adj.normalized[0], np.eye(4))


def test_adjacency_set_validation():
    with pytest.raises(ConfigError):
        AdjacencySet(subsets=[np.eye(2)], normalized=[np.eye(2)], mode="magic")
    with pytest.raises(DataError):
        AdjacencySet(subsets=[np.ones((2, 3))], normalized=[np.ones((2, 3))])
    bad = np.full((2, 2), np.nan)
    with pytest.raises(DataError):
        AdjacencySet(subsets=[np.eye(2)], normalized=[bad])


def _naive_gcn(h, mats, weights):
    """Straight four-loop reference: out = sum_s Ahat_s H W_s, h is (C,T,J)."""
    c_in, t, j = h.shape
    c_out = weights[0].shape[1]
    out = np.zeros((c_out, t, j))
    for a, w in zip(mats, weights):
        for tt in range(t):
            # H_t is (C_in, J); joints mix as H @ A^T, channels as W^T @ H
            mixed = h[:, tt, :] @ a.T
            out[:, tt, :] += w.T @ mixed
    return out


def test_spatial_gcn_matches_naive_loop():
    rng = substream(3, "backbone.gcn-oracle")
    adj = build_adjacency_subsets(CHAIN3)
    h = rng.standard_normal((4, 6, 3))
    weights = [rng.standard_normal((4, 5)) for _ in adj.subsets]
    got = spatial_gcn(h, [Tensor(a) for a in adj.normalized], [Tensor(w) for w in weights])
    want = _naive_gcn(h, adj.normalized, weights)
    assert got.value.shape == (5, 6, 3)
    assert np.max(np.abs(got.value - want)) < 1e-12


def test_spatial_gcn_batched_equals_per_sample():
    rng = substream(4, "backbone.gcn-batch")
    adj = build_adjacency_subsets(STAR4)
    h = rng.standard_normal((3, 2, 5, 4))
    weights = [Tensor(rng.standard_normal((2, 2))) for _ in adj.subsets]
    mats = [Tensor(a) for a in adj.normalized]
    batched = spatial_gcn(h, mats, weights).value
    for i in range(3):
        single = spatial_gcn(h[i], mats, weights).value
        assert np.allclose(batched[i], single, atol=1e-12)


def test_spatial_gcn_bias_broadcasts_per_channel():
    adj = build_adjacency_subsets(CHAIN3)
    h = np.zeros((2, 4, 3))
    weights = [Tensor(np.zeros((2, 2))) for _ in adj.subsets]
    bias = Tensor(np.array([1.5, -2.0]))
    out = spatial_gcn(h, [Tensor(a) for a in adj.normalized], weights, bias).value
    assert np.allclose(out[0], 1.5)
    assert np.allclose(out[1], -2.0)


def test_spatial_gcn_subset_weight_count_mismatch():
    adj = build_adjacency_subsets(CHAIN3)
    with pytest.raises(ConfigError):
        spatial_gcn(
            np.zeros((2, 4, 3)),
            [Tensor(a) for a in adj.normalized],
            [Tensor(np.zeros((2, 2)))],
        )


def test_global_mean_pool_value_and_empty_error():
    h = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    pooled = global_mean_pool(h).value
    assert np.allclose(pooled, h.mean(axis=(1, 2)))
    with pytest.raises(DataError):
        global_mean_pool(np.zeros((2, 0, 4)))


def test_classifier_shape_check():
    with pytest.raises(ConfigError):
        classify(np.zeros((2, 8)), np.zeros((4, 3)), np.zeros(3))


def test_backbone_forward_shapes_and_finiteness():
    cfg = BackboneConfig(channels=(4, 6), temporal_kernel=3, class_count=5)
    net = SkeletonBackbone.init(cfg, CHAIN3, seed=0)
    x = substream(0, "backbone.fwd").standard_normal((2, 3, 7, 3))
    feats, scores = net.scores(x)
    assert feats.shape == (2, 6)
    assert scores.shape == (2, 5)
    assert np.all(np.isfinite(scores.value))


def test_backbone_batched_matches_single():
    cfg = BackboneConfig(channels=(4,), temporal_kernel=3, class_count=3)
    net = SkeletonBackbone.init(cfg, STAR4, seed=1)
    x = substream(1, "backbone.single").standard_normal((3, 3, 5, 4))
    _, batched = net.scores(x)
    for i in range(3):
        _, single = net.scores(x[i])
        assert np.allclose(batched.value[i], single.value, atol=1e-12)


def test_dynamic_mode_offsets_start_inert_then_matter():
    cfg = BackboneConfig(channels=(4,), temporal_kernel=3, adjacency_mode="dynamic", class_count=2)
    net_dyn = SkeletonBackbone.init(cfg, CHAIN3, seed=2)
    cfg_s = BackboneConfig(channels=(4,), temporal_kernel=3, adjacency_mode="static", class_count=2)
    net_sta = SkeletonBackbone.init(cfg_s, CHAIN3, seed=2)
    x = substream(2, "backbone.dyn").standard_normal((3, 6, 3))
    # zero-initialized offsets: dynamic output == static output
    _, s_dyn = net_dyn.scores(x)
    _, s_sta = net_sta.scores(x)
    assert np.allclose(s_dyn.value, s_sta.value, atol=1e-15)
    # perturbing an offset changes the scores
    net_dyn.params["block0.gcn.offset0"].value[0, 1] = 0.7
    _, s_dyn2 = net_dyn.scores(x)
    assert not np.allclose(s_dyn2.value, s_sta.value)
    # and the offset receives gradient
    loss = ad.reduce_sum(net_dyn.scores(x)[1])
    loss.backward()
    g = net_dyn.params["block0.gcn.offset0"].grad
    assert g is not None and np.any(g != 0)


def test_gradients_flow_to_every_parameter():
    cfg = BackboneConfig(channels=(3, 4), temporal_kernel=3, class_count=2)
    net = SkeletonBackbone.init(cfg, CHAIN3, seed=5)
    x = substream(5, "backbone.grads").standard_normal((2, 3, 6, 3))
    _, scores = net.scores(x)
    ad.reduce_sum(ad.mul(scores, scores)).backward()
    for name, p in net.params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        assert np.all(np.isfinite(p.grad)), f"non-finite gradient at {name}"


def test_custom_subset_count_is_supported():
    mats = [np.eye(3), np.ones((3, 3))]
    adj = adjacency_from_matrices(mats)
    cfg = BackboneConfig(channels=(4,), temporal_kernel=3, class_count=2)
    net = SkeletonBackbone.init(cfg, CHAIN3, seed=3, adjacency=adj)
    assert "block0.gcn.w1" in net.params and "block0.gcn.w2" not in net.params
    x = substream(3, "backbone.subsets").standard_normal((3, 4, 3))
    _, scores = net.scores(x)
    assert scores.shape == (2,)


def test_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig(temporal_kernel=4)
    with pytest.raises(ConfigError):
        BackboneConfig(channels=())
    with pytest.raises(ConfigError):
        BackboneConfig(class_count=0)


def test_joint_count_mismatch_is_a_data_error():
    cfg = BackboneConfig(channels=(4,), temporal_kernel=3, class_count=2)
    net = SkeletonBackbone.init(cfg, CHAIN3, seed=0)
    with pytest.raises(DataError):
        net.features(np.zeros((3, 5, 7)))  # 7 joints, adjacency has 3
