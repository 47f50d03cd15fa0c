"""Graph-convolutional skeleton backbone.

The spatial step is a subset-decomposed graph convolution,

    H' = act( sum_s  Ahat_s @ H @ W_s ),

where the subsets are by default (identity, centripetal, centrifugal) edge
sets of the rooted skeleton tree and Ahat is the symmetrically normalized
adjacency D^{-1/2} A D^{-1/2}. Each block pairs the spatial step with a
same-padded temporal convolution; global mean pooling over time and joints
yields the per-sample feature vector that the affine head turns into class
scores.

Matrix convention: a directed edge u->v is stored as A[u, v]. Arrays flow
through the autodiff engine, so the same code serves inference and training;
feature maps are (..., C, T, J) with optional leading batch dims.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError
from .rng import substream
from .skeleton import GraphTopology


@dataclass
class AdjacencySet:
    """Ordered adjacency subsets plus their normalized forms."""

    subsets: list[np.ndarray]
    normalized: list[np.ndarray]
    mode: str = "static"  # "static" or "dynamic" (learnable additive offsets)

    def __post_init__(self):
        if self.mode not in ("static", "dynamic"):
            raise ConfigError(f"adjacency mode must be static or dynamic, got {self.mode!r}")
        for i, (a, n) in enumerate(zip(self.subsets, self.normalized)):
            if a.shape != n.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise DataError(f"adjacency subset {i} is not square or mismatched")
            if np.any(a < 0):
                raise DataError(f"adjacency subset {i} has negative entries")
            if not np.all(np.isfinite(n)):
                raise DataError(f"normalized adjacency subset {i} has non-finite entries")

    @property
    def joint_count(self) -> int:
        return self.subsets[0].shape[0]


@dataclass
class BackboneConfig:
    channels: tuple[int, ...] = (16, 16, 32, 32)
    temporal_kernel: int = 5
    adjacency_mode: str = "static"
    class_count: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if any(c <= 0 for c in self.channels) or not self.channels:
            raise ConfigError("channel widths must be positive")
        if self.temporal_kernel <= 0 or self.temporal_kernel % 2 == 0:
            raise ConfigError(f"temporal kernel must be odd and positive, got {self.temporal_kernel}")
        if self.class_count <= 0 or self.in_channels <= 0:
            raise ConfigError("class count and input channels must be positive")

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]


@dataclass
class FeatureMap:
    """Backbone activation, (C, T, J)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise DataError(f"feature map must be (C, T, J), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("feature map has non-finite values")


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """D^{-1/2} A D^{-1/2} with D = diag(row sums); zero-degree rows keep degree 1."""
    a = np.asarray(a, dtype=np.float64)
    if np.any(a < 0):
        raise DataError("adjacency must be nonnegative before normalization")
    deg = a.sum(axis=1)
    deg = np.where(deg > 0, deg, 1.0)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def build_adjacency_subsets(topology: GraphTopology, mode: str = "static") -> AdjacencySet:
    """Identity / centripetal / centrifugal edge subsets of a rooted tree.

    Centripetal holds the child->parent edges (toward the root by BFS depth),
    centrifugal the reverse; each directed edge u->v sets subset[u, v] = 1.
    """
    n = topology.joint_count
    s_id = np.eye(n)
    s_cp = np.zeros((n, n))
    s_cf = np.zeros((n, n))
    depths = topology.bfs_depths()
    for child, parent in topology.edges:
        if depths[child] <= depths[parent]:
            raise DataError(f"edge ({child},{parent}) does not descend toward the root")
        s_cp[child, parent] = 1.0
        s_cf[parent, child] = 1.0
    subsets = [s_id, s_cp, s_cf]
    return AdjacencySet(
        subsets=subsets, normalized=[normalize_adjacency(s) for s in subsets], mode=mode
    )


def adjacency_from_matrices(matrices: list[np.ndarray], mode: str = "static") -> AdjacencySet:
    """User-supplied subsets (e.g. hierarchically decomposed graphs, any count)."""
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    return AdjacencySet(subsets=mats, normalized=[normalize_adjacency(m) for m in mats], mode=mode)


# -- functional layers ---------------------------------------------------------


def spatial_gcn(h, adj_mats: list, weights: list, bias=None) -> Tensor:
    """sum_s Ahat_s H W_s (+ bias), no activation; h is (..., C, T, J)."""
    h = ad.as_tensor(h)
    if len(adj_mats) != len(weights):
        raise ConfigError(
            f"{len(adj_mats)} adjacency subsets but {len(weights)} weight matrices"
        )
    total = None
    for a_s, w_s in zip(adj_mats, weights):
        a_s = ad.as_tensor(a_s)
        w_s = ad.as_tensor(w_s)
        if w_s.shape[0] != h.shape[-3]:
            raise ConfigError(
                f"gcn weight expects {w_s.shape[0]} input channels, feature map has {h.shape[-3]}"
            )
        # joints: out[..., t, j] = sum_j' Ahat[j, j'] h[..., t, j']  ==  h @ Ahat^T
        mixed = ad.matmul(h, ad.transpose(a_s))
        # channels: move C last, contract with W_s, move back
        nd = len(mixed.shape)
        to_last = tuple(range(nd - 3)) + (nd - 2, nd - 1, nd - 3)
        to_chan = tuple(range(nd - 3)) + (nd - 1, nd - 3, nd - 2)
        mixed = ad.transpose(ad.matmul(ad.transpose(mixed, to_last), w_s), to_chan)
        total = mixed if total is None else ad.add(total, mixed)
    if bias is not None:
        bias = ad.as_tensor(bias)
        total = ad.add(total, ad.reshape(bias, (bias.shape[0], 1, 1)))
    return total


def gcn_layer_forward(h: FeatureMap, adj: AdjacencySet, weights: list[np.ndarray]) -> FeatureMap:
    """Spatial graph convolution followed by the rectifier (array-level API)."""
    out = ad.relu(spatial_gcn(h.data, [Tensor(a) for a in adj.normalized], weights))
    return FeatureMap(data=out.value)


def temporal_conv_forward(h: FeatureMap, kernel: np.ndarray, stride: int = 1) -> FeatureMap:
    """Same-padded temporal convolution (array-level API)."""
    return FeatureMap(data=ad.conv1d(Tensor(h.data), Tensor(kernel), stride=stride).value)


def global_mean_pool(h) -> Tensor:
    """Mean over time and joints; (..., C, T, J) -> (..., C)."""
    h = ad.as_tensor(h)
    if h.value.size == 0:
        raise DataError("cannot pool an empty feature map")
    return ad.reduce_mean(h, axis=(-2, -1))


def classify(features, weight, bias) -> Tensor:
    """Affine head: raw (pre-softmax) class scores."""
    features = ad.as_tensor(features)
    weight = ad.as_tensor(weight)
    bias = ad.as_tensor(bias)
    if features.shape[-1] != weight.shape[0]:
        raise ConfigError(
            f"classifier expects {weight.shape[0]}-dim features, got {features.shape[-1]}"
        )
    return ad.add(ad.matmul(features, weight), bias)


# -- parameterized backbone ----------------------------------------------------


@dataclass
class SkeletonBackbone:
    """Parameter container for the GCN stack plus classifier head."""

    config: BackboneConfig
    adjacency: AdjacencySet
    topology: GraphTopology | None = None
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(
        cls,
        config: BackboneConfig,
        topology: GraphTopology,
        seed: int,
        adjacency: AdjacencySet | None = None,
    ) -> "SkeletonBackbone":
        adj = adjacency or build_adjacency_subsets(topology, mode=config.adjacency_mode)
        params: dict[str, Tensor] = {}
        n_sub = len(adj.subsets)
        c_prev = config.in_channels
        for b, c_out in enumerate(config.channels):
            for s in range(n_sub):
                rng = substream(seed, f"init.block{b}.gcn.w{s}")
                scale = np.sqrt(2.0 / (c_prev * n_sub))
                params[f"block{b}.gcn.w{s}"] = Tensor(
                    rng.standard_normal((c_prev, c_out)) * scale, requires_grad=True
                )
                if adj.mode == "dynamic":
                    params[f"block{b}.gcn.offset{s}"] = Tensor(
                        np.zeros((adj.joint_count, adj.joint_count)), requires_grad=True
                    )
            params[f"block{b}.gcn.bias"] = Tensor(np.zeros(c_out), requires_grad=True)
            rng = substream(seed, f"init.block{b}.tconv.w")
            scale = np.sqrt(2.0 / (c_out * config.temporal_kernel))
            params[f"block{b}.tconv.w"] = Tensor(
                rng.standard_normal((c_out, c_out, config.temporal_kernel)) * scale,
                requires_grad=True,
            )
            params[f"block{b}.tconv.bias"] = Tensor(np.zeros(c_out), requires_grad=True)
            c_prev = c_out
        rng = substream(seed, "init.head.w")
        params["head.w"] = Tensor(
            rng.standard_normal((config.feature_dim, config.class_count))
            * np.sqrt(1.0 / config.feature_dim),
            requires_grad=True,
        )
        params["head.bias"] = Tensor(np.zeros(config.class_count), requires_grad=True)
        return cls(config=config, adjacency=adj, topology=topology, params=params)

    def _adjacency_tensors(self, block: int) -> list[Tensor]:
        mats = []
        for s, normalized in enumerate(self.adjacency.normalized):
            base = Tensor(normalized)
            if self.adjacency.mode == "dynamic":
                mats.append(ad.add(base, self.params[f"block{block}.gcn.offset{s}"]))
            else:
                mats.append(base)
        return mats

    def features(self, x) -> Tensor:
        """Pooled per-sample features; x is (..., C_in, T, J)."""
        h = ad.as_tensor(x)
        if h.shape[-1] != self.adjacency.joint_count:
            raise DataError(
                f"input has {h.shape[-1]} joints, adjacency has {self.adjacency.joint_count}"
            )
        n_sub = len(self.adjacency.subsets)
        for b in range(len(self.config.channels)):
            weights = [self.params[f"block{b}.gcn.w{s}"] for s in range(n_sub)]
            h = spatial_gcn(h, self._adjacency_tensors(b), weights, self.params[f"block{b}.gcn.bias"])
            h = ad.relu(h)
            h = ad.conv1d(h, self.params[f"block{b}.tconv.w"])
            bias = self.params[f"block{b}.tconv.bias"]
            h = ad.add(h, ad.reshape(bias, (bias.shape[0], 1, 1)))
            h = ad.relu(h)
        return global_mean_pool(h)

    def scores(self, x) -> tuple[Tensor, Tensor]:
        """(pooled features, raw class scores) for a batch or single sample."""
        feats = self.features(x)
        return feats, classify(feats, self.params["head.w"], self.params["head.bias"])
