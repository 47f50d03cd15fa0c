"""Cross-modal feature alignment.

Features from the auxiliary RGB extractor are projected into the skeleton
feature space by a small MLP, then pulled toward their paired skeleton
features (and pushed from everything else in the batch) by a bidirectional
contrastive loss over cosine similarities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .rng import substream


@dataclass
class ContrastiveConfig:
    """Temperature for the similarity logits; tau > 0."""

    tau: float = 0.1

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")


@dataclass
class AlignedPair:
    """A skeleton feature vector and its projected RGB partner (same dim)."""

    skeleton: np.ndarray
    rgb: np.ndarray

    def __post_init__(self):
        self.skeleton = np.asarray(self.skeleton, dtype=np.float64)
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        if self.skeleton.shape != self.rgb.shape:
            raise ConfigError(
                f"aligned pair dims differ: {self.skeleton.shape} vs {self.rgb.shape}"
            )
        if not (np.all(np.isfinite(self.skeleton)) and np.all(np.isfinite(self.rgb))):
            raise ConfigError("aligned pair contains non-finite values")


@dataclass
class AlignmentMlp:
    """Two affine layers with a rectifier between.

    ``init`` uses hidden = 2 * out_dim; the fields accept any consistent
    shapes (tests exploit this with identity-initialized square layers).
    """

    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, in_dim: int, out_dim: int, seed: int, prefix: str = "align") -> "AlignmentMlp":
        if in_dim <= 0 or out_dim <= 0:
            raise ConfigError(f"MLP dims must be positive, got {in_dim} -> {out_dim}")
        hidden = 2 * out_dim
        r1 = substream(seed, f"init.{prefix}.w1")
        r2 = substream(seed, f"init.{prefix}.w2")
        params = {
            f"{prefix}.w1": Tensor(
                r1.standard_normal((hidden, in_dim)) * np.sqrt(2.0 / in_dim),
                requires_grad=True,
            ),
            f"{prefix}.b1": Tensor(np.zeros(hidden), requires_grad=True),
            f"{prefix}.w2": Tensor(
                r2.standard_normal((out_dim, hidden)) * np.sqrt(2.0 / hidden),
                requires_grad=True,
            ),
            f"{prefix}.b2": Tensor(np.zeros(out_dim), requires_grad=True),
        }
        mlp = cls(params=params)
        mlp._prefix = prefix
        return mlp

    def __post_init__(self):
        self._prefix = "align"
        if self.params:
            first = next(iter(self.params))
            self._prefix = first.rsplit(".", 1)[0]

    def forward(self, x) -> Tensor:
        """x: (..., in_dim) -> (..., out_dim)."""
        p = self._prefix
        w1, b1 = self.params[f"{p}.w1"], self.params[f"{p}.b1"]
        w2, b2 = self.params[f"{p}.w2"], self.params[f"{p}.b2"]
        x = ad.as_tensor(x)
        if x.shape[-1] != w1.shape[1]:
            raise ConfigError(
                f"alignment MLP expects input dim {w1.shape[1]}, got {x.shape[-1]}"
            )
        h = ad.relu(ad.add(ad.matmul(x, ad.transpose(w1)), b1))
        return ad.add(ad.matmul(h, ad.transpose(w2)), b2)


def align_features(f_cnn, mlp: AlignmentMlp) -> Tensor:
    """Project extractor features into the skeleton feature space."""
    return mlp.forward(f_cnn)


def contrastive_loss(f_skel, f_rgb, tau: float = 0.1) -> Tensor:
    """Bidirectional contrastive loss over a batch of N paired embeddings.

    Both inputs are (N, D). Pairs share an index. For each anchor the
    positive is its partner in the other modality; negatives are the other
    modality's non-partners plus the anchor's own modality's other members.
    The result is the mean of the 2N per-anchor terms, each the negative log
    of the positive's share of the exponentiated cosine similarities. N=1
    yields exactly zero (no negatives); the loss is never negative.
    """
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    a = ad.as_tensor(f_skel)
    b = ad.as_tensor(f_rgb)
    if a.shape != b.shape or len(a.shape) != 2:
        raise ConfigError(f"expected matching (N, D) batches, got {a.shape} and {b.shape}")
    n = a.shape[0]
    if n == 1:
        # keep the graph connected so gradients exist (and are zero)
        zero = ad.mul(ad.reduce_sum(a), 0.0)
        return ad.add(zero, ad.mul(ad.reduce_sum(b), 0.0))

    an = ad.normalize(a, axis=-1)
    bn = ad.normalize(b, axis=-1)
    inv_tau = 1.0 / tau
    cross = ad.mul(ad.matmul(an, ad.transpose(bn)), inv_tau)  # cross[i, k] = s(a_i, b_k)
    intra_a = ad.mul(ad.matmul(an, ad.transpose(an)), inv_tau)
    intra_b = ad.mul(ad.matmul(bn, ad.transpose(bn)), inv_tau)

    eye = np.eye(n)
    off = 1.0 - eye
    e_cross = ad.exp(cross)
    pos = ad.reduce_sum(ad.mul(e_cross, eye), axis=1)  # exp s(a_i, b_i)
    denom_a = ad.add(
        ad.reduce_sum(e_cross, axis=1),
        ad.reduce_sum(ad.mul(ad.exp(intra_a), off), axis=1),
    )
    denom_b = ad.add(
        ad.reduce_sum(e_cross, axis=0),
        ad.reduce_sum(ad.mul(ad.exp(intra_b), off), axis=1),
    )
    terms_a = ad.sub(ad.log(denom_a), ad.log(pos))
    terms_b = ad.sub(ad.log(denom_b), ad.log(pos))
    return ad.mul(ad.add(ad.reduce_mean(terms_a), ad.reduce_mean(terms_b)), 0.5)
