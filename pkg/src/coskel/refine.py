"""Score refinement from per-sample text features.

An external exporter answers fixed questions about each clip's video and
emits one feature vector per sample. At training time those vectors steer a
bank of learnable class-by-class matrices: the feature-weighted sum of the
bank forms a correction matrix applied to the classifier scores, with an
optional (default) residual path so zero-initialized matrices leave the
scores untouched. A cross-entropy term on the refined scores trains the bank.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import tensorio
from .autodiff import Tensor
from .errors import ConfigError, DataError

DEFAULT_TEXT_DIM = 32


@dataclass
class TextFeatureVector:
    values: np.ndarray
    sample_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise DataError(f"text feature must be a vector, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"text feature for {self.sample_id!r} contains non-finite values")


def unify_text_features(raw, n: int = DEFAULT_TEXT_DIM, sample_id: str = "") -> TextFeatureVector:
    """Truncate or zero-pad to length n, then L2-normalize.

    Exporters may produce vectors of any length; this is the single rule both
    sides use so files and in-process features agree bit for bit.
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if raw.size == 0:
        raise DataError("cannot unify an empty text feature vector")
    if n < 1:
        raise ConfigError(f"unified dimension must be >= 1, got {n}")
    if raw.size >= n:
        vec = raw[:n].copy()
    else:
        vec = np.concatenate([raw, np.zeros(n - raw.size)])
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec = vec / norm
    return TextFeatureVector(values=vec, sample_id=sample_id)


@dataclass
class RefinementParams:
    """n learnable C x C matrices stacked as one (n, C, C) tensor."""

    matrices: Tensor
    residual: bool = True

    @classmethod
    def init(cls, n: int, class_count: int, residual: bool = True) -> "RefinementParams":
        if n < 1 or class_count < 1:
            raise ConfigError(f"need n >= 1 and C >= 1, got n={n}, C={class_count}")
        return cls(
            matrices=Tensor(np.zeros((n, class_count, class_count)), requires_grad=True),
            residual=residual,
        )

    def __post_init__(self):
        if not isinstance(self.matrices, Tensor):
            self.matrices = Tensor(np.asarray(self.matrices, dtype=np.float64))
        if len(self.matrices.shape) != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise ConfigError(
                f"refinement matrices must be (n, C, C), got {self.matrices.shape}"
            )

    @property
    def n(self) -> int:
        return self.matrices.shape[0]

    @property
    def class_count(self) -> int:
        return self.matrices.shape[1]


def refine_scores(f_text, params: RefinementParams, s_m) -> Tensor:
    """Refined scores from text features and classifier scores.

    R = sum_i f_text[i] * M_i; residual mode returns S_M + R @ S_M, literal
    mode returns R @ S_M. Accepts a single sample ((n,) with (C,)) or a batch
    ((B, n) with (B, C)).
    """
    if isinstance(f_text, TextFeatureVector):
        f_text = f_text.values
    ft = ad.as_tensor(f_text)
    sm = ad.as_tensor(s_m)
    single = len(ft.shape) == 1
    if single:
        ft = ad.reshape(ft, (1,) + ft.shape)
        sm = ad.reshape(sm, (1,) + sm.shape)
    n, c = params.n, params.class_count
    if ft.shape[-1] != n:
        raise ConfigError(f"text feature dim {ft.shape[-1]} != matrix bank size {n}")
    if sm.shape[-1] != c:
        raise ConfigError(f"score dim {sm.shape[-1]} != class count {c}")
    if ft.shape[0] != sm.shape[0]:
        raise ConfigError(f"batch sizes differ: {ft.shape[0]} text vs {sm.shape[0]} scores")
    b = ft.shape[0]
    # R[b] = sum_i ft[b, i] * M[i]  ->  (B, C, C)
    weights = ad.reshape(ft, (b, n, 1, 1))
    bank = ad.reshape(params.matrices, (1, n, c, c))
    r = ad.reduce_sum(ad.mul(weights, bank), axis=1)
    correction = ad.reshape(ad.matmul(r, ad.reshape(sm, (b, c, 1))), (b, c))
    out = ad.add(sm, correction) if params.residual else correction
    return ad.reshape(out, (c,)) if single else out


def refinement_loss(s_r, labels, class_count: int | None = None) -> Tensor:
    """Cross-entropy of softmax(refined scores) against integer labels.

    Scores may be a single (C,) vector with an int label or a (B, C) batch
    with a length-B label array; batches average over samples.
    """
    scores = ad.as_tensor(s_r)
    if len(scores.shape) == 1:
        scores = ad.reshape(scores, (1,) + scores.shape)
        labels = np.asarray([labels], dtype=np.int64)
    else:
        labels = np.asarray(labels, dtype=np.int64)
    c = scores.shape[-1]
    if class_count is not None and c != class_count:
        raise ConfigError(f"score dim {c} != class count {class_count}")
    if labels.shape != (scores.shape[0],):
        raise ConfigError(f"labels shape {labels.shape} does not match batch {scores.shape[0]}")
    if np.any(labels < 0) or np.any(labels >= c):
        raise DataError(f"label out of range for {c} classes")
    return ad.cross_entropy(scores, labels)


# -- text feature files ------------------------------------------------------------


def ids_path_for(features_path: str | Path) -> Path:
    """Sibling id-list path: same stem, .ids extension."""
    return Path(features_path).with_suffix(".ids")


@dataclass
class TextFeatureTable:
    """All text features of a dataset, indexed by sample id."""

    ids: list[str]
    features: np.ndarray
    index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.features.ndim != 2:
            raise DataError(f"feature table must be 2-D, got shape {self.features.shape}")
        if len(self.ids) != self.features.shape[0]:
            raise DataError(
                f"id list has {len(self.ids)} entries, table has {self.features.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise DataError("duplicate sample ids in text feature table")
        self.index = {sid: i for i, sid in enumerate(self.ids)}

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def lookup(self, sample_ids: list[str]) -> np.ndarray:
        """Rows for the requested ids, in order; missing ids are all reported."""
        missing = [sid for sid in sample_ids if sid not in self.index]
        if missing:
            raise DataError(
                "text features missing for sample ids: " + ", ".join(sorted(missing))
            )
        rows = [self.index[sid] for sid in sample_ids]
        return self.features[rows]


def load_text_features(features_path: str | Path) -> TextFeatureTable:
    """Read a feature tensor and its sibling id list."""
    features_path = Path(features_path)
    feats = tensorio.read_tensor(features_path)
    if feats.ndim != 2:
        raise DataError(
            f"{features_path}: expected rank-2 text feature tensor, got rank {feats.ndim}"
        )
    ids = tensorio.read_id_list(ids_path_for(features_path))
    return TextFeatureTable(ids=ids, features=feats.astype(np.float64))


def save_text_features(features_path: str | Path, table: TextFeatureTable) -> None:
    tensorio.write_tensor(features_path, table.features)
    tensorio.write_id_list(ids_path_for(features_path), table.ids)
