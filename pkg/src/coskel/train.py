"""Joint training objective, optimizer schedule, evaluation, ensembling, and
cross-domain transfer.

The objective is L = L_cls + lambda1 * L_con + lambda2 * L_ref: softmax
cross-entropy on the skeleton classifier, the cross-modal contrastive term,
and cross-entropy on the text-refined scores. Either auxiliary term drops out
when its weight is zero, so the same loop covers skeleton-only baselines and
the full co-learning run. Inference everywhere is skeleton-only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import tensorio
from .align import AlignmentMlp, contrastive_loss
from .autodiff import Tensor
from .backbone import BackboneConfig, SkeletonBackbone
from .data import Manifest, SkeletonDataset, load_frames
from .errors import ConfigError, DataError, NumericError, UsageError
from .refine import RefinementParams, TextFeatureTable, refine_scores, refinement_loss
from .rgb import CnnConfig, CnnExtractor, build_composite, composite_rng
from .rng import substream
from .skeleton import (
    MODALITY_KINDS,
    GraphTopology,
    JointMapping,
    SkeletonSequence,
    derive_modality,
    interpolate_skeleton,
)

EVAL_CHUNK = 64


@dataclass
class LossWeights:
    """Coefficients of the auxiliary terms in the total loss."""

    lambda1: float = 0.1  # contrastive alignment
    lambda2: float = 0.2  # text-feature refinement

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(
                f"loss weights must be nonnegative, got {self.lambda1}, {self.lambda2}"
            )


@dataclass
class Schedule:
    """SGD schedule: linear warmup, flat base rate, step decays by 10x."""

    base_lr: float = 0.1
    epochs: int = 110
    batch_size: int = 200
    warmup_epochs: int = 5
    decay_epochs: tuple[int, ...] = (90, 100)
    momentum: float = 0.9
    weight_decay: float = 4e-4

    def __post_init__(self):
        if self.base_lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("schedule requires base_lr >= 0, epochs >= 1, batch_size >= 1")
        if any(d >= self.epochs for d in self.decay_epochs):
            raise ConfigError(
                f"decay epochs {self.decay_epochs} must precede total epochs {self.epochs}"
            )
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")


#: Full-scale recipe and a desk-scale rescaling of the same proportions.
PRESETS: dict[str, Schedule] = {
    "full": Schedule(),
    "desk": Schedule(epochs=60, batch_size=16, decay_epochs=(45, 55)),
}


def schedule_from_preset(name: str, **overrides) -> Schedule:
    if name not in PRESETS:
        raise UsageError(f"unknown schedule preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


def lr_at(epoch: int, schedule: Schedule) -> float:
    """Learning rate for an epoch index (0-based)."""
    if epoch < 0 or epoch >= schedule.epochs:
        raise UsageError(f"epoch {epoch} outside schedule of {schedule.epochs} epochs")
    if epoch < schedule.warmup_epochs:
        return schedule.base_lr * (epoch + 1) / schedule.warmup_epochs
    lr = schedule.base_lr
    for d in schedule.decay_epochs:
        if epoch >= d:
            lr /= 10.0
    return lr


def total_loss(l_cls: Tensor, l_con: Tensor, l_ref: Tensor, weights: LossWeights) -> Tensor:
    """L = L_cls + lambda1 * L_con + lambda2 * L_ref."""
    for name, term in (
        ("classification", l_cls),
        ("contrastive", l_con),
        ("refinement", l_ref),
    ):
        if not np.all(np.isfinite(term.value)):
            raise NumericError(f"{name} loss term is non-finite")
    return ad.add(l_cls, ad.add(ad.mul(l_con, weights.lambda1), ad.mul(l_ref, weights.lambda2)))


# -- model state -------------------------------------------------------------------


@dataclass
class TrainState:
    """Everything the trainer mutates: modules, loss config, momentum buffers."""

    backbone: SkeletonBackbone
    weights: LossWeights
    schedule: Schedule
    tau: float = 0.1
    seed: int = 0
    modality: str = "joint"
    extractor: CnnExtractor | None = None
    align_mlp: AlignmentMlp | None = None
    refine_params: RefinementParams | None = None
    epoch: int = 0
    velocities: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable(self) -> dict[str, Tensor]:
        out = {f"skel.{k}": t for k, t in self.backbone.params.items()}
        if self.extractor is not None:
            out.update(self.extractor.params)
        if self.align_mlp is not None:
            out.update(self.align_mlp.params)
        if self.refine_params is not None:
            out["refine.matrices"] = self.refine_params.matrices
        return out


def build_state(
    topology: GraphTopology,
    class_count: int,
    schedule: Schedule,
    weights: LossWeights,
    seed: int = 0,
    modality: str = "joint",
    backbone_config: BackboneConfig | None = None,
    tau: float = 0.1,
    with_rgb: bool = False,
    text_n: int = 0,
    residual: bool = True,
    cnn_config: CnnConfig | None = None,
) -> TrainState:
    if modality not in MODALITY_KINDS:
        raise ConfigError(f"unknown modality {modality!r}")
    bcfg = backbone_config or BackboneConfig(class_count=class_count)
    if bcfg.class_count != class_count:
        bcfg = replace(bcfg, class_count=class_count)
    backbone = SkeletonBackbone.init(bcfg, topology, seed=seed)
    extractor = None
    align_mlp = None
    if with_rgb:
        ccfg = cnn_config or CnnConfig()
        extractor = CnnExtractor.init(ccfg, seed=seed)
        align_mlp = AlignmentMlp.init(ccfg.feature_dim, bcfg.feature_dim, seed=seed)
    refine_params = RefinementParams.init(text_n, class_count, residual) if text_n > 0 else None
    return TrainState(
        backbone=backbone,
        weights=weights,
        schedule=schedule,
        tau=tau,
        seed=seed,
        modality=modality,
        extractor=extractor,
        align_mlp=align_mlp,
        refine_params=refine_params,
    )


def sgd_step(state: TrainState, lr: float) -> None:
    """One SGD-with-momentum update; weight decay is added to the gradient."""
    sched = state.schedule
    for name, tensor in state.trainable().items():
        if tensor.grad is None:
            continue
        g = tensor.grad + sched.weight_decay * tensor.value
        v = state.velocities.get(name)
        v = g if v is None else sched.momentum * v + g
        state.velocities[name] = v
        tensor.value = tensor.value - lr * v


def zero_grads(state: TrainState) -> None:
    for tensor in state.trainable().values():
        tensor.grad = None


# -- data bundling -----------------------------------------------------------------


@dataclass
class TrainingData:
    """Index-aligned modality arrays plus optional RGB frames and text rows."""

    skeletons: SkeletonDataset
    frame_sets: list | None = None  # list[FrameSet], index-aligned
    text_rows: np.ndarray | None = None  # (B, n), index-aligned

    def __post_init__(self):
        b = len(self.skeletons)
        if self.frame_sets is not None and len(self.frame_sets) != b:
            raise DataError(f"{len(self.frame_sets)} frame sets for {b} samples")
        if self.text_rows is not None and self.text_rows.shape[0] != b:
            raise DataError(f"{self.text_rows.shape[0]} text rows for {b} samples")


def prepare_training_data(
    manifest: Manifest,
    modality: str,
    need_rgb: bool,
    text_table: TextFeatureTable | None,
) -> TrainingData:
    skeletons = SkeletonDataset.load(manifest, modality)
    frame_sets = None
    if need_rgb:
        if not manifest.has_frames():
            raise DataError(
                "contrastive training needs a frame directory for every sample; "
                "set train.lambda1 = 0 for skeleton-only data"
            )
        frame_sets = [load_frames(e) for e in manifest.entries]
    text_rows = text_table.lookup(manifest.text_ids()) if text_table is not None else None
    return TrainingData(skeletons=skeletons, frame_sets=frame_sets, text_rows=text_rows)


# -- training loop -----------------------------------------------------------------


def batch_losses(
    state: TrainState,
    skel: np.ndarray,
    labels: np.ndarray,
    composites: np.ndarray | None = None,
    text: np.ndarray | None = None,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Loss components for one batch, plus the raw classifier scores.

    Unused auxiliary terms come back as constant zero tensors so the total
    stays a uniform composition.
    """
    feats, scores = state.backbone.scores(skel)
    l_cls = ad.cross_entropy(scores, labels)
    zero = Tensor(np.zeros(()))
    l_con = zero
    if composites is not None:
        if state.extractor is None or state.align_mlp is None:
            raise ConfigError("state has no RGB modules but composites were supplied")
        rgb_feats = state.extractor.features(composites)
        l_con = contrastive_loss(feats, state.align_mlp.forward(rgb_feats), tau=state.tau)
    l_ref = zero
    if text is not None:
        if state.refine_params is None:
            raise ConfigError("state has no refinement matrices but text features were supplied")
        refined = refine_scores(text, state.refine_params, scores)
        l_ref = refinement_loss(refined, labels)
    return l_cls, l_con, l_ref, scores


def _batch_composites(
    state: TrainState,
    data: TrainingData,
    indices: np.ndarray,
    epoch: int,
    crop_hw: tuple[int, int],
    m: int,
) -> np.ndarray:
    comps = []
    ids = data.skeletons.sample_ids
    for i in indices:
        rng = composite_rng(state.seed, ids[int(i)], epoch)
        comp = build_composite(
            data.frame_sets[int(i)], m, crop_hw[0], crop_hw[1], training=True, rng=rng
        )
        comps.append(np.transpose(comp.image, (2, 0, 1)))
    return np.stack(comps)


def train_epoch(
    state: TrainState,
    data: TrainingData,
    crop_hw: tuple[int, int] = (32, 32),
    m: int = 5,
    records: list | None = None,
) -> dict:
    """One pass over the data; returns mean loss components and train top-1."""
    epoch = state.epoch
    lr = lr_at(epoch, state.schedule)
    n = len(data.skeletons)
    order = substream(state.seed, f"shuffle.epoch{epoch}").permutation(n)
    bs = state.schedule.batch_size
    use_rgb = data.frame_sets is not None and state.weights.lambda1 > 0
    use_text = data.text_rows is not None and state.weights.lambda2 > 0

    sums = {"loss": 0.0, "loss_cls": 0.0, "loss_con": 0.0, "loss_ref": 0.0}
    correct = 0
    for b, start in enumerate(range(0, n, bs)):
        idx = order[start : start + bs]
        skel = data.skeletons.arrays[idx]
        labels = data.skeletons.labels[idx]
        composites = (
            _batch_composites(state, data, idx, epoch, crop_hw, m) if use_rgb else None
        )
        text = data.text_rows[idx] if use_text else None
        try:
            l_cls, l_con, l_ref, scores = batch_losses(state, skel, labels, composites, text)
            loss = total_loss(l_cls, l_con, l_ref, state.weights)
            zero_grads(state)
            loss.backward()
        except NumericError as exc:
            raise NumericError(f"epoch {epoch} batch {b}: {exc}") from exc
        sgd_step(state, lr)
        correct += int(np.sum(np.argmax(scores.value, axis=1) == labels))
        rec = {
            "epoch": epoch,
            "split": "train",
            "batch": b,
            "lr": lr,
            "loss": float(loss.value),
            "loss_cls": float(l_cls.value),
            "loss_con": float(l_con.value),
            "loss_ref": float(l_ref.value),
        }
        if records is not None:
            records.append(rec)
        for k in sums:
            sums[k] += rec[k] * len(idx)
    means = {k: v / n for k, v in sums.items()}
    means.update(epoch=epoch, split="train_epoch", lr=lr, top1=correct / n)
    state.epoch += 1
    if records is not None:
        records.append(means)
    return means


# -- evaluation --------------------------------------------------------------------


def _np_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def dataset_scores(backbone: SkeletonBackbone, arrays: np.ndarray) -> np.ndarray:
    """Raw classifier scores, chunked forward passes, no gradients kept."""
    outs = []
    for start in range(0, arrays.shape[0], EVAL_CHUNK):
        chunk = arrays[start : start + EVAL_CHUNK]
        outs.append(backbone.scores(chunk)[1].value)
    return np.concatenate(outs, axis=0)


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, ks: tuple[int, ...]) -> dict[int, float]:
    if scores.shape[0] == 0:
        raise UsageError("cannot evaluate an empty score set")
    if scores.shape[0] != labels.shape[0]:
        raise UsageError(f"{scores.shape[0]} score rows vs {labels.shape[0]} labels")
    order = np.argsort(-scores, axis=1, kind="stable")
    out = {}
    for k in ks:
        if k < 1:
            raise UsageError(f"top-k requires k >= 1, got {k}")
        kk = min(k, scores.shape[1])
        hits = (order[:, :kk] == labels[:, None]).any(axis=1)
        out[k] = float(np.mean(hits))
    return out


def evaluate_topk(
    state: TrainState, dataset: SkeletonDataset, ks: tuple[int, ...] = (1, 5)
) -> dict[int, float]:
    """Skeleton-only top-k accuracies; never touches RGB or text inputs."""
    if len(dataset) == 0:
        raise UsageError("cannot evaluate an empty dataset")
    scores = dataset_scores(state.backbone, dataset.arrays)
    return topk_accuracy(scores, dataset.labels, ks)


# -- ensembling --------------------------------------------------------------------


@dataclass
class StreamResult:
    """Per-sample softmax scores of one modality stream plus its fusion weight."""

    kind: str
    sample_ids: list[str]
    probs: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in MODALITY_KINDS:
            raise DataError(f"unknown stream kind {self.kind!r}")
        if self.probs.ndim != 2 or self.probs.shape[0] != len(self.sample_ids):
            raise DataError(
                f"stream {self.kind}: probs shape {self.probs.shape} does not match "
                f"{len(self.sample_ids)} ids"
            )
        row_sums = self.probs.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-9):
            raise DataError(f"stream {self.kind}: score rows must sum to 1")
        if self.weight < 0:
            raise DataError(f"stream {self.kind}: weight must be nonnegative")


def stream_result(
    state: TrainState, dataset: SkeletonDataset, weight: float = 1.0
) -> StreamResult:
    probs = _np_softmax(dataset_scores(state.backbone, dataset.arrays))
    return StreamResult(
        kind=dataset.modality, sample_ids=dataset.sample_ids, probs=probs, weight=weight
    )


def ensemble_scores(streams: list[StreamResult]) -> np.ndarray:
    """Weighted sum of per-stream softmax scores; argmax is the prediction."""
    if not streams:
        raise UsageError("ensemble needs at least one stream")
    ids = streams[0].sample_ids
    shape = streams[0].probs.shape
    for s in streams[1:]:
        if s.sample_ids != ids:
            raise DataError(
                f"stream {s.kind}: sample ordering differs from stream {streams[0].kind}"
            )
        if s.probs.shape != shape:
            raise DataError(f"stream {s.kind}: score shape {s.probs.shape} != {shape}")
    combined = np.zeros(shape)
    for s in streams:
        combined += s.weight * s.probs
    return combined


# -- cross-domain transfer -----------------------------------------------------------


def transfer_arrays(
    manifest: Manifest,
    mapping: JointMapping,
    source_topology: GraphTopology,
    modality: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Interpolate every target-domain sample onto the source joint layout."""
    from .data import load_skeleton

    mats, labels = [], []
    for e in manifest.entries:
        seq = load_skeleton(e, manifest.topology)
        mapped: SkeletonSequence = interpolate_skeleton(seq, mapping, source_topology)
        mod = derive_modality(mapped, modality)
        mats.append(np.transpose(mod.data, (2, 0, 1)))
        labels.append(e.label)
    return np.stack(mats), np.array(labels, dtype=np.int64)


def zero_shot_transfer(
    state: TrainState,
    target_manifest: Manifest,
    mapping: JointMapping,
    ks: tuple[int, ...] = (1, 5),
    refine_params: RefinementParams | None = None,
    text_table: TextFeatureTable | None = None,
) -> dict[int, float]:
    """Evaluate a trained model on another domain via joint interpolation.

    With `refine_params` (and a matching text table) the frozen refinement
    matrices adjust the scores before ranking; nothing is trained here.
    """
    arrays, labels = transfer_arrays(
        target_manifest, mapping, state.backbone.topology, state.modality
    )
    scores = dataset_scores(state.backbone, arrays)
    if refine_params is not None:
        if text_table is None:
            raise DataError("refined transfer needs a text feature table")
        text = text_table.lookup(target_manifest.text_ids())
        scores = refine_scores(text, refine_params, scores).value
    return topk_accuracy(scores, labels, ks)


# -- checkpoints and metrics ---------------------------------------------------------


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    tensors: dict[str, np.ndarray] = {
        name: t.value for name, t in state.trainable().items()
    }
    bcfg = state.backbone.config
    tensors["meta.parent"] = np.array(state.backbone.topology.parent, dtype=np.float64)
    tensors["meta.channels"] = np.array(bcfg.channels, dtype=np.float64)
    tensors["meta.scalars"] = np.array(
        [
            bcfg.temporal_kernel,
            bcfg.class_count,
            bcfg.in_channels,
            1.0 if bcfg.adjacency_mode == "dynamic" else 0.0,
            MODALITY_KINDS.index(state.modality),
            state.tau,
            state.weights.lambda1,
            state.weights.lambda2,
            state.refine_params.n if state.refine_params is not None else 0,
            1.0 if (state.refine_params is None or state.refine_params.residual) else 0.0,
            state.epoch,
            state.seed,
        ],
        dtype=np.float64,
    )
    if state.extractor is not None:
        c = state.extractor.config
        tensors["meta.cnn"] = np.array(
            list(c.widths) + [c.kernel, c.stride, c.in_channels], dtype=np.float64
        )
    tensorio.write_checkpoint(path, tensors)


def load_checkpoint(
    path: str | Path,
    schedule: Schedule | None = None,
) -> TrainState:
    tensors = tensorio.read_checkpoint(path)
    for key in ("meta.parent", "meta.channels", "meta.scalars"):
        if key not in tensors:
            raise DataError(f"{path}: checkpoint missing {key}")
    scal = tensors["meta.scalars"]
    topology = GraphTopology(parent=tuple(int(p) for p in tensors["meta.parent"]))
    bcfg = BackboneConfig(
        channels=tuple(int(c) for c in tensors["meta.channels"]),
        temporal_kernel=int(scal[0]),
        adjacency_mode="dynamic" if scal[3] == 1.0 else "static",
        class_count=int(scal[1]),
        in_channels=int(scal[2]),
    )
    weights = LossWeights(lambda1=float(scal[6]), lambda2=float(scal[7]))
    text_n = int(scal[8])
    state = build_state(
        topology=topology,
        class_count=bcfg.class_count,
        schedule=schedule or PRESETS["desk"],
        weights=weights,
        seed=int(scal[11]),
        modality=MODALITY_KINDS[int(scal[4])],
        backbone_config=bcfg,
        tau=float(scal[5]),
        with_rgb="meta.cnn" in tensors,
        text_n=text_n,
        residual=bool(scal[9] == 1.0),
        cnn_config=(
            CnnConfig(
                widths=tuple(int(w) for w in tensors["meta.cnn"][:-3]),
                kernel=int(tensors["meta.cnn"][-3]),
                stride=int(tensors["meta.cnn"][-2]),
                in_channels=int(tensors["meta.cnn"][-1]),
            )
            if "meta.cnn" in tensors
            else None
        ),
    )
    state.epoch = int(scal[10])
    for name, tensor in state.trainable().items():
        if name not in tensors:
            raise DataError(f"{path}: checkpoint missing parameter {name}")
        if tensors[name].shape != tensor.value.shape:
            raise DataError(
                f"{path}: parameter {name} has shape {tensors[name].shape}, "
                f"expected {tensor.value.shape}"
            )
        tensor.value = tensors[name].astype(np.float64)
    return state


def write_metrics(path: str | Path, records: list[dict]) -> None:
    """Line-delimited records; keys sorted so identical runs are bit-identical."""
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    tensorio.atomic_write_bytes(path, text.encode("utf-8"))


def fit(
    state: TrainState,
    data: TrainingData,
    epochs: int | None = None,
    crop_hw: tuple[int, int] = (32, 32),
    m: int = 5,
    records: list | None = None,
) -> TrainState:
    """Run the remaining epochs of the schedule (or `epochs` of them)."""
    total = epochs if epochs is not None else state.schedule.epochs - state.epoch
    for _ in range(total):
        train_epoch(state, data, crop_hw=crop_hw, m=m, records=records)
    return state
