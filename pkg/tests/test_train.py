"""Schedule arithmetic, the three-term objective, SGD bookkeeping, evaluation,
ensembling, transfer, and checkpoint round-trips."""

import json
from pathlib import Path

import numpy as np
import pytest

from coskel import tensorio
from coskel.autodiff import Tensor
from coskel.data import Manifest, ManifestEntry, SkeletonDataset, save_manifest
from coskel.errors import ConfigError, DataError, NumericError, UsageError
from coskel.rng import substream
from coskel.skeleton import GraphTopology, identity_mapping
from coskel.train import (
    PRESETS,
    TrainingData,
    LossWeights,
    Schedule,
    StreamResult,
    TrainState,
    batch_losses,
    build_state,
    ensemble_scores,
    evaluate_topk,
    fit,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    schedule_from_preset,
    sgd_step,
    stream_result,
    topk_accuracy,
    total_loss,
    train_epoch,
    write_metrics,
    zero_grads,
    zero_shot_transfer,
)
from coskel.backbone import BackboneConfig

TOPO3 = GraphTopology(parent=(0, 0, 1))


def _td(dataset):
    return TrainingData(skeletons=dataset)


def _tiny_state(classes=2, seed=0, modality="joint", lam1=0.0, lam2=0.0, text_n=0, **sched):
    schedule = Schedule(
        base_lr=sched.pop("base_lr", 0.05),
        epochs=sched.pop("epochs", 30),
        batch_size=sched.pop("batch_size", 4),
        warmup_epochs=sched.pop("warmup_epochs", 1),
        decay_epochs=sched.pop("decay_epochs", ()),
        **sched,
    )
    return build_state(
        topology=TOPO3,
        class_count=classes,
        schedule=schedule,
        weights=LossWeights(lambda1=lam1, lambda2=lam2),
        seed=seed,
        modality=modality,
        backbone_config=BackboneConfig(
            channels=(6,), temporal_kernel=3, class_count=classes
        ),
        text_n=text_n,
    )


def _class_coded_dataset(n=12, t=8, classes=2, noise=0.05, name="ds", modality="joint"):
    """Sequences whose per-class frequency differs; linearly separable-ish."""
    rng = substream(71, f"train.{name}")
    coords = np.zeros((n, t, 3, 3))
    labels = np.array([i % classes for i in range(n)], dtype=np.int64)
    for i in range(n):
        f = labels[i] + 1.0
        phase = rng.uniform(0, 2 * np.pi)
        for j in range(3):
            coords[i, :, j, 0] = np.sin(2 * np.pi * f * np.arange(t) / t + phase + j)
            coords[i, :, j, 1] = np.cos(2 * np.pi * f * np.arange(t) / t + phase)
        coords[i] += noise * rng.standard_normal((t, 3, 3))
    entries = [
        ManifestEntry(sample_id=f"s{i}", label=int(labels[i]), skeleton_path=Path(f"s{i}.mmct"))
        for i in range(n)
    ]
    manifest = Manifest(topology=TOPO3, class_count=classes, entries=entries, root=Path("."))
    arrays = np.transpose(coords, (0, 3, 1, 2))  # (B, 3, T, J)
    return SkeletonDataset(manifest=manifest, modality=modality, arrays=arrays, labels=labels)


# -- schedule ------------------------------------------------------------------


def test_learning_rate_warmup_plateau_and_decays():
    s = PRESETS["full"]
    assert abs(lr_at(0, s) - 0.02) < 1e-15  # warmup epoch 1/5
    assert abs(lr_at(4, s) - 0.1) < 1e-15  # warmup end
    assert abs(lr_at(5, s) - 0.1) < 1e-15
    assert abs(lr_at(89, s) - 0.1) < 1e-15
    assert abs(lr_at(90, s) - 0.01) < 1e-15  # first decay
    assert abs(lr_at(100, s) - 0.001) < 1e-15  # second decay
    assert abs(lr_at(109, s) - 0.001) < 1e-15
    with pytest.raises(UsageError):
        lr_at(110, s)
    with pytest.raises(UsageError):
        lr_at(-1, s)


def test_presets_and_overrides():
    desk = PRESETS["desk"]
    assert (desk.epochs, desk.batch_size, desk.decay_epochs) == (60, 16, (45, 55))
    tweaked = schedule_from_preset("desk", base_lr=0.01)
    assert tweaked.base_lr == 0.01 and tweaked.epochs == 60
    with pytest.raises(UsageError):
        schedule_from_preset("overnight")


def test_schedule_validation():
    with pytest.raises(ConfigError):
        Schedule(epochs=10, decay_epochs=(10,))
    with pytest.raises(ConfigError):
        Schedule(momentum=1.0)
    with pytest.raises(ConfigError):
        Schedule(batch_size=0)
    with pytest.raises(ConfigError):
        LossWeights(lambda1=-0.1)


# -- objective -----------------------------------------------------------------


def test_total_loss_weighted_sum_value():
    w = LossWeights(lambda1=0.1, lambda2=0.2)
    out = total_loss(Tensor(np.array(1.0)), Tensor(np.array(2.0)), Tensor(np.array(3.0)), w)
    assert abs(out.value - 1.8) < 1e-15


def test_total_loss_gradient_weights():
    w = LossWeights(lambda1=0.1, lambda2=0.2)
    terms = [Tensor(np.array(v), requires_grad=True) for v in (1.0, 2.0, 3.0)]
    total_loss(*terms, w).backward()
    assert abs(terms[0].grad - 1.0) < 1e-15
    assert abs(terms[1].grad - 0.1) < 1e-15
    assert abs(terms[2].grad - 0.2) < 1e-15


def test_total_loss_names_the_broken_term():
    # leaf construction already rejects NaN, so poison a term in place the way
    # a diverged computation would
    w = LossWeights()
    ok = Tensor(np.array(1.0))
    bad = Tensor(np.array(0.0))
    bad.value = np.array(np.nan)
    with pytest.raises(NumericError, match="contrastive"):
        total_loss(ok, bad, ok, w)
    with pytest.raises(NumericError, match="refinement"):
        total_loss(ok, ok, bad, w)
    with pytest.raises(NumericError, match="classification"):
        total_loss(bad, ok, ok, w)


# -- optimizer -----------------------------------------------------------------


def test_sgd_momentum_two_step_hand_oracle():
    state = _tiny_state()
    state.schedule = Schedule(
        base_lr=0.2, epochs=10, batch_size=4, warmup_epochs=1,
        decay_epochs=(), momentum=0.9, weight_decay=0.1,
    )
    p = state.backbone.params["head.bias"]
    p.value = np.array([1.0, 1.0])
    for other in state.trainable().values():
        other.grad = None
    p.grad = np.array([0.5, 0.5])
    sgd_step(state, lr=0.2)
    # g = 0.5 + 0.1 * 1.0 = 0.6; v = 0.6; p = 1 - 0.2 * 0.6 = 0.88
    assert np.allclose(p.value, 0.88, atol=1e-15)
    p.grad = np.array([0.5, 0.5])
    sgd_step(state, lr=0.2)
    # g = 0.5 + 0.1 * 0.88 = 0.588; v = 0.9 * 0.6 + 0.588 = 1.128
    # p = 0.88 - 0.2 * 1.128 = 0.6544
    assert np.allclose(p.value, 0.6544, atol=1e-12)


def test_params_without_gradients_are_skipped():
    state = _tiny_state()
    before = {k: t.value.copy() for k, t in state.trainable().items()}
    zero_grads(state)
    sgd_step(state, lr=0.5)
    for k, t in state.trainable().items():
        assert np.array_equal(t.value, before[k]), k


def test_zero_learning_rate_is_bitwise_identity():
    state = _tiny_state(base_lr=0.0)
    data = _class_coded_dataset(name="zerolr")
    before = {k: t.value.copy() for k, t in state.trainable().items()}
    train_epoch(state, _td(data))
    for k, t in state.trainable().items():
        assert np.array_equal(t.value, before[k]), k


# -- training loop -------------------------------------------------------------


def test_training_reduces_loss_and_fits_the_toy_data():
    state = _tiny_state()
    data = _class_coded_dataset(name="learn")
    records = []
    first = train_epoch(state, _td(data), records=records)
    for _ in range(24):
        last = train_epoch(state, _td(data), records=records)
    assert last["loss"] < first["loss"], (first["loss"], last["loss"])
    assert last["top1"] >= 0.9, last["top1"]
    assert state.epoch == 25


def test_epoch_records_structure():
    state = _tiny_state()
    data = _class_coded_dataset(n=8, name="records")
    records = []
    mean = train_epoch(state, _td(data), records=records)
    batch_recs = [r for r in records if r["split"] == "train"]
    assert len(batch_recs) == 2  # 8 samples / batch 4
    for r in batch_recs:
        assert set(r) == {"epoch", "split", "batch", "lr", "loss", "loss_cls", "loss_con", "loss_ref"}
        assert r["epoch"] == 0
    assert records[-1]["split"] == "train_epoch"
    assert records[-1] == mean
    assert 0.0 <= mean["top1"] <= 1.0
    # mean loss equals the sample-weighted batch mean
    want = sum(r["loss"] * 4 for r in batch_recs) / 8
    assert abs(mean["loss"] - want) < 1e-12


def test_two_identically_seeded_runs_are_bitwise_equal():
    results = []
    for _ in range(2):
        state = _tiny_state(seed=9)
        data = _class_coded_dataset(name="det")
        recs: list = []
        train_epoch(state, _td(data), records=recs)
        train_epoch(state, _td(data), records=recs)
        results.append((recs, {k: t.value.copy() for k, t in state.trainable().items()}))
    assert results[0][0] == results[1][0]
    for k in results[0][1]:
        assert np.array_equal(results[0][1][k], results[1][1][k]), k


def test_numeric_failures_name_epoch_and_batch():
    state = _tiny_state()
    data = _class_coded_dataset(name="nan")
    state.backbone.params["head.bias"].value[:] = np.nan
    with pytest.raises(NumericError, match="epoch 0 batch 0"):
        train_epoch(state, _td(data))


def test_fit_runs_the_remaining_schedule():
    state = _tiny_state(epochs=3)
    data = _class_coded_dataset(n=8, name="fit")
    fit(state, _td(data))
    assert state.epoch == 3
    state2 = _tiny_state(epochs=30)
    fit(state2, _td(data), epochs=2)
    assert state2.epoch == 2


def test_batch_losses_reject_inputs_without_matching_modules():
    state = _tiny_state()  # no extractor, no refinement bank
    data = _class_coded_dataset(n=4, name="guard")
    with pytest.raises(ConfigError):
        batch_losses(state, data.arrays, data.labels, composites=np.zeros((4, 3, 8, 8)))
    with pytest.raises(ConfigError):
        batch_losses(state, data.arrays, data.labels, text=np.zeros((4, 5)))


# -- evaluation ----------------------------------------------------------------


def test_topk_accuracy_hand_example():
    scores = np.array(
        [
            [0.1, 0.5, 0.3, 0.1],  # top order 1, 2, ...
            [0.9, 0.05, 0.02, 0.03],  # top order 0, 0????
            [0.2, 0.1, 0.3, 0.4],  # top order 3, 2, 0, 1
        ]
    )
    labels = np.array([2, 0, 1])
    accs = topk_accuracy(scores, labels, (1, 2, 3, 10))
    assert accs[1] == pytest.approx(1 / 3)  # only row 1 correct at top-1
    assert accs[2] == pytest.approx(2 / 3)  # row 0 enters at top-2
    assert accs[3] == pytest.approx(2 / 3)
    assert accs[10] == 1.0  # k beyond class count clamps to full recall


def test_topk_tie_breaks_toward_lower_class_index():
    scores = np.array([[0.5, 0.5]])
    assert topk_accuracy(scores, np.array([0]), (1,))[1] == 1.0
    assert topk_accuracy(scores, np.array([1]), (1,))[1] == 0.0


def test_topk_validation():
    with pytest.raises(UsageError):
        topk_accuracy(np.zeros((0, 3)), np.zeros(0, dtype=np.int64), (1,))
    with pytest.raises(UsageError):
        topk_accuracy(np.zeros((2, 3)), np.zeros(3, dtype=np.int64), (1,))
    with pytest.raises(UsageError):
        topk_accuracy(np.zeros((2, 3)), np.zeros(2, dtype=np.int64), (0,))


def test_evaluate_topk_is_skeleton_only_and_monotone_in_k():
    state = _tiny_state()
    data = _class_coded_dataset(name="eval")
    assert state.extractor is None and state.align_mlp is None
    accs = evaluate_topk(state, data, ks=(1, 2))
    assert 0.0 <= accs[1] <= accs[2] <= 1.0


# -- ensembling ----------------------------------------------------------------


def test_ensemble_weighted_sum_hand_example():
    a = StreamResult(kind="joint", sample_ids=["x"], probs=np.array([[0.6, 0.4]]))
    b = StreamResult(kind="bone", sample_ids=["x"], probs=np.array([[0.2, 0.8]]))
    combined = ensemble_scores([a, b])
    assert np.allclose(combined, [[0.8, 1.2]], atol=1e-15)
    assert int(np.argmax(combined)) == 1
    # weighting the first stream up flips the call
    a2 = StreamResult(kind="joint", sample_ids=["x"], probs=a.probs, weight=5.0)
    assert int(np.argmax(ensemble_scores([a2, b]))) == 0


def test_stream_result_validation():
    with pytest.raises(DataError):
        StreamResult(kind="joint", sample_ids=["x"], probs=np.array([[0.6, 0.6]]))
    with pytest.raises(DataError):
        StreamResult(kind="rgb", sample_ids=["x"], probs=np.array([[0.5, 0.5]]))
    with pytest.raises(DataError):
        StreamResult(kind="joint", sample_ids=["x"], probs=np.array([[0.5, 0.5]]), weight=-1.0)
    with pytest.raises(DataError):
        StreamResult(kind="joint", sample_ids=["x", "y"], probs=np.array([[0.5, 0.5]]))


def test_ensemble_rejects_misaligned_sample_order():
    a = StreamResult(kind="joint", sample_ids=["x", "y"], probs=np.full((2, 2), 0.5))
    b = StreamResult(kind="bone", sample_ids=["y", "x"], probs=np.full((2, 2), 0.5))
    with pytest.raises(DataError):
        ensemble_scores([a, b])
    with pytest.raises(UsageError):
        ensemble_scores([])


def test_stream_results_from_states_combine():
    data_j = _class_coded_dataset(name="ens", modality="joint")
    data_b = _class_coded_dataset(name="ens", modality="bone")
    s1 = stream_result(_tiny_state(seed=1), data_j)
    s2 = stream_result(_tiny_state(seed=2, modality="bone"), data_b, weight=0.5)
    combined = ensemble_scores([s1, s2])
    assert combined.shape == (12, 2)
    assert np.allclose(combined.sum(axis=1), 1.5, atol=1e-9)


# -- transfer ------------------------------------------------------------------


def _write_dataset_to_disk(tmp_path, n=6):
    rng = substream(72, "train.disk")
    skel_dir = tmp_path / "skeletons"
    skel_dir.mkdir()
    entries = []
    for i in range(n):
        coords = rng.standard_normal((7, 3, 3))
        path = skel_dir / f"s{i}.mmct"
        tensorio.write_tensor(path, coords)
        entries.append(ManifestEntry(sample_id=f"s{i}", label=i % 2, skeleton_path=path))
    manifest = Manifest(topology=TOPO3, class_count=2, entries=entries, root=tmp_path)
    save_manifest(tmp_path / "manifest.json", manifest)
    return manifest


def test_identity_transfer_equals_direct_evaluation(tmp_path):
    manifest = _write_dataset_to_disk(tmp_path)
    state = _tiny_state(modality="bone")
    direct = evaluate_topk(state, SkeletonDataset.load(manifest, "bone"), ks=(1, 2))
    transferred = zero_shot_transfer(state, manifest, identity_mapping(3), ks=(1, 2))
    assert transferred == direct


def test_refined_transfer_requires_text_table(tmp_path):
    manifest = _write_dataset_to_disk(tmp_path)
    state = _tiny_state(text_n=4)
    with pytest.raises(DataError):
        zero_shot_transfer(
            state, manifest, identity_mapping(3), refine_params=state.refine_params
        )


# -- checkpoints and metrics -----------------------------------------------------


def test_checkpoint_round_trip_restores_everything(tmp_path):
    state = _tiny_state(seed=3, modality="bone_motion", lam1=0.1, lam2=0.2, text_n=5)
    # give the optimizer some history so saved values differ from init
    data = _class_coded_dataset(name="ckpt", modality="bone_motion")
    train_epoch(state, _td(data))
    path = tmp_path / "checkpoint.mmck"
    save_checkpoint(path, state)
    loaded = load_checkpoint(path)
    assert loaded.modality == "bone_motion"
    assert loaded.epoch == state.epoch
    assert loaded.tau == state.tau
    assert (loaded.weights.lambda1, loaded.weights.lambda2) == (0.1, 0.2)
    assert loaded.refine_params is not None and loaded.refine_params.n == 5
    ours, theirs = state.trainable(), loaded.trainable()
    assert set(ours) == set(theirs)
    for k in ours:
        assert np.array_equal(ours[k].value, theirs[k].value), k
    # the reloaded model scores identically
    got = evaluate_topk(loaded, data, ks=(1,))
    want = evaluate_topk(state, data, ks=(1,))
    assert got == want


def test_checkpoint_missing_metadata_is_a_data_error(tmp_path):
    path = tmp_path / "broken.mmck"
    tensorio.write_checkpoint(path, {"meta.parent": np.zeros(3)})
    with pytest.raises(DataError, match="meta"):
        load_checkpoint(path)


def test_checkpoint_parameter_shape_mismatch_is_reported(tmp_path):
    state = _tiny_state()
    path = tmp_path / "checkpoint.mmck"
    save_checkpoint(path, state)
    tensors = tensorio.read_checkpoint(path)
    tensors["skel.head.bias"] = np.zeros(7)  # wrong class count
    tensorio.write_checkpoint(path, tensors)
    with pytest.raises(DataError, match="skel.head.bias"):
        load_checkpoint(path)


def test_metrics_file_is_sorted_json_lines(tmp_path):
    path = tmp_path / "metrics.jsonl"
    write_metrics(path, [{"b": 1, "a": 2}, {"loss": 0.5, "epoch": 0}])
    lines = path.read_text().splitlines()
    assert lines[0] == '{"a": 2, "b": 1}'
    assert json.loads(lines[1]) == {"loss": 0.5, "epoch": 0}
