"""
Co-learning: auxiliary RGB and text losses at training time
===========================================================

The backbone is trained with three loss terms at once:

  * classification  -- cross-entropy on the skeleton scores,
  * contrastive     -- skeleton features pulled toward features of a
                       temporal composite image built from the RGB frames,
  * refinement      -- cross-entropy on scores adjusted by per-sample text
                       features through the (learned) refinement matrices.

Only the skeleton path is used at evaluation time; frames and text rows
exist solely to shape the representation during training.
"""

import tempfile
from pathlib import Path

from coskel.backbone import BackboneConfig
from coskel.data import SkeletonDataset, load_manifest
from coskel.refine import load_text_features
from coskel.rgb import CnnConfig
from coskel.synth import SynthSpec, synth_dataset
from coskel.train import (
    LossWeights,
    Schedule,
    build_state,
    evaluate_topk,
    prepare_training_data,
    train_epoch,
)

# -- data with all three views: skeletons, frame directories, text features
work = Path(tempfile.mkdtemp(prefix="demo02_"))
spec = SynthSpec(
    classes=3, train_per_class=6, test_per_class=4, frames=16, noise=0.05, seed=5, rgb=True
)
paths = synth_dataset(spec, work)
train_manifest = load_manifest(paths["train_manifest"])
test_manifest = load_manifest(paths["test_manifest"])
text_table = load_text_features(paths["text_features"])
print(f"text feature table: {len(text_table.ids)} rows of width {text_table.n}")

# -- one state holds the backbone plus both auxiliary modules
schedule = Schedule(
    base_lr=0.03, epochs=60, batch_size=9, warmup_epochs=5, decay_epochs=(40, 52)
)
state = build_state(
    topology=train_manifest.topology,
    class_count=spec.classes,
    schedule=schedule,
    weights=LossWeights(lambda1=0.1, lambda2=0.2),
    seed=5,
    backbone_config=BackboneConfig(channels=(8, 8, 16), temporal_kernel=5, class_count=3),
    tau=0.5,  # soft temperature keeps the contrastive term gentle early on
    with_rgb=True,
    text_n=text_table.n,
    cnn_config=CnnConfig(widths=(4, 8)),
)

data = prepare_training_data(train_manifest, "joint", need_rgb=True, text_table=text_table)
print("epoch   loss    cls     con     ref   train top-1")
for epoch in range(schedule.epochs):
    s = train_epoch(state, data, crop_hw=(16, 16), m=3)
    if epoch % 10 == 0 or epoch == schedule.epochs - 1:
        print(f"{epoch:5d}  {s['loss']:.3f}  {s['loss_cls']:.3f}  "
              f"{s['loss_con']:.3f}  {s['loss_ref']:.3f}  {s['top1']:.3f}")

# -- inference stays skeleton-only: no composites, no text lookups
test_ds = SkeletonDataset.load(test_manifest, "joint")
acc = evaluate_topk(state, test_ds, ks=(1, 5))
print(f"test (skeleton-only): top-1 {acc[1]:.3f}  top-5 {acc[5]:.3f}")
