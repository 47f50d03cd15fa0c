"""Command-line entry point.

Subcommands: synth-data, derive-modalities, train, eval, ensemble, transfer,
gradcheck, convert-ntu. Exit codes: 0 success, 1 usage/config error, 2 data
error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import train as tr
from .config import Config, load_config
from .data import load_manifest, load_skeleton
from .errors import CoskelError, DataError, NumericError, UsageError
from .refine import load_text_features
from .rng import substream
from .skeleton import (
    MODALITY_KINDS,
    derive_modality,
    identity_mapping,
    linear_index_mapping,
)
from .synth import SynthSpec, synth_dataset
from .tensorio import write_tensor

GRADCHECK_TOLERANCE = 1e-4


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if args.override:
        cfg = cfg.override(args.override)
    return cfg


def _require(cfg: Config, key: str) -> str:
    value = cfg[key]
    if not value:
        raise UsageError(f"config key '{key}' is required for this subcommand")
    return value


def _schedule(cfg: Config) -> tr.Schedule:
    preset = tr.schedule_from_preset(cfg["train.preset"])
    epochs = cfg["train.epochs"] if cfg["train.epochs"] > 0 else preset.epochs
    if cfg["train.decay_epochs"]:
        decays = tuple(cfg["train.decay_epochs"])
    elif epochs == preset.epochs:
        decays = preset.decay_epochs
    else:
        # epochs overridden without explicit decays: keep the preset's proportions
        decays = tuple(
            sorted({d * epochs // preset.epochs for d in preset.decay_epochs})
        )
        decays = tuple(d for d in decays if 0 < d < epochs)
    return replace(
        preset,
        base_lr=cfg["train.lr"],
        epochs=epochs,
        batch_size=cfg["train.batch_size"] if cfg["train.batch_size"] > 0 else preset.batch_size,
        warmup_epochs=cfg["train.warmup_epochs"],
        decay_epochs=decays,
        momentum=cfg["train.momentum"],
        weight_decay=cfg["train.weight_decay"],
    )


def _out_dir(cfg: Config) -> Path:
    out = Path(cfg["out.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    cfg = _load_cfg(args)
    spec = SynthSpec(
        classes=cfg["synth.classes"],
        train_per_class=cfg["synth.train_per_class"],
        test_per_class=cfg["synth.test_per_class"],
        frames=cfg["synth.frames"],
        noise=cfg["synth.noise"],
        seed=cfg["synth.seed"],
        rgb=cfg["synth.rgb"],
    )
    paths = synth_dataset(spec, _out_dir(cfg))
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_derive_modalities(args) -> int:
    cfg = _load_cfg(args)
    manifest = load_manifest(_require(cfg, "data.manifest"))
    out = _out_dir(cfg)
    count = 0
    for entry in manifest.entries:
        seq = load_skeleton(entry, manifest.topology)
        for kind in MODALITY_KINDS:
            mod = derive_modality(seq, kind)
            dst = out / kind / f"{entry.sample_id}.mmct"
            dst.parent.mkdir(parents=True, exist_ok=True)
            write_tensor(dst, mod.data)
            count += 1
    print(f"wrote {count} modality tensors for {len(manifest.entries)} samples to {out}")
    return 0


def _build_training(cfg: Config):
    manifest = load_manifest(_require(cfg, "data.manifest"))
    weights = tr.LossWeights(lambda1=cfg["train.lambda1"], lambda2=cfg["train.lambda2"])
    need_rgb = weights.lambda1 > 0
    text_table = None
    text_n = 0
    if weights.lambda2 > 0:
        table_path = _require(cfg, "data.text_features")
        text_table = load_text_features(table_path)
        text_n = text_table.n
        if text_n != cfg["refine.n"]:
            raise UsageError(
                f"refine.n = {cfg['refine.n']} but {table_path} has dimension {text_n}"
            )
    data = tr.prepare_training_data(manifest, cfg["data.modality"], need_rgb, text_table)
    from .backbone import BackboneConfig

    state = tr.build_state(
        topology=manifest.topology,
        class_count=manifest.class_count,
        schedule=_schedule(cfg),
        weights=weights,
        seed=cfg["train.seed"],
        modality=cfg["data.modality"],
        backbone_config=BackboneConfig(
            channels=tuple(cfg["model.channels"]),
            temporal_kernel=cfg["model.temporal_kernel"],
            adjacency_mode=cfg["model.adjacency_mode"],
            class_count=manifest.class_count,
        ),
        tau=cfg["align.tau"],
        with_rgb=need_rgb,
        text_n=text_n,
        residual=cfg["refine.residual"],
    )
    return manifest, data, state


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    _, data, state = _build_training(cfg)
    out = _out_dir(cfg)
    records: list[dict] = []
    tr.fit(
        state,
        data,
        crop_hw=(cfg["rgb.crop_h"], cfg["rgb.crop_w"]),
        m=cfg["rgb.frames"],
        records=records,
    )
    if cfg["data.eval_manifest"]:
        eval_manifest = load_manifest(cfg["data.eval_manifest"])
        from .data import SkeletonDataset

        eval_set = SkeletonDataset.load(eval_manifest, cfg["data.modality"])
        accs = tr.evaluate_topk(state, eval_set, ks=tuple(cfg["eval.topk"]))
        records.append(
            {"epoch": state.epoch - 1, "split": "val_final"}
            | {f"top{k}": v for k, v in accs.items()}
        )
    metrics_path = out / "metrics.jsonl"
    tr.write_metrics(metrics_path, records)
    ckpt_path = out / "checkpoint.mmck"
    tr.save_checkpoint(ckpt_path, state)
    last_train = [r for r in records if r["split"] == "train_epoch"][-1]
    print(
        f"trained {state.epoch} epochs; final train loss {last_train['loss']:.4f}, "
        f"top-1 {last_train['top1']:.3f}"
    )
    print(f"metrics: {metrics_path}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def _eval_state_and_set(cfg: Config, manifest_key: str):
    from .data import SkeletonDataset

    ckpt = cfg["eval.checkpoint"] or str(Path(cfg["out.dir"]) / "checkpoint.mmck")
    if not Path(ckpt).exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    state = tr.load_checkpoint(ckpt)
    manifest = load_manifest(_require(cfg, manifest_key))
    dataset = SkeletonDataset.load(manifest, state.modality)
    return state, manifest, dataset


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    key = "data.eval_manifest" if cfg["data.eval_manifest"] else "data.manifest"
    state, _, dataset = _eval_state_and_set(cfg, key)
    accs = tr.evaluate_topk(state, dataset, ks=tuple(cfg["eval.topk"]))
    record = {"split": "eval", "samples": len(dataset)} | {
        f"top{k}": v for k, v in accs.items()
    }
    out = _out_dir(cfg)
    tr.write_metrics(out / "eval_metrics.jsonl", [record])
    for k in sorted(accs):
        print(f"top-{k}: {accs[k]:.4f}")
    return 0


def cmd_ensemble(args) -> int:
    from .data import SkeletonDataset

    cfg = _load_cfg(args)
    ckpts = cfg["ensemble.checkpoints"]
    if not ckpts:
        raise UsageError("config key 'ensemble.checkpoints' is required for ensemble")
    weights = cfg["ensemble.weights"] or tuple(1.0 for _ in ckpts)
    if len(weights) != len(ckpts):
        raise UsageError(
            f"{len(ckpts)} checkpoints but {len(weights)} ensemble weights"
        )
    key = "data.eval_manifest" if cfg["data.eval_manifest"] else "data.manifest"
    manifest = load_manifest(_require(cfg, key))
    streams = []
    labels = manifest.labels
    for ckpt, w in zip(ckpts, weights):
        if not Path(ckpt).exists():
            raise DataError(f"checkpoint not found: {ckpt}")
        state = tr.load_checkpoint(ckpt)
        dataset = SkeletonDataset.load(manifest, state.modality)
        stream = tr.stream_result(state, dataset, weight=w)
        accs = tr.topk_accuracy(stream.probs, labels, tuple(cfg["eval.topk"]))
        print(f"stream {stream.kind} (weight {w}): " + ", ".join(
            f"top-{k} {accs[k]:.4f}" for k in sorted(accs)
        ))
        streams.append(stream)
    combined = tr.ensemble_scores(streams)
    accs = tr.topk_accuracy(combined, labels, tuple(cfg["eval.topk"]))
    for k in sorted(accs):
        print(f"ensemble top-{k}: {accs[k]:.4f}")
    return 0


def cmd_transfer(args) -> int:
    cfg = _load_cfg(args)
    ckpt = cfg["eval.checkpoint"] or str(Path(cfg["out.dir"]) / "checkpoint.mmck")
    if not Path(ckpt).exists():
        raise DataError(f"checkpoint not found: {ckpt}")
    state = tr.load_checkpoint(ckpt)
    manifest = load_manifest(_require(cfg, "transfer.manifest"))
    model_joints = state.backbone.topology.joint_count
    mapping_name = cfg["transfer.mapping"]
    if mapping_name == "identity":
        mapping = identity_mapping(model_joints)
    elif mapping_name == "linear":
        mapping = linear_index_mapping(manifest.topology.joint_count, model_joints)
    else:
        raise UsageError(
            f"config key 'transfer.mapping': expected identity or linear, got {mapping_name!r}"
        )
    refine_params = None
    text_table = None
    if cfg["transfer.refine"]:
        if state.refine_params is None:
            raise UsageError("checkpoint has no refinement matrices; cannot refine transfer")
        refine_params = state.refine_params
        text_table = load_text_features(_require(cfg, "data.text_features"))
    accs = tr.zero_shot_transfer(
        state,
        manifest,
        mapping,
        ks=tuple(cfg["eval.topk"]),
        refine_params=refine_params,
        text_table=text_table,
    )
    for k in sorted(accs):
        print(f"transfer top-{k}: {accs[k]:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    _ = _load_cfg(args)
    worst_overall = 0.0
    for name in sorted(ad.PRIMITIVES):
        worst = 0.0
        for i in range(5):
            rng = substream(0, f"gradcheck.{name}.{i}")
            f, inputs = ad.primitive_case(name, rng)
            worst = max(worst, ad.gradcheck(f, inputs))
        print(f"{name}: max relative error {worst:.3e}")
        worst_overall = max(worst_overall, worst)
    print(f"overall: {worst_overall:.3e}")
    if worst_overall >= GRADCHECK_TOLERANCE:
        raise NumericError(
            f"gradient check failed: {worst_overall:.3e} >= {GRADCHECK_TOLERANCE}"
        )
    return 0


def cmd_convert_ntu(args) -> int:
    from .ntu import convert_directory, convert_file

    src, dst = Path(args.src), Path(args.dst)
    if src.is_dir():
        mpath = convert_directory(src, dst)
        print(f"manifest: {mpath}")
    else:
        convert_file(src, dst)
        print(f"tensor: {dst}")
    return 0


# -- dispatch ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coskel",
        description="Skeleton action recognition with multimodal co-learning at training time.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="flat key=value config file")
        p.add_argument(
            "-o",
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )

    for name, fn, help_text in (
        ("synth-data", cmd_synth_data, "generate the synthetic dataset tree"),
        ("derive-modalities", cmd_derive_modalities, "materialize all four skeleton modalities"),
        ("train", cmd_train, "train one modality stream"),
        ("eval", cmd_eval, "skeleton-only evaluation of a checkpoint"),
        ("ensemble", cmd_ensemble, "fuse softmax scores of several checkpoints"),
        ("transfer", cmd_transfer, "cross-domain evaluation via joint interpolation"),
        ("gradcheck", cmd_gradcheck, "finite-difference check of every primitive"),
    ):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("convert-ntu", help="convert 25-joint skeleton text files")
    p.add_argument("src", help="a .skeleton file or a directory of them")
    p.add_argument("dst", help="output tensor path (file mode) or dataset dir (directory mode)")
    p.set_defaults(fn=cmd_convert_ntu)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.fn(args)
    except CoskelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
