"""Synthetic dataset generator.

Classes are sinusoidal movement patterns; consecutive class pairs share a
movement group and differ mainly by an "object bit". The bit is prominent in
the auxiliary channels — it picks the marker color in the rendered frames and
the leading one-hot block of the text features — but in the skeleton stream
it only nudges the oscillation frequency. Skeleton-only training therefore
separates movement groups easily and pair members slowly, which is exactly
the gap the auxiliary losses are meant to close.

Everything is drawn from named substreams of one seed, so regenerating with
the same spec is bitwise identical, file for file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensorio
from .data import Manifest, ManifestEntry, save_manifest
from .errors import ConfigError
from .refine import TextFeatureTable, save_text_features, unify_text_features
from .rng import substream
from .skeleton import GraphTopology

#: Nine-joint stick figure: pelvis root, spine/neck/head chain, two arms, two legs.
SYNTH_PARENTS = (0, 0, 1, 2, 1, 4, 1, 0, 7)

MARKER_COLORS = {0: (60, 200, 80), 1: (220, 60, 200)}


@dataclass
class SynthSpec:
    """Knobs of the generated dataset; defaults match the acceptance runs."""

    classes: int = 4
    train_per_class: int = 20
    test_per_class: int = 8
    frames: int = 24
    noise: float = 0.05
    seed: int = 0
    rgb: bool = True
    frame_size: int = 48
    marker_size: int = 12
    pair_gap: float = 0.12  # frequency offset carried by the object bit
    phase_jitter: float = 0.15
    amp_jitter: float = 0.1
    text_dim: int = 32
    text_noise: float = 0.05

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.noise < 0:
            raise ConfigError(f"noise must be nonnegative, got {self.noise}")
        if self.frames < 2:
            raise ConfigError(f"need at least 2 frames, got {self.frames}")
        if min(self.train_per_class, self.test_per_class) < 1:
            raise ConfigError("need at least one sample per class and split")

    def class_params(self, label: int) -> tuple[float, float, float, int]:
        """(frequency, amplitude, phase, object bit) of one class.

        Classes 2g and 2g+1 form movement group g; the odd member carries the
        object bit and a slightly higher frequency.
        """
        group, bit = divmod(label, 2)
        freq = 0.8 + 0.9 * group + self.pair_gap * bit
        amplitude = 0.5 + 0.15 * (group % 3)
        phase = 0.4 * group
        return freq, amplitude, phase, bit


def synth_topology() -> GraphTopology:
    return GraphTopology(parent=SYNTH_PARENTS)


def _base_pose(joint_count: int) -> np.ndarray:
    j = np.arange(joint_count, dtype=np.float64)
    return np.stack([0.3 * np.sin(2.0 * j), 0.1 * j, 0.3 * np.cos(3.0 * j)], axis=1)


def _joint_directions(joint_count: int) -> np.ndarray:
    """Fixed per-joint oscillation directions (unit vectors, seed-independent)."""
    j = np.arange(joint_count, dtype=np.float64)
    d = np.stack(
        [np.sin(2.4 * j + 0.3), np.cos(1.7 * j), np.sin(1.1 * j + 1.0)], axis=1
    )
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def synth_sequence(spec: SynthSpec, label: int, sample_id: str) -> np.ndarray:
    """One (T, J, 3) trajectory: class sinusoid + per-sample jitter + noise."""
    freq, amp, phase, _ = spec.class_params(label)
    rng = substream(spec.seed, f"synth.skel.{sample_id}")
    j_count = len(SYNTH_PARENTS)
    base = _base_pose(j_count)
    dirs = _joint_directions(j_count)
    phase_s = phase + rng.uniform(-spec.phase_jitter, spec.phase_jitter)
    amp_s = amp * (1.0 + rng.uniform(-spec.amp_jitter, spec.amp_jitter))
    t = np.arange(spec.frames, dtype=np.float64)[:, None]
    delta = 0.5 * np.arange(j_count, dtype=np.float64)[None, :]
    wave = amp_s * np.sin(2.0 * np.pi * freq * t / spec.frames + phase_s + delta)
    coords = base[None, :, :] + wave[:, :, None] * dirs[None, :, :]
    if spec.noise > 0:
        coords = coords + rng.normal(0.0, spec.noise, size=coords.shape)
    return coords


def synth_frames(spec: SynthSpec, label: int, sample_id: str) -> tuple[list, list]:
    """Rendered frames and marker boxes for one sample.

    Noise background; a square marker colored by the object bit sweeps
    horizontally with the class sinusoid. Boxes track the marker with margin.
    """
    freq, _, phase, bit = spec.class_params(label)
    rng = substream(spec.seed, f"synth.rgb.{sample_id}")
    s, ms = spec.frame_size, spec.marker_size
    if s < 2 * ms:
        raise ConfigError(f"frame size {s} too small for marker size {ms}")
    phase_s = phase + rng.uniform(-spec.phase_jitter, spec.phase_jitter)
    color = np.array(MARKER_COLORS[bit], dtype=np.uint8)
    margin = ms // 2
    frames, boxes = [], []
    for t in range(spec.frames):
        img = rng.integers(0, 81, size=(s, s, 3), dtype=np.uint8)
        sweep = np.sin(2.0 * np.pi * freq * t / spec.frames + phase_s)
        cx = s / 2 + (s / 2 - ms) * sweep
        cy = s / 2 + 0.1 * s * np.sin(4.0 * np.pi * t / spec.frames)
        x0 = int(np.clip(round(cx - ms / 2), 0, s - ms))
        y0 = int(np.clip(round(cy - ms / 2), 0, s - ms))
        img[y0 : y0 + ms, x0 : x0 + ms] = color
        frames.append(img)
        bx = max(0.0, x0 - margin)
        by = max(0.0, y0 - margin)
        bw = min(float(s), x0 + ms + margin) - bx
        bh = min(float(s), y0 + ms + margin) - by
        boxes.append((bx, by, bw, bh))
    return frames, boxes


def synth_text_feature(spec: SynthSpec, label: int, sample_id: str) -> np.ndarray:
    """One-hot of the object bit (2 leading dims) plus noise, unified to text_dim."""
    bit = spec.class_params(label)[3]
    rng = substream(spec.seed, f"synth.text.{sample_id}")
    raw = np.zeros(8)
    raw[bit] = 1.0
    raw = raw + rng.normal(0.0, spec.text_noise, size=raw.shape)
    return unify_text_features(raw, spec.text_dim, sample_id=sample_id).values


def _sample_ids(spec: SynthSpec, split: str) -> list[tuple[str, int]]:
    per = spec.train_per_class if split == "train" else spec.test_per_class
    out = []
    for label in range(spec.classes):
        for i in range(per):
            out.append((f"c{label}_{split}{i:03d}", label))
    return out


def synth_dataset(spec: SynthSpec, out_dir: str | Path) -> dict[str, Path]:
    """Generate the full dataset tree; returns paths of the artifacts.

    Layout: train_manifest.json / test_manifest.json, skeletons/<id>.mmct,
    frames/<id>/fNNN.png, boxes/<id>.json, text_features.mmct + .ids.
    """
    out_dir = Path(out_dir)
    (out_dir / "skeletons").mkdir(parents=True, exist_ok=True)
    topology = synth_topology()

    all_ids: list[str] = []
    all_feats: list[np.ndarray] = []
    manifests: dict[str, Path] = {}
    for split in ("train", "test"):
        entries = []
        for sample_id, label in _sample_ids(spec, split):
            coords = synth_sequence(spec, label, sample_id)
            skel_path = out_dir / "skeletons" / f"{sample_id}.mmct"
            tensorio.write_tensor(skel_path, coords)
            frames_dir = None
            boxes_path = None
            if spec.rgb:
                frames, boxes = synth_frames(spec, label, sample_id)
                frames_dir = out_dir / "frames" / sample_id
                frames_dir.mkdir(parents=True, exist_ok=True)
                for t, img in enumerate(frames):
                    Image.fromarray(img).save(frames_dir / f"f{t:03d}.png")
                boxes_dir = out_dir / "boxes"
                boxes_dir.mkdir(parents=True, exist_ok=True)
                boxes_path = boxes_dir / f"{sample_id}.json"
                tensorio.atomic_write_bytes(
                    boxes_path, (json.dumps([list(b) for b in boxes]) + "\n").encode()
                )
            entries.append(
                ManifestEntry(
                    sample_id=sample_id,
                    label=label,
                    skeleton_path=skel_path,
                    frames_dir=frames_dir,
                    boxes_path=boxes_path,
                )
            )
            all_ids.append(sample_id)
            all_feats.append(synth_text_feature(spec, label, sample_id))
        manifest = Manifest(
            topology=topology, class_count=spec.classes, entries=entries, root=out_dir
        )
        mpath = out_dir / f"{split}_manifest.json"
        save_manifest(mpath, manifest)
        manifests[split] = mpath

    table = TextFeatureTable(ids=all_ids, features=np.stack(all_feats))
    feats_path = out_dir / "text_features.mmct"
    save_text_features(feats_path, table)
    return {
        "train_manifest": manifests["train"],
        "test_manifest": manifests["test"],
        "text_features": feats_path,
    }
