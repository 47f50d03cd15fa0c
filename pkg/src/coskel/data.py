"""Dataset manifests and sample loading.

A manifest is a single JSON file naming the skeleton topology and every
sample: id, integer label, skeleton tensor path, and optionally a frame
directory, a box-annotation path, and a text-feature id. Paths are relative
to the manifest's own directory so a dataset folder can be moved wholesale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensorio
from .errors import DataError
from .rgb import FrameSet
from .skeleton import GraphTopology, ModalityTensor, SkeletonSequence, derive_modality


@dataclass
class ManifestEntry:
    sample_id: str
    label: int
    skeleton_path: Path
    frames_dir: Path | None = None
    boxes_path: Path | None = None
    text_id: str | None = None


@dataclass
class Manifest:
    topology: GraphTopology
    class_count: int
    entries: list[ManifestEntry]
    root: Path

    def __post_init__(self):
        seen: set[str] = set()
        for e in self.entries:
            if e.sample_id in seen:
                raise DataError(f"duplicate sample id {e.sample_id!r} in manifest")
            seen.add(e.sample_id)
            if not (0 <= e.label < self.class_count):
                raise DataError(
                    f"sample {e.sample_id!r}: label {e.label} outside [0, {self.class_count})"
                )

    @property
    def sample_ids(self) -> list[str]:
        return [e.sample_id for e in self.entries]

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=np.int64)

    def has_frames(self) -> bool:
        return all(e.frames_dir is not None for e in self.entries)

    def text_ids(self) -> list[str]:
        return [e.text_id if e.text_id is not None else e.sample_id for e in self.entries]


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid manifest JSON ({exc})") from None
    for key in ("parents", "classes", "samples"):
        if key not in doc:
            raise DataError(f"{path}: manifest missing required key {key!r}")
    topology = GraphTopology(parent=tuple(int(p) for p in doc["parents"]))
    root = path.parent
    entries = []
    for i, rec in enumerate(doc["samples"]):
        for key in ("id", "label", "skeleton"):
            if key not in rec:
                raise DataError(f"{path}: sample {i} missing required field {key!r}")
        skel = root / rec["skeleton"]
        if not skel.exists():
            raise DataError(f"{path}: skeleton tensor not found: {skel}")
        frames_dir = None
        if rec.get("frames"):
            frames_dir = root / rec["frames"]
            if not frames_dir.is_dir():
                raise DataError(f"{path}: frame directory not found: {frames_dir}")
        boxes_path = None
        if rec.get("boxes"):
            boxes_path = root / rec["boxes"]
            if not boxes_path.exists():
                raise DataError(f"{path}: box annotation not found: {boxes_path}")
        entries.append(
            ManifestEntry(
                sample_id=str(rec["id"]),
                label=int(rec["label"]),
                skeleton_path=skel,
                frames_dir=frames_dir,
                boxes_path=boxes_path,
                text_id=rec.get("text_id"),
            )
        )
    return Manifest(
        topology=topology, class_count=int(doc["classes"]), entries=entries, root=root
    )


def save_manifest(path: str | Path, manifest: Manifest) -> None:
    """Write a manifest with paths relative to its directory."""
    path = Path(path)
    root = path.parent

    def rel(p: Path | None) -> str | None:
        return None if p is None else str(p.relative_to(root))

    doc = {
        "parents": list(manifest.topology.parent),
        "classes": manifest.class_count,
        "samples": [
            {
                k: v
                for k, v in {
                    "id": e.sample_id,
                    "label": e.label,
                    "skeleton": rel(e.skeleton_path),
                    "frames": rel(e.frames_dir),
                    "boxes": rel(e.boxes_path),
                    "text_id": e.text_id,
                }.items()
                if v is not None
            }
            for e in manifest.entries
        ],
    }
    tensorio.atomic_write_bytes(path, (json.dumps(doc, indent=1) + "\n").encode("utf-8"))


def load_skeleton(entry: ManifestEntry, topology: GraphTopology) -> SkeletonSequence:
    arr = tensorio.read_tensor(entry.skeleton_path)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(
            f"{entry.skeleton_path}: skeleton tensor must be (T, J, 3), got {arr.shape}"
        )
    return SkeletonSequence(coords=arr.astype(np.float64), topology=topology)


def load_frames(entry: ManifestEntry) -> FrameSet:
    """Frames (sorted by filename) plus optional per-frame boxes."""
    if entry.frames_dir is None:
        raise DataError(f"sample {entry.sample_id!r} has no frame directory")
    frame_paths = sorted(entry.frames_dir.glob("*.png"))
    if not frame_paths:
        raise DataError(f"no .png frames in {entry.frames_dir}")
    frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.uint8) for p in frame_paths]
    boxes = None
    if entry.boxes_path is not None:
        raw = json.loads(entry.boxes_path.read_text(encoding="utf-8"))
        if len(raw) != len(frames):
            raise DataError(
                f"{entry.boxes_path}: {len(raw)} boxes for {len(frames)} frames"
            )
        boxes = [None if b is None else tuple(float(v) for v in b) for b in raw]
    return FrameSet(frames=frames, boxes=boxes)


@dataclass
class SkeletonDataset:
    """Eagerly loaded skeleton modality arrays for one manifest.

    `arrays` is (B, 3, T, J) channels-first, ready for the backbone; labels
    and ids are index-aligned with it.
    """

    manifest: Manifest
    modality: str
    arrays: np.ndarray
    labels: np.ndarray

    @classmethod
    def load(cls, manifest: Manifest, modality: str) -> "SkeletonDataset":
        mats = []
        length = None
        for e in manifest.entries:
            seq = load_skeleton(e, manifest.topology)
            if length is None:
                length = seq.frames
            elif seq.frames != length:
                raise DataError(
                    f"sample {e.sample_id!r} has {seq.frames} frames, expected {length}"
                )
            mod: ModalityTensor = derive_modality(seq, modality)
            mats.append(np.transpose(mod.data, (2, 0, 1)))  # (T, J, 3) -> (3, T, J)
        return cls(
            manifest=manifest,
            modality=modality,
            arrays=np.stack(mats),
            labels=manifest.labels,
        )

    def __len__(self) -> int:
        return self.arrays.shape[0]

    @property
    def sample_ids(self) -> list[str]:
        return self.manifest.sample_ids
