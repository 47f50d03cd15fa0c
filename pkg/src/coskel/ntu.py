"""Converter for NTU-style 25-joint skeleton text files.

The input format is frame-major plain text: a frame count, then per frame a
body count, per body one tracking-info line, a joint count, and one line per
joint whose first three fields are the 3D coordinates. Conversion keeps the
most active body per file and writes a (T, 25, 3) tensor; no dataset files
are bundled or downloaded.

File names following the S...C...P...R...A{action} pattern carry the action
label; the converter uses it (1-based in the name, 0-based in the manifest)
when building a manifest for a converted directory.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensorio
from .data import Manifest, ManifestEntry, save_manifest
from .errors import DataError
from .skeleton import GraphTopology

JOINT_COUNT = 25

#: Parent of each joint, 0-indexed; joint 20 (spine shoulder) is the root.
NTU_PARENTS = (
    1, 20, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12, 13, 14,
    0, 16, 17, 18, 20, 22, 7, 24, 11,
)

_NAME_RE = re.compile(r"S\d+C\d+P\d+R\d+A(\d+)", re.IGNORECASE)


def ntu_topology() -> GraphTopology:
    return GraphTopology(parent=NTU_PARENTS)


@dataclass
class _Cursor:
    lines: list[str]
    pos: int = 0
    source: str = "<ntu>"

    def next(self) -> str:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line
        raise DataError(f"{self.source}: truncated skeleton file")

    def next_int(self, what: str) -> int:
        line = self.next()
        try:
            return int(line.split()[0])
        except (ValueError, IndexError):
            raise DataError(f"{self.source}: expected {what}, got {line!r}") from None


def parse_skeleton_text(text: str, source: str = "<ntu>") -> list[list[np.ndarray]]:
    """Per frame, the (25, 3) coordinate block of every tracked body."""
    cur = _Cursor(lines=text.splitlines(), source=source)
    frame_count = cur.next_int("frame count")
    if frame_count < 1:
        raise DataError(f"{source}: no frames")
    frames: list[list[np.ndarray]] = []
    for _ in range(frame_count):
        body_count = cur.next_int("body count")
        bodies = []
        for _ in range(body_count):
            cur.next()  # tracking-info line (body id, confidences, lean, state)
            joint_count = cur.next_int("joint count")
            if joint_count != JOINT_COUNT:
                raise DataError(f"{source}: expected {JOINT_COUNT} joints, got {joint_count}")
            coords = np.zeros((JOINT_COUNT, 3))
            for j in range(joint_count):
                fields = cur.next().split()
                if len(fields) < 3:
                    raise DataError(f"{source}: joint line has {len(fields)} fields")
                try:
                    coords[j] = [float(fields[0]), float(fields[1]), float(fields[2])]
                except ValueError:
                    raise DataError(f"{source}: non-numeric joint coordinates") from None
            bodies.append(coords)
        frames.append(bodies)
    return frames


def primary_body_sequence(frames: list[list[np.ndarray]], source: str = "<ntu>") -> np.ndarray:
    """(T, 25, 3) trajectory of the body with the largest coordinate variance.

    Bodies are matched across frames by slot order; frames missing the chosen
    slot repeat zeros (the raw files do the same for lost tracking).
    """
    max_bodies = max((len(b) for b in frames), default=0)
    if max_bodies == 0:
        raise DataError(f"{source}: file contains no tracked bodies")
    best_slot, best_var = 0, -1.0
    for slot in range(max_bodies):
        stacked = [b[slot] for b in frames if len(b) > slot]
        var = float(np.var(np.stack(stacked))) if stacked else -1.0
        if var > best_var:
            best_slot, best_var = slot, var
    out = np.zeros((len(frames), JOINT_COUNT, 3))
    for t, bodies in enumerate(frames):
        if len(bodies) > best_slot:
            out[t] = bodies[best_slot]
    return out


def label_from_name(path: str | Path) -> int | None:
    """0-based action label from an S..C..P..R..A.. file name, if present."""
    m = _NAME_RE.search(Path(path).stem)
    return int(m.group(1)) - 1 if m else None


def convert_file(src: str | Path, dst: str | Path) -> np.ndarray:
    """Convert one text file to a skeleton tensor; returns the array written."""
    src = Path(src)
    if not src.exists():
        raise DataError(f"skeleton file not found: {src}")
    frames = parse_skeleton_text(src.read_text(encoding="utf-8"), source=str(src))
    coords = primary_body_sequence(frames, source=str(src))
    tensorio.write_tensor(dst, coords)
    return coords


def convert_directory(src_dir: str | Path, out_dir: str | Path) -> Path:
    """Convert every .skeleton file in a directory and write a manifest.

    Labels come from the file names; class count is the largest label + 1.
    """
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    files = sorted(src_dir.glob("*.skeleton"))
    if not files:
        raise DataError(f"no .skeleton files in {src_dir}")
    (out_dir / "skeletons").mkdir(parents=True, exist_ok=True)
    entries = []
    for f in files:
        label = label_from_name(f)
        if label is None:
            raise DataError(f"{f.name}: cannot parse an action label from the file name")
        dst = out_dir / "skeletons" / f"{f.stem}.mmct"
        convert_file(f, dst)
        entries.append(ManifestEntry(sample_id=f.stem, label=label, skeleton_path=dst))
    class_count = max(e.label for e in entries) + 1
    manifest = Manifest(
        topology=ntu_topology(), class_count=class_count, entries=entries, root=out_dir
    )
    mpath = out_dir / "manifest.json"
    save_manifest(mpath, manifest)
    return mpath
