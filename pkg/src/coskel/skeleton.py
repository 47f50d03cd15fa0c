"""Skeleton sequences, modality derivations, and cross-domain interpolation.

Conventions
-----------
- Sequences are float64 arrays shaped (T, J, 3).
- The root joint is its own parent; bone of the root is the zero vector.
- Motion at the final frame is zero-padded so every modality keeps shape
  (T, J, 3).

All functions here are pure and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MODALITY_KINDS = ("joint", "bone", "joint_motion", "bone_motion")


@dataclass(frozen=True)
class GraphTopology:
    """Joint/bone graph: a rooted tree given as a parent map."""

    parent: tuple[int, ...]
    root: int = field(init=False)
    edges: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        parent = tuple(int(p) for p in self.parent)
        object.__setattr__(self, "parent", parent)
        n = len(parent)
        roots = [j for j in range(n) if parent[j] == j]
        if len(roots) != 1:
            raise DataError(f"topology must have exactly one self-parent root, found {roots}")
        root = roots[0]
        object.__setattr__(self, "root", root)
        for j, p in enumerate(parent):
            if not (0 <= p < n):
                raise DataError(f"joint {j} has out-of-range parent {p}")
        # every non-root joint must reach the root without cycles
        for j in range(n):
            seen = set()
            cur = j
            while cur != root:
                if cur in seen:
                    raise DataError(f"cycle in parent map involving joint {j}")
                seen.add(cur)
                cur = parent[cur]
        edges = tuple((j, parent[j]) for j in range(n) if j != root)
        object.__setattr__(self, "edges", edges)

    @property
    def joint_count(self) -> int:
        return len(self.parent)

    def bfs_depths(self) -> np.ndarray:
        """Hop distance of every joint from the root."""
        depths = np.zeros(self.joint_count, dtype=np.int64)
        for j in range(self.joint_count):
            d, cur = 0, j
            while cur != self.root:
                cur = self.parent[cur]
                d += 1
            depths[j] = d
        return depths


@dataclass
class SkeletonSequence:
    """Per-frame 3D joint coordinates with their topology."""

    coords: np.ndarray  # (T, J, 3)
    topology: GraphTopology
    person_id: str | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise DataError(f"skeleton coords must be (T, J, 3), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise DataError("skeleton coords contain non-finite values")
        if self.coords.shape[1] != self.topology.joint_count:
            raise DataError(
                f"sequence has {self.coords.shape[1]} joints but topology has "
                f"{self.topology.joint_count}"
            )

    @property
    def frames(self) -> int:
        return self.coords.shape[0]

    @property
    def joints(self) -> int:
        return self.coords.shape[1]


@dataclass
class ModalityTensor:
    """A derived skeleton modality, same shape as its source sequence."""

    kind: str
    data: np.ndarray

    def __post_init__(self):
        if self.kind not in MODALITY_KINDS:
            raise DataError(f"unknown modality kind {self.kind!r}")
        self.data = np.asarray(self.data, dtype=np.float64)


@dataclass
class JointMapping:
    """Convex per-joint interpolation from a source to a target joint layout.

    rows[t] lists (source joint index, weight) pairs for target joint t; each
    row's weights must be nonnegative and sum to 1 within 1e-9.
    """

    target_joint_count: int
    rows: list[list[tuple[int, float]]]

    def __post_init__(self):
        if len(self.rows) != self.target_joint_count:
            raise DataError(
                f"mapping has {len(self.rows)} rows for {self.target_joint_count} target joints"
            )
        for t, row in enumerate(self.rows):
            if not row:
                raise DataError(f"mapping row {t} is empty")
            weights = np.array([w for _, w in row], dtype=np.float64)
            if np.any(weights < 0):
                raise DataError(f"mapping row {t} has negative weights")
            if abs(float(weights.sum()) - 1.0) > 1e-9:
                raise DataError(
                    f"mapping row {t} weights sum to {weights.sum():.12f}, expected 1"
                )

    def validate_source(self, source_joint_count: int) -> None:
        for t, row in enumerate(self.rows):
            for src, _ in row:
                if not (0 <= src < source_joint_count):
                    raise DataError(
                        f"mapping row {t} references source joint {src}, "
                        f"but source has {source_joint_count} joints"
                    )


def derive_bone(
    x: SkeletonSequence | ModalityTensor, topology: GraphTopology | None = None
) -> ModalityTensor:
    """Bone vectors: joint minus its parent; the root bone is zero."""
    if isinstance(x, SkeletonSequence):
        data, topo = x.coords, x.topology
    else:
        data, topo = x.data, topology
        if topo is None:
            raise DataError("derive_bone on a raw tensor requires an explicit topology")
    if data.shape[1] != topo.joint_count:
        raise DataError(
            f"joint count mismatch: tensor has {data.shape[1]}, topology has {topo.joint_count}"
        )
    parent_idx = np.array(topo.parent, dtype=np.int64)
    out = data - data[:, parent_idx, :]
    kind = "bone_motion" if isinstance(x, ModalityTensor) and "motion" in x.kind else "bone"
    return ModalityTensor(kind=kind, data=out)


def derive_motion(x: SkeletonSequence | ModalityTensor) -> ModalityTensor:
    """Frame differences: motion[t] = frame[t+1] - frame[t]; last frame is zero."""
    data = x.coords if isinstance(x, SkeletonSequence) else x.data
    out = np.zeros_like(data)
    if data.shape[0] > 1:
        out[:-1] = data[1:] - data[:-1]
    if isinstance(x, ModalityTensor) and "bone" in x.kind:
        kind = "bone_motion"
    else:
        kind = "joint_motion"
    return ModalityTensor(kind=kind, data=out)


def derive_modality(seq: SkeletonSequence, kind: str) -> ModalityTensor:
    """One of the four skeleton modalities for `seq`."""
    if kind == "joint":
        return ModalityTensor(kind="joint", data=seq.coords.copy())
    if kind == "bone":
        return derive_bone(seq)
    if kind == "joint_motion":
        return derive_motion(seq)
    if kind == "bone_motion":
        return derive_motion(derive_bone(seq))
    raise DataError(f"unknown modality kind {kind!r}")


def normalize_sequence(seq: SkeletonSequence) -> SkeletonSequence:
    """Root-center every frame; relative geometry is untouched."""
    root = seq.coords[:, seq.topology.root : seq.topology.root + 1, :]
    return SkeletonSequence(
        coords=seq.coords - root, topology=seq.topology, person_id=seq.person_id
    )


def interpolate_skeleton(
    seq: SkeletonSequence, mapping: JointMapping, target_topology: GraphTopology
) -> SkeletonSequence:
    """Map a sequence onto a different joint layout by convex combination.

    Each output joint t is sum_k w_k * source_joint_{i_k} per frame, with the
    weights taken from `mapping`. Used to feed skeletons from one capture
    domain into a model trained on another.
    """
    if target_topology.joint_count != mapping.target_joint_count:
        raise DataError(
            f"target topology has {target_topology.joint_count} joints, mapping targets "
            f"{mapping.target_joint_count}"
        )
    mapping.validate_source(seq.joints)
    out = np.zeros((seq.frames, mapping.target_joint_count, 3), dtype=np.float64)
    for t, row in enumerate(mapping.rows):
        for src, w in row:
            out[:, t, :] += w * seq.coords[:, src, :]
    return SkeletonSequence(coords=out, topology=target_topology, person_id=seq.person_id)


def identity_mapping(joint_count: int) -> JointMapping:
    return JointMapping(
        target_joint_count=joint_count, rows=[[(j, 1.0)] for j in range(joint_count)]
    )


def linear_index_mapping(source_joint_count: int, target_joint_count: int) -> JointMapping:
    """Default mapping: linear interpolation over joint index order.

    Target joint t sits at fractional source position t*(Js-1)/(Jt-1) and
    blends the two bracketing source joints.
    """
    rows: list[list[tuple[int, float]]] = []
    for t in range(target_joint_count):
        if target_joint_count == 1:
            pos = 0.0
        else:
            pos = t * (source_joint_count - 1) / (target_joint_count - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, source_joint_count - 1)
        frac = pos - lo
        if hi == lo or frac == 0.0:
            rows.append([(lo, 1.0)])
        else:
            rows.append([(lo, 1.0 - frac), (hi, frac)])
    return JointMapping(target_joint_count=target_joint_count, rows=rows)
