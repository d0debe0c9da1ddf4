"""Point-cloud containers, file I/O, block partitioning, sampling, class
registries, and support-set extraction.

On-disk point-cloud format (``.gwpc``): one ASCII header line

    gwpc v1 <n_points> <has_labels:0|1>\\n

followed by binary little-endian records of (f32 x, y, z, f32 r, g, b,
optional u16 label).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError, InvariantError

GWPC_MAGIC = "gwpc"
GWPC_VERSION = "v1"
_MAX_HEADER_BYTES = 128


def _record_dtype(has_labels: bool) -> np.dtype:
    fields = [("xyz", "<f4", (3,)), ("rgb", "<f4", (3,))]
    if has_labels:
        fields.append(("label", "<u2"))
    return np.dtype(fields)


@dataclass
class PointCloud:
    """A point cloud with per-point positions (meters), RGB colors in [0, 1],
    and optional integer class labels."""

    positions: np.ndarray  # (n, 3) float64
    colors: np.ndarray  # (n, 3) float64 in [0, 1]
    labels: np.ndarray | None = None  # (n,) int64

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_points(self) -> int:
        return self.positions.shape[0]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def validate(self) -> None:
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise InvariantError("positions must be (n, 3)")
        if self.colors.shape != self.positions.shape:
            raise InvariantError(
                f"colors shape {self.colors.shape} != positions shape "
                f"{self.positions.shape}"
            )
        if not np.all(np.isfinite(self.positions)):
            raise InvariantError("positions contain non-finite values")
        if np.any(self.colors < 0.0) or np.any(self.colors > 1.0):
            raise InvariantError("colors must lie in [0, 1]")
        if self.labels is not None:
            if self.labels.shape != (self.n_points,):
                raise InvariantError("labels length must match point count")
            if np.any(self.labels < 0) or np.any(self.labels > 0xFFFF):
                raise InvariantError("labels must fit in u16")


def save_point_cloud(cloud: PointCloud, path: str | Path) -> None:
    """Write a cloud in the gwpc v1 format (validates invariants first)."""
    cloud.validate()
    has_labels = cloud.has_labels
    header = f"{GWPC_MAGIC} {GWPC_VERSION} {cloud.n_points} {int(has_labels)}\n"
    rec = np.empty(cloud.n_points, dtype=_record_dtype(has_labels))
    rec["xyz"] = cloud.positions.astype("<f4")
    rec["rgb"] = cloud.colors.astype("<f4")
    if has_labels:
        rec["label"] = cloud.labels.astype("<u2")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(rec.tobytes())


def load_point_cloud(path: str | Path) -> PointCloud:
    """Load a gwpc v1 file. Raises FormatError naming the byte offset of the
    first malformed header token, truncated record, or out-of-range color."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n", 0, _MAX_HEADER_BYTES)
    if nl < 0:
        raise FormatError(f"{path}: missing header newline at byte offset 0")
    try:
        tokens = raw[:nl].decode("ascii").split()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: non-ASCII header at byte offset 0") from exc
    if len(tokens) != 4 or tokens[0] != GWPC_MAGIC or tokens[1] != GWPC_VERSION:
        raise FormatError(f"{path}: malformed header at byte offset 0: {tokens}")
    try:
        n_points = int(tokens[2])
        has_labels = int(tokens[3])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header at byte offset 0") from exc
    if n_points < 0 or has_labels not in (0, 1):
        raise FormatError(f"{path}: malformed header at byte offset 0")

    body_start = nl + 1
    dtype = _record_dtype(bool(has_labels))
    payload = raw[body_start:]
    expected = n_points * dtype.itemsize
    if len(payload) != expected:
        complete = min(len(payload), expected) // dtype.itemsize
        offset = body_start + complete * dtype.itemsize
        raise FormatError(
            f"{path}: truncated record at byte offset {offset} "
            f"(expected {expected} payload bytes, found {len(payload)})"
        )
    rec = np.frombuffer(payload, dtype=dtype)
    colors = rec["rgb"].astype(np.float64)
    bad = np.where(np.any((colors < 0.0) | (colors > 1.0), axis=1))[0]
    if bad.size:
        i = int(bad[0])
        offset = body_start + i * dtype.itemsize + 12
        raise FormatError(
            f"{path}: color out of range in point {i} at byte offset {offset}"
        )
    labels = rec["label"].astype(np.int64) if has_labels else None
    cloud = PointCloud(rec["xyz"].astype(np.float64), colors, labels)
    cloud.validate()
    return cloud


# ---------------------------------------------------------------------------
# Blocks
# ---------------------------------------------------------------------------


@dataclass
class SampledBlock:
    """A fixed-size sample of one block: m points with 9-dim input features
    (XYZ, RGB, XYZ normalized to the block's bounding box)."""

    input_features: np.ndarray  # (m, 9) float64
    labels: np.ndarray | None  # (m,) int64, None when annotations are withheld
    origin: np.ndarray  # (3,) bounding-box min corner of the block, meters
    indices: np.ndarray  # (m,) indices into the source cloud

    @property
    def m(self) -> int:
        return self.input_features.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.input_features[:, 0:3]

    @property
    def colors(self) -> np.ndarray:
        return self.input_features[:, 3:6]

    @property
    def normalized_xyz(self) -> np.ndarray:
        return self.input_features[:, 6:9]


def partition_blocks(cloud: PointCloud, block_size: float) -> list[np.ndarray]:
    """Assign every point to one xy-grid cell of the given size.

    Cell of a point is floor((x - x_min)/block_size), floor((y - y_min)/...);
    points exactly on an internal boundary fall in the higher-index cell.
    Returns per-block index arrays ordered by (cell_x, cell_y); empty cells
    are omitted and indices within a block keep their original order.
    """
    if block_size <= 0:
        raise ValueError(f"block_size must be > 0, got {block_size}")
    if cloud.n_points == 0:
        return []
    xy = cloud.positions[:, :2]
    mins = xy.min(axis=0)
    cells = np.floor((xy - mins) / block_size).astype(np.int64)
    order = np.lexsort((cells[:, 1], cells[:, 0]))
    sorted_cells = cells[order]
    splits = np.flatnonzero(np.any(np.diff(sorted_cells, axis=0) != 0, axis=1)) + 1
    return [np.sort(g) for g in np.split(order, splits)]


def sample_block(
    cloud: PointCloud,
    block: np.ndarray,
    m: int,
    seed: int | Sequence[int],
) -> SampledBlock:
    """Sample m points from one block and assemble 9-dim input features.

    Blocks with at least m points are sampled uniformly without replacement.
    Smaller blocks contribute every point once, topped up with replacement,
    so each block point appears in the sample at least once.
    """
    block = np.asarray(block, dtype=np.int64)
    n = block.shape[0]
    if n == 0:
        raise ValueError("cannot sample an empty block")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    if n >= m:
        local = rng.choice(n, size=m, replace=False)
    else:
        local = np.concatenate([np.arange(n), rng.choice(n, size=m - n, replace=True)])
        rng.shuffle(local)
    idx = block[local]

    block_pos = cloud.positions[block]
    lo = block_pos.min(axis=0)
    hi = block_pos.max(axis=0)
    extent = hi - lo
    safe = np.where(extent > 0.0, extent, 1.0)

    pos = cloud.positions[idx]
    col = cloud.colors[idx]
    norm = (pos - lo) / safe
    features = np.concatenate([pos, col, norm], axis=1)
    labels = cloud.labels[idx] if cloud.has_labels else None
    return SampledBlock(features, labels, lo, idx)


# ---------------------------------------------------------------------------
# Class registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassRegistry:
    """Dense class-id space split into base and novel identifier lists."""

    base_classes: tuple[int, ...]
    novel_classes: tuple[int, ...]
    names: dict[int, str] = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.base_classes) + len(self.novel_classes)

    @property
    def all_classes(self) -> tuple[int, ...]:
        return tuple(sorted(self.base_classes + self.novel_classes))

    def is_novel(self, class_id: int) -> bool:
        return class_id in self.novel_classes

    def name_of(self, class_id: int) -> str:
        return self.names.get(class_id, f"class-{class_id}")

    def validate(self) -> None:
        base = set(self.base_classes)
        novel = set(self.novel_classes)
        if base & novel:
            raise InvariantError(f"base/novel overlap: {sorted(base & novel)}")
        if set(self.all_classes) != set(range(self.n_classes)):
            raise InvariantError(
                f"class ids must be dense 0..{self.n_classes - 1}, "
                f"got {self.all_classes}"
            )


def split_classes(
    label_counts: Mapping[int, int],
    n_novel: int,
    names: Mapping[int, str] | None = None,
) -> ClassRegistry:
    """Pick the n_novel classes with the fewest labeled points as novel.

    Ties at the cutoff are broken by class index ascending (lower index goes
    novel).
    """
    classes = sorted(label_counts)
    if n_novel >= len(classes):
        raise ValueError(
            f"n_novel ({n_novel}) must be < total class count ({len(classes)})"
        )
    by_scarcity = sorted(classes, key=lambda c: (label_counts[c], c))
    novel = tuple(sorted(by_scarcity[:n_novel]))
    base = tuple(sorted(set(classes) - set(novel)))
    registry = ClassRegistry(base, novel, dict(names) if names else {})
    registry.validate()
    return registry


# ---------------------------------------------------------------------------
# Support sets
# ---------------------------------------------------------------------------


@dataclass
class SupportShot:
    """One support block for a novel class: the sampled block (class
    annotations withheld) plus a binary foreground mask for that class."""

    block: SampledBlock
    mask: np.ndarray  # (m,) bool


@dataclass
class SupportSet:
    shots: dict[int, list[SupportShot]]
    shot_count: int


def build_support_set(
    clouds: Sequence[PointCloud],
    registry: ClassRegistry,
    shots: int,
    seed: int,
    *,
    block_size: float = 1.0,
    m: int = 2048,
    min_foreground: int = 100,
) -> SupportSet:
    """Draw K support blocks per novel class from labeled clouds.

    Qualifying blocks contain at least min_foreground points of the class.
    The sampled blocks carry no class annotations beyond the binary mask of
    the target novel class (base-class annotations are withheld).
    """
    for ci, cloud in enumerate(clouds):
        if not cloud.has_labels:
            raise ValueError(f"support cloud {ci} has no labels")

    partitions = [partition_blocks(c, block_size) for c in clouds]
    support: dict[int, list[SupportShot]] = {}
    for class_id in sorted(registry.novel_classes):
        candidates: list[tuple[int, np.ndarray]] = []
        for ci, cloud in enumerate(clouds):
            for block in partitions[ci]:
                fg = int(np.count_nonzero(cloud.labels[block] == class_id))
                if fg >= min_foreground:
                    candidates.append((ci, block))
        if len(candidates) < shots:
            raise ValueError(
                f"class {class_id} ({registry.name_of(class_id)}): only "
                f"{len(candidates)} qualifying blocks, need {shots}"
            )
        rng = np.random.default_rng((seed, class_id))
        chosen = rng.choice(len(candidates), size=shots, replace=False)
        shots_for_class: list[SupportShot] = []
        for k, cand in enumerate(chosen):
            ci, block = candidates[int(cand)]
            cloud = clouds[ci]
            for attempt in range(100):
                sampled = sample_block(cloud, block, m, (seed, class_id, k, attempt))
                mask = sampled.labels == class_id
                if np.any(mask):
                    break
            else:  # pragma: no cover - qualifying blocks make this unreachable
                raise ValueError(
                    f"class {class_id}: could not sample a foreground point"
                )
            sampled.labels = None
            shots_for_class.append(SupportShot(sampled, mask))
        support[class_id] = shots_for_class
    return SupportSet(support, shots)
