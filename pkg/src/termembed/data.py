"""Dataset readers and writers, stratified splits and synthetic manifolds.

Pixel data (IDX and PGM) is scaled to ``[0, 1]`` by dividing by the maximum
representable value.
"""

from __future__ import annotations

import csv
import enum
import gzip
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import check_seed, generator

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledSet:
    points: np.ndarray
    labels: np.ndarray
    name: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        P = np.array(self.points, dtype=np.float64, copy=True)
        if P.ndim != 2:
            raise ValueError(f"points must be a 2-D array, got shape {P.shape}")
        labels = np.array(self.labels, copy=True)
        if labels.shape != (P.shape[0],):
            raise ValueError(f"{labels.shape[0] if labels.ndim else 0} labels for {P.shape[0]} points")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValueError("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.size and labels.min() < 0:
            raise ValueError(f"labels must be non-negative, found {int(labels.min())}")
        bad = np.flatnonzero(~np.isfinite(P).all(axis=1))
        if bad.size:
            raise ValueError(f"row {int(bad[0])} has non-finite coordinates")
        P.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, idx, name: str | None = None, **provenance) -> "LabeledSet":
        idx = np.asarray(idx, dtype=np.int64)
        prov = dict(self.provenance, **provenance)
        return LabeledSet(self.points[idx], self.labels[idx], name or self.name, prov)


def concat(sets, name: str = "") -> LabeledSet:
    sets = list(sets)
    if not sets:
        raise ValueError("nothing to concatenate")
    return LabeledSet(
        np.vstack([s.points for s in sets]),
        np.concatenate([s.labels for s in sets]),
        name or "+".join(s.name for s in sets),
        {"parts": [s.provenance for s in sets]},
    )


# -- IDX ---------------------------------------------------------------------

def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _idx_header(data: bytes, path, magic: int, ndims: int):
    need = 4 + 4 * ndims
    if len(data) < need:
        raise ValueError(f"{path}: truncated header, {len(data)} of {need} bytes")
    got = struct.unpack_from(">I", data, 0)[0]
    if got != magic:
        raise ValueError(f"{path}: bad magic 0x{got:08x} at offset 0, expected 0x{magic:08x}")
    return struct.unpack_from(f">{ndims}I", data, 4), need


def read_idx(images_path, labels_path) -> LabeledSet:
    """Read an IDX image file and its label file (raw or gzip-compressed)."""
    img = _read_maybe_gzip(images_path)
    lab = _read_maybe_gzip(labels_path)
    (count, rows, cols), off = _idx_header(img, images_path, IDX_IMAGES_MAGIC, 3)
    (nlab,), loff = _idx_header(lab, labels_path, IDX_LABELS_MAGIC, 1)
    if count != nlab:
        raise ValueError(f"{images_path} holds {count} images but {labels_path} holds {nlab} labels")
    size = count * rows * cols
    if len(img) - off != size:
        raise ValueError(f"{images_path}: expected {size} pixel bytes after offset {off}, "
                         f"found {len(img) - off}")
    if len(lab) - loff != nlab:
        raise ValueError(f"{labels_path}: expected {nlab} label bytes after offset {loff}, "
                         f"found {len(lab) - loff}")
    pixels = np.frombuffer(img, dtype=np.uint8, offset=off).reshape(count, rows * cols)
    labels = np.frombuffer(lab, dtype=np.uint8, offset=loff)
    return LabeledSet(pixels / 255.0, labels.astype(np.int64), Path(images_path).name,
                      {"source": [str(images_path), str(labels_path)], "scaling": "u8/255",
                       "shape": [int(rows), int(cols)]})


def write_idx(images_path, labels_path, images, labels) -> None:
    """Write ``uint8`` images of shape ``(count, rows, cols)`` and their labels."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 3:
        raise ValueError(f"images must have shape (count, rows, cols), got {images.shape}")
    if len(labels) != len(images):
        raise ValueError(f"{len(labels)} labels for {len(images)} images")
    for arr, what in ((images, "pixel"), (labels, "label")):
        if arr.size and (arr.min() < 0 or arr.max() > 255 or not np.all(arr == np.round(arr))):
            raise ValueError(f"{what} values must be integers in [0, 255]")
    count, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols)
                                  + images.astype(np.uint8).tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, count)
                                  + labels.astype(np.uint8).tobytes())


# -- CSV and PGM --------------------------------------------------------------

def read_csv_matrix(path, has_labels: bool = True) -> LabeledSet:
    """Read a numeric CSV, one point per row, optionally label-first."""
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if width is None:
                width = len(rec)
            elif len(rec) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(rec)}")
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                col = next(i for i, c in enumerate(rec, start=1) if not _is_float(c))
                raise ValueError(f"{path}:{lineno}: column {col} is not numeric: {rec[col - 1]!r}") from None
            if has_labels:
                lab = vals[0]
                if lab != int(lab) or lab < 0:
                    raise ValueError(f"{path}:{lineno}: label {rec[0]!r} is not a non-negative integer")
                labels.append(int(lab))
                vals = vals[1:]
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    P = np.array(rows, dtype=np.float64)
    if P.shape[1] == 0:
        raise ValueError(f"{path}: rows hold labels but no coordinates")
    lab = np.array(labels, dtype=np.int64) if has_labels else np.zeros(len(P), dtype=np.int64)
    return LabeledSet(P, lab, Path(path).name, {"source": str(path)})


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_csv_matrix(path, points, labels=None) -> None:
    """Write rows with ``%.17g`` so that reading back is bit-exact."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        for i, row in enumerate(P):
            cells = [f"{x:.17g}" for x in row]
            if labels is not None:
                cells.insert(0, str(int(labels[i])))
            fh.write(",".join(cells) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM image as a ``(height, width)`` array in ``[0, 1]``."""
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated header at offset {pos}")
        fields.append((start, data[start:pos]))
    (_, magic), *dims = fields
    if magic != b"P5":
        raise ValueError(f"{path}: bad magic {magic!r} at offset 0, expected b'P5'")
    try:
        width, height, maxval = (int(v) for _, v in dims)
    except ValueError:
        bad = next((o, v) for o, v in dims if not v.isdigit())
        raise ValueError(f"{path}: non-integer header field {bad[1]!r} at offset {bad[0]}") from None
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: maxval {maxval} out of range")
    pos += 1  # single whitespace byte before the raster
    depth = 1 if maxval < 256 else 2
    size = width * height * depth
    if len(data) - pos < size:
        raise ValueError(f"{path}: raster truncated, {len(data) - pos} of {size} bytes after offset {pos}")
    dtype = np.uint8 if depth == 1 else ">u2"
    img = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    return img / float(maxval)


def load_label_names(path) -> dict:
    """Sidecar JSON mapping integer labels to display names."""
    raw = json.loads(Path(path).read_text())
    return {int(k): str(v) for k, v in raw.items()}


# -- splitting ----------------------------------------------------------------

def stratified_split(data: LabeledSet, per_class_train: int, per_class_test: int,
                     seed: int = 0):
    """Draw disjoint per-class train and test subsets uniformly without replacement.

    Both outputs list their points in increasing source-index order; the
    chosen indices are recorded in ``provenance["indices"]``.
    """
    if per_class_train < 0 or per_class_test < 0:
        raise ValueError("per-class counts must be non-negative")
    rng = generator(seed)
    train_idx, test_idx = [], []
    for c in np.unique(data.labels):
        members = np.flatnonzero(data.labels == c)
        need = per_class_train + per_class_test
        if len(members) < need:
            raise ValueError(f"class {int(c)} has {len(members)} members, need {need}")
        pick = rng.permutation(members)
        train_idx.append(pick[:per_class_train])
        test_idx.append(pick[per_class_train:need])
    tr = np.sort(np.concatenate(train_idx)) if train_idx else np.zeros(0, dtype=np.int64)
    te = np.sort(np.concatenate(test_idx)) if test_idx else np.zeros(0, dtype=np.int64)
    base = {"split_seed": check_seed(seed), "per_class": [per_class_train, per_class_test]}
    return (data.subset(tr, f"{data.name}:train", **base, indices=tr.tolist()),
            data.subset(te, f"{data.name}:test", **base, indices=te.tolist()))


# -- synthetic manifolds --------------------------------------------------------

class ManifoldKind(str, enum.Enum):
    CIRCLE = "circle"
    SPHERE = "sphere"
    SWISS_ROLL = "swiss_roll"
    SPARSE_UNION = "sparse_union"


@dataclass(frozen=True)
class ManifoldSpec:
    """A synthetic shape in ``R^ambient``, sampled from its ``noise_delta`` tube.

    ``center`` (length ``ambient``) translates the shape. ``dim`` is the sphere
    dimension for SPHERE; ``sparsity`` and ``n_subspaces`` describe
    SPARSE_UNION (``n_subspaces = 0`` draws a fresh support per point).
    Points carry ``label``, except for SPARSE_UNION with fixed supports whose
    labels index the support.
    """

    kind: ManifoldKind
    ambient: int
    radius: float = 1.0
    dim: int = 1
    sparsity: int = 1
    n_subspaces: int = 0
    height: float = 21.0
    noise_delta: float = 0.0
    seed: int = 0
    center: tuple | None = None
    label: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ManifoldKind(self.kind))
        if self.center is not None:
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))
            if len(self.center) != self.ambient:
                raise ValueError(f"center has {len(self.center)} coordinates, ambient is {self.ambient}")
        if self.noise_delta < 0:
            raise ValueError(f"noise_delta must be non-negative, got {self.noise_delta}")
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        need = {ManifoldKind.CIRCLE: 2, ManifoldKind.SPHERE: self.dim + 1,
                ManifoldKind.SWISS_ROLL: 3, ManifoldKind.SPARSE_UNION: self.sparsity}[self.kind]
        if self.ambient < need:
            raise ValueError(f"{self.kind.value} needs ambient dimension >= {need}, got {self.ambient}")
        if self.kind in (ManifoldKind.CIRCLE, ManifoldKind.SPHERE) and self.noise_delta >= self.radius:
            raise ValueError(f"noise_delta {self.noise_delta} must be below the reach {self.radius}")
        if self.kind is ManifoldKind.SPARSE_UNION and self.sparsity < 1:
            raise ValueError("sparsity must be at least 1")

    @property
    def offset(self) -> np.ndarray:
        return np.zeros(self.ambient) if self.center is None else np.array(self.center)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["kind"] = self.kind.value
        d["center"] = list(self.center) if self.center is not None else None
        return d


def _unit_rows(rng, n, k):
    g = rng.standard_normal((n, k))
    return g / np.linalg.norm(g, axis=1)[:, None]


def gen_manifold(spec: ManifoldSpec, n_points: int) -> LabeledSet:
    """Sample ``n_points`` from the shape, each displaced uniformly within its ``δ``-ball."""
    if n_points < 0:
        raise ValueError(f"n_points must be non-negative, got {n_points}")
    rng = generator(spec.seed)
    N = spec.ambient
    P = np.zeros((n_points, N))
    labels = np.full(n_points, spec.label, dtype=np.int64)
    kind = spec.kind
    if kind is ManifoldKind.CIRCLE:
        theta = rng.uniform(0.0, 2.0 * math.pi, n_points)
        P[:, 0] = spec.radius * np.cos(theta)
        P[:, 1] = spec.radius * np.sin(theta)
    elif kind is ManifoldKind.SPHERE:
        P[:, :spec.dim + 1] = spec.radius * _unit_rows(rng, n_points, spec.dim + 1)
    elif kind is ManifoldKind.SWISS_ROLL:
        t = rng.uniform(1.5 * math.pi, 4.5 * math.pi, n_points)
        h = rng.uniform(0.0, spec.height, n_points)
        P[:, 0] = t * np.cos(t)
        P[:, 1] = h
        P[:, 2] = t * np.sin(t)
    else:
        s = spec.sparsity
        if spec.n_subspaces > 0:
            supports = np.array([np.sort(rng.choice(N, s, replace=False))
                                 for _ in range(spec.n_subspaces)])
            which = rng.integers(0, spec.n_subspaces, n_points)
            labels = which.astype(np.int64)
        else:
            supports = None
        for i in range(n_points):
            supp = supports[which[i]] if supports is not None else rng.choice(N, s, replace=False)
            P[i, supp] = rng.standard_normal(s)
    if spec.noise_delta > 0:
        radii = spec.noise_delta * rng.uniform(0.0, 1.0, n_points) ** (1.0 / N)
        P += radii[:, None] * _unit_rows(rng, n_points, N)
    P += spec.offset
    return LabeledSet(P, labels, kind.value, {"generator": spec.to_dict(), "n_points": int(n_points)})


def distance_to_manifold(spec: ManifoldSpec, points) -> np.ndarray:
    """Exact Euclidean distance from each row to the noiseless CIRCLE or SPHERE."""
    Z = np.atleast_2d(np.asarray(points, dtype=np.float64)) - spec.offset
    if spec.kind is ManifoldKind.CIRCLE:
        k = 2
    elif spec.kind is ManifoldKind.SPHERE:
        k = spec.dim + 1
    else:
        raise NotImplementedError(f"no closed-form distance for {spec.kind.value}")
    head = np.linalg.norm(Z[:, :k], axis=1)
    rest = np.linalg.norm(Z[:, k:], axis=1)
    return np.hypot(head - spec.radius, rest)
