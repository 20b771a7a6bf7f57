"""Multi-scale fractal feature vectors (ZFrac), Prewitt baselines, batch extraction,
and the ZFT1 feature-matrix file format."""

import concurrent.futures
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .imagio import (
    binarize,
    load_gray_image,
    otsu_threshold,
    pad_to_square_pow2,
    resolve_manifest_path,
)

ZFT1_MAGIC = b"ZFT1"
DEFAULT_SCHEDULE = (2, 4, 8, 16, 32)

PREWITT_H = np.array([[-1, -1, -1], [0, 0, 0], [1, 1, 1]], dtype=np.float64)


class FeatureError(Exception):
    """Raised on schedule mismatches, heterogeneous lengths, or bad feature files."""


@dataclass(frozen=True)
class ExtractConfig:
    """Binarization and geometry options for ZFrac extraction.

    threshold is "otsu" or a fixed integer level; downsample, when set,
    nearest-neighbor resizes the input to downsample x downsample before
    anything else; normalize_per_level rescales each window level to unit
    maximum (off by default: raw fd values are concatenated).
    """

    threshold: object = "otsu"
    downsample: int | None = None
    normalize_per_level: bool = False

    def digest(self):
        blob = json.dumps(
            [self.threshold, self.downsample, self.normalize_per_level], sort_keys=True
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ZFracVector:
    values: np.ndarray  # float32, concatenated per-block fd values
    layout: list  # [(w, blocks_per_side), ...] in schedule order
    threshold_used: int
    padded_side: int
    degenerate_count: int


@dataclass
class BaselineFeatureVector:
    kind: str  # "prewitt_h" | "prewitt_v"
    values: np.ndarray  # signed responses, (height-2) x (width-2) flattened row-major


def validate_schedule(windows, side):
    windows = [int(w) for w in windows]
    if not windows:
        raise FeatureError("window schedule is empty")
    if any(b <= a for a, b in zip(windows, windows[1:])):
        raise FeatureError(f"schedule {windows} not strictly increasing")
    for w in windows:
        if w < 2 or w & (w - 1):
            raise FeatureError(f"window {w} must be a power of two >= 2")
        if w > side // 2:
            raise FeatureError(f"window {w} exceeds half the padded side {side}")
    return windows


def full_schedule(side):
    """The complete sweep w = 2 .. side/2."""
    ws = []
    w = 2
    while w <= side // 2:
        ws.append(w)
        w *= 2
    return ws


def block_radii(w):
    """Regression radii for a w x w block: {1, 2} when w = 2, else powers of two up to w/2."""
    if w == 2:
        return [1, 2]
    radii = []
    r = 1
    while r <= w // 2:
        radii.append(r)
        r *= 2
    return radii


def _downsample_nearest(img, target):
    h, w = img.shape
    rows = (np.arange(target) * h) // target
    cols = (np.arange(target) * w) // target
    return img[np.ix_(rows, cols)]


def fit_block_slopes(counts, radii):
    """Vectorized ln N vs ln(1/r) slopes for many blocks at once.

    counts: (num_blocks, len(radii)) int; returns (fd float64, degenerate bool,
    out_of_range bool) arrays. Blocks with < 2 positive counts get fd = 0.
    """
    x = np.log(1.0 / np.asarray(radii, dtype=np.float64))
    counts = np.asarray(counts, dtype=np.float64)
    mask = counts > 0
    k = mask.sum(axis=1)
    y = np.zeros_like(counts)
    np.log(counts, out=y, where=mask)
    sx = (mask * x).sum(axis=1)
    sy = y.sum(axis=1)
    sxx = (mask * x * x).sum(axis=1)
    sxy = (y * x).sum(axis=1)
    denom = k * sxx - sx * sx
    ok = k >= 2
    fd = np.zeros(len(counts))
    np.divide(k * sxy - sx * sy, denom, out=fd, where=ok & (denom != 0))
    oor = ok & ((fd < -1e-9) | (fd > 2.0 + 1e-9))
    return fd, ~ok, oor


def extract_zfrac(img, schedule=DEFAULT_SCHEDULE, cfg=ExtractConfig()):
    """Per-block fractal dimensions over every window size, flattened row-major
    per level and concatenated in schedule order."""
    img = np.asarray(img, dtype=np.uint8)
    if cfg.downsample:
        img = _downsample_nearest(img, int(cfg.downsample))
    thr = otsu_threshold(img) if cfg.threshold == "otsu" else int(cfg.threshold)
    grid = pad_to_square_pow2(binarize(img, thr))
    side = grid.shape[0]
    windows = validate_schedule(schedule, side)

    occ = grid.astype(np.uint8)
    chunks = []
    layout = []
    degenerate = 0
    for w in windows:
        radii = block_radii(w)
        counts = kernels.block_box_counts(occ, w, np.asarray(radii, dtype=np.int64))
        fd, degen, _ = fit_block_slopes(counts, radii)
        degenerate += int(degen.sum())
        level = fd.astype(np.float32)
        if cfg.normalize_per_level:
            peak = np.abs(level).max()
            if peak > 0:
                level = level / peak
        chunks.append(level)
        layout.append((w, side // w))
    values = np.concatenate(chunks)
    assert len(values) == sum((side // w) ** 2 for w in windows)
    return ZFracVector(values, layout, thr, side, degenerate)


def extract_prewitt(img, kind):
    """Valid-mode 3x3 Prewitt response (signed), horizontal or vertical."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h < 3 or w < 3:
        raise FeatureError(f"image {w}x{h} too small for a 3x3 filter")
    if kind == "prewitt_h":
        kernel = PREWITT_H
    elif kind == "prewitt_v":
        kernel = PREWITT_H.T
    else:
        raise FeatureError(f"unknown baseline kind {kind!r}")
    out = np.zeros((h - 2, w - 2))
    for di in range(3):
        for dj in range(3):
            if kernel[di, dj] != 0:
                out += kernel[di, dj] * img[di : h - 2 + di, dj : w - 2 + dj]
    return BaselineFeatureVector(kind, out.ravel())


# --- batch extraction ---------------------------------------------------------


@dataclass
class BatchResult:
    features: dict  # split -> float32 (n, p) matrix
    labels: dict  # split -> int32 vector
    schedule: list
    cache_hits: int = 0
    cache_misses: int = 0


def _extract_one(args):
    path, schedule, cfg = args
    vec = extract_zfrac(load_gray_image(path), schedule, cfg)
    return vec.values


def _cache_key(path, schedule, cfg):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    h.update(json.dumps(list(schedule)).encode())
    h.update(cfg.digest().encode())
    return h.hexdigest()


def batch_extract(
    manifest,
    schedule=DEFAULT_SCHEDULE,
    cfg=ExtractConfig(),
    workers=1,
    cache_dir=None,
    manifest_path=None,
):
    """Extract ZFrac rows for every manifest entry, grouped by split.

    Rows keep manifest order within each split and are bit-identical for any
    worker count. cache_dir, when given, memoizes per (image digest, config
    digest).
    """
    entries = list(manifest.entries)
    paths = [
        resolve_manifest_path(manifest_path, e.path) if manifest_path else e.path
        for e in entries
    ]

    rows = [None] * len(entries)
    hits = misses = 0
    pending = []
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        for i, path in enumerate(paths):
            cpath = os.path.join(cache_dir, _cache_key(path, schedule, cfg) + ".npy")
            if os.path.exists(cpath):
                rows[i] = np.load(cpath)
                hits += 1
            else:
                pending.append((i, path, cpath))
                misses += 1
    else:
        pending = [(i, path, None) for i, path in enumerate(paths)]
        misses = len(pending)

    jobs = [(path, tuple(schedule), cfg) for _, path, _ in pending]
    if workers and workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract_one, jobs, chunksize=8))
    else:
        results = [_extract_one(job) for job in jobs]

    for (i, _, cpath), values in zip(pending, results):
        rows[i] = values
        if cpath:
            np.save(cpath, values)

    lengths = {len(r) for r in rows}
    if len(lengths) > 1:
        bad = sorted({len(rows[i]): entries[i].path for i in range(len(rows))}.items())
        raise FeatureError(f"heterogeneous feature lengths: {bad}")

    features, labels = {}, {}
    for split in manifest.splits_present():
        idx = [i for i, e in enumerate(entries) if e.split == split]
        features[split] = np.stack([rows[i] for i in idx]).astype(np.float32)
        labels[split] = np.array([entries[i].label for i in idx], dtype=np.int32)
    return BatchResult(features, labels, list(schedule), hits, misses)


# --- ZFT1 file format ---------------------------------------------------------


def write_zft1(path, features, labels, schedule):
    """magic "ZFT1", LE u32 rows/cols/schedule-length, schedule u32s,
    rows x cols f32 row-major, then rows i32 labels."""
    features = np.ascontiguousarray(features, dtype=np.float32)
    labels = np.ascontiguousarray(labels, dtype=np.int32)
    rows, cols = features.shape
    if len(labels) != rows:
        raise FeatureError(f"{path}: {rows} rows but {len(labels)} labels")
    with open(path, "wb") as fh:
        fh.write(ZFT1_MAGIC)
        fh.write(struct.pack("<III", rows, cols, len(schedule)))
        fh.write(np.asarray(schedule, dtype="<u4").tobytes())
        fh.write(features.astype("<f4").tobytes())
        fh.write(labels.astype("<i4").tobytes())


def read_zft1(path):
    """Inverse of write_zft1; returns (features, labels, schedule)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != ZFT1_MAGIC:
        raise FeatureError(f"{path}: bad magic {data[:4]!r}")
    rows, cols, ns = struct.unpack_from("<III", data, 4)
    off = 16
    schedule = np.frombuffer(data, dtype="<u4", count=ns, offset=off)
    off += 4 * ns
    need = off + 4 * rows * cols + 4 * rows
    if len(data) != need:
        raise FeatureError(f"{path}: expected {need} bytes, got {len(data)}")
    features = (
        np.frombuffer(data, dtype="<f4", count=rows * cols, offset=off)
        .reshape(rows, cols)
        .copy()
    )
    off += 4 * rows * cols
    labels = np.frombuffer(data, dtype="<i4", count=rows, offset=off).copy()
    return features, labels, [int(w) for w in schedule]


def write_features_csv(path, features, labels):
    """CSV mirror of ZFT1: label column first, then feature columns."""
    features = np.asarray(features, dtype=np.float32)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label," + ",".join(f"f{i}" for i in range(features.shape[1])) + "\n")
        for lbl, row in zip(labels, features):
            fh.write(str(int(lbl)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
