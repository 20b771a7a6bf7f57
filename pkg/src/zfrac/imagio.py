"""Image loading, binarization, padding, and dataset manifests.

Grayscale images are plain 2-D uint8 arrays (row-major, [0, 255]);
binary occupancy grids are 2-D bool arrays of the same layout.
"""

import csv
import os
from dataclasses import dataclass

import numpy as np

VALID_SPLITS = ("train", "val", "test")

# Guard against absurd header values in hand-rolled decoders.
MAX_SIDE = 1 << 16


class ImageError(Exception):
    """Raised when an image file cannot be decoded."""


class ManifestError(Exception):
    """Raised when a dataset manifest is malformed."""


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    entries: list

    @property
    def num_classes(self):
        return max(e.label for e in self.entries) + 1

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def splits_present(self):
        seen = []
        for e in self.entries:
            if e.split not in seen:
                seen.append(e.split)
        return seen


def _check_dims(width, height, path):
    if width < 1 or height < 1 or width > MAX_SIDE or height > MAX_SIDE:
        raise ImageError(f"{path}: bad dimensions {width}x{height}")


def _pgm_tokens(data):
    """Yield whitespace-separated tokens from PGM header/ASCII body, skipping comments."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i : i + 1]
        if c == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def _load_pgm(path, data):
    toks = _pgm_tokens(data)
    try:
        magic, _ = next(toks)
        (w, pos), (h, pos), (maxval, pos) = (next(toks) for _ in range(3))
    except StopIteration:
        raise ImageError(f"{path}: truncated PGM header") from None
    try:
        width, height, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ImageError(f"{path}: non-numeric PGM header") from None
    _check_dims(width, height, path)
    if maxval <= 0 or maxval > 255:
        raise ImageError(f"{path}: unsupported bit depth (maxval {maxval})")

    if magic == b"P2":
        vals = []
        for tok, _ in toks:
            try:
                vals.append(int(tok))
            except ValueError:
                raise ImageError(f"{path}: bad P2 sample {tok!r}") from None
        if len(vals) != width * height:
            raise ImageError(f"{path}: expected {width * height} samples, got {len(vals)}")
        arr = np.array(vals, dtype=np.int64)
    elif magic == b"P5":
        body = data[pos + 1 :]
        if len(body) < width * height:
            raise ImageError(f"{path}: truncated P5 body")
        arr = np.frombuffer(body[: width * height], dtype=np.uint8).astype(np.int64)
    else:
        raise ImageError(f"{path}: unsupported PGM magic {magic!r}")

    if arr.min() < 0 or arr.max() > maxval:
        raise ImageError(f"{path}: sample out of range for maxval {maxval}")
    return arr.astype(np.uint8).reshape(height, width)


def _load_png(path):
    from PIL import Image

    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode == "L":
                arr = np.asarray(im, dtype=np.uint8)
            elif mode == "RGB":
                rgb = np.asarray(im, dtype=np.float64)
                # ITU-R BT.601 luminance, rounded to nearest integer.
                arr = np.rint(
                    0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
                ).astype(np.uint8)
            else:
                raise ImageError(f"{path}: unsupported PNG mode {mode!r}")
    except ImageError:
        raise
    except Exception as exc:
        raise ImageError(f"{path}: cannot decode PNG ({exc})") from None
    if arr.ndim != 2:
        raise ImageError(f"{path}: unexpected PNG shape {arr.shape}")
    _check_dims(arr.shape[1], arr.shape[0], path)
    return arr


def load_gray_image(path):
    """Decode a PGM (P2/P5) or PNG (8-bit gray/RGB) file into a uint8 array."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(2)
            rest = fh.read() if head in (b"P2", b"P5") else b""
    except OSError as exc:
        raise ImageError(f"{path}: {exc.strerror or exc}") from None
    if head in (b"P2", b"P5"):
        return _load_pgm(path, head + rest)
    return _load_png(path)


def write_pgm(path, img, binary=True):
    """Write a uint8 image as PGM, P5 by default (P2 when binary=False)."""
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        if binary:
            fh.write(f"P5\n{w} {h}\n255\n".encode())
            fh.write(img.tobytes())
        else:
            fh.write(f"P2\n{w} {h}\n255\n".encode())
            for row in img:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode())


def otsu_threshold(img):
    """Threshold maximizing between-class variance; ties break toward the smaller value.

    A constant image returns its own value, so binarize() yields an
    all-background grid on it.
    """
    img = np.asarray(img, dtype=np.uint8)
    hist = np.bincount(img.ravel(), minlength=256).astype(np.float64)
    nonzero = np.nonzero(hist)[0]
    if len(nonzero) == 1:
        return int(nonzero[0])

    total = hist.sum()
    omega = np.cumsum(hist) / total  # class-0 weight for threshold t (class 0 = <= t)
    mu = np.cumsum(hist * np.arange(256)) / total
    mu_total = mu[-1]
    denom = omega * (1.0 - omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_b = np.where(denom > 0, (mu_total * omega - mu) ** 2 / denom, 0.0)
    return int(np.argmax(sigma_b))


def binarize(img, thr):
    """Occupied exactly where intensity is strictly greater than thr."""
    return np.asarray(img) > thr


def next_pow2(n):
    return 1 << max(0, int(n) - 1).bit_length()


def pad_to_square_pow2(grid):
    """Embed a grid at (0,0) of the smallest power-of-two square that fits it."""
    grid = np.asarray(grid, dtype=bool)
    h, w = grid.shape
    side = next_pow2(max(h, w))
    if h == side and w == side:
        return grid
    out = np.zeros((side, side), dtype=bool)
    out[:h, :w] = grid
    return out


def load_manifest(path):
    """Read a "path,label,split" CSV into a validated DatasetManifest."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"path", "label", "split"} <= set(
                reader.fieldnames
            ):
                raise ManifestError(f"{path}: header must contain path,label,split")
            entries = []
            for lineno, row in enumerate(reader, start=2):
                p = (row["path"] or "").strip()
                if not p:
                    raise ManifestError(f"{path}:{lineno}: empty image path")
                try:
                    label = int(row["label"])
                except (TypeError, ValueError):
                    raise ManifestError(
                        f"{path}:{lineno}: non-integer label {row['label']!r}"
                    ) from None
                if label < 0:
                    raise ManifestError(f"{path}:{lineno}: negative label {label}")
                split = (row["split"] or "").strip()
                if split not in VALID_SPLITS:
                    raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
                entries.append(ManifestEntry(p, label, split))
    except OSError as exc:
        raise ManifestError(f"{path}: {exc.strerror or exc}") from None

    if not entries:
        raise ManifestError(f"{path}: manifest is empty")
    labels = sorted({e.label for e in entries})
    if labels != list(range(len(labels))):
        raise ManifestError(f"{path}: labels {labels} are not contiguous from 0")
    if not any(e.split == "train" for e in entries):
        raise ManifestError(f"{path}: no train entries")
    return DatasetManifest(entries)


def resolve_manifest_path(manifest_path, entry_path):
    """Entry paths are taken relative to the manifest's directory unless absolute."""
    if os.path.isabs(entry_path):
        return entry_path
    return os.path.join(os.path.dirname(os.path.abspath(manifest_path)), entry_path)
