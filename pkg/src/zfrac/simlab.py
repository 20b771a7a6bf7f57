"""Similarity lab: kernels, HSIC, CKA, CCA, rank correlations, per-layer sweeps,
prediction agreement, and the ACTM activation file format."""

import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

ACTM_MAGIC = b"ACTM"
ACTM_VERSION = 1

RANK_METRICS = ("pearson", "spearman", "kendall")


class SimilarityError(Exception):
    """Raised for shape mismatches and undefined similarity scores."""


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "linear"  # "linear" | "rbf"
    alpha: float = 1.0  # rbf bandwidth = alpha * median pairwise distance

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise SimilarityError(f"unknown kernel kind {self.kind!r}")
        if self.alpha <= 0:
            raise SimilarityError("alpha must be positive")


@dataclass
class CCAResult:
    canonical_correlations: np.ndarray  # non-increasing, in [0, 1]
    mean_score: float
    w1: np.ndarray  # projects centered Z columns to canonical coordinates
    w2: np.ndarray


@dataclass
class ActivationMatrix:
    layer_name: str
    values: np.ndarray  # (n, p) float32


@dataclass
class SimilarityReport:
    per_layer: list  # [(layer_name, metric_name, score), ...]
    argmax_layer: dict  # metric -> layer_name
    max_score: dict  # metric -> score
    skipped: list = field(default_factory=list)  # [(layer_name, metric, reason), ...]


def _as_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise SimilarityError(f"expected a 2-D matrix, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise SimilarityError("matrix contains non-finite entries")
    return x


def median_pairwise_distance(x):
    """Exact median of the n(n-1)/2 pairwise Euclidean distances."""
    x = _as_matrix(x)
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    iu = np.triu_indices(len(x), k=1)
    return float(np.median(np.sqrt(np.maximum(d2[iu], 0.0))))


def gram(x, cfg=KernelConfig()):
    """Linear Gram matrix X X^T, or RBF with sigma = alpha * median distance."""
    x = _as_matrix(x)
    if len(x) < 2:
        raise SimilarityError("need at least 2 rows")
    if cfg.kind == "linear":
        return x @ x.T
    med = median_pairwise_distance(x)
    if med <= 0:
        raise SimilarityError("rbf kernel undefined: all rows identical (median distance 0)")
    sigma = cfg.alpha * med
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    return np.exp(-d2 / (2.0 * sigma**2))


def hsic(k, l, unbiased=False):
    """Hilbert-Schmidt Independence Criterion of two n x n kernel matrices.

    Biased estimator (default): trace(HKH HLH) / (n-1)^2.
    """
    k = _as_matrix(k)
    l = _as_matrix(l)
    if k.shape != l.shape or k.shape[0] != k.shape[1]:
        raise SimilarityError(f"kernel shapes {k.shape} and {l.shape} incompatible")
    n = k.shape[0]
    if unbiased:
        # Song et al. estimator; needs n >= 4.
        if n < 4:
            raise SimilarityError("unbiased HSIC needs n >= 4")
        k = k.copy()
        l = l.copy()
        np.fill_diagonal(k, 0.0)
        np.fill_diagonal(l, 0.0)
        ones = np.ones(n)
        term1 = np.trace(k @ l)
        term2 = (ones @ k @ ones) * (ones @ l @ ones) / ((n - 1) * (n - 2))
        term3 = 2.0 * (ones @ k @ l @ ones) / (n - 2)
        return float((term1 + term2 - term3) / (n * (n - 3)))
    centered_k = k - k.mean(axis=0, keepdims=True)
    centered_k -= centered_k.mean(axis=1, keepdims=True)
    centered_l = l - l.mean(axis=0, keepdims=True)
    centered_l -= centered_l.mean(axis=1, keepdims=True)
    return float(np.sum(centered_k * centered_l) / (n - 1) ** 2)


def cka(z, y, cfg=KernelConfig(), unbiased=False):
    """Centered kernel alignment: HSIC(Z,Y) / sqrt(HSIC(Y,Y) HSIC(Z,Z))."""
    z = _as_matrix(z)
    y = _as_matrix(y)
    if len(z) != len(y):
        raise SimilarityError(f"row counts differ: {len(z)} vs {len(y)}")
    k = gram(z, cfg)
    l = gram(y, cfg)
    self_k = hsic(k, k, unbiased)
    self_l = hsic(l, l, unbiased)
    if self_k <= 0 or self_l <= 0:
        raise SimilarityError("cka undefined: a representation has zero self-HSIC")
    return hsic(k, l, unbiased) / np.sqrt(self_k * self_l)


def _whiten(x, rank_tol=1e-6, ridge=1e-6):
    """Centered SVD whitening with rank truncation and a small covariance ridge.

    Returns (whitened basis U~, transform W) with x_centered @ W = U~.
    """
    xc = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        raise SimilarityError("cca undefined: representation has effective rank 0")
    keep = s > rank_tol * s[0]
    u, s, vt = u[:, keep], s[keep], vt[keep]
    scale = 1.0 / np.sqrt(s**2 + ridge)
    return u * (s * scale), vt.T * scale


def cca(z, y, rank_tol=1e-6, ridge=1e-6):
    """Canonical correlations via SVD whitening of both sides.

    mean_score is the mean canonical correlation; values exceeding 1 by less
    than 1e-8 are clipped.
    """
    z = _as_matrix(z)
    y = _as_matrix(y)
    if len(z) != len(y):
        raise SimilarityError(f"row counts differ: {len(z)} vs {len(y)}")
    if len(z) < 3:
        raise SimilarityError("cca needs n >= 3")
    uz, w1 = _whiten(z, rank_tol, ridge)
    uy, w2 = _whiten(y, rank_tol, ridge)
    a, rho, bt = np.linalg.svd(uz.T @ uy, full_matrices=False)
    if rho.size and rho[0] > 1.0 + 1e-8:
        raise SimilarityError(f"canonical correlation {rho[0]} exceeds 1 beyond slack")
    rho = np.clip(rho, 0.0, 1.0)
    return CCAResult(rho, float(rho.mean()), w1 @ a, w2 @ bt.T)


@dataclass
class RankCorrelationSummary:
    pearson: float
    spearman: float
    kendall: float
    skipped_columns: int = 0
    column_cap: int | None = None
    seed: int | None = None

    def score(self, metric):
        return getattr(self, metric)


def rank_correlations(z, y, aggregate="max", column_cap=None, seed=None):
    """Pearson/Spearman/Kendall over all column pairs, reduced to one scalar each.

    aggregate="max" keeps the coefficient of largest magnitude (sign
    preserved); "mean" averages coefficients. Zero-variance columns are
    skipped and counted. column_cap subsamples columns of either matrix
    (seeded) to bound the pair enumeration.
    """
    z = _as_matrix(z)
    y = _as_matrix(y)
    if len(z) != len(y):
        raise SimilarityError(f"row counts differ: {len(z)} vs {len(y)}")
    if aggregate not in ("max", "mean"):
        raise SimilarityError(f"unknown aggregate {aggregate!r}")

    rng = np.random.default_rng(seed)

    def pick(mat):
        if column_cap is not None and mat.shape[1] > column_cap:
            cols = np.sort(rng.choice(mat.shape[1], size=column_cap, replace=False))
            return mat[:, cols]
        return mat

    z = pick(z)
    y = pick(y)
    zi = [i for i in range(z.shape[1]) if np.ptp(z[:, i]) > 0]
    yi = [j for j in range(y.shape[1]) if np.ptp(y[:, j]) > 0]
    skipped = (z.shape[1] - len(zi)) + (y.shape[1] - len(yi))

    coeffs = {m: [] for m in RANK_METRICS}
    for i in zi:
        for j in yi:
            a, b = z[:, i], y[:, j]
            coeffs["pearson"].append(stats.pearsonr(a, b).statistic)
            coeffs["spearman"].append(stats.spearmanr(a, b).statistic)
            coeffs["kendall"].append(stats.kendalltau(a, b).statistic)

    out = {}
    for m in RANK_METRICS:
        vals = np.array(coeffs[m], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            raise SimilarityError(f"{m} undefined: no usable column pairs")
        if aggregate == "max":
            out[m] = float(vals[np.argmax(np.abs(vals))])
        else:
            out[m] = float(vals.mean())
    return RankCorrelationSummary(
        out["pearson"], out["spearman"], out["kendall"], skipped, column_cap, seed
    )


def _evaluate_metric(metric, z, layer_values, rank_kwargs):
    if metric == "cca":
        return cca(z, layer_values).mean_score
    if metric.startswith("cka"):
        if metric == "cka-linear":
            cfg = KernelConfig("linear")
        elif metric.startswith("cka-rbf"):
            alpha = float(metric.split(":", 1)[1]) if ":" in metric else 1.0
            cfg = KernelConfig("rbf", alpha)
        else:
            raise SimilarityError(f"unknown metric {metric!r}")
        return cka(z, layer_values, cfg)
    if metric in RANK_METRICS:
        return rank_correlations(z, layer_values, **rank_kwargs).score(metric)
    raise SimilarityError(f"unknown metric {metric!r}")


def layer_sweep(z, layers, metrics=("cka-linear", "cca"), rank_kwargs=None):
    """Evaluate every metric on every layer; ties in the argmax go to the
    earliest layer, and undefined layer/metric pairs are recorded as skipped."""
    if not layers:
        raise SimilarityError("empty layer list")
    z = _as_matrix(z)
    rank_kwargs = rank_kwargs or {}
    per_layer = []
    skipped = []
    best = {}
    for layer in layers:
        if layer.values.shape[0] != z.shape[0]:
            raise SimilarityError(
                f"layer {layer.layer_name}: n={layer.values.shape[0]} but features have n={z.shape[0]}"
            )
        for metric in metrics:
            try:
                score = float(_evaluate_metric(metric, z, layer.values, rank_kwargs))
            except SimilarityError as exc:
                skipped.append((layer.layer_name, metric, str(exc)))
                continue
            per_layer.append((layer.layer_name, metric, score))
            if metric not in best or score > best[metric][1]:
                best[metric] = (layer.layer_name, score)
    argmax = {m: name for m, (name, _) in best.items()}
    maxima = {m: score for m, (_, score) in best.items()}
    return SimilarityReport(per_layer, argmax, maxima, skipped)


def agreement(a, b):
    """Percentage of positions where two prediction vectors coincide."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1 or len(a) == 0:
        raise SimilarityError(f"prediction shapes {a.shape} and {b.shape} incompatible")
    return 100.0 * float(np.mean(a == b))


# --- ACTM activation files ----------------------------------------------------


def write_actm(path, layer):
    """magic "ACTM", u8 version, LE u32 n, u32 p, u32 name length + UTF-8 name,
    then n x p f32 row-major."""
    values = np.ascontiguousarray(layer.values, dtype="<f4")
    n, p = values.shape
    name = layer.layer_name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ACTM_MAGIC)
        fh.write(struct.pack("<BII", ACTM_VERSION, n, p))
        fh.write(struct.pack("<I", len(name)))
        fh.write(name)
        fh.write(values.tobytes())


def read_actm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != ACTM_MAGIC:
        raise SimilarityError(f"{path}: bad magic {data[:4]!r}")
    version, n, p = struct.unpack_from("<BII", data, 4)
    if version != ACTM_VERSION:
        raise SimilarityError(f"{path}: unsupported version {version}")
    (name_len,) = struct.unpack_from("<I", data, 13)
    name = data[17 : 17 + name_len].decode("utf-8")
    off = 17 + name_len
    if len(data) != off + 4 * n * p:
        raise SimilarityError(f"{path}: truncated activation payload")
    values = np.frombuffer(data, dtype="<f4", count=n * p, offset=off).reshape(n, p).copy()
    return ActivationMatrix(name, values)


def load_activation_dir(dirpath):
    """Load every .actm file in a directory, ordered by an optional index file
    (one filename per line) or else by filename."""
    index = os.path.join(dirpath, "index.txt")
    if os.path.exists(index):
        with open(index, encoding="utf-8") as fh:
            names = [line.strip() for line in fh if line.strip()]
    else:
        names = sorted(f for f in os.listdir(dirpath) if f.endswith(".actm"))
    if not names:
        raise SimilarityError(f"{dirpath}: no activation files found")
    return [read_actm(os.path.join(dirpath, name)) for name in names]
