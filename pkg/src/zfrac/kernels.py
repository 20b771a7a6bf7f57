"""Hot per-block box-counting kernels.

Two interchangeable backends compute, for every non-overlapping w x w block
of a padded M x M occupancy grid, the box count at each radius:

  * "numba"  — @njit nested loops with early exit per cell (default when
               numba imports cleanly);
  * "numpy"  — vectorized reshape/reduce fallback.

Select explicitly with the ZFRAC_BACKEND environment variable ("numba" or
"numpy"). Block order is row-major; radii must divide w or equal w, and w
must divide M, which the feature extractor guarantees.
"""

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


def numpy_block_box_counts(occ, w, radii):
    """Pure-numpy backend: coarse-grain per radius, then sum occupancy per block."""
    occ = np.ascontiguousarray(occ, dtype=np.uint8)
    m = occ.shape[0]
    b = m // w
    out = np.empty((b * b, len(radii)), dtype=np.int64)
    for ri, r in enumerate(radii):
        coarse = occ.reshape(m // r, r, m // r, r).max(axis=3).max(axis=1)
        per_block = (
            coarse.astype(np.int64).reshape(b, w // r, b, w // r).sum(axis=3).sum(axis=1)
        )
        out[:, ri] = per_block.ravel()
    return out


@njit(cache=True)
def _numba_counts(occ, w, radii, out):  # pragma: no cover - jitted
    m = occ.shape[0]
    b = m // w
    for bi in range(b):
        for bj in range(b):
            blk = bi * b + bj
            for ri in range(radii.shape[0]):
                r = radii[ri]
                cells = w // r
                count = 0
                for ci in range(cells):
                    for cj in range(cells):
                        hit = 0
                        for i in range(r):
                            row = bi * w + ci * r + i
                            for j in range(r):
                                if occ[row, bj * w + cj * r + j]:
                                    hit = 1
                                    break
                            if hit:
                                break
                        count += hit
                out[blk, ri] = count


def numba_block_box_counts(occ, w, radii):
    """Numba backend wrapper matching numpy_block_box_counts."""
    occ = np.ascontiguousarray(occ, dtype=np.uint8)
    b = occ.shape[0] // w
    out = np.empty((b * b, len(radii)), dtype=np.int64)
    _numba_counts(occ, int(w), np.asarray(radii, dtype=np.int64), out)
    return out


def _resolve_backend():
    choice = os.environ.get("ZFRAC_BACKEND", "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _HAVE_NUMBA:
            raise RuntimeError("ZFRAC_BACKEND=numba but numba is not importable")
        return "numba"
    if choice:
        raise RuntimeError(f"unknown ZFRAC_BACKEND {choice!r} (use 'numba' or 'numpy')")
    return "numba" if _HAVE_NUMBA else "numpy"


BACKEND = _resolve_backend()


def active_backend():
    return BACKEND


def block_box_counts(occ, w, radii):
    """Per-block box counts, shape (num_blocks, len(radii)), via the active backend."""
    if BACKEND == "numba":
        return numba_block_box_counts(occ, w, radii)
    return numpy_block_box_counts(occ, w, radii)
