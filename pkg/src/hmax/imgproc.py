"""Image ingestion and the combined-image preprocessing chain.

A grayscale image is a 2-D float64 array with intensities in [0, 1].
The preprocessing chain is: contrast-limited adaptive histogram
equalization, SVD reconstruction with a magnification exponent on the
singular values, and a weighted blend of the two results.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

# BT.601 luminance weights for RGB input.
_LUMA = np.array([0.299, 0.587, 0.114])

_HIST_BINS = 256


@dataclass(frozen=True)
class CombineParams:
    """Parameters of the equalize / reconstruct / blend chain.

    alpha: exponent applied to the singular values, in (0, 2].
    c: blend weight of the reconstruction against the equalized image,
       in [0, 1].
    """

    alpha: float = 0.75
    c: float = 0.25

    def __post_init__(self):
        if not (0.0 < self.alpha <= 2.0):
            raise ValueError(f"alpha must be in (0, 2], got {self.alpha}")
        if not (0.0 <= self.c <= 1.0):
            raise ValueError(f"c must be in [0, 1], got {self.c}")


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate and return a 2-D float64 image array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale array, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"zero-dimension image: shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    return arr


def load_grayscale(path) -> np.ndarray:
    """Load an image file as a grayscale array in [0, 1].

    PNG and binary PGM (P5) are always supported; any other format
    Pillow can decode works too.  RGB input is reduced with BT.601
    luminance weights, 16-bit grayscale is scaled by its full range.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode in ("LA", "RGBA"):
                im = im.convert("RGB" if mode == "RGBA" else "L")
                mode = im.mode
            arr = np.asarray(im)
    except UnidentifiedImageError as exc:
        raise ValueError(f"unsupported or corrupt image file: {path}") from exc
    if arr.ndim == 3:
        out = arr.astype(np.float64) @ _LUMA / 255.0
    elif arr.ndim == 2:
        if arr.dtype == np.uint8:
            out = arr.astype(np.float64) / 255.0
        elif arr.dtype in (np.uint16, np.int32):
            out = arr.astype(np.float64) / 65535.0
        else:
            raise ValueError(f"unsupported pixel type {arr.dtype} in {path}")
    else:
        raise ValueError(f"unsupported image layout {arr.shape} in {path}")
    if out.size == 0:
        raise ValueError(f"zero-dimension image: {path}")
    return np.clip(out, 0.0, 1.0)


def resize_height(img: np.ndarray, target_h: int) -> np.ndarray:
    """Bilinear resize to a given height, preserving aspect ratio.

    The width becomes round(width * target_h / height), at least 1.
    A resize to the identical dimensions returns a pixel-identical copy.
    """
    img = check_image(img)
    if target_h < 1:
        raise ValueError(f"target_h must be >= 1, got {target_h}")
    h, w = img.shape
    target_w = max(1, round(w * target_h / h))
    if (target_h, target_w) == (h, w):
        return img.copy()
    return _bilinear_resize(img, target_h, target_w)


def _bilinear_resize(img, out_h, out_w):
    h, w = img.shape
    # Pixel-center alignment: dst center maps to src center.
    src_y = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    src_x = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (src_y - y0)[:, None]
    fx = (src_x - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx)


def _bin_index(img):
    return np.minimum((img * _HIST_BINS).astype(np.int64), _HIST_BINS - 1)


def _lut_from_hist(hist, npix, clip):
    """Clipped-CDF lookup table for one tile.

    The histogram is clipped at clip * pixel count with the excess
    spread uniformly over all bins; the mapping is cdf/total.  A tile
    whose pixels all fall in one bin has no contrast to limit and maps
    every bin to its center, which keeps the transform idempotent on
    constant input.
    """
    occupied = int(np.count_nonzero(hist))
    if occupied <= 1:
        # Degenerate tile: identity mapping through bin centers.
        return (np.arange(_HIST_BINS) + 0.5) / _HIST_BINS
    limit = clip * npix
    excess = np.maximum(hist - limit, 0.0).sum()
    clipped = np.minimum(hist, limit) + excess / _HIST_BINS
    return np.cumsum(clipped) / clipped.sum()


def _global_equalize(img):
    bins = _bin_index(img)
    hist = np.bincount(bins.ravel(), minlength=_HIST_BINS).astype(np.float64)
    if np.count_nonzero(hist) <= 1:
        lut = (np.arange(_HIST_BINS) + 0.5) / _HIST_BINS
    else:
        lut = np.cumsum(hist) / hist.sum()
    return lut[bins]


def adaptive_hist_eq(img: np.ndarray, tile: int = 8, clip: float = 0.01) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    The image is partitioned into tiles of side `tile` (edge tiles may
    be smaller).  Each tile's histogram is clipped at `clip` of its
    pixel count with uniform redistribution of the excess, the mapping
    is the tile CDF, and pixel values are bilinearly blended between
    the mappings of the surrounding tile centers.  Images smaller than
    one tile fall back to global histogram equalization.
    """
    img = check_image(img)
    if tile < 2:
        raise ValueError(f"tile must be >= 2, got {tile}")
    if not (0.0 < clip <= 1.0):
        raise ValueError(f"clip must be in (0, 1], got {clip}")
    h, w = img.shape
    if h < tile or w < tile:
        return _global_equalize(img)

    bins = _bin_index(img)
    y_edges = list(range(0, h, tile))
    x_edges = list(range(0, w, tile))
    ny, nx = len(y_edges), len(x_edges)

    luts = np.empty((ny, nx, _HIST_BINS))
    cy = np.empty(ny)
    cx = np.empty(nx)
    for i, ys in enumerate(y_edges):
        ye = min(ys + tile, h)
        cy[i] = (ys + ye - 1) / 2.0
        for j, xs in enumerate(x_edges):
            xe = min(xs + tile, w)
            if i == 0:
                cx[j] = (xs + xe - 1) / 2.0
            tb = bins[ys:ye, xs:xe]
            hist = np.bincount(tb.ravel(), minlength=_HIST_BINS).astype(np.float64)
            luts[i, j] = _lut_from_hist(hist, tb.size, clip)

    # Fractional tile coordinates of every pixel, clamped at the outer
    # tile centers so border pixels use the nearest mapping.
    iy = np.interp(np.arange(h), cy, np.arange(ny))
    ix = np.interp(np.arange(w), cx, np.arange(nx))
    i0 = np.floor(iy).astype(int)
    j0 = np.floor(ix).astype(int)
    i1 = np.minimum(i0 + 1, ny - 1)
    j1 = np.minimum(j0 + 1, nx - 1)
    fy = (iy - i0)[:, None]
    fx = (ix - j0)[None, :]

    i0g, i1g = i0[:, None], i1[:, None]
    j0g, j1g = j0[None, :], j1[None, :]
    v00 = luts[i0g, j0g, bins]
    v01 = luts[i0g, j1g, bins]
    v10 = luts[i1g, j0g, bins]
    v11 = luts[i1g, j1g, bins]
    out = (v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx
           + v10 * fy * (1 - fx) + v11 * fy * fx)
    return np.clip(out, 0.0, 1.0)


def svd_reconstruct(img: np.ndarray, alpha: float, clamp: bool = True) -> np.ndarray:
    """Reconstruct an image with its singular values raised to `alpha`.

    Computes the SVD L * D * R^T and returns L * D**alpha * R^T.  With
    alpha = 1 this is the identity up to floating point error.  The
    result is clamped to [0, 1] unless `clamp` is False (the raw values
    are needed to inspect the singular spectrum of the output).

    Raises np.linalg.LinAlgError if the SVD fails to converge.
    """
    img = check_image(img)
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    u, s, vt = np.linalg.svd(img, full_matrices=False)
    # Fix the sign ambiguity so reconstructions are bit-reproducible:
    # the largest-magnitude entry of each left singular vector is positive.
    lead = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[lead, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    u = u * signs
    vt = vt * signs[:, None]
    out = (u * s**alpha) @ vt
    if clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def combine(adapted: np.ndarray, reconstructed: np.ndarray, c: float) -> np.ndarray:
    """Blend the equalized and reconstructed images: (a + c*r) / (1 + c)."""
    adapted = check_image(adapted)
    reconstructed = check_image(reconstructed)
    if adapted.shape != reconstructed.shape:
        raise ValueError(
            f"dimension mismatch: {adapted.shape} vs {reconstructed.shape}")
    if not (0.0 <= c <= 1.0):
        raise ValueError(f"c must be in [0, 1], got {c}")
    return (adapted + c * reconstructed) / (1.0 + c)


def combined_image(img: np.ndarray, params: CombineParams,
                   tile: int = 8, clip: float = 0.01) -> np.ndarray:
    """Full preprocessing chain: equalize, SVD-reconstruct, blend."""
    adapted = adaptive_hist_eq(img, tile=tile, clip=clip)
    reconstructed = svd_reconstruct(adapted, params.alpha, clamp=True)
    return combine(adapted, reconstructed, params.c)
