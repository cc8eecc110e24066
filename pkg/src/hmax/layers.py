"""The S1 -> C1 -> S2 -> C2 forward pass.

S1 filters the image with the 64-filter Gabor bank and groups the maps
into 8 bands of 2 adjacent scales x 4 orientations.  C1 max-pools each
band across its two scales and over an n x n spatial grid (n grows
from 8 to 22 across bands), optionally embedding a weighted fraction
of the per-pixel minimum-over-scales into the maximum before pooling.
S2 measures Gaussian radial-basis similarity between C1 patches and
stored prototypes; C2 keeps the best response per prototype over all
bands and positions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import gabor
from .gabor import BAND_COUNT, GaborBank
from .imgproc import CombineParams, combined_image

N_ORIENTATIONS = len(gabor.ORIENTATIONS)

OVERLAP_MODES = ("none", "half")
EMBED_MODES = ("off", "all", "banded")


@dataclass(frozen=True)
class C1Params:
    """C1 pooling geometry.

    Band b (1..8) pools over an n x n grid with n = 8 + 2(b-1).  With
    overlap_mode "none" the grid tiles the map (stride = n); with
    "half" adjacent units share half their inputs (stride = 4 + (b-1)).
    """

    overlap_mode: str = "none"

    def __post_init__(self):
        if self.overlap_mode not in OVERLAP_MODES:
            raise ValueError(
                f"overlap_mode must be one of {OVERLAP_MODES}, got {self.overlap_mode!r}")

    def grid_size(self, band: int) -> int:
        return 8 + 2 * (band - 1)

    def step(self, band: int) -> int:
        return 4 + (band - 1)

    def stride(self, band: int) -> int:
        return self.grid_size(band) if self.overlap_mode == "none" else self.step(band)


@dataclass(frozen=True)
class EmbedRule:
    """How the per-pixel minimum over a band's two scales is re-added.

    The embedded value is max + w * min.  mode "off" leaves the plain
    maximum; "all" uses w = w_all everywhere; "banded" picks w from the
    interval of `band_thresholds` containing the relative gap
    d = (max - min) / max in percent (d = 0 where max = 0), and 0 when
    no interval contains d.  Intervals are (lo_pct, hi_pct, weight),
    half-open [lo, hi), disjoint, inside [0, 5).
    """

    mode: str = "off"
    w_all: float = 0.0
    band_thresholds: tuple = ()

    def __post_init__(self):
        if self.mode not in EMBED_MODES:
            raise ValueError(f"mode must be one of {EMBED_MODES}, got {self.mode!r}")
        if not (0.0 <= self.w_all <= 1.0):
            raise ValueError(f"w_all must be in [0, 1], got {self.w_all}")
        spans = []
        for item in self.band_thresholds:
            lo, hi, w = item
            if not (0.0 <= lo < hi <= 5.0):
                raise ValueError(f"interval [{lo}, {hi}) must sit inside [0, 5)")
            if not (0.0 <= w <= 1.0):
                raise ValueError(f"embedding weight must be in [0, 1], got {w}")
            spans.append((lo, hi))
        spans.sort()
        for (_, hi0), (lo1, _) in zip(spans, spans[1:]):
            if lo1 < hi0:
                raise ValueError("band_thresholds intervals overlap")


EMBED_PRESETS = {
    "off": EmbedRule(),
    "opt1": EmbedRule(mode="all", w_all=1.0),
    "opt2": EmbedRule(mode="banded", band_thresholds=((0.0, 2.0, 0.5), (2.0, 5.0, 0.1))),
    "opt3": EmbedRule(mode="banded", band_thresholds=((0.0, 2.0, 1.0), (2.0, 5.0, 0.5))),
}


def s1_layer(img: np.ndarray, bank: GaborBank, conv_mode: str = "auto") -> list:
    """Filter an image with the full bank, grouped into 8 bands.

    Returns a list of 8 arrays of shape (2, 4, H, W): two scales by
    four orientations of same-size rectified response maps.
    """
    img = np.asarray(img, dtype=np.float64)
    if conv_mode not in ("auto", "dense", "separable"):
        raise ValueError(f"unknown conv_mode {conv_mode!r}")
    if conv_mode != "auto" and (conv_mode == "separable") != bank.separable:
        raise ValueError(
            f"conv_mode {conv_mode!r} does not match bank (separable={bank.separable})")
    mmax = bank.max_size
    if img.shape[0] < mmax or img.shape[1] < mmax:
        raise ValueError(
            f"image {img.shape} smaller than the largest filter ({mmax}x{mmax})")
    bands = []
    for band in range(1, BAND_COUNT + 1):
        maps = np.empty((2, N_ORIENTATIONS) + img.shape)
        for si, scale in enumerate(bank.scales_of_band(band)):
            for oi in range(N_ORIENTATIONS):
                maps[si, oi] = gabor.convolve(img, bank.filter_at(scale, oi))
        bands.append(maps)
    return bands


def _pool(maps: np.ndarray, n: int, stride: int) -> np.ndarray:
    """Window max over an n x n grid at the given stride, valid placement."""
    h, w = maps.shape[-2:]
    if h < n or w < n:
        raise ValueError(f"map {h}x{w} smaller than pooling grid {n}x{n}")
    windows = sliding_window_view(maps, (n, n), axis=(-2, -1))
    return windows[..., ::stride, ::stride, :, :].max(axis=(-2, -1))


def _embedded_band(band_maps: np.ndarray, rule: EmbedRule) -> np.ndarray:
    mx = band_maps.max(axis=0)
    if rule.mode == "off":
        return mx
    mn = band_maps.min(axis=0)
    if rule.mode == "all":
        return mx + rule.w_all * mn
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(mx > 0.0, (mx - mn) / mx * 100.0, 0.0)
    w = np.zeros_like(mx)
    for lo, hi, wt in rule.band_thresholds:
        w[(d >= lo) & (d < hi)] = wt
    return mx + w * mn


def c1_layer(s1: list, params: C1Params = C1Params()) -> list:
    """Max across each band's two scales, then grid max-pooling.

    Returns a list of 8 arrays of shape (4, oh, ow) where
    oh = floor((H - n) / stride) + 1 for the band's n and stride.
    """
    return c1_layer_embedded(s1, params, EmbedRule())


def c1_layer_embedded(s1: list, params: C1Params = C1Params(),
                      rule: EmbedRule = EmbedRule()) -> list:
    """C1 with the minimum-over-scales embedded before pooling."""
    if len(s1) != BAND_COUNT:
        raise ValueError(f"expected {BAND_COUNT} bands, got {len(s1)}")
    out = []
    for b, band_maps in enumerate(s1, start=1):
        emb = _embedded_band(np.asarray(band_maps, dtype=np.float64), rule)
        out.append(_pool(emb, params.grid_size(b), params.stride(b)))
    return out


def gaussian_response(dist_sq, beta: float):
    """RBF tuning curve exp(-beta * d^2), with tiny negative d^2 from
    floating point cancellation clamped to zero so responses stay in (0, 1]."""
    return np.exp(-beta * np.maximum(dist_sq, 0.0))


def rbf_response(patch: np.ndarray, prototype: np.ndarray, beta: float):
    """Response of one patch (or a batch over leading axes) to one prototype."""
    patch = np.asarray(patch, dtype=np.float64)
    prototype = np.asarray(prototype, dtype=np.float64)
    if patch.shape[-3:] != prototype.shape:
        raise ValueError(
            f"shape mismatch: patch {patch.shape[-3:]} vs prototype {prototype.shape}")
    d2 = ((patch - prototype) ** 2).sum(axis=(-3, -2, -1))
    return gaussian_response(d2, beta)


def _proto_tensors(prototypes) -> list:
    tensors = []
    for p in prototypes:
        t = getattr(p, "tensor", p)
        t = np.asarray(t, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != N_ORIENTATIONS:
            raise ValueError(
                f"prototype tensor must be (4, n, n), got shape {t.shape}")
        if t.shape[1] != t.shape[2]:
            raise ValueError(f"prototype patch must be square, got {t.shape}")
        tensors.append(t)
    return tensors


def s2_layer(c1: list, prototypes, beta: float = 1.0) -> list:
    """Gaussian RBF response of every C1 patch against every prototype.

    Returns, per band, a list with one 2-D response map per prototype
    (None where the prototype does not fit that band's maps).  The
    sliding squared distance uses |X|^2 - 2<X,P> + |P|^2 so no patch is
    materialized per position.
    """
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    tensors = _proto_tensors(prototypes)
    out = []
    for band_maps in c1:
        band_maps = np.asarray(band_maps, dtype=np.float64)
        h, w = band_maps.shape[-2:]
        sq = (band_maps ** 2).sum(axis=0)
        band_out = []
        cache = {}
        for t in tensors:
            n = t.shape[1]
            if h < n or w < n:
                band_out.append(None)
                continue
            if n not in cache:
                cache[n] = (
                    sliding_window_view(sq, (n, n)).sum(axis=(-2, -1)),
                    sliding_window_view(band_maps, (n, n), axis=(1, 2)),
                )
            xsq, windows = cache[n]
            inner = np.einsum("ohwyx,oyx->hw", windows, t)
            d2 = xsq - 2.0 * inner + (t ** 2).sum()
            band_out.append(gaussian_response(d2, beta))
        out.append(band_out)
    return out


def c2_layer(s2: list) -> np.ndarray:
    """Global max per prototype over all bands and positions.

    A prototype that fits no band contributes 0.
    """
    if not s2 or not s2[0]:
        raise ValueError("empty S2 response")
    n_protos = len(s2[0])
    values = np.zeros(n_protos)
    for band_out in s2:
        for i, resp in enumerate(band_out):
            if resp is not None and resp.size:
                m = resp.max()
                if m > values[i]:
                    values[i] = m
    return values


@dataclass(frozen=True)
class PipelineConfig:
    """End-to-end feature extraction settings."""

    combine: CombineParams | None = None
    clahe_tile: int = 8
    clahe_clip: float = 0.01
    c1: C1Params = field(default_factory=C1Params)
    embed: EmbedRule = field(default_factory=EmbedRule)
    beta: float = 1.0


def extract_features(img: np.ndarray, bank: GaborBank, prototypes,
                     config: PipelineConfig = PipelineConfig(),
                     timings: dict | None = None) -> np.ndarray:
    """Run the full pipeline on one image and return its C2 vector.

    `prototypes` may be a PrototypeSet, a sequence of Prototype objects
    or a sequence of raw (4, n, n) tensors.  When `timings` is a dict,
    per-stage wall seconds are accumulated into it.
    """
    prototypes = getattr(prototypes, "prototypes", prototypes)

    def tick(key, start):
        if timings is not None:
            now = time.perf_counter()
            timings[key] = timings.get(key, 0.0) + (now - start)
            return now
        return start

    t = time.perf_counter()
    if config.combine is not None:
        img = combined_image(img, config.combine,
                             tile=config.clahe_tile, clip=config.clahe_clip)
    t = tick("preprocess", t)
    s1 = s1_layer(img, bank)
    t = tick("s1", t)
    c1 = c1_layer_embedded(s1, config.c1, config.embed)
    t = tick("c1", t)
    s2 = s2_layer(c1, prototypes, config.beta)
    c2 = c2_layer(s2)
    tick("s2c2", t)
    return c2
