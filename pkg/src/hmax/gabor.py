"""Gabor filter bank construction and spatial-domain convolution.

The bank holds 64 filters: 16 sizes from 7x7 to 37x37 in steps of two
pixels, times 4 orientations (0, 45, 90, 135 degrees).  Adjacent sizes
are paired into 8 bands.  Two application paths are provided:

* dense: direct 2-D correlation with the anisotropic filter,
  O(N^2 M^2) per map;
* separable: the isotropic (aspect ratio 1) filter factors into two
  complex 1-D kernels, Re(f(x) g(y)), so a map costs two 1-D passes
  plus a box-sum correction for the zero-mean/unit-norm scaling,
  O(N^2 M).

Both paths rectify: a response value is the absolute value of the
correlation of the (zero-mean, unit-L2) filter with the neighborhood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

ORIENTATIONS = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)
SCALE_COUNT = 16
BAND_COUNT = 8
MIN_SIZE = 7
MAX_SIZE = 37

SIGMA_MODES = ("lambda_ratio", "literal")


def filter_size(scale_index: int) -> int:
    """Side length of the filter at a 1-based scale index (7, 9, ... 37)."""
    if not 1 <= scale_index <= SCALE_COUNT:
        raise ValueError(f"scale_index must be in 1..{SCALE_COUNT}, got {scale_index}")
    return MIN_SIZE + 2 * (scale_index - 1)


def band_of_scale(scale_index: int) -> int:
    """Band (1..8) holding a 1-based scale index; two scales per band."""
    if not 1 <= scale_index <= SCALE_COUNT:
        raise ValueError(f"scale_index must be in 1..{SCALE_COUNT}, got {scale_index}")
    return (scale_index + 1) // 2


def aspect_ratio(size: int) -> float:
    """Scale-dependent aspect ratio: 0.0036 M^2 + 0.35 M + 0.18."""
    return 0.0036 * size**2 + 0.35 * size + 0.18


def wavelength(size: int) -> float:
    """Carrier wavelength at a given filter size: aspect_ratio / 0.8."""
    return aspect_ratio(size) / 0.8


def effective_width(size: int, sigma_mode: str = "lambda_ratio") -> float:
    """Gaussian envelope width sigma.

    `lambda_ratio` (default) ties the width to the carrier wavelength,
    sigma = 0.3 * lambda, giving envelopes that grow with filter size.
    `literal` uses the fixed value 0.3 pixels, under which every
    off-center tap is essentially zero; it exists for comparison only.
    """
    if sigma_mode not in SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}, got {sigma_mode!r}")
    if sigma_mode == "literal":
        return 0.3
    return 0.3 * wavelength(size)


def _centered_coords(size: int) -> np.ndarray:
    half = (size - 1) // 2
    return np.arange(-half, half + 1, dtype=np.float64)


def gabor_taps(size: int, orientation: float, gamma: float,
               sigma: float, lam: float) -> np.ndarray:
    """Raw (unnormalized) Gabor taps on a size x size centered grid.

    taps[i, j] = exp(-(u^2 + gamma^2 v^2) / (2 sigma^2)) * cos(2 pi u / lambda)
    with u = x cos(theta) + y sin(theta), v = -x sin(theta) + y cos(theta),
    x the column offset and y the row offset.
    """
    coords = _centered_coords(size)
    x = coords[None, :]
    y = coords[:, None]
    u = x * math.cos(orientation) + y * math.sin(orientation)
    v = -x * math.sin(orientation) + y * math.cos(orientation)
    envelope = np.exp(-(u**2 + gamma**2 * v**2) / (2.0 * sigma**2))
    return envelope * np.cos(2.0 * math.pi * u / lam)


def _normalize(taps: np.ndarray) -> np.ndarray:
    t = taps - taps.mean()
    nrm = np.linalg.norm(t)
    if nrm == 0.0:
        raise ValueError("degenerate filter: zero after mean removal")
    return t / nrm


@dataclass(frozen=True)
class GaborFilter:
    """One dense filter: zero-mean, unit-L2 taps."""

    scale_index: int
    orientation: float
    taps: np.ndarray

    @property
    def size(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class SeparableGaborFilter:
    """Isotropic filter factored into complex 1-D kernels.

    fx[x] = exp(-x^2 / 2 sigma^2) * exp(i (2 pi / lambda) x cos(theta))
    gy[y] = exp(-y^2 / 2 sigma^2) * exp(i (2 pi / lambda) y sin(theta))

    Re(fx[x] * gy[y]) reproduces the dense isotropic taps.
    `kernel_mean` and `kernel_norm` carry the zero-mean/unit-L2 scaling
    of the equivalent dense filter so both paths return identical maps.
    """

    scale_index: int
    orientation: float
    fx: np.ndarray
    gy: np.ndarray
    kernel_mean: float
    kernel_norm: float

    @property
    def size(self) -> int:
        return self.fx.shape[0]

    def dense_taps(self, normalized: bool = True) -> np.ndarray:
        """Materialize the equivalent dense isotropic filter."""
        raw = np.real(np.outer(self.gy, self.fx))
        if not normalized:
            return raw
        return (raw - self.kernel_mean) / self.kernel_norm


def make_filter(scale_index: int, orientation: float,
                sigma_mode: str = "lambda_ratio") -> GaborFilter:
    """Build one dense anisotropic filter, mean-subtracted and L2-normalized."""
    size = filter_size(scale_index)
    gamma = aspect_ratio(size)
    lam = wavelength(size)
    sigma = effective_width(size, sigma_mode)
    raw = gabor_taps(size, orientation, gamma, sigma, lam)
    return GaborFilter(scale_index, orientation, _normalize(raw))


def make_separable(scale_index: int, orientation: float,
                   sigma_mode: str = "lambda_ratio") -> SeparableGaborFilter:
    """Build one separable isotropic filter (aspect ratio forced to 1)."""
    size = filter_size(scale_index)
    lam = wavelength(size)
    sigma = effective_width(size, sigma_mode)
    coords = _centered_coords(size)
    freq = 2.0 * math.pi / lam
    envelope = np.exp(-(coords**2) / (2.0 * sigma**2))
    fx = envelope * np.exp(1j * freq * coords * math.cos(orientation))
    gy = envelope * np.exp(1j * freq * coords * math.sin(orientation))
    raw = np.real(np.outer(gy, fx))
    mean = float(raw.mean())
    nrm = float(np.linalg.norm(raw - mean))
    return SeparableGaborFilter(scale_index, orientation, fx, gy, mean, nrm)


@dataclass(frozen=True)
class GaborBank:
    """The full 64-filter bank, ordered scale-major.

    filters[(s-1) * 4 + o] is scale s (1..16), orientation index o.
    """

    filters: tuple
    separable: bool
    sigma_mode: str = "lambda_ratio"
    orientations: tuple = ORIENTATIONS

    def __len__(self) -> int:
        return len(self.filters)

    def filter_at(self, scale_index: int, orientation_index: int):
        if not 0 <= orientation_index < len(self.orientations):
            raise ValueError(f"orientation index out of range: {orientation_index}")
        return self.filters[(scale_index - 1) * len(self.orientations)
                            + orientation_index]

    def scales_of_band(self, band: int) -> tuple:
        if not 1 <= band <= BAND_COUNT:
            raise ValueError(f"band must be in 1..{BAND_COUNT}, got {band}")
        return (2 * band - 1, 2 * band)

    @property
    def max_size(self) -> int:
        return max(f.size for f in self.filters)


def make_bank(separable: bool = False,
              sigma_mode: str = "lambda_ratio") -> GaborBank:
    """Build the 64-filter bank in dense or separable form."""
    maker = make_separable if separable else make_filter
    filters = tuple(
        maker(s, theta, sigma_mode)
        for s in range(1, SCALE_COUNT + 1)
        for theta in ORIENTATIONS
    )
    return GaborBank(filters=filters, separable=separable, sigma_mode=sigma_mode)


def _check_input(img: np.ndarray, size: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected 2-D image, got shape {img.shape}")
    if img.shape[0] < size or img.shape[1] < size:
        raise ValueError(
            f"image {img.shape} smaller than filter {size}x{size}")
    return img


def convolve_dense(img: np.ndarray, filt: GaborFilter) -> np.ndarray:
    """Rectified dense correlation, same-size output, zero padding."""
    img = _check_input(img, filt.size)
    resp = ndimage.correlate(img, filt.taps, mode="constant", cval=0.0)
    return np.abs(resp)


def convolve_separable(img: np.ndarray, filt: SeparableGaborFilter) -> np.ndarray:
    """Rectified separable correlation matching the dense isotropic path.

    Two complex 1-D passes give the raw isotropic response; a separable
    box sum then applies the zero-mean/unit-norm scaling of the dense
    filter, so the output equals convolve_dense with the normalized
    isotropic taps up to floating point error.
    """
    img = _check_input(img, filt.size)
    # ndimage.correlate1d conjugates complex weights; pass the conjugate
    # to get the plain sliding dot product with fx and gy.
    z = ndimage.correlate1d(img.astype(np.complex128), np.conj(filt.fx),
                            axis=1, mode="constant", cval=0.0)
    z = ndimage.correlate1d(z, np.conj(filt.gy), axis=0, mode="constant",
                            cval=0.0)
    raw = z.real
    ones = np.ones(filt.size)
    box = ndimage.correlate1d(img, ones, axis=1, mode="constant", cval=0.0)
    box = ndimage.correlate1d(box, ones, axis=0, mode="constant", cval=0.0)
    return np.abs((raw - filt.kernel_mean * box) / filt.kernel_norm)


def convolve(img: np.ndarray, filt) -> np.ndarray:
    """Dispatch on filter kind."""
    if isinstance(filt, SeparableGaborFilter):
        return convolve_separable(img, filt)
    return convolve_dense(img, filt)
