"""Grayscale image loading, fillet segmentation and the 16 descriptors.

Intensities live in [0,1] regardless of source bit depth. Segmentation
assumes transillumination polarity: the specimen transmits light (bright),
dense tissue inside it attenuates light (dark). All convolutions use
replicate padding at the borders.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

N_FEATURES = 16
FEATURE_NAMES = (
    "grad_mag_mean",
    "grad_mag_std",
    "mean_local_variance",
    "std_local_variance",
    "edge_density",
    "edge_pixel_count",
    "grad_hist_bin1",
    "grad_hist_bin2",
    "grad_hist_bin3",
    "grad_hist_bin4",
    "grad_hist_bin5",
    "gabor_energy_0",
    "gabor_energy_45",
    "gabor_energy_90",
    "gabor_energy_135",
    "percentage_dense_area",
)

OTSU_BINS = 256
EDGE_THRESHOLD = 0.1          # gradient magnitude above this marks an edge pixel
LOCAL_VARIANCE_WINDOW = 7
MAX_SIDE = 1024               # longer image side after preprocessing
GABOR_WAVELENGTH = 8.0
GABOR_SIGMA = 4.0
GABOR_GAMMA = 0.5
GABOR_SIZE = 21
GABOR_ORIENTATIONS = (0, 45, 90, 135)


class ImageFormatError(ValueError):
    """Unreadable, unsupported or malformed image input."""


class SegmentationError(ValueError):
    """No specimen found in the image."""


@dataclass
class ImageGray:
    """Row-major grayscale image, intensities normalized to [0,1]."""

    pixels: np.ndarray
    bit_depth: int = 8

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ImageFormatError("zero-dimension image")
        if not np.all(np.isfinite(self.pixels)):
            raise ImageFormatError("non-finite pixel values")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ImageFormatError("pixel values outside [0,1]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


# ---------------------------------------------------------------------------
# loading


def load_grayscale(path) -> ImageGray:
    """Load a PGM (P2/P5) or 8/16-bit grayscale PNG, scaled by its max value."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"unreadable file: {path}: {exc}") from exc
    if raw[:2] in (b"P2", b"P5"):
        return _parse_pgm(raw, path)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return _parse_png(raw, path)
    raise ImageFormatError(f"unsupported format: {path}")


def _parse_pgm(raw: bytes, path: str) -> ImageGray:
    magic = raw[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos: pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos: pos + 1] == b"#":
            nl = raw.find(b"\n", pos)
            if nl == -1:
                raise ImageFormatError(f"unsupported format: truncated header in {path}")
            pos = nl + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos: pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"unsupported format: truncated header in {path}")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError:
            raise ImageFormatError(f"unsupported format: bad header token in {path}") from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"zero-dimension image: {path}")
    if not 1 <= maxval <= 65535:
        raise ImageFormatError(f"unsupported format: maxval {maxval} in {path}")

    if magic == b"P2":
        tokens = raw[pos:].split()
        if len(tokens) != width * height:
            raise ImageFormatError(f"unsupported format: truncated pixel data in {path}")
        try:
            values = np.array([int(t) for t in tokens], dtype=np.int64)
        except ValueError:
            raise ImageFormatError(f"unsupported format: bad pixel token in {path}") from None
    else:
        pos += 1  # the single whitespace byte after maxval
        nbytes = 1 if maxval < 256 else 2
        need = width * height * nbytes
        data = raw[pos: pos + need]
        if len(data) < need:
            raise ImageFormatError(f"unsupported format: truncated pixel data in {path}")
        dtype = np.uint8 if nbytes == 1 else ">u2"
        values = np.frombuffer(data, dtype=dtype).astype(np.int64)
    if values.min() < 0 or values.max() > maxval:
        raise ImageFormatError(f"unsupported format: pixel exceeds maxval in {path}")
    pixels = (values / maxval).reshape(height, width)
    return ImageGray(pixels, bit_depth=8 if maxval < 256 else 16)


def _parse_png(raw: bytes, path: str) -> ImageGray:
    from PIL import Image

    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise ImageFormatError(f"unsupported format: {path}: {exc}") from exc
    if img.mode == "L":
        scale, depth = 255.0, 8
    elif img.mode in ("I;16", "I;16B", "I;16L", "I"):
        scale, depth = 65535.0, 16
    else:
        raise ImageFormatError(f"unsupported format: PNG mode {img.mode} in {path}")
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ImageFormatError(f"zero-dimension image: {path}")
    return ImageGray(arr / scale, bit_depth=depth)


# ---------------------------------------------------------------------------
# preprocessing


def _box_resample_axis(a: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    """Exact area-average resampling along one axis via cumulative sums."""
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    if new_len == n:
        return np.moveaxis(a, 0, axis)
    cum = np.concatenate([np.zeros((1,) + a.shape[1:]), np.cumsum(a, axis=0)])
    bounds = np.arange(new_len + 1) * (n / new_len)
    k = np.minimum(bounds.astype(np.int64), n)
    frac = (bounds - k).reshape((-1,) + (1,) * (a.ndim - 1))
    upper = np.minimum(k + 1, n)
    at_bounds = cum[k] + frac * (cum[upper] - cum[k])
    out = (at_bounds[1:] - at_bounds[:-1]) / (n / new_len)
    return np.moveaxis(out, 0, axis)


def downscale_longest(img: ImageGray, max_side: int = MAX_SIDE) -> ImageGray:
    """Area-average downscale so the longer side is max_side; no-op if smaller."""
    h, w = img.pixels.shape
    longest = max(h, w)
    if longest <= max_side:
        return img
    scale = max_side / longest
    new_h = max(1, round(h * scale))
    new_w = max(1, round(w * scale))
    px = _box_resample_axis(img.pixels, new_h, 0)
    px = _box_resample_axis(px, new_w, 1)
    return ImageGray(np.clip(px, 0.0, 1.0), bit_depth=img.bit_depth)


# ---------------------------------------------------------------------------
# segmentation


def _quantize(values: np.ndarray, bins: int = OTSU_BINS) -> np.ndarray:
    return np.minimum((values * bins).astype(np.int64), bins - 1)


def _otsu_bin(values: np.ndarray, bins: int = OTSU_BINS):
    """Index k maximizing between-class variance of the split (<=k | >k).

    Returns None when the histogram is degenerate (zero between-class
    variance, e.g. a constant input).
    """
    q = _quantize(np.asarray(values).ravel(), bins)
    counts = np.bincount(q, minlength=bins).astype(np.float64)
    p = counts / counts.sum()
    omega = np.cumsum(p)
    mu = np.cumsum(p * np.arange(bins))
    mu_t = mu[-1]
    denom = omega * (1.0 - omega)
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma_b = np.where(denom > 0, (mu_t * omega - mu) ** 2 / denom, 0.0)
    if sigma_b.max() <= 0.0:
        return None
    return int(np.argmax(sigma_b))


def segment_fillet(img: ImageGray) -> np.ndarray:
    """Boolean specimen mask: Otsu foreground, largest 4-connected
    component, holes filled. The specimen is the bright (transmitting) side."""
    k = _otsu_bin(img.pixels)
    if k is None:
        raise SegmentationError("no specimen detected: degenerate intensity histogram")
    fg = _quantize(img.pixels) > k
    if not fg.any():
        raise SegmentationError("no specimen detected")
    labels, n_components = ndimage.label(fg)  # default structure: 4-connectivity
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    mask = labels == int(sizes.argmax())
    return ndimage.binary_fill_holes(mask)


# ---------------------------------------------------------------------------
# descriptors

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def sobel_gradients(img: ImageGray, mask: np.ndarray = None):
    """Gradient magnitude and orientation maps (orientation folded to [0, pi)).

    Full-size maps are returned; masking happens in the statistics that
    consume them.
    """
    px = img.pixels
    if mask is not None and mask.shape != px.shape:
        raise ValueError("mask dimensions do not match image")
    gx = ndimage.correlate(px, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(px, _SOBEL_Y, mode="nearest")
    magnitude = np.hypot(gx, gy)
    orientation = np.mod(np.arctan2(gy, gx), np.pi)
    return magnitude, orientation


def orientation_histogram(magnitude, orientation, mask) -> np.ndarray:
    """5-bin magnitude-weighted orientation histogram, L1-normalized.

    Bin edges are k*pi/5; zero total magnitude gives all-zero bins.
    """
    if magnitude.shape != orientation.shape or magnitude.shape != mask.shape:
        raise ValueError("map dimensions do not match")
    idx = np.minimum((orientation / (np.pi / 5.0)).astype(np.int64), 4)
    hist = np.bincount(idx[mask], weights=magnitude[mask], minlength=5)[:5]
    total = hist.sum()
    if total <= 0.0:
        return np.zeros(5)
    return hist / total


def gabor_kernel(orientation_deg: float) -> np.ndarray:
    """Real DC-corrected Gabor kernel; 0 degrees responds to vertical stripes."""
    theta = np.deg2rad(orientation_deg)
    half = GABOR_SIZE // 2
    y, x = np.mgrid[-half: half + 1, -half: half + 1].astype(np.float64)
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    kernel = np.exp(-(xr**2 + (GABOR_GAMMA * yr) ** 2) / (2.0 * GABOR_SIGMA**2))
    kernel *= np.cos(2.0 * np.pi * xr / GABOR_WAVELENGTH)
    return kernel - kernel.mean()


def gabor_energy(img: ImageGray, mask: np.ndarray, orientation_deg: float) -> float:
    """Mean absolute Gabor response over mask pixels."""
    if orientation_deg not in GABOR_ORIENTATIONS:
        raise ValueError(f"orientation must be one of {GABOR_ORIENTATIONS}")
    kernel = gabor_kernel(orientation_deg)
    half = GABOR_SIZE // 2
    padded = np.pad(img.pixels, half, mode="edge")
    # the kernel is centrally symmetric, so convolution equals correlation
    response = signal.fftconvolve(padded, kernel, mode="valid")
    return float(np.abs(response)[mask].mean())


def local_variance_map(img: ImageGray, size: int = LOCAL_VARIANCE_WINDOW) -> np.ndarray:
    px = img.pixels
    m1 = ndimage.uniform_filter(px, size=size, mode="nearest")
    m2 = ndimage.uniform_filter(px * px, size=size, mode="nearest")
    return np.maximum(m2 - m1 * m1, 0.0)


def dense_area_fraction(img: ImageGray, mask: np.ndarray) -> float:
    """Fraction of mask pixels that are dense (light-attenuating) tissue.

    Otsu over mask intensities; dense = strictly below the class boundary;
    3x3 binary opening removes speckle. Degenerate histograms give 0.
    """
    if mask.shape != img.pixels.shape:
        raise ValueError("mask dimensions do not match image")
    n_mask = int(mask.sum())
    if n_mask == 0:
        raise ValueError("empty mask")
    k = _otsu_bin(img.pixels[mask])
    if k is None:
        return 0.0
    dense = mask & (_quantize(img.pixels) <= k)
    opened = ndimage.binary_opening(dense, structure=np.ones((3, 3), dtype=bool))
    return float(opened.sum() / n_mask)


def extract_descriptors(img: ImageGray, mask: np.ndarray) -> np.ndarray:
    """The 16-entry descriptor vector, in FEATURE_NAMES order.

    Pure function of (pixels, mask); recomputation is bit-identical.
    """
    px = img.pixels
    if mask.shape != px.shape:
        raise ValueError("mask dimensions do not match image")
    if not mask.any():
        raise SegmentationError("no specimen detected: empty mask")
    magnitude, orientation = sobel_gradients(img, mask)
    mag_sel = magnitude[mask]
    variance = local_variance_map(img)[mask]
    edges = (magnitude > EDGE_THRESHOLD) & mask
    n_mask = mask.sum()

    features = np.empty(N_FEATURES)
    features[0] = mag_sel.mean()
    features[1] = mag_sel.std()
    features[2] = variance.mean()
    features[3] = variance.std()
    features[4] = edges.sum() / n_mask
    features[5] = edges.sum()
    features[6:11] = orientation_histogram(magnitude, orientation, mask)
    for j, deg in enumerate(GABOR_ORIENTATIONS):
        features[11 + j] = gabor_energy(img, mask, deg)
    features[15] = dense_area_fraction(img, mask)
    return features


def compute_features(img: ImageGray, max_side: int = MAX_SIDE) -> np.ndarray:
    """Preprocess, segment and extract: the full per-image feature pipeline."""
    img = downscale_longest(img, max_side)
    mask = segment_fillet(img)
    return extract_descriptors(img, mask)


__all__ = [
    "ImageGray", "ImageFormatError", "SegmentationError",
    "FEATURE_NAMES", "N_FEATURES",
    "load_grayscale", "downscale_longest", "segment_fillet",
    "sobel_gradients", "orientation_histogram", "gabor_kernel",
    "gabor_energy", "local_variance_map", "dense_area_fraction",
    "extract_descriptors", "compute_features",
    "EDGE_THRESHOLD", "GABOR_ORIENTATIONS", "OTSU_BINS", "MAX_SIDE",
]
