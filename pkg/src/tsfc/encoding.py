"""Image encodings of univariate series: GASF, GADF and MTF."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

METHODS = ("gasf", "gadf", "mtf")
SYMMETRIC = "symmetric"
UNIT = "unit"


class LengthError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingConfig:
    image_size: int = 64
    mtf_bins: int = 8
    range_tag: str = SYMMETRIC

    def __post_init__(self):
        if self.image_size < 2:
            raise ValueError(f"image_size must be >= 2, got {self.image_size}")
        if self.mtf_bins < 2:
            raise ValueError(f"mtf_bins must be >= 2, got {self.mtf_bins}")
        if self.range_tag not in (SYMMETRIC, UNIT):
            raise ValueError(f"unknown range_tag {self.range_tag!r}")


@dataclass
class FieldImage:
    data: np.ndarray
    method: str
    source_channel: int = 0

    @property
    def size(self) -> int:
        return self.data.shape[0]


def as_series(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise LengthError("series is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains NaN or Inf")
    return x


def paa(series, target_len: int) -> np.ndarray:
    """Piecewise aggregate approximation with floor-boundary segments.

    Segment k covers indices [floor(k*n/target_len), floor((k+1)*n/target_len)).
    """
    x = as_series(series)
    n = x.size
    if target_len <= 0:
        raise ValueError(f"target_len must be positive, got {target_len}")
    if target_len > n:
        raise LengthError(f"cannot reduce a length-{n} series to {target_len}")
    bounds = (np.arange(target_len + 1) * n) // target_len
    sums = np.add.reduceat(x, bounds[:-1])
    return sums / np.diff(bounds)


def stretch(series, target_len: int) -> np.ndarray:
    """Nearest-index upsampling: out[j] = x[floor(j*n/target_len)]."""
    x = as_series(series)
    if target_len < x.size:
        raise LengthError(f"stretch cannot shorten a length-{x.size} series to {target_len}")
    return x[(np.arange(target_len) * x.size) // target_len]


def rescale(series, range_tag: str = SYMMETRIC) -> np.ndarray:
    x = as_series(series)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    if range_tag == SYMMETRIC:
        out = (2.0 * x - hi - lo) / (hi - lo)
        return np.clip(out, -1.0, 1.0)
    if range_tag == UNIT:
        return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    raise ValueError(f"unknown range_tag {range_tag!r}")


def to_polar(rescaled) -> tuple[np.ndarray, np.ndarray]:
    """Angles arccos(x) and radii i/n for i = 1..n."""
    x = np.clip(np.asarray(rescaled, dtype=np.float64), -1.0, 1.0)
    n = x.size
    return np.arccos(x), np.arange(1, n + 1) / n


def gasf(rescaled) -> np.ndarray:
    x = np.clip(np.asarray(rescaled, dtype=np.float64), -1.0, 1.0)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    g = np.outer(x, x) - np.outer(s, s)
    return np.clip(g, -1.0, 1.0)


def gadf(rescaled) -> np.ndarray:
    x = np.clip(np.asarray(rescaled, dtype=np.float64), -1.0, 1.0)
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    g = np.outer(s, x) - np.outer(x, s)
    return np.clip(g, -1.0, 1.0)


def quantile_bins(series, n_bins: int) -> np.ndarray:
    """1-based quantile bin of every sample.

    Bins follow the sorted rank: a sample whose value first appears at sorted
    position r lands in bin floor(r*Q/n) + 1. Distinct values therefore fill
    the bins evenly (sizes differ by at most one); equal values share a bin.
    """
    x = as_series(series)
    n = x.size
    if n_bins < 1:
        raise ValueError(f"n_bins must be positive, got {n_bins}")
    if n_bins > n:
        raise ValueError(f"n_bins={n_bins} exceeds series length {n}")
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    first_rank = np.searchsorted(sorted_x, x, side="left")
    return (first_rank * n_bins) // n + 1


def markov_matrix(bins, n_bins: int) -> np.ndarray:
    """Row-stochastic first-order transition matrix between 1-based bins.

    Rows with no outgoing transition are uniform.
    """
    b = np.asarray(bins, dtype=np.int64).reshape(-1)
    if b.size == 0:
        raise ValueError("bins is empty")
    counts = np.zeros((n_bins, n_bins))
    np.add.at(counts, (b[:-1] - 1, b[1:] - 1), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / n_bins)
    return w


def blur(field, m: int, size: int | None = None) -> np.ndarray:
    """Average non-overlapping m x m patches after dropping trailing rows/cols."""
    f = np.asarray(field, dtype=np.float64)
    if m <= 0:
        raise LengthError("blur factor must be at least 1")
    s = f.shape[0] // m if size is None else size
    if s * m > f.shape[0]:
        raise LengthError(f"cannot make {s}x{s} patches of {m} from a {f.shape[0]}-wide field")
    f = f[: s * m, : s * m]
    return f.reshape(s, m, s, m).mean(axis=(1, 3))


def mtf(series, config: EncodingConfig = EncodingConfig()) -> np.ndarray:
    x = as_series(series)
    n, s = x.size, config.image_size
    if n < s:
        raise LengthError(f"MTF needs at least {s} samples, got {n}")
    q = quantile_bins(x, config.mtf_bins)
    w = markov_matrix(q, config.mtf_bins)
    full = w[q[:, None] - 1, q[None, :] - 1]
    return blur(full, n // s, s)


def encode_channel(series, method: str, config: EncodingConfig = EncodingConfig(),
                   channel: int = 0) -> FieldImage:
    x = as_series(series)
    s = config.image_size
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if x.size < s:
        x = stretch(x, s)
    if method == "mtf":
        return FieldImage(mtf(x, config), method, channel)
    r = rescale(paa(x, s), config.range_tag)
    data = gasf(r) if method == "gasf" else gadf(r)
    return FieldImage(data, method, channel)


def encode_sample(channels, method: str, config: EncodingConfig = EncodingConfig()) -> np.ndarray:
    """Encode every channel of one sample; returns a [K, S, S] array."""
    return np.stack([encode_channel(c, method, config, k).data for k, c in enumerate(channels)])


def write_pgm(image: FieldImage | np.ndarray, path) -> Path:
    """Plain-text (P2) graymap with [min, max] mapped onto [0, 255]."""
    data = image.data if isinstance(image, FieldImage) else np.asarray(image, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        pix = np.rint((data - lo) * (255.0 / (hi - lo))).astype(int)
    else:
        pix = np.zeros(data.shape, dtype=int)
    path = Path(path)
    rows = "\n".join(" ".join(str(v) for v in row) for row in pix)
    path.write_text(f"P2\n{data.shape[1]} {data.shape[0]}\n255\n{rows}\n")
    return path


def read_pgm(path) -> np.ndarray:
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM file")
    w, h = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:4 + w * h], dtype=int).reshape(h, w)
