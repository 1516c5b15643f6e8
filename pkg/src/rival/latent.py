"""Latent tensors, seeded sampling, and the elementary alignment transforms.

A latent is a plain ``float64`` numpy array of shape ``(C, H, W)``. Statistics
are always per channel over spatial positions with the population divisor.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDistributionError, FormatError, InvalidInputError

MAGIC = b"RIVL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the same seed and call sequence give the same stream."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def as_latent(x, name: str = "latent") -> np.ndarray:
    """Validate and convert to a C-contiguous ``(C, H, W)`` float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise InvalidInputError(f"{name} must be (C, H, W), got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class LatentStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def channels(self) -> int:
        return len(self.mean)


def stats(x: np.ndarray) -> LatentStats:
    """Per-channel mean and population std over all spatial positions.

    Sums are correctly rounded (``math.fsum``), so the result is bit-identical
    under any permutation of positions and any memory layout.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.size == 0:
        raise InvalidInputError(f"stats needs a non-empty (C, H, W) tensor, got {x.shape}")
    flat = x.reshape(x.shape[0], -1)
    n = flat.shape[1]
    mean = np.array([math.fsum(row) / n for row in flat])
    var = np.array([math.fsum((row - mu) ** 2) / n for row, mu in zip(flat, mean)])
    return LatentStats(mean=mean, std=np.sqrt(var))


def _fisher_yates(n: int, rng: np.random.Generator) -> np.ndarray:
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def shuffle_spatial(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Permute the H*W spatial positions, moving each channel vector as a unit."""
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    perm = _fisher_yates(h * w, rng)
    return x.reshape(c, h * w)[:, perm].reshape(c, h, w)


def shuffle_within_mask(x: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Permute only the positions where ``mask`` is set; others stay in place.

    Masked positions are visited in row-major order, so an all-ones mask
    consumes the generator exactly like :func:`shuffle_spatial`.
    """
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (h, w):
        raise InvalidInputError(f"mask shape {mask.shape} does not match latent {(h, w)}")
    idx = np.flatnonzero(mask.reshape(-1))
    perm = _fisher_yates(len(idx), rng)
    flat = x.reshape(c, h * w).copy()
    flat[:, idx] = flat[:, idx[perm]]
    return flat.reshape(c, h, w)


def sample_standard_gaussian(shape, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(tuple(shape), dtype=np.float64)


def sample_adaptive_gaussian(s: LatentStats, shape, rng: np.random.Generator) -> np.ndarray:
    """Draw each channel i.i.d. from ``Normal(s.mean[c], s.std[c]**2)``."""
    shape = tuple(shape)
    if len(shape) != 3 or shape[0] != s.channels:
        raise InvalidInputError(
            f"shape {shape} does not match statistics with {s.channels} channels"
        )
    z = sample_standard_gaussian(shape, rng)
    return z * s.std[:, None, None] + s.mean[:, None, None]


def adain(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Renormalize ``a`` so each channel takes on ``b``'s mean and std.

    A zero-variance channel of ``a`` is shifted onto ``b``'s mean with divisor 1
    and a warning is emitted.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0]:
        raise InvalidInputError(f"adain channel mismatch: {a.shape} vs {b.shape}")
    sa, sb = stats(a), stats(b)
    std_a = sa.std.copy()
    degenerate = std_a == 0
    if degenerate.any():
        warnings.warn(
            f"adain: zero-variance channels {np.flatnonzero(degenerate).tolist()} passed through",
            RuntimeWarning,
            stacklevel=2,
        )
        std_a[degenerate] = 1.0
    normed = (a - sa.mean[:, None, None]) / std_a[:, None, None]
    return normed * sb.std[:, None, None] + sb.mean[:, None, None]


def kl_gaussian_fit(a: np.ndarray, b: np.ndarray) -> float:
    """KL(N_a || N_b) between single Gaussians fitted to all elements of each tensor."""
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("kl_gaussian_fit needs non-empty tensors")
    mu_a, sd_a = a.mean(), a.std()
    mu_b, sd_b = b.mean(), b.std()
    if sd_a == 0 or sd_b == 0:
        raise DegenerateDistributionError("zero variance in fitted Gaussian")
    if mu_a == mu_b and sd_a == sd_b:
        return 0.0
    return float(np.log(sd_b / sd_a) + (sd_a**2 + (mu_a - mu_b) ** 2) / (2 * sd_b**2) - 0.5)


# -- binary codec ------------------------------------------------------------


def encode_tensor(x: np.ndarray) -> bytes:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise InvalidInputError(f"only (C, H, W) tensors serialize, got {x.shape}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, *x.shape)
    return header + x.astype("<f8").tobytes(order="C")


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("latent file truncated before header end")
    magic, version, c, h, w = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported latent format version {version}")
    n = c * h * w
    body = buf[_HEADER.size:]
    if len(body) != 8 * n:
        raise FormatError(f"expected {8 * n} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(c, h, w)


def save_tensor(x: np.ndarray, path) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(Path(path), encode_tensor(x))


def load_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
