"""Diagnostics computable without external models: palette distance and the
per-step KL / reference-attention traces of a generation run."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .attention import Mode
from .errors import DegenerateDistributionError, InvalidInputError
from .latent import kl_gaussian_fit


@dataclass(frozen=True)
class Palette:
    colors: np.ndarray  # (k, 3), components in [0, 1]

    def __post_init__(self):
        c = np.asarray(self.colors, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3:
            raise InvalidInputError(f"palette must be (k, 3), got {c.shape}")
        if np.any(c < 0) or np.any(c > 1):
            raise InvalidInputError("palette components must lie in [0, 1]")
        object.__setattr__(self, "colors", c)

    @property
    def k(self) -> int:
        return len(self.colors)

    def to_text(self) -> str:
        return "".join(f"{r:.6f} {g:.6f} {b:.6f}\n" for r, g, b in self.colors)

    @classmethod
    def from_text(cls, text: str) -> "Palette":
        rows = [list(map(float, line.split())) for line in text.splitlines() if line.strip()]
        return cls(np.array(rows))


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ seeding. When every point coincides with a chosen
    center, remaining centers are drawn uniformly (duplicates allowed)."""
    n = len(points)
    centers = [points[int(rng.integers(n))]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def lloyd(points: np.ndarray, centers: np.ndarray, iters: int = 50) -> np.ndarray:
    """Lloyd iterations under squared Euclidean distance.

    Stops early once no point changes cluster. An empty cluster is re-seeded
    with the point farthest from its current centroid.
    """
    centers = np.array(centers, dtype=np.float64, copy=True)
    k = len(centers)
    labels = None
    for _ in range(iters):
        d2 = _sq_dists(points, centers)
        new_labels = d2.argmin(axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = points[members].mean(axis=0)
            else:
                far = int(d2[np.arange(len(points)), labels].argmax())
                centers[j] = points[far]
                labels[far] = j
                d2[far, :] = 0.0
    return centers


def kmeans_palette(image: np.ndarray, k: int = 10, rng: np.random.Generator | None = None,
                   iters: int = 50) -> Palette:
    """Cluster the RGB pixels of an 8-bit ``(H, W, 3)`` image into ``k`` colors."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise InvalidInputError(f"expected non-empty (H, W, 3) image, got {image.shape}")
    if rng is None:
        rng = np.random.default_rng(0)
    points = image.reshape(-1, 3).astype(np.float64) / 255.0
    distinct = len(np.unique(image.reshape(-1, 3), axis=0))
    if distinct < k:
        warnings.warn(
            f"image has {distinct} distinct colors for k={k}; palette will repeat colors",
            RuntimeWarning,
            stacklevel=2,
        )
    centers = lloyd(points, kmeans_plus_plus_init(points, k, rng), iters)
    return Palette(np.clip(centers, 0.0, 1.0))


def palette_distance(p: Palette, q: Palette) -> float:
    """Minimum total L1 distance over one-to-one matchings of the two palettes.

    The assignment is always solved with the arguments in a canonical order
    and the matched costs are added with a correctly rounded sum, so swapping
    the arguments gives the same float even when near-ties pick a different
    optimal matching.
    """
    if p.k != q.k:
        raise InvalidInputError(f"palette sizes differ: {p.k} vs {q.k}")
    if p.colors.tobytes() > q.colors.tobytes():
        p, q = q, p
    cost = np.abs(p.colors[:, None, :] - q.colors[None, :, :]).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    return math.fsum(cost[rows, cols])


@dataclass
class TraceSeries:
    """One value per generation step, ordered ``t = T, ..., 1``.

    Steps in ``flagged`` carry ``None`` (degenerate Gaussian fit).
    """

    steps: list[int]
    values: list[float | None]
    flagged: list[int] = field(default_factory=list)

    def as_dict(self) -> dict[int, float | None]:
        return dict(zip(self.steps, self.values))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("step,value\n")
        for t, v in zip(self.steps, self.values):
            buf.write(f"{t},{'' if v is None else format(v, '.17g')}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TraceSeries":
        lines = text.strip().splitlines()
        if not lines or lines[0].strip() != "step,value":
            raise InvalidInputError("trace CSV must start with header 'step,value'")
        steps, values, flagged = [], [], []
        for line in lines[1:]:
            t, _, v = line.partition(",")
            steps.append(int(t))
            if v.strip():
                values.append(float(v))
            else:
                values.append(None)
                flagged.append(int(t))
        return cls(steps, values, flagged)


def kl_trace(diag, chain) -> TraceSeries:
    """Fitted-Gaussian KL between the generation and inversion latents per step."""
    if diag.T != chain.T:
        raise InvalidInputError(f"diagnostics T = {diag.T} but chain T = {chain.T}")
    steps, values, flagged = [], [], []
    for t in range(diag.T, 0, -1):
        steps.append(t)
        try:
            values.append(kl_gaussian_fit(diag.latents[t], chain.latents[t]))
        except DegenerateDistributionError:
            values.append(None)
            flagged.append(t)
    return TraceSeries(steps, values, flagged)


REPLACE_SCORE = 0.5


def score_trace(diag, site: str | None = None) -> TraceSeries:
    """Reference attention share at the bottleneck site per step.

    Replacement steps are reported as 0.5 rather than the literal 1.0 and
    steps without injection as 0.
    """
    site = site or diag.bottleneck_site
    steps, values = [], []
    for t in range(diag.T, 0, -1):
        mode = diag.modes[t]
        if mode is Mode.REPLACE:
            v = REPLACE_SCORE
        elif mode is Mode.OFF:
            v = 0.0
        else:
            v = float(diag.scores[t].get(site, 0.0)) if site else 0.0
        steps.append(t)
        values.append(v)
    return TraceSeries(steps, values)
