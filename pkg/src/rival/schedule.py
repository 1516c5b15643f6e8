"""Noise schedules and the per-step transition maps.

Timesteps passed to the step functions are train timesteps. The clean end of
a chain is the sentinel timestep ``CLEAN = -1`` with cumulative alpha 1, so a
chain of ``T`` inference steps visits ``T + 1`` levels: ``schedule.levels``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

CLEAN = -1


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete variance schedule plus an inference grid.

    Attributes:
        k: per-train-step variances, shape ``(train_steps,)``.
        alpha_bar: cumulative products ``prod(1 - k[:t+1])``.
        ddim_beta: ``sqrt(1 / alpha_bar - 1)``.
        grid: increasing train timesteps used for inference, length ``T``.
    """

    k: np.ndarray
    alpha_bar: np.ndarray
    ddim_beta: np.ndarray
    grid: tuple[int, ...]
    beta_start: float | None = None
    beta_end: float | None = None
    spacing: str | None = None
    _level_set: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_level_set", frozenset((CLEAN, *self.grid)))

    @property
    def train_steps(self) -> int:
        return len(self.alpha_bar)

    @property
    def inference_steps(self) -> int:
        return len(self.grid)

    @property
    def levels(self) -> tuple[int, ...]:
        """Train timestep of every chain level; index 0 is the clean latent."""
        return (CLEAN, *self.grid)

    def timestep(self, level: int) -> int:
        if not 0 <= level <= self.inference_steps:
            raise InvalidInputError(f"level {level} outside 0..{self.inference_steps}")
        return CLEAN if level == 0 else self.grid[level - 1]

    def on_grid(self, t: int) -> bool:
        return t in self._level_set

    def alpha_bar_at(self, t: int) -> float:
        return 1.0 if t == CLEAN else float(self.alpha_bar[self._check(t)])

    def beta_at(self, t: int) -> float:
        return 0.0 if t == CLEAN else float(self.ddim_beta[self._check(t)])

    def _check(self, t: int) -> int:
        if not 0 <= t < self.train_steps:
            raise InvalidInputError(f"timestep {t} outside 0..{self.train_steps - 1}")
        return t

    @classmethod
    def from_alpha_bar(cls, alpha_bar, grid=None) -> "NoiseSchedule":
        """Build from cumulative alphas directly (used for hand-sized cases)."""
        alpha_bar = np.asarray(alpha_bar, dtype=np.float64)
        if alpha_bar.ndim != 1 or alpha_bar.size == 0:
            raise InvalidInputError("alpha_bar must be a non-empty vector")
        if np.any(alpha_bar <= 0) or np.any(alpha_bar > 1):
            raise InvalidInputError("alpha_bar must lie in (0, 1]")
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        k = 1.0 - alpha_bar / prev
        grid = tuple(range(len(alpha_bar))) if grid is None else tuple(int(g) for g in grid)
        _check_grid(grid, len(alpha_bar))
        return cls(k=k, alpha_bar=alpha_bar, ddim_beta=np.sqrt(1.0 / alpha_bar - 1.0), grid=grid)


def _check_grid(grid, train_steps):
    if not grid:
        raise InvalidInputError("empty timestep grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidInputError("timestep grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] >= train_steps:
        raise InvalidInputError("timestep grid leaves the train range")


def build_schedule(
    train_steps: int = 1000,
    inference_steps: int = 50,
    beta_start: float = 0.00085,
    beta_end: float = 0.012,
    spacing: str = "leading",
) -> NoiseSchedule:
    """Scaled-linear schedule: linear in sqrt space, then squared.

    ``spacing="leading"`` gives the grid ``0, s, 2s, ...`` with stride
    ``s = train_steps // inference_steps``; ``"linspace"`` spreads the grid
    evenly over ``[0, train_steps - 1]`` and rounds.
    """
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidInputError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    if not 1 <= inference_steps <= train_steps:
        raise InvalidInputError(
            f"need 1 <= inference_steps <= train_steps, got {inference_steps}, {train_steps}"
        )
    k = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), train_steps, dtype=np.float64) ** 2
    alpha_bar = np.cumprod(1.0 - k)
    if spacing == "leading":
        stride = train_steps // inference_steps
        grid = tuple(int(i * stride) for i in range(inference_steps))
    elif spacing == "linspace":
        grid = tuple(int(round(v)) for v in np.linspace(0, train_steps - 1, inference_steps))
    else:
        raise InvalidInputError(f"unknown spacing policy {spacing!r}")
    _check_grid(grid, train_steps)
    return NoiseSchedule(
        k=k,
        alpha_bar=alpha_bar,
        ddim_beta=np.sqrt(1.0 / alpha_bar - 1.0),
        grid=grid,
        beta_start=beta_start,
        beta_end=beta_end,
        spacing=spacing,
    )


def forward_diffuse(x0, t: int, w, s: NoiseSchedule) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x0.shape != w.shape:
        raise InvalidInputError(f"shape mismatch {x0.shape} vs {w.shape}")
    if not 0 <= t < s.train_steps:
        raise InvalidInputError(f"timestep {t} outside 0..{s.train_steps - 1}")
    a = s.alpha_bar_at(t)
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * w


def ddim_transition(x, eps, alpha_from: float, alpha_to: float) -> np.ndarray:
    """Deterministic DDIM map between two cumulative-alpha levels.

    Works in either direction; ``alpha_to > alpha_from`` denoises.
    """
    beta_from = np.sqrt(1.0 / alpha_from - 1.0)
    beta_to = np.sqrt(1.0 / alpha_to - 1.0)
    return np.sqrt(alpha_to / alpha_from) * x + np.sqrt(alpha_to) * (beta_to - beta_from) * eps


def _grid_pair(s: NoiseSchedule, t_from: int, t_to: int):
    for t in (t_from, t_to):
        if not s.on_grid(t):
            raise InvalidInputError(f"timestep {t} is not on the inference grid")
    return s.alpha_bar_at(t_from), s.alpha_bar_at(t_to)


def ddim_step(x_t, eps, t_from: int, t_to: int, s: NoiseSchedule) -> np.ndarray:
    """One denoising step from ``t_from`` down to ``t_to``."""
    if not t_to < t_from:
        raise InvalidInputError(f"ddim_step needs t_to < t_from, got {t_to} >= {t_from}")
    a_from, a_to = _grid_pair(s, t_from, t_to)
    return ddim_transition(np.asarray(x_t, np.float64), np.asarray(eps, np.float64), a_from, a_to)


def ddim_invert_step(x_t, eps, t_from: int, t_to: int, s: NoiseSchedule) -> np.ndarray:
    """One inversion step from ``t_from`` up to the noisier ``t_to``."""
    if not t_to > t_from:
        raise InvalidInputError(f"ddim_invert_step needs t_to > t_from, got {t_to} <= {t_from}")
    a_from, a_to = _grid_pair(s, t_from, t_to)
    return ddim_transition(np.asarray(x_t, np.float64), np.asarray(eps, np.float64), a_from, a_to)


def ddpm_mean(x_t, eps, k_t: float, alpha_bar_t: float) -> np.ndarray:
    return (x_t - k_t / np.sqrt(1.0 - alpha_bar_t) * eps) / np.sqrt(1.0 - k_t)


def ddpm_step(x_t, eps, t: int, rng: np.random.Generator | None, s: NoiseSchedule) -> np.ndarray:
    """Ancestral step ``t -> t - 1`` with fixed variance ``sigma_t**2 = k_t``.

    ``rng=None`` forces ``z = 0``. No noise is added at ``t = 0``.
    """
    if t == CLEAN or not s.on_grid(t):
        raise InvalidInputError(f"timestep {t} is not on the inference grid")
    x_t = np.asarray(x_t, dtype=np.float64)
    k_t = float(s.k[t])
    mean = ddpm_mean(x_t, np.asarray(eps, np.float64), k_t, s.alpha_bar_at(t))
    if t == 0 or rng is None:
        return mean
    return mean + np.sqrt(k_t) * rng.standard_normal(x_t.shape)
