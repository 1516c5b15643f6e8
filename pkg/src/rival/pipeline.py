"""Inversion chain, aligned generation chain, and the editing/inpainting
variants built on top of it.

Chain levels are grid indices ``0..T``: level 0 is the clean latent and level
``t`` sits at train timestep ``schedule.timestep(t)``. Generation walks
``t = T, ..., 1`` and every gate (``t_align``, ``t_early``, the edit start
step) compares against that index.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .attention import HiddenStateCache, InjectionContext, InjectionPolicy, Mode, policy_mode
from .denoiser import Condition, Denoiser
from .errors import (
    ConfigurationError,
    DegenerateDistributionError,
    InvalidInputError,
    NumericalDivergenceError,
)
from .latent import (
    adain,
    as_latent,
    kl_gaussian_fit,
    sample_adaptive_gaussian,
    sample_standard_gaussian,
    shuffle_spatial,
    shuffle_within_mask,
    stats,
)
from .schedule import NoiseSchedule, ddim_invert_step, ddim_step

INIT_MODES = ("shuffle", "adaptive", "standard", "copy")
INVERSION_CONDITIONS = ("source-prompt", "empty")


@dataclass(frozen=True)
class RivalConfig:
    """Alignment knobs. Defaults follow the reference settings (T=50, m=7,
    t_align=t_early=30, shuffle init, all modules on)."""

    T: int = 50
    m: float = 7.0
    t_align: int = 30
    t_early: int = 30
    init_mode: str = "shuffle"
    attention_injection: bool = True
    attention_fusion: bool = True
    latent_init: bool = True
    noise_alignment: bool = True
    inversion_condition: str = "source-prompt"
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise InvalidInputError(f"T must be >= 1, got {self.T}")
        if self.m < 0:
            raise InvalidInputError(f"guidance scale m must be >= 0, got {self.m}")
        for name in ("t_align", "t_early"):
            v = getattr(self, name)
            if not 0 <= v <= self.T:
                raise InvalidInputError(f"{name} = {v} violates 0 <= {name} <= T = {self.T}")
        if self.init_mode not in INIT_MODES:
            raise InvalidInputError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.inversion_condition not in INVERSION_CONDITIONS:
            raise InvalidInputError(
                f"inversion_condition must be one of {INVERSION_CONDITIONS}, "
                f"got {self.inversion_condition!r}"
            )

    @property
    def policy(self) -> InjectionPolicy:
        return InjectionPolicy(
            t_align=self.t_align,
            enabled=self.attention_injection,
            fusion_enabled=self.attention_fusion,
        )

    @property
    def effective_init_mode(self) -> str:
        # LI off falls back to N(0, I); copy is a different application, not LI.
        if not self.latent_init and self.init_mode in ("shuffle", "adaptive"):
            return "standard"
        return self.init_mode

    @classmethod
    def ablated(cls, **overrides) -> "RivalConfig":
        """All four modules off, standard init."""
        base = dict(
            attention_injection=False,
            attention_fusion=False,
            latent_init=False,
            noise_alignment=False,
            init_mode="standard",
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class ChainRecord:
    """Inversion chain of a reference latent.

    ``latents[t]`` is the chain latent at level ``t``; ``eps[t]`` and the cache
    hold the reference pass ``denoiser(latents[t], timestep(t), condition)``
    for ``t = 1..T``.
    """

    latents: list[np.ndarray]
    cache: HiddenStateCache
    condition: Condition
    schedule: NoiseSchedule
    denoiser: Denoiser
    eps: dict[int, np.ndarray] | None = None

    @property
    def T(self) -> int:
        return len(self.latents) - 1

    def reference_eps(self, t: int) -> np.ndarray:
        if self.eps is not None and t in self.eps:
            return self.eps[t]
        return self.denoiser.forward(
            self.latents[t], self.schedule.timestep(t), self.condition
        ).eps


@dataclass(frozen=True)
class InpaintSpec:
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 2:
            raise InvalidInputError(f"mask must be (H, W), got {mask.shape}")
        object.__setattr__(self, "mask", mask.astype(bool))


@dataclass
class GenerationDiagnostics:
    T: int
    bottleneck_site: str | None
    latents: dict[int, np.ndarray] = field(default_factory=dict)
    modes: dict[int, Mode] = field(default_factory=dict)
    scores: dict[int, dict[str, float]] = field(default_factory=dict)
    kl: dict[int, float | None] = field(default_factory=dict)


class GenerationResult(NamedTuple):
    latent: np.ndarray
    diagnostics: GenerationDiagnostics


def _guard(latent: np.ndarray, t: int, **tensors) -> None:
    if not np.all(np.isfinite(latent)):
        raise NumericalDivergenceError(
            f"non-finite latent produced at step {t}", dump={"step": t, **tensors}
        )


def invert(x0, cond: Condition, schedule: NoiseSchedule, denoiser: Denoiser,
           record_eps: bool = True) -> ChainRecord:
    """Run DDIM inversion from the clean latent up to level T.

    Each step ``t -> t + 1`` predicts noise on the current latent at the
    destination timestep with plain conditional guidance. After each step the
    new latent gets a reference pass whose hidden states are cached for
    injection and whose noise prediction feeds noise alignment.
    """
    x0 = as_latent(x0, "x0")
    T = schedule.inference_steps
    latents = [x0]
    cache = HiddenStateCache()
    eps_records: dict[int, np.ndarray] = {}
    for t in range(T):
        t_from, t_to = schedule.timestep(t), schedule.timestep(t + 1)
        eps = denoiser.forward(latents[t], t_to, cond).eps
        x = ddim_invert_step(latents[t], eps, t_from, t_to, schedule)
        _guard(x, t + 1, x_prev=latents[t], eps=eps)
        latents.append(x)

        ref = denoiser.forward(x, t_to, cond)
        for site, v in ref.hidden.items():
            cache.capture(site, t + 1, v)
        if record_eps:
            eps_records[t + 1] = ref.eps
    return ChainRecord(
        latents=latents,
        cache=cache,
        condition=cond,
        schedule=schedule,
        denoiser=denoiser,
        eps=eps_records if record_eps else None,
    )


def init_generation_latent(chain: ChainRecord, cfg: RivalConfig, rng: np.random.Generator) -> np.ndarray:
    x_t = chain.latents[-1]
    mode = cfg.effective_init_mode
    if mode == "shuffle":
        return shuffle_spatial(x_t, rng)
    if mode == "adaptive":
        return sample_adaptive_gaussian(stats(x_t), x_t.shape, rng)
    if mode == "standard":
        return sample_standard_gaussian(x_t.shape, rng)
    return x_t.copy()


def cfg_eps(eps_cond, eps_uncond, m: float) -> np.ndarray:
    """``m * eps_cond + (1 - m) * eps_uncond``."""
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise InvalidInputError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    if m == 1:
        return eps_cond.copy()
    if m == 0:
        return eps_uncond.copy()
    return m * eps_cond + (1 - m) * eps_uncond


def aligned_eps(eps_cfg, eps_ref, t: int, cfg: RivalConfig) -> np.ndarray:
    """AdaIN the guided prediction onto the reference prediction while t > t_early."""
    if cfg.noise_alignment and t > cfg.t_early:
        return adain(eps_cfg, eps_ref)
    return np.asarray(eps_cfg, dtype=np.float64)


def _safe_kl(a, b) -> float | None:
    try:
        return kl_gaussian_fit(a, b)
    except DegenerateDistributionError:
        return None


def _generate(
    chain: ChainRecord,
    cond: Condition,
    cfg: RivalConfig,
    x_init: np.ndarray,
    *,
    mask: np.ndarray | None = None,
    interaction_start: int | None = None,
) -> GenerationResult:
    if cfg.T != chain.T:
        raise ConfigurationError(f"config T = {cfg.T} but chain has {chain.T} steps")
    schedule, denoiser = chain.schedule, chain.denoiser
    null = Condition.null(cond.dim)
    policy = cfg.policy
    diag = GenerationDiagnostics(T=chain.T, bottleneck_site=denoiser.bottleneck_site)

    x = x_init
    diag.latents[chain.T] = x
    for t in range(chain.T, 0, -1):
        ts, ts_prev = schedule.timestep(t), schedule.timestep(t - 1)
        interacting = interaction_start is None or t <= interaction_start
        mode = policy_mode(t, policy) if interacting else Mode.OFF
        ctx = InjectionContext.from_cache(chain.cache, denoiser.sites, t, mode)

        out_c = denoiser.forward(x, ts, cond, ctx)
        out_u = denoiser.forward(x, ts, null, ctx)
        eps = cfg_eps(out_c.eps, out_u.eps, cfg.m)
        if interacting and cfg.noise_alignment and t > cfg.t_early:
            eps = aligned_eps(eps, chain.reference_eps(t), t, cfg)

        x_next = ddim_step(x, eps, ts, ts_prev, schedule)
        if mask is not None:
            x_next = np.where(mask, x_next, chain.latents[t - 1])
        _guard(x_next, t - 1, x=x, eps=eps, eps_cond=out_c.eps, eps_uncond=out_u.eps)

        diag.modes[t] = mode
        diag.scores[t] = dict(out_c.scores)
        diag.kl[t] = _safe_kl(x, chain.latents[t])
        x = x_next
        diag.latents[t - 1] = x
    return GenerationResult(x, diag)


def rival_generate(chain: ChainRecord, cond: Condition, cfg: RivalConfig,
                   rng: np.random.Generator) -> GenerationResult:
    """Generate a variation of the chain's reference latent."""
    x_init = init_generation_latent(chain, cfg, rng)
    return _generate(chain, cond, cfg, x_init)


def inpaint_generate(chain: ChainRecord, spec: InpaintSpec, cond: Condition, cfg: RivalConfig,
                     rng: np.random.Generator) -> GenerationResult:
    """Regenerate the masked region; unmasked positions track the inversion chain."""
    x_t = chain.latents[-1]
    if spec.mask.shape != x_t.shape[1:]:
        raise InvalidInputError(f"mask shape {spec.mask.shape} does not match latent {x_t.shape[1:]}")
    x_init = shuffle_within_mask(x_t, spec.mask, rng)
    return _generate(chain, cond, cfg, x_init, mask=spec.mask)


def edit_generate(chain: ChainRecord, new_cond: Condition, cfg: RivalConfig,
                  interaction_start: int = 45) -> GenerationResult:
    """Structure-preserving edit: both chains start from the inverted latent.

    Injection and noise alignment only act on steps ``t <= interaction_start``.
    """
    if not 0 <= interaction_start <= chain.T:
        raise InvalidInputError(f"interaction_start {interaction_start} outside 0..{chain.T}")
    cfg = replace(cfg, init_mode="copy")
    x_init = chain.latents[-1].copy()
    return _generate(chain, new_cond, cfg, x_init, interaction_start=interaction_start)


def ddim_sample(x_t, cond: Condition, schedule: NoiseSchedule, denoiser: Denoiser,
                m: float = 1.0) -> np.ndarray:
    """Plain CFG-DDIM sampling from level T to the clean latent, no alignment."""
    x = as_latent(x_t)
    null = Condition.null(cond.dim)
    for t in range(schedule.inference_steps, 0, -1):
        ts, ts_prev = schedule.timestep(t), schedule.timestep(t - 1)
        eps = denoiser.forward(x, ts, cond).eps
        if m != 1:
            eps = cfg_eps(eps, denoiser.forward(x, ts, null).eps, m)
        x = ddim_step(x, eps, ts, ts_prev, schedule)
    return x
