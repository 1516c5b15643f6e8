"""Training-free image variation by aligning a generation chain with the
DDIM inversion chain of a reference latent."""

from .attention import HiddenStateCache, InjectionPolicy, Mode, injected_attention, policy_mode
from .denoiser import AnalyticGaussianDenoiser, Condition, ToyAttentionDenoiser
from .latent import (
    LatentStats,
    adain,
    kl_gaussian_fit,
    sample_adaptive_gaussian,
    sample_standard_gaussian,
    seeded_rng,
    shuffle_spatial,
    stats,
)
from .pipeline import (
    ChainRecord,
    InpaintSpec,
    RivalConfig,
    aligned_eps,
    cfg_eps,
    edit_generate,
    init_generation_latent,
    inpaint_generate,
    invert,
    rival_generate,
)
from .schedule import NoiseSchedule, build_schedule, ddim_invert_step, ddim_step

__version__ = "0.1.0"

__all__ = [
    "adain",
    "aligned_eps",
    "AnalyticGaussianDenoiser",
    "build_schedule",
    "cfg_eps",
    "ChainRecord",
    "Condition",
    "ddim_invert_step",
    "ddim_step",
    "edit_generate",
    "HiddenStateCache",
    "init_generation_latent",
    "injected_attention",
    "InjectionPolicy",
    "inpaint_generate",
    "InpaintSpec",
    "invert",
    "kl_gaussian_fit",
    "LatentStats",
    "Mode",
    "NoiseSchedule",
    "policy_mode",
    "rival_generate",
    "RivalConfig",
    "sample_adaptive_gaussian",
    "sample_standard_gaussian",
    "seeded_rng",
    "shuffle_spatial",
    "stats",
    "ToyAttentionDenoiser",
]
