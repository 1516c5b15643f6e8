"""Noise predictors: a closed-form Gaussian oracle and a small seeded
attention network that exposes its hidden states."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .attention import AttentionWeights, InjectionContext, Mode, injected_attention
from .errors import ConfigurationError, InvalidInputError
from .latent import seeded_rng
from .schedule import CLEAN, NoiseSchedule


@dataclass(frozen=True)
class Condition:
    embedding: np.ndarray
    is_null: bool = False

    @classmethod
    def null(cls, dim: int = 16) -> "Condition":
        return cls(np.zeros(dim), is_null=True)

    @classmethod
    def from_seed(cls, seed: int, dim: int = 16) -> "Condition":
        """Stand-in for a prompt embedding: a seeded standard-normal vector."""
        return cls(seeded_rng(seed).standard_normal(dim))

    @property
    def dim(self) -> int:
        return len(self.embedding)

    def __eq__(self, other):
        if not isinstance(other, Condition):
            return NotImplemented
        return self.is_null == other.is_null and np.array_equal(self.embedding, other.embedding)

    def __hash__(self):
        return hash((self.is_null, self.embedding.tobytes()))


@dataclass
class DenoiserOutput:
    eps: np.ndarray
    hidden: dict[str, np.ndarray] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)


class Denoiser(Protocol):
    sites: tuple[str, ...]
    bottleneck_site: str | None

    def forward(
        self, x: np.ndarray, t: int, cond: Condition, context: InjectionContext | None = None
    ) -> DenoiserOutput: ...

    def describe(self) -> dict[str, str]: ...


class AnalyticGaussianDenoiser:
    """Optimal noise prediction for data ``x0 ~ N(mu0, s0**2 I)``.

    The condition is ignored and there are no attention sites.
    """

    sites: tuple[str, ...] = ()
    bottleneck_site = None

    def __init__(self, mu0, s0: float, schedule: NoiseSchedule):
        self.mu0 = np.atleast_1d(np.asarray(mu0, dtype=np.float64))
        if s0 <= 0:
            raise InvalidInputError(f"s0 must be positive, got {s0}")
        self.s0 = float(s0)
        self.schedule = schedule

    @property
    def channels(self) -> int:
        return len(self.mu0)

    def posterior_mean(self, x: np.ndarray, a: float) -> np.ndarray:
        mu = self.mu0[:, None, None]
        gain = np.sqrt(a) * self.s0**2 / (a * self.s0**2 + 1.0 - a)
        return mu + gain * (x - np.sqrt(a) * mu)

    def forward(self, x, t, cond=None, context=None) -> DenoiserOutput:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != self.channels:
            raise ConfigurationError(
                f"analytic denoiser has {self.channels} channels, got input {x.shape}"
            )
        if t == CLEAN or not self.schedule.on_grid(t):
            raise InvalidInputError(f"timestep {t} is not a noisy grid timestep")
        a = self.schedule.alpha_bar_at(t)
        eps = (x - np.sqrt(a) * self.posterior_mean(x, a)) / np.sqrt(1.0 - a)
        return DenoiserOutput(eps)

    def describe(self) -> dict[str, str]:
        return {
            "denoiser.kind": "analytic",
            "denoiser.mu0": ",".join(repr(float(v)) for v in self.mu0),
            "denoiser.s0": repr(self.s0),
            "denoiser.channels": str(self.channels),
        }


def analytic_eps(x, t, s: NoiseSchedule, mu0, s0) -> np.ndarray:
    return AnalyticGaussianDenoiser(mu0, s0, s).forward(x, t).eps


def layer_norm(h: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = h.mean(axis=1, keepdims=True)
    var = h.var(axis=1, keepdims=True)
    return (h - mu) / np.sqrt(var + eps)


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)])
    return np.pad(emb, (0, dim - emb.size))


class ToyAttentionDenoiser:
    """Untrained network: token mix, ``n_sites`` self-attention blocks, token mix.

    Every pixel is a token. The condition enters as a projected bias on all
    tokens. Key projections are the query projections plus a perturbation, so
    logits track token similarity the way trained attention tends to.
    The hidden state reported for a site is its layer-normed input tokens,
    i.e. exactly what the Q/K/V projections see.

    With a schedule the network output is a residual on top of the unit
    Gaussian noise prediction ``sqrt(1 - alpha_bar) * x``, which keeps
    inversion and sampling chains bounded; without one the skip is ``x``.
    """

    def __init__(
        self,
        channels: int = 3,
        height: int = 8,
        width: int = 8,
        seed: int = 0,
        dim: int = 16,
        cond_dim: int = 16,
        n_sites: int = 2,
        schedule: NoiseSchedule | None = None,
        residual_scale: float = 0.5,
    ):
        if n_sites < 1:
            raise InvalidInputError("toy denoiser needs at least one attention site")
        self.channels, self.height, self.width = channels, height, width
        self.seed, self.dim, self.cond_dim = int(seed), dim, cond_dim
        self.schedule = schedule
        self.residual_scale = float(residual_scale)
        self.sites = tuple(f"attn.{i}" for i in range(n_sites))
        self.bottleneck_site = self.sites[-1]

        rng = seeded_rng(seed)
        d = dim

        def mat(rows, cols, gain=1.0):
            return gain * rng.standard_normal((rows, cols)) / np.sqrt(rows)

        self.w_in = mat(channels, d)
        self.b_in = 0.1 * rng.standard_normal(d)
        self.w_cond = mat(cond_dim, d)
        self.w_time = mat(d, d, 0.5)
        self.attn: dict[str, AttentionWeights] = {}
        self.w_mix: dict[str, np.ndarray] = {}
        for site in self.sites:
            w_q = mat(d, d)
            w_k = w_q + mat(d, d, 0.3)
            self.attn[site] = AttentionWeights(w_q=w_q, w_k=w_k, w_v=mat(d, d), w_o=mat(d, d, 0.5))
            self.w_mix[site] = mat(d, d, 0.5)
        self.w_out = mat(d, channels, 0.5)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    def _check_context(self, context: InjectionContext | None) -> InjectionContext:
        if context is None:
            return InjectionContext()
        if context.mode is Mode.OFF:
            return context
        names = set(context.references)
        if names != set(self.sites):
            raise ConfigurationError(
                f"injection context sites {sorted(names)} do not match model sites {list(self.sites)}"
            )
        return context

    def forward(self, x, t, cond: Condition, context=None) -> DenoiserOutput:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.shape:
            raise ConfigurationError(f"toy denoiser expects {self.shape}, got {x.shape}")
        if cond.dim != self.cond_dim:
            raise ConfigurationError(f"condition dim {cond.dim} != {self.cond_dim}")
        context = self._check_context(context)

        tokens = x.reshape(self.channels, -1).T
        bias = self.b_in + cond.embedding @ self.w_cond + timestep_embedding(t, self.dim) @ self.w_time
        h = tokens @ self.w_in + bias

        hidden, scores = {}, {}
        for site in self.sites:
            v = layer_norm(h)
            hidden[site] = v
            ref = context.references.get(site)
            out, scores[site] = injected_attention(v, ref, context.mode, self.attn[site])
            h = h + out
            h = h + np.tanh(layer_norm(h) @ self.w_mix[site])

        skip = tokens
        if self.schedule is not None:
            skip = np.sqrt(1.0 - self.schedule.alpha_bar_at(t)) * tokens
        eps_tokens = skip + self.residual_scale * (layer_norm(h) @ self.w_out)
        return DenoiserOutput(np.ascontiguousarray(eps_tokens.T).reshape(self.shape), hidden, scores)

    def describe(self) -> dict[str, str]:
        return {
            "denoiser.kind": "toy",
            "denoiser.seed": str(self.seed),
            "denoiser.channels": str(self.channels),
            "denoiser.size": f"{self.height}x{self.width}",
            "denoiser.dim": str(self.dim),
            "denoiser.cond_dim": str(self.cond_dim),
            "denoiser.sites": str(len(self.sites)),
            "denoiser.residual_scale": repr(self.residual_scale),
            "denoiser.prior_skip": str(self.schedule is not None).lower(),
        }


def build_denoiser(params: dict[str, str], schedule: NoiseSchedule):
    """Rebuild a denoiser from the ``denoiser.*`` keys written by ``describe``."""
    kind = params.get("denoiser.kind", "toy")
    channels = int(params.get("denoiser.channels", 3))
    if kind == "analytic":
        mu0 = [float(v) for v in params.get("denoiser.mu0", "0").split(",")]
        if len(mu0) == 1:
            mu0 = mu0 * channels
        if len(mu0) != channels:
            raise ConfigurationError(f"denoiser.mu0 has {len(mu0)} entries for {channels} channels")
        return AnalyticGaussianDenoiser(mu0, float(params.get("denoiser.s0", 1.0)), schedule)
    if kind == "toy":
        size = params.get("denoiser.size", "8x8")
        h, _, w = size.partition("x")
        return ToyAttentionDenoiser(
            channels=channels,
            height=int(h),
            width=int(w or h),
            seed=int(params.get("denoiser.seed", 0)),
            dim=int(params.get("denoiser.dim", 16)),
            cond_dim=int(params.get("denoiser.cond_dim", 16)),
            n_sites=int(params.get("denoiser.sites", 2)),
            schedule=schedule if params.get("denoiser.prior_skip", "true") == "true" else None,
            residual_scale=float(params.get("denoiser.residual_scale", 0.5)),
        )
    raise ConfigurationError(f"unknown denoiser kind {kind!r}")
