"""Cross-image self-attention: hidden-state cache, injection policy, and the
KV-replacing / KV-fusing attention kernel."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, InvalidInputError, MissingCacheError


class Mode(str, enum.Enum):
    OFF = "off"
    REPLACE = "replace"
    FUSE = "fuse"


@dataclass(frozen=True)
class InjectionPolicy:
    t_align: int = 30
    enabled: bool = True
    fusion_enabled: bool = True

    def __post_init__(self):
        if self.t_align < 0:
            raise InvalidInputError(f"t_align must be >= 0, got {self.t_align}")


def policy_mode(t: int, policy: InjectionPolicy) -> Mode:
    """KV source for generation step ``t`` (grid index, counting down from T).

    Reference-only keys while ``t > t_align``, concatenated keys afterwards.
    With fusion disabled the replacement continues to the end.
    """
    if not policy.enabled:
        return Mode.OFF
    if t > policy.t_align or not policy.fusion_enabled:
        return Mode.REPLACE
    return Mode.FUSE


@dataclass(frozen=True)
class AttentionWeights:
    """Frozen projections of one self-attention site; all map d -> d."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def injected_attention(
    v_g: np.ndarray,
    v_r: np.ndarray | None,
    mode: Mode,
    weights: AttentionWeights,
    return_probs: bool = False,
):
    """Self-attention whose keys and values may come from the reference chain.

    Queries always come from ``v_g``. Keys/values come from ``v_g`` (OFF),
    ``v_r`` (REPLACE) or ``[v_g; v_r]`` stacked along the token axis (FUSE).

    Args:
        v_g: generation tokens, shape ``(N, d)``.
        v_r: reference tokens, shape ``(M, d)``; ignored in OFF mode.
        mode: KV source.
        weights: projections of the site.
        return_probs: also return the post-softmax matrix.

    Returns:
        ``(out, score_r)`` where ``score_r`` is the mean over queries of the
        attention mass on reference-sourced keys, or ``(out, score_r, probs)``.
    """
    mode = Mode(mode)
    d = weights.dim
    v_g = np.asarray(v_g, dtype=np.float64)
    if v_g.ndim != 2 or v_g.shape[1] != d:
        raise ConfigurationError(f"generation tokens {v_g.shape} do not fit site dim {d}")
    if mode is Mode.OFF:
        kv_src = v_g
    else:
        if v_r is None:
            raise ConfigurationError(f"{mode.value} mode needs reference tokens")
        v_r = np.asarray(v_r, dtype=np.float64)
        if v_r.ndim != 2 or v_r.shape[1] != d:
            raise ConfigurationError(f"reference tokens {v_r.shape} do not fit site dim {d}")
        kv_src = v_r if mode is Mode.REPLACE else np.concatenate([v_g, v_r], axis=0)

    q = v_g @ weights.w_q
    k = kv_src @ weights.w_k
    v = kv_src @ weights.w_v
    probs = _softmax_rows(q @ k.T / np.sqrt(k.shape[1]))
    out = (probs @ v) @ weights.w_o

    if mode is Mode.OFF:
        score = 0.0
    elif mode is Mode.REPLACE:
        score = 1.0
    else:
        score = float(probs[:, v_g.shape[0]:].sum(axis=1).mean())
    if return_probs:
        return out, score, probs
    return out, score


@dataclass
class HiddenStateCache:
    """Reference tokens per (site, step) captured along the inversion chain."""

    entries: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def capture(self, site: str, t: int, v: np.ndarray) -> None:
        key = (site, int(t))
        if key in self.entries:
            raise InvalidInputError(f"hidden state for {site!r} at step {t} captured twice")
        arr = np.array(v, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        self.entries[key] = arr

    def lookup(self, site: str, t: int) -> np.ndarray:
        try:
            return self.entries[(site, int(t))]
        except KeyError:
            raise MissingCacheError(
                f"no reference hidden state for site {site!r} at step {t}"
            ) from None

    @property
    def sites(self) -> list[str]:
        return sorted({s for s, _ in self.entries})

    @property
    def steps(self) -> list[int]:
        return sorted({t for _, t in self.entries})

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class InjectionContext:
    """Per-call instruction to a denoiser: KV mode plus reference tokens per site."""

    mode: Mode = Mode.OFF
    references: Mapping[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_cache(cls, cache: HiddenStateCache, sites, t: int, mode: Mode) -> "InjectionContext":
        if mode is Mode.OFF:
            return cls(Mode.OFF, {})
        return cls(mode, {site: cache.lookup(site, t) for site in sites})
