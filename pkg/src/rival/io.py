"""Files: PNG rasters, the identity pixel codec, run configs, atomic writes."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, fields
from io import BytesIO
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigParseError, ConfigurationError, FormatError, InvalidInputError

# -- atomic writes -------------------------------------------------------------


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# -- images ----------------------------------------------------------------------


def _open_png(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"{path}: not a readable PNG ({exc})") from None
    if img.format != "PNG":
        raise FormatError(f"{path}: expected PNG container, got {img.format}")
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG into a ``(H, W, 3)`` uint8 array."""
    img = _open_png(path)
    if img.mode != "RGB":
        raise FormatError(f"{path}: unsupported mode {img.mode!r}, need 8-bit RGB")
    return np.asarray(img, dtype=np.uint8).copy()


def save_image(raster: np.ndarray, path) -> None:
    raster = np.asarray(raster)
    if raster.dtype != np.uint8 or raster.ndim != 3 or raster.shape[2] != 3:
        raise FormatError(f"save_image needs (H, W, 3) uint8, got {raster.shape} {raster.dtype}")
    buf = BytesIO()
    Image.fromarray(raster, mode="RGB").save(buf, format="PNG")
    atomic_write_bytes(Path(path), buf.getvalue())


def load_mask(path) -> np.ndarray:
    """Boolean ``(H, W)`` mask; any nonzero channel marks a pixel for regeneration."""
    img = _open_png(path)
    if img.mode not in ("1", "L", "RGB", "RGBA", "P"):
        raise FormatError(f"{path}: unsupported mask mode {img.mode!r}")
    if img.mode == "P":
        img = img.convert("RGB")
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., :3].any(axis=2)
    return arr.astype(bool)


# -- pixel codec -------------------------------------------------------------------


@dataclass(frozen=True)
class PixelCodec:
    """Linear map between 8-bit pixels and latents in ``[-1, 1]``."""

    channels: int = 3

    def encode(self, raster: np.ndarray) -> np.ndarray:
        raster = np.asarray(raster)
        if raster.ndim != 3 or raster.shape[2] != self.channels:
            raise ConfigurationError(
                f"codec expects {self.channels} channels, got raster {raster.shape}"
            )
        return np.ascontiguousarray(raster.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0)

    def decode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != self.channels:
            raise ConfigurationError(f"codec expects {self.channels} channels, got latent {x.shape}")
        pixels = np.rint((np.clip(x, -1.0, 1.0) + 1.0) * 127.5)
        return pixels.astype(np.uint8).transpose(1, 2, 0)


def encode_latent(raster, codec: PixelCodec | None = None) -> np.ndarray:
    return (codec or PixelCodec()).encode(raster)


def decode_latent(x, codec: PixelCodec | None = None) -> np.ndarray:
    return (codec or PixelCodec()).decode(x)


# -- run config ----------------------------------------------------------------------


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


# key -> (attribute, parser, default)
_KEYS: dict[str, tuple[str, object, object]] = {
    "train_steps": ("train_steps", int, 1000),
    "inference_steps": ("inference_steps", int, 50),
    "beta_start": ("beta_start", float, 0.00085),
    "beta_end": ("beta_end", float, 0.012),
    "spacing": ("spacing", _choice("leading", "linspace"), "leading"),
    "m": ("m", float, 7.0),
    "t_align": ("t_align", int, 30),
    "t_early": ("t_early", int, 30),
    "init_mode": ("init_mode", _choice("shuffle", "adaptive", "standard", "copy"), "shuffle"),
    "attention_injection": ("attention_injection", _bool, True),
    "attention_fusion": ("attention_fusion", _bool, True),
    "latent_init": ("latent_init", _bool, True),
    "noise_alignment": ("noise_alignment", _bool, True),
    "inversion_condition": ("inversion_condition", _choice("source-prompt", "empty"), "source-prompt"),
    "seed": ("seed", int, 0),
    "denoiser.kind": ("denoiser_kind", _choice("analytic", "toy"), "toy"),
    "denoiser.seed": ("denoiser_seed", int, 0),
    "denoiser.mu0": ("denoiser_mu0", _floats, (0.0,)),
    "denoiser.s0": ("denoiser_s0", float, 1.0),
    "denoiser.channels": ("denoiser_channels", int, 3),
    "denoiser.size": ("denoiser_size", int, 32),
    "denoiser.dim": ("denoiser_dim", int, 16),
    "denoiser.sites": ("denoiser_sites", int, 2),
    "denoiser.residual_scale": ("denoiser_residual_scale", float, 0.5),
    "condition.seed": ("condition_seed", int, 1),
    "condition.dim": ("condition_dim", int, 16),
    "edit.condition_seed": ("edit_condition_seed", int, 2),
    "edit.start_step": ("edit_start_step", int, 45),
    "palette.k": ("palette_k", int, 10),
    "palette.iters": ("palette_iters", int, 50),
}


@dataclass(frozen=True)
class RunConfig:
    train_steps: int = 1000
    inference_steps: int = 50
    beta_start: float = 0.00085
    beta_end: float = 0.012
    spacing: str = "leading"
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
    denoiser_kind: str = "toy"
    denoiser_seed: int = 0
    denoiser_mu0: tuple[float, ...] = (0.0,)
    denoiser_s0: float = 1.0
    denoiser_channels: int = 3
    denoiser_size: int = 32
    denoiser_dim: int = 16
    denoiser_sites: int = 2
    denoiser_residual_scale: float = 0.5
    condition_seed: int = 1
    condition_dim: int = 16
    edit_condition_seed: int = 2
    edit_start_step: int = 45
    palette_k: int = 10
    palette_iters: int = 50

    def validate(self) -> list[tuple[str, str]]:
        """Return ``(key, message)`` for every violated range constraint."""
        T = self.inference_steps
        problems = []

        def need(ok, key, msg):
            if not ok:
                problems.append((key, msg))

        need(self.train_steps >= 1, "train_steps", "train_steps must be >= 1")
        need(1 <= T <= self.train_steps, "inference_steps",
             f"inference_steps = {T} violates 1 <= inference_steps <= train_steps = {self.train_steps}")
        need(0 < self.beta_start <= self.beta_end < 1, "beta_start",
             "need 0 < beta_start <= beta_end < 1")
        need(self.m >= 0, "m", f"m = {self.m} violates m >= 0")
        need(0 <= self.t_align <= T, "t_align", f"t_align = {self.t_align} violates 0 <= t_align <= T = {T}")
        need(0 <= self.t_early <= T, "t_early", f"t_early = {self.t_early} violates 0 <= t_early <= T = {T}")
        need(0 <= self.edit_start_step <= T, "edit.start_step",
             f"edit.start_step = {self.edit_start_step} violates 0 <= edit.start_step <= T = {T}")
        need(self.denoiser_s0 > 0, "denoiser.s0", "denoiser.s0 must be > 0")
        need(self.denoiser_channels >= 1, "denoiser.channels", "denoiser.channels must be >= 1")
        need(self.denoiser_size >= 1, "denoiser.size", "denoiser.size must be >= 1")
        need(self.denoiser_dim >= 2, "denoiser.dim", "denoiser.dim must be >= 2")
        need(self.denoiser_sites >= 1, "denoiser.sites", "denoiser.sites must be >= 1")
        need(self.condition_dim >= 1, "condition.dim", "condition.dim must be >= 1")
        need(len(self.denoiser_mu0) in (1, self.denoiser_channels), "denoiser.mu0",
             "denoiser.mu0 needs 1 or denoiser.channels values")
        need(self.palette_k >= 1, "palette.k", "palette.k must be >= 1")
        need(self.palette_iters >= 1, "palette.iters", "palette.iters must be >= 1")
        return problems

    def rival(self):
        from .pipeline import RivalConfig

        return RivalConfig(
            T=self.inference_steps,
            m=self.m,
            t_align=self.t_align,
            t_early=self.t_early,
            init_mode=self.init_mode,
            attention_injection=self.attention_injection,
            attention_fusion=self.attention_fusion,
            latent_init=self.latent_init,
            noise_alignment=self.noise_alignment,
            inversion_condition=self.inversion_condition,
            seed=self.seed,
        )

    def schedule(self):
        from .schedule import build_schedule

        return build_schedule(
            self.train_steps, self.inference_steps, self.beta_start, self.beta_end, self.spacing
        )

    def denoiser_params(self) -> dict[str, str]:
        mu0 = self.denoiser_mu0
        if len(mu0) == 1:
            mu0 = mu0 * self.denoiser_channels
        return {
            "denoiser.kind": self.denoiser_kind,
            "denoiser.seed": str(self.denoiser_seed),
            "denoiser.mu0": ",".join(repr(v) for v in mu0),
            "denoiser.s0": repr(self.denoiser_s0),
            "denoiser.channels": str(self.denoiser_channels),
            "denoiser.size": f"{self.denoiser_size}x{self.denoiser_size}",
            "denoiser.dim": str(self.denoiser_dim),
            "denoiser.cond_dim": str(self.condition_dim),
            "denoiser.sites": str(self.denoiser_sites),
            "denoiser.residual_scale": repr(self.denoiser_residual_scale),
            "denoiser.prior_skip": "true",
        }

    def to_text(self) -> str:
        lines = []
        for key, (attr, _, _) in _KEYS.items():
            v = getattr(self, attr)
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


assert {a for a, _, _ in _KEYS.values()} == {f.name for f in fields(RunConfig)}


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Raises:
        ConfigParseError: unknown key, malformed value, duplicate key, or a
            range violation; the message carries the offending line number.
    """
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    items = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        items.append((key, value, lineno))
    for key, value in (overrides or {}).items():
        items.append((key, str(value), None))

    for key, value, lineno in items:
        if key not in _KEYS:
            raise ConfigParseError(f"unknown key {key!r}", lineno)
        if key in lines and lineno is not None:
            raise ConfigParseError(f"duplicate key {key!r} (first on line {lines[key]})", lineno)
        attr, parser, _ = _KEYS[key]
        try:
            values[attr] = parser(value)
        except ValueError as exc:
            raise ConfigParseError(f"bad value for {key}: {exc}", lineno) from None
        if lineno is not None:
            lines[key] = lineno

    cfg = RunConfig(**values)
    problems = cfg.validate()
    if problems:
        key, msg = problems[0]
        raise ConfigParseError(msg, lines.get(key))
    return cfg


def parse_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"), overrides)
