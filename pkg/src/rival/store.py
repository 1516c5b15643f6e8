"""On-disk layout for inversion chains and generation diagnostics.

Chain directory::

    manifest.txt              key = value lines
    latents/level_000.rivl    one latent per chain level 0..T
    eps/level_001.rivl        reference noise predictions, levels 1..T
    cache/<site>/step_001.rivl  reference hidden states, stored as (1, N, d)

Diagnostics directory::

    meta.txt                  T and bottleneck site
    steps.csv                 step,mode,<site>... one row per generation step
    latents/level_000.rivl    generation latents, levels 0..T
"""

from __future__ import annotations

import csv
import io
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .attention import HiddenStateCache, Mode
from .denoiser import Condition, build_denoiser
from .errors import FormatError
from .io import atomic_write_text
from .latent import load_tensor, save_tensor
from .pipeline import ChainRecord, GenerationDiagnostics
from .schedule import build_schedule

CHAIN_FORMAT = "rival-chain/1"


def _write_kv(path: Path, items: dict[str, str]) -> None:
    atomic_write_text(path, "".join(f"{k} = {v}\n" for k, v in items.items()))


def _read_kv(path: Path) -> dict[str, str]:
    if not path.exists():
        raise FormatError(f"missing {path.name} in {path.parent}")
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            k, sep, v = line.partition("=")
            if not sep:
                raise FormatError(f"{path}: malformed line {line!r}")
            out[k.strip()] = v.strip()
    return out


def _publish(tmp: Path, final: Path) -> None:
    """Move a fully written temp directory into place."""
    final = Path(final)
    if final.exists():
        old = final.with_name(f".{final.name}.old")
        if old.exists():
            shutil.rmtree(old)
        final.rename(old)
        tmp.rename(final)
        shutil.rmtree(old)
    else:
        tmp.rename(final)


def _staging_dir(final: Path) -> Path:
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(dir=final.parent, prefix=f".{final.name}."))


def save_chain(chain: ChainRecord, path) -> None:
    s = chain.schedule
    if s.beta_start is None:
        raise FormatError("only schedules built by build_schedule can be persisted")
    tmp = _staging_dir(path)
    try:
        manifest = {
            "format": CHAIN_FORMAT,
            "inference_steps": str(s.inference_steps),
            "train_steps": str(s.train_steps),
            "beta_start": repr(s.beta_start),
            "beta_end": repr(s.beta_end),
            "spacing": s.spacing,
            "condition": " ".join(repr(float(v)) for v in chain.condition.embedding),
            "condition.is_null": str(chain.condition.is_null).lower(),
            "sites": ",".join(chain.cache.sites),
            "eps_records": str(chain.eps is not None).lower(),
            **chain.denoiser.describe(),
        }
        _write_kv(tmp / "manifest.txt", manifest)
        for t, x in enumerate(chain.latents):
            save_tensor(x, tmp / "latents" / f"level_{t:03d}.rivl")
        if chain.eps is not None:
            for t, e in sorted(chain.eps.items()):
                save_tensor(e, tmp / "eps" / f"level_{t:03d}.rivl")
        for (site, t), v in sorted(chain.cache.entries.items()):
            save_tensor(v[None], tmp / "cache" / site / f"step_{t:03d}.rivl")
        _publish(tmp, Path(path))
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_chain(path) -> ChainRecord:
    path = Path(path)
    if not path.is_dir():
        raise FormatError(f"chain directory {path} does not exist")
    m = _read_kv(path / "manifest.txt")
    if m.get("format") != CHAIN_FORMAT:
        raise FormatError(f"{path}: unsupported chain format {m.get('format')!r}")
    schedule = build_schedule(
        int(m["train_steps"]),
        int(m["inference_steps"]),
        float(m["beta_start"]),
        float(m["beta_end"]),
        m["spacing"],
    )
    T = schedule.inference_steps
    latents = []
    for t in range(T + 1):
        f = path / "latents" / f"level_{t:03d}.rivl"
        if not f.exists():
            raise FormatError(f"{path}: missing latent for level {t}")
        latents.append(load_tensor(f))
    eps = None
    if m.get("eps_records") == "true":
        eps = {t: load_tensor(path / "eps" / f"level_{t:03d}.rivl") for t in range(1, T + 1)}
    cache = HiddenStateCache()
    sites = [s for s in m.get("sites", "").split(",") if s]
    for site in sites:
        for f in sorted((path / "cache" / site).glob("step_*.rivl")):
            cache.capture(site, int(f.stem.split("_")[1]), load_tensor(f)[0])
    cond = Condition(
        np.array([float(v) for v in m["condition"].split()]),
        is_null=m.get("condition.is_null") == "true",
    )
    denoiser = build_denoiser({k: v for k, v in m.items() if k.startswith("denoiser.")}, schedule)
    return ChainRecord(latents, cache, cond, schedule, denoiser, eps)


def save_diagnostics(diag: GenerationDiagnostics, path) -> None:
    tmp = _staging_dir(path)
    try:
        _write_kv(tmp / "meta.txt", {"T": str(diag.T), "bottleneck_site": diag.bottleneck_site or ""})
        sites = sorted({s for scores in diag.scores.values() for s in scores})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "mode", *sites])
        for t in range(diag.T, 0, -1):
            w.writerow([t, diag.modes[t].value, *(format(diag.scores[t][s], ".17g") for s in sites)])
        atomic_write_text(tmp / "steps.csv", buf.getvalue())
        for t, x in sorted(diag.latents.items()):
            save_tensor(x, tmp / "latents" / f"level_{t:03d}.rivl")
        _publish(tmp, Path(path))
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_diagnostics(path) -> GenerationDiagnostics:
    path = Path(path)
    meta = _read_kv(path / "meta.txt")
    T = int(meta["T"])
    diag = GenerationDiagnostics(T=T, bottleneck_site=meta.get("bottleneck_site") or None)
    steps_file = path / "steps.csv"
    if not steps_file.exists():
        raise FormatError(f"{path}: missing steps.csv")
    rows = list(csv.reader(io.StringIO(steps_file.read_text(encoding="utf-8"))))
    header, body = rows[0], rows[1:]
    sites = header[2:]
    for row in body:
        t = int(row[0])
        diag.modes[t] = Mode(row[1])
        diag.scores[t] = {s: float(v) for s, v in zip(sites, row[2:])}
    for t in range(T + 1):
        diag.latents[t] = load_tensor(path / "latents" / f"level_{t:03d}.rivl")
    return diag
