"""Command-line entry point: ``rival <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .denoiser import Condition, build_denoiser
from .errors import ConfigurationError, RivalError
from .io import (
    RunConfig,
    atomic_write_text,
    decode_latent,
    encode_latent,
    load_image,
    load_mask,
    parse_config,
    save_image,
)
from .latent import seeded_rng
from .metrics import kl_trace, kmeans_palette, palette_distance, score_trace
from .pipeline import InpaintSpec, edit_generate, inpaint_generate, invert, rival_generate
from .store import load_chain, load_diagnostics, save_chain, save_diagnostics

log = logging.getLogger("rival")


def _load_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if args.config is None:
        from .io import parse_config_text

        return parse_config_text("", overrides)
    return parse_config(args.config, overrides)


def _check_chain(cfg: RunConfig, chain) -> None:
    if chain.T != cfg.inference_steps:
        raise ConfigurationError(
            f"config inference_steps = {cfg.inference_steps} but chain has {chain.T} steps"
        )


def _source_condition(cfg: RunConfig) -> Condition:
    return Condition.from_seed(cfg.condition_seed, cfg.condition_dim)


def _write_run(out: Path, cfg: RunConfig, chain, result) -> None:
    latent, diag = result
    out.mkdir(parents=True, exist_ok=True)
    save_image(decode_latent(latent), out / "output.png")
    atomic_write_text(out / "kl.csv", kl_trace(diag, chain).to_csv())
    atomic_write_text(out / "score.csv", score_trace(diag).to_csv())
    save_diagnostics(diag, out / "diagnostics")
    atomic_write_text(out / "config.txt", cfg.to_text())


def cmd_invert(args) -> None:
    cfg = _load_config(args)
    schedule = cfg.schedule()
    denoiser = build_denoiser(cfg.denoiser_params(), schedule)
    x0 = encode_latent(load_image(args.image))
    if cfg.inversion_condition == "empty":
        cond = Condition.null(cfg.condition_dim)
    else:
        cond = _source_condition(cfg)
    chain = invert(x0, cond, schedule, denoiser)
    out = Path(args.out)
    save_chain(chain, out)
    atomic_write_text(out / "config.txt", cfg.to_text())
    log.info("wrote chain with %d levels to %s", chain.T + 1, out)


def cmd_variation(args) -> None:
    cfg = _load_config(args)
    chain = load_chain(args.chain)
    _check_chain(cfg, chain)
    result = rival_generate(chain, _source_condition(cfg), cfg.rival(), seeded_rng(cfg.seed))
    _write_run(Path(args.out), cfg, chain, result)


def cmd_edit(args) -> None:
    cfg = _load_config(args)
    chain = load_chain(args.chain)
    _check_chain(cfg, chain)
    start = cfg.edit_start_step if args.start_step is None else args.start_step
    new_cond = Condition.from_seed(cfg.edit_condition_seed, cfg.condition_dim)
    result = edit_generate(chain, new_cond, cfg.rival(), interaction_start=start)
    _write_run(Path(args.out), cfg, chain, result)


def cmd_inpaint(args) -> None:
    cfg = _load_config(args)
    chain = load_chain(args.chain)
    _check_chain(cfg, chain)
    spec = InpaintSpec(load_mask(args.mask))
    result = inpaint_generate(chain, spec, _source_condition(cfg), cfg.rival(), seeded_rng(cfg.seed))
    _write_run(Path(args.out), cfg, chain, result)


def cmd_trace(args) -> None:
    diag = load_diagnostics(args.run)
    chain = load_chain(args.chain)
    out = Path(args.out) if args.out else Path(args.run)
    atomic_write_text(out / "kl.csv", kl_trace(diag, chain).to_csv())
    atomic_write_text(out / "score.csv", score_trace(diag).to_csv())


def cmd_metrics(args) -> None:
    cfg = _load_config(args)
    palettes = [
        kmeans_palette(load_image(p), cfg.palette_k, seeded_rng(cfg.seed), cfg.palette_iters)
        for p in (args.image_a, args.image_b)
    ]
    print(f"{palette_distance(*palettes):.6f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rival", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="key = value run config (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.set_defaults(func=func)
        return p

    p = add("invert", cmd_invert, "invert a reference PNG into a chain directory")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="chain directory to write")

    for name, func, help in (
        ("variation", cmd_variation, "generate a variation from a chain"),
        ("edit", cmd_edit, "structure-preserving edit with the edit condition"),
        ("inpaint", cmd_inpaint, "regenerate the masked region"),
    ):
        p = add(name, func, help)
        p.add_argument("--chain", required=True)
        p.add_argument("--out", required=True, help="run directory to write")
        if name == "edit":
            p.add_argument("--start-step", type=int, dest="start_step")
        if name == "inpaint":
            p.add_argument("--mask", required=True, help="PNG, nonzero = regenerate")

    p = sub.add_parser("trace", help="recompute kl/score CSVs from a run directory")
    p.add_argument("--run", required=True, help="diagnostics directory of a run")
    p.add_argument("--chain", required=True)
    p.add_argument("--out", help="output directory (defaults to --run)")
    p.set_defaults(func=cmd_trace)

    p = add("metrics", cmd_metrics, "palette distance between two PNGs")
    p.add_argument("image_a")
    p.add_argument("image_b")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (RivalError, OSError) as exc:
        print(f"rival {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
