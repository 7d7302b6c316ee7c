"""Command-line front end: generate / train / tournament / analyze / replay / bench.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime error.
The config file path comes from --config or the GRIDREALM_CONFIG environment
variable; without either, paper-default parameters apply. --seed overrides
every seed in the config for quick determinism checks.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import CONFIG_ENV_VAR, Config, ConfigError, dump_config, parse_config
from .worldgen import FractalParams, GenerationError, generate_map, load_map, save_map

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(args) -> Config:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    cfg = parse_config(path) if path else Config()
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.override_seeds(seed)
    return cfg


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    size = args.size or cfg.worldgen.size
    seed = args.seed if args.seed is not None else 0
    game_map = generate_map(seed, size, FractalParams.from_config(cfg.worldgen),
                            cfg.worldgen.retry_budget)
    save_map(game_map, args.out)
    print(f"wrote {args.out}: {size}x{size} map, seed {seed}")
    if args.preview:
        from .analysis import render_map
        render_map(game_map, args.preview, scale=cfg.analysis.image_scale)
        print(f"wrote {args.preview}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train
    cfg = _load_config(args)
    game_map = load_map(args.map) if args.map else None
    result = train(cfg, args.out, game_map=game_map)
    print(f"finished {result.updates} updates; trajectories per population: "
          f"{result.trajectories}")
    for pop, (path, mean) in enumerate(zip(result.checkpoints, result.mean_lifetimes)):
        print(f"  population {pop}: mean lifetime {mean:.2f}, checkpoint {path}")
    print(f"metrics: {result.metrics_path}")
    return EXIT_OK


def _parse_competitor(spec: str):
    name, _, ckpt = spec.partition("=")
    if not name or not ckpt:
        raise ConfigError(f"competitor spec {spec!r} must be name=checkpoint or name=random")
    return name, (None if ckpt == "random" else ckpt)


def cmd_tournament(args) -> int:
    from .analysis import render_heatmap  # noqa: F401  (matplotlib backend setup)
    import matplotlib.pyplot as plt
    from .tournament import run_tournament
    cfg = _load_config(args)
    specs = [_parse_competitor(s) for s in args.competitor]
    game_map = load_map(args.map) if args.map else None
    os.makedirs(args.out, exist_ok=True)
    replay_path = os.path.join(args.out, "tournament.replay") if args.replay else None
    result = run_tournament(cfg, specs, game_map=game_map, replay_path=replay_path)
    rows = result.summary_rows(cfg.tournament.include_censored)

    csv_path = os.path.join(args.out, "summary.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    widths = {k: max(len(k), *(len(str(r[k])) for r in rows)) for k in rows[0]}
    lines = ["  ".join(k.ljust(widths[k]) for k in rows[0])]
    for r in rows:
        lines.append("  ".join(str(r[k]).ljust(widths[k]) for k in r))
    table = "\n".join(lines)
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    print(table)

    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(rows), 3.2))
    ax.bar([r["competitor"] for r in rows], [r["mean_lifetime"] for r in rows],
           color="tab:blue")
    ax.set_ylabel("mean lifetime (ticks)")
    ax.set_title(f"server merge: {result.worlds} worlds x {result.ticks} ticks")
    fig.tight_layout()
    fig.savefig(os.path.join(args.out, "summary.png"), dpi=120)
    plt.close(fig)
    print(f"wrote {csv_path}, summary.txt, summary.png")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from . import analysis
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    scale = cfg.analysis.image_scale

    if args.kind == "dependency":
        from .neural import load_checkpoint
        if not args.params:
            raise ConfigError("--params is required for dependency maps")
        params = load_checkpoint(args.params, nonlinearity=cfg.neural.nonlinearity)
        crop = cfg.observation.crop_size
        if args.map:
            game_map = load_map(args.map)
            center = (game_map.height // 2, game_map.width // 2)
            r0 = center[0] - crop // 2
            c0 = center[1] - crop // 2
            base = game_map.kinds[r0:r0 + crop, c0:c0 + crop]
            grid = analysis.dependency_map(params, base, args.probe == "same", cfg,
                                           observer_pos=center,
                                           map_shape=(game_map.height, game_map.width))
        else:
            base = np.zeros((crop, crop), dtype=np.int8)  # all grass
            grid = analysis.dependency_map(params, base, args.probe == "same", cfg)
        png, csv_out = analysis.render_heatmap(grid, "viridis",
                                               os.path.join(args.out, "dependency.png"), scale)
        print(f"wrote {png} and {csv_out}")
        return EXIT_OK

    if not args.map:
        raise ConfigError(f"--map is required for {args.kind} maps")
    if not args.replay:
        raise ConfigError(f"--replay is required for {args.kind} maps")
    game_map = load_map(args.map)

    if args.kind == "exploration":
        grid, coverage = analysis.exploration_map(args.replay, game_map)
        png, csv_out = analysis.render_heatmap(grid, "magma",
                                               os.path.join(args.out, "exploration.png"), scale)
        with open(os.path.join(args.out, "exploration_stats.json"), "w") as fh:
            json.dump({"coverage": coverage, "visits": int(grid.sum())}, fh)
        print(f"coverage: {coverage:.4f}")
        print(f"wrote {png} and {csv_out}")
    elif args.kind == "niche":
        from .replay import read_header
        n_pop = args.n_pop or read_header(args.replay)["n_pop"]
        grids = analysis.niche_map(args.replay, game_map, n_pop)
        for pop in range(n_pop):
            analysis.render_heatmap(grids[pop], "magma",
                                    os.path.join(args.out, f"niche_p{pop}.png"), scale)
        overlay = analysis.render_niche_overlay(
            grids, game_map, os.path.join(args.out, "niche_overlay.png"), scale)
        overlap = analysis.niche_overlap(grids)
        with open(os.path.join(args.out, "niche_stats.json"), "w") as fh:
            json.dump({"overlap": overlap, "n_pop": n_pop}, fh)
        print(f"overlap: {overlap:.4f}")
        print(f"wrote per-population grids and {overlay}")
    elif args.kind == "attack":
        grids, shares = analysis.attack_map(args.replay, game_map)
        for style, grid in grids.items():
            analysis.render_heatmap(grid, "inferno",
                                    os.path.join(args.out, f"attack_{style}.png"), scale)
        with open(os.path.join(args.out, "attack_shares.json"), "w") as fh:
            json.dump(shares, fh)
        print("style shares: " + ", ".join(f"{s}={v:.3f}" for s, v in shares.items()))
        print(f"wrote attack grids to {args.out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    from .analysis import render_replay_frames
    cfg = _load_config(args)
    game_map = load_map(args.map)
    frames = render_replay_frames(args.replay, game_map, args.out,
                                  scale=cfg.analysis.image_scale,
                                  max_frames=args.max_frames)
    print(f"wrote {len(frames)} frames to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import run_benchmark
    cfg = _load_config(args)
    result = run_benchmark(cfg, ticks=args.ticks, agents=args.agents)
    print(f"{result.agent_ticks} agent-ticks over {result.ticks} ticks "
          f"({result.agents} live agents) in {result.seconds:.2f}s")
    print(f"rate: {result.rate:,.0f} agent-ticks/second")
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = _load_config(args)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="gridrealm", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a map file (and optional preview image)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--preview", default=None, help="also write a color PNG preview")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output directory for checkpoints/metrics")
    p.add_argument("--map", default=None, help="train every world on this fixed map file")
    p.add_argument("--seed", type=int, default=None, help="override all config seeds")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tournament", help="evaluate merged player bases")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--competitor", action="append", required=True,
                   metavar="NAME=CKPT|random", help="repeat for each competitor")
    p.add_argument("--map", default=None, help="evaluate on this fixed map file")
    p.add_argument("--replay", action="store_true", help="record world 0 to a replay log")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_tournament)

    p = sub.add_parser("analyze", help="produce analysis maps from replays/checkpoints")
    p.add_argument("--kind", required=True,
                   choices=["exploration", "niche", "dependency", "attack"])
    p.add_argument("--in", "--replay", dest="replay", default=None, help="input replay log")
    p.add_argument("--map", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--params", default=None, help="checkpoint for dependency maps")
    p.add_argument("--probe", choices=["same", "other"], default="other")
    p.add_argument("--n-pop", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("replay", help="render a replay log to PNG frames")
    p.add_argument("--replay", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-frames", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("bench", help="measure engine throughput")
    p.add_argument("--ticks", type=int, default=1000)
    p.add_argument("--agents", type=int, default=128)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("config", help="print the resolved configuration")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits for usage errors, -h, --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationError as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failures map to a stable exit code
        logger.error("%s", exc, exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
