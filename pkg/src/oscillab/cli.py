"""Command-line driver: ``oscillab run|gamma|mesh``.

Exit codes: 0 on success, 2 on a hard error, 3 on a configuration schema
violation (the message names the offending key path).
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .corpora import CORPORA, corpus
from .homogenization import gamma_csv
from .mesh import mesh_domain
from .plotting import mesh_figure
from .report import gamma_tables, run_experiment, write_manifest

EXIT_OK, EXIT_ERROR, EXIT_CONFIG = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oscillab", description="Oscillating-boundary reaction-diffusion lab.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help=f"TOML file or built-in corpus ({', '.join(CORPORA)})")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides OUTPUT_DIR and the config)")
    common.add_argument("--seed", type=int, metavar="S", help="RNG seed (overrides the config)")
    common.add_argument("--threads", type=int, metavar="N", default=None,
                        help="worker threads for per-epsilon jobs (default: available CPUs)")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the selected sweeps")
    sub.add_parser("gamma", parents=[common], help="print closed-form and empirical gamma tables")
    m = sub.add_parser("mesh", parents=[common], help="mesh the reference and perturbed domains")
    m.add_argument("--dump", action="store_true", help="write mesh dumps and wireframe SVGs")
    return p


def _load(arg: str) -> ExperimentConfig:
    if not Path(arg).exists() and arg in CORPORA:
        return corpus(arg)
    if not Path(arg).is_file():
        raise FileNotFoundError(f"config file {arg!r} not found")
    return load_config(arg)


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out or os.environ.get("OUTPUT_DIR") or cfg.output_dir)


def _cmd_run(args, cfg, out) -> int:
    threads = args.threads or os.cpu_count() or 1
    res = run_experiment(cfg, out, threads)
    print(f"outputs written to {out}")
    return res.exit_code


def _cmd_gamma(args, cfg, out) -> int:
    text, fields = gamma_tables(cfg)
    print(text)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "gamma.csv"
    path.write_text(gamma_csv(fields) if fields else "chart,cell_left,cell_right,gamma_value,provenance\n")
    write_manifest(out, cfg, [path], command="gamma")
    return EXIT_OK


def _cmd_mesh(args, cfg, out) -> int:
    fam = cfg.family()
    files = []
    if args.dump:
        out.mkdir(parents=True, exist_ok=True)
    for eps in (None, *fam.epsilons):
        mesh = mesh_domain(fam, eps, cfg.mesh.h)
        ang = mesh.angles().min()
        print(f"{mesh.label}: {mesh.n_vertices} vertices, {len(mesh.triangles)} triangles, "
              f"min angle {ang:.2f} deg, area {mesh.area():.8f}")
        if args.dump:
            tag = "reference" if eps is None else f"eps{eps:g}"
            p = out / f"mesh_{tag}.txt"
            p.write_text(mesh.dump())
            files += [p, mesh_figure(mesh, out / f"mesh_{tag}.svg", mesh.label)]
    if args.dump:
        write_manifest(out, cfg, files, command="mesh")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed", "must be nonnegative")
            cfg = replace(cfg, seed=args.seed)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads", "must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = _out_dir(args, cfg)
    handler = {"run": _cmd_run, "gamma": _cmd_gamma, "mesh": _cmd_mesh}[args.command]
    try:
        return handler(args, cfg, out)
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
