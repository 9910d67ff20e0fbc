"""Command-line entry point: ``scaleprompt <subcommand>`` or ``python -m scaleprompt``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ScalePromptError
from .evaluation import evaluate, scale_consistency
from .fileio import canonical_json, false_color, read_pfm, save_params, write_json, write_pfm, write_ppm
from .losses import gradcheck_suite
from .maps import DepthMap
from .pipeline import ExperimentConfig, OutputSpec, fit_scene, run_experiment
from .scene import PatternConfig, apply_pattern, gen_scene

GRADCHECK_TOL = 1e-4


def _load_config(args) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = ExperimentConfig.from_dict(raw)
    out = cfg.output
    if args.out_dir:
        out = replace(out, out_dir=args.out_dir)
    if args.emit_images:
        out = replace(out, emit_images=True)
    cfg = replace(cfg, output=out)
    if args.seed is not None and cfg.scene is not None:
        cfg = replace(cfg, scene=replace(cfg.scene, seed=args.seed))
    return cfg


def _read_depth(path) -> DepthMap:
    pfm = read_pfm(path)
    return DepthMap(pfm.values, pfm.valid)


def cmd_gen_scene(args):
    rgb, depth = gen_scene(args.seed, args.height, args.width, args.objects)
    out = Path(args.out_dir)
    write_ppm(out / "rgb.ppm", rgb.pixels)
    write_pfm(out / "depth.pfm", depth)
    print(f"wrote {out / 'rgb.ppm'} and {out / 'depth.pfm'}")
    return 0


def cmd_pattern(args):
    if args.config:
        pcfg = PatternConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        kw = {"kind": args.kind, "seed": args.seed or 0}
        for key in ("lo_pct", "hi_pct", "count", "fraction", "lines", "coverage", "blobs"):
            val = getattr(args, key)
            if val is not None:
                kw[key] = val
        if args.rect:
            kw["rects"] = [tuple(int(v) for v in r.split(",")) for r in args.rect]
        pcfg = PatternConfig.from_dict(kw)
    d = apply_pattern(_read_depth(args.depth), pcfg)
    out = Path(args.out_dir) / f"{pcfg.kind}.pfm"
    write_pfm(out, d)
    print(f"wrote {out} ({d.n_valid} valid pixels)")
    return 0


def cmd_run(args):
    cfg = _load_config(args)
    if cfg.output.out_dir is None:
        cfg = replace(cfg, output=replace(cfg.output, out_dir="out"))
    report = run_experiment(cfg)
    for p in report["patterns"]:
        print(f"{p['name']:<18} prompted AbsREL {p['prompted']['metrics']['absrel']:.4f}  "
              f"baseline AbsREL {p['baseline']['metrics']['absrel']:.4f}")
    return 0


def cmd_fit(args):
    cfg = _load_config(args)
    out = Path(cfg.output.out_dir or "out")
    start = time.perf_counter()
    model, result = fit_scene(cfg, log=print)
    elapsed = time.perf_counter() - start
    save_params(out / "params.a2f", model.bcfg, model.backbone, model.scfg, model.sape)
    summary = result.summary()
    report = run_experiment(replace(cfg, output=OutputSpec(str(out), cfg.output.emit_images)),
                            model=model, fit_summary=summary)
    print(f"loss {result.initial_loss:.5f} -> {result.final_loss:.5f} "
          f"({result.final_loss / result.initial_loss:.3f} of initial) in {elapsed:.1f}s")
    for p in report["patterns"]:
        print(f"{p['name']:<18} prompted AbsREL {p['prompted']['metrics']['absrel']:.4f}  "
              f"baseline AbsREL {p['baseline']['metrics']['absrel']:.4f}")
    return 0


def cmd_eval(args):
    rep = evaluate(_read_depth(args.pred), _read_depth(args.gt))
    text = canonical_json(rep)
    if args.out_dir:
        write_json(Path(args.out_dir) / "metrics.json", rep)
    sys.stdout.write(text)
    return 0


def _parse_grid(text):
    rows, cols = text.lower().split("x")
    return int(rows), int(cols)


def cmd_scale_map(args):
    gt = _read_depth(args.gt)
    smap = scale_consistency(gt, _read_depth(args.pred), _parse_grid(args.grid))
    if args.out_dir:
        out = Path(args.out_dir)
        write_json(out / "scale_map.json", smap)
        if args.emit_images:
            arr = smap.as_array()
            cell = (max(gt.shape[0] // arr.shape[0], 1), max(gt.shape[1] // arr.shape[1], 1))
            big = np.kron(arr, np.ones(cell))
            write_ppm(out / "scale_map.ppm", false_color(big, np.isfinite(big), 0.5, 1.5))
    sys.stdout.write(canonical_json(smap))
    return 0


def cmd_gradcheck(args):
    start = time.perf_counter()
    errs = gradcheck_suite(seed=args.seed or 0, size=args.size, h=args.h, corrupt=args.corrupt)
    ok = True
    for name, err in errs.items():
        status = "PASS" if err <= GRADCHECK_TOL else "FAIL"
        ok &= status == "PASS"
        print(f"{name:<8} max rel err {err:.3e}  {status}")
    print(f"elapsed {time.perf_counter() - start:.2f}s")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scaleprompt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir")
        sp.add_argument("--emit-images", action="store_true")

    sp = sub.add_parser("gen-scene", help="render a synthetic RGB-D scene")
    common(sp, config=False)
    sp.add_argument("--height", type=int, default=32)
    sp.add_argument("--width", type=int, default=32)
    sp.add_argument("--objects", type=int, default=3)
    sp.set_defaults(func=cmd_gen_scene, seed=1, out_dir="out")

    sp = sub.add_parser("pattern", help="degrade a depth PFM with a sampling pattern")
    common(sp)
    sp.add_argument("--depth", required=True)
    sp.add_argument("--kind", choices=["hole", "range", "sparse_random", "sparse_lidar"], default="sparse_random")
    sp.add_argument("--lo-pct", dest="lo_pct", type=float)
    sp.add_argument("--hi-pct", dest="hi_pct", type=float)
    sp.add_argument("--count", type=int)
    sp.add_argument("--fraction", type=float)
    sp.add_argument("--lines", type=int)
    sp.add_argument("--coverage", type=float)
    sp.add_argument("--blobs", type=int)
    sp.add_argument("--rect", action="append", help="top,left,height,width (repeatable)")
    sp.set_defaults(func=cmd_pattern, out_dir="out")

    sp = sub.add_parser("run", help="evaluate prompted and baseline predictions per pattern")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("fit", help="fit the prompt encoder on one scene with SPSA")
    common(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("eval", help="AbsREL / RMSE of a predicted depth PFM")
    common(sp, config=False)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("scale-map", help="regional scale-consistency analysis")
    common(sp, config=False)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--gt", required=True)
    sp.add_argument("--grid", default="4x4")
    sp.set_defaults(func=cmd_scale_map)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    common(sp, config=False)
    sp.add_argument("--size", type=int, default=8)
    sp.add_argument("--h", type=float, default=1e-6)
    sp.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScalePromptError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
