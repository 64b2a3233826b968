"""Command-line entry point: one-shot removal plus map debugging dumps."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np
from PIL import Image

from .attention_control import (DEFAULT_ALPHA_START, DEFAULT_BG_STEPS,
                                DEFAULT_LAMBDA, GuidanceSchedule)
from .backbone import PRESET_NAMES, load_descriptor
from .guidance_pipeline import RemovalRequest, remove_object
from .semantic_map import ClickSet, PropagationConfig

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def parse_click(text: str):
    parts = text.split(",")
    if len(parts) != 3 or parts[2] not in ("+", "-"):
        raise argparse.ArgumentTypeError(
            f"click must be 'u,v,+' or 'u,v,-', got {text!r}")
    try:
        u, v = float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric click coordinates in {text!r}")
    if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
        raise argparse.ArgumentTypeError(f"click coordinates outside [0,1]: {text!r}")
    return (u, v, parts[2])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clickremoval",
                                description="Click-driven object removal")
    p.add_argument("--input", required=True, help="input image path (PNG/JPEG)")
    p.add_argument("--output", required=True, help="output image path")
    p.add_argument("--click", dest="clicks", action="append", type=parse_click,
                   required=True, metavar="U,V,{+|-}",
                   help="normalized click; repeatable; '+' removes, '-' preserves")
    p.add_argument("--preset", default="toy", choices=PRESET_NAMES)
    p.add_argument("--r", type=float, default=1.0, help="guidance strength in [0,1]")
    p.add_argument("--steps", type=int, default=None, help="denoising steps")
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--n-max", type=int, default=20)
    p.add_argument("--bg-steps", type=int, default=DEFAULT_BG_STEPS)
    p.add_argument("--alpha-start", type=float, default=DEFAULT_ALPHA_START)
    p.add_argument("--lam", type=float, default=DEFAULT_LAMBDA,
                   help="object-key penalty magnitude")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-maps", action="store_true",
                   help="also write object / background-similarity maps as grayscale")
    return p


def _save_gray(path: str, values: np.ndarray, shape):
    img = (np.clip(values.reshape(shape), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    try:
        img = np.asarray(Image.open(args.input).convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        print(f"error: cannot read input image: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    clicks = ClickSet(
        positives=tuple((u, v) for u, v, pol in args.clicks if pol == "+"),
        negatives=tuple((u, v) for u, v, pol in args.clicks if pol == "-"),
    )
    if not clicks.positives:
        parser.print_usage(sys.stderr)
        print("error: at least one positive click is required", file=sys.stderr)
        return EXIT_USAGE

    descriptor = load_descriptor(args.preset)
    steps = args.steps or descriptor.default_steps
    try:
        schedule = GuidanceSchedule(total_steps=steps, r=args.r,
                                    bg_steps=args.bg_steps,
                                    alpha_start=args.alpha_start, lam=args.lam)
        cfg = PropagationConfig(tau=args.tau, n_max=args.n_max)
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    req = RemovalRequest(image=img, clicks=clicks, schedule=schedule,
                         propagation=cfg, preset=args.preset, seed=args.seed)
    try:
        result = remove_object(req)
        Image.fromarray((np.clip(result.image, 0, 1) * 255).astype(np.uint8)).save(args.output)
        if args.dump_maps:
            base = args.output.rsplit(".", 1)[0]
            h, w = result.maps.resolution
            _save_gray(base + "_m_ob.png", result.maps.m_ob.astype(np.float64), (h, w))
            _save_gray(base + "_m_bg.png", result.maps.m_bg_tilde, (h, w))
    except Exception as exc:  # pipeline/runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    if result.no_object_found:
        print("warning: no object region found for the given clicks", file=sys.stderr)

    stage_lengths = {}
    for entry in result.step_log:
        stage_lengths[entry["stage"]] = stage_lengths.get(entry["stage"], 0) + 1
    print(json.dumps({"duration": result.duration, "stage_lengths": stage_lengths,
                      "flags": list(result.flags)}))
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
