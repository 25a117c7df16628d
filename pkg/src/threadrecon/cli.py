"""Command-line interface: generate, reconstruct and evaluate.

Exit codes:
    0  success
    2  usage or configuration error
    3  reconstruction failed in stereo matching
    4  reconstruction failed in the keypoint graph
    5  reconstruction failed in the minimum-variation solve
    6  scene generation failed
    7  I/O error

Verbosity is controlled only by the THREADRECON_LOG environment variable
(debug | info | warning); there is no other hidden state.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import ConfigurationError, GenerationError, ThreadReconError
from .ioutil import load_json
from .pipeline import (
    STAGE_KEYPOINTS,
    STAGE_MVS,
    STAGE_STEREO,
    PipelineConfig,
    run_evaluate,
    run_generate,
    run_reconstruct,
)

EXIT_CONFIG = 2
EXIT_BY_STAGE = {STAGE_STEREO: 3, STAGE_KEYPOINTS: 4, STAGE_MVS: 5}
EXIT_GENERATION = 6
EXIT_IO = 7


def _parse_seeds(spec: str) -> list[int]:
    if ":" in spec:
        lo, hi = spec.split(":", 1)
        return list(range(int(lo), int(hi)))
    return [int(s) for s in spec.split(",") if s]


def _apply_overrides(data: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"override must look like section.key=value: {item!r}")
        key, raw = item.split("=", 1)
        section, name = key.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data.setdefault(section, {})[name] = value
    return data


def load_config(path: str | None, overrides: list[str]) -> PipelineConfig:
    """Config from an optional JSON file plus section.key=value overrides."""
    data = load_json(path) if path else {}
    data = _apply_overrides(data, overrides)
    return PipelineConfig.from_dict(data)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable), e.g. --set match.alpha=64",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threadrecon",
        description="3D B-spline centerline reconstruction of thin structures "
        "from rectified stereo pairs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate synthetic scene bundles")
    gen.add_argument("--out", required=True, help="dataset output directory")
    gen.add_argument(
        "--seeds", default="0:40", help='seed range "lo:hi" or comma list (default 0:40)'
    )
    _add_common(gen)

    rec = sub.add_parser("reconstruct", help="reconstruct one stereo pair")
    rec.add_argument("--left", required=True, help="left rectified grayscale PNG")
    rec.add_argument("--right", required=True, help="right rectified grayscale PNG")
    rec.add_argument("--mask-left", required=True, help="left segmentation PNG")
    rec.add_argument("--mask-right", required=True, help="right segmentation PNG")
    rec.add_argument("--rig", required=True, help="rig JSON with Q, G and units")
    rec.add_argument("--out", required=True, help="output directory")
    _add_common(rec)

    ev = sub.add_parser("evaluate", help="reconstruct and score a dataset")
    ev.add_argument("--dataset", required=True, help="directory with manifest.json")
    ev.add_argument("--out", required=True, help="output directory")
    _add_common(ev)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("THREADRECON_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "generate":
            seeds = _parse_seeds(args.seeds)
            manifest = run_generate(seeds, args.out, config)
            print(f"wrote {len(seeds)} scenes, manifest at {manifest}")
            return 0
        if args.command == "reconstruct":
            outcome = run_reconstruct(
                args.left,
                args.right,
                args.mask_left,
                args.mask_right,
                args.rig,
                args.out,
                config,
            )
            if outcome.status == "success":
                print(f"success: spline at {outcome.outputs['spline_camera']}")
                return 0
            print(f"failure at {outcome.stage}: {outcome.reason}", file=sys.stderr)
            return EXIT_BY_STAGE.get(outcome.stage, 1)
        if args.command == "evaluate":
            summary = run_evaluate(args.dataset, args.out, config)
            print(f"scenes: {summary['n_scenes']}  successes: {summary['n_success']}")
            if summary["n_success"]:
                print(
                    "e_S {e_S_mean:.3f} +- {e_S_std:.3f}   "
                    "e_S_max {e_S_max_mean:.3f} +- {e_S_max_std:.3f}   "
                    "e_len {e_len_mean:.3f} +- {e_len_std:.3f}".format(**summary)
                )
                print(
                    "reproj mean L/R: {e2d_mean_L_mean:.3f} / {e2d_mean_R_mean:.3f} px".format(
                        **summary
                    )
                )
            return 0
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationError as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ThreadReconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
