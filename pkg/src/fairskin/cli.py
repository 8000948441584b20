"""``fairskin`` command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .colorspace import LabImage, lab_to_srgb, srgb_to_lab
from .config import RunConfig, STAGES, apply_overrides, config_from_dict, load_config
from .data import generate_synthetic, load_manifest, write_dataset
from .errors import (
    BadConfig,
    BadDistribution,
    EmptySkinRegion,
    FairskinError,
    MissingFile,
    ParseError,
    ShapeMismatch,
)
from .imgio import read_mask, read_rgb, threshold_mask, write_rgb
from .pipeline import StageError, run_pipeline
from .skintone import FstType, ToneParams, classify_fst, skin_means, ita_from_lb, transform_skin_tone

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4
DATA_ERRORS = (ParseError, MissingFile, EmptySkinRegion, BadDistribution, ShapeMismatch, FileNotFoundError)

log = logging.getLogger("fairskin")


def _image_mask(path: Path, img: np.ndarray, mask_dir=None) -> np.ndarray:
    """Sibling ``<stem>_mask.png`` (or one in ``mask_dir``), else the threshold fallback."""
    for folder in filter(None, (mask_dir, path.parent)):
        cand = Path(folder) / f"{path.stem}_mask.png"
        if cand.exists():
            return read_mask(cand)
    return threshold_mask(img)


def cmd_convert(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    if src.suffix.lower() == ".npy":
        lab = np.load(src)
        if lab.ndim != 3 or lab.shape[2] != 3:
            raise ShapeMismatch(f"expected an (H, W, 3) Lab array, got {lab.shape}")
        rgb, clamped = lab_to_srgb(LabImage.from_array(lab), return_clamped=True)
        write_rgb(dst, rgb)
        print(f"wrote {dst} ({clamped} pixels clamped)")
    else:
        np.save(dst, srgb_to_lab(read_rgb(src)).stack())
        print(f"wrote {dst}")
    return EXIT_OK


def _rows_for(args):
    if args.manifest:
        m = load_manifest(args.manifest, fill_fst=False)
        for r in m.rows:
            img = read_rgb(r.image)
            yield r.image, img, read_mask(r.mask) if r.mask else threshold_mask(img)
    else:
        for p in map(Path, args.images):
            img = read_rgb(p)
            yield p, img, _image_mask(p, img, args.masks)


def cmd_ita_report(args) -> int:
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["image", "L_mean", "b_mean", "ita", "fst"])
        for path, img, mask in _rows_for(args):
            L, b = skin_means(srgb_to_lab(img), mask)
            ita = ita_from_lb(L, b)
            w.writerow([str(path), f"{L:.4f}", f"{b:.4f}", f"{ita:.4f}", classify_fst(ita).name])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_normalize(args) -> int:
    target = FstType.parse(args.target)
    params = ToneParams(target_fst=target, rng_seed=args.seed)
    for i, (path, img, mask) in enumerate(_rows_for(args)):
        res = transform_skin_tone(img, mask, params, np.random.default_rng([args.seed, i]))
        dst = path.with_name(f"{path.stem}_fst{target.name}{path.suffix or '.png'}")
        write_rgb(dst, res.image)
        print(f"{dst}\tita {res.original_ita:.2f} -> {res.achieved_ita:.2f}")
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    data = generate_synthetic(args.n, args.bias, args.seed, age_bias=args.age_bias, gender_bias=args.gender_bias)
    manifest = write_dataset(data, args.out, args.format)
    print(f"wrote {len(data)} images and {manifest}")
    return EXIT_OK


def build_run_config(args, stages) -> RunConfig:
    base = load_config(args.config).to_dict() if args.config else RunConfig().to_dict()
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    if getattr(args, "folds", None) is not None:
        overrides.append(f"train.folds={args.folds}")
    if getattr(args, "checkpoint", None):
        overrides.append(f"checkpoint={args.checkpoint}")
    data = apply_overrides(base, overrides)
    if args.out:
        data["out"] = args.out
    if stages is not None:
        data["stages"] = stages
    return config_from_dict(data)


def _stage_command(stages):
    def run(args) -> int:
        chosen = stages
        if chosen is None and args.stages is not None:
            chosen = [s.strip() for s in args.stages.split(",") if s.strip()]
        cfg = build_run_config(args, chosen)
        state = run_pipeline(cfg)
        print(f"run written to {state.out}")
        if "fairness_report.json" in {p.name for p in state.artifacts}:
            print((state.out / "fairness_report.json").read_text(), end="")
        return EXIT_OK

    return run


def _add_run_options(p, stages_flag=False, checkpoint=False):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key by dotted path")
    if stages_flag:
        p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    if checkpoint:
        p.add_argument("--checkpoint", help="model checkpoint to start from")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairskin", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="sRGB image <-> CIELAB .npy array")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_convert)

    for name, func, helptext in (
        ("ita-report", cmd_ita_report, "skin ITA and FST per image"),
        ("normalize", cmd_normalize, "shift skin tone into a target FST"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("images", nargs="*")
        p.add_argument("--manifest")
        p.add_argument("--masks", help="directory holding <stem>_mask.png files")
        if name == "ita-report":
            p.add_argument("--out", help="CSV output path (default stdout)")
        else:
            p.add_argument("--target", default="IV")
            p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)

    p = sub.add_parser("gen-synth", help="write a seeded synthetic lesion dataset")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--bias", type=float, default=0.9)
    p.add_argument("--age-bias", type=float, default=0.0)
    p.add_argument("--gender-bias", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("png", "ppm"), default="png")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train the baseline model")
    _add_run_options(p)
    p.add_argument("--folds", type=int, help="also report k-fold cross-validated accuracy")
    p.set_defaults(func=_stage_command(["train"]))

    for name, stages in (
        ("prune", ["prune"]),
        ("meta-prune", ["meta-prune"]),
        ("evaluate", ["evaluate"]),
        ("explain", ["explain"]),
    ):
        p = sub.add_parser(name, help=f"run the {name} stage on a checkpoint")
        _add_run_options(p, checkpoint=True)
        p.set_defaults(func=_stage_command(stages))

    p = sub.add_parser("pipeline", help="run several stages end to end")
    _add_run_options(p, stages_flag=True, checkpoint=True)
    p.set_defaults(func=_stage_command(None))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BadConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StageError as exc:
        if isinstance(exc.cause, DATA_ERRORS):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except FairskinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
