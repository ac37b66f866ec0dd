"""Command-line entry point: ``cabin-surrogate <command> [--flags]``.

Exit status is 0 on success, 2 for usage/configuration errors, 3 for data
errors and 4 for numeric failures; errors print one ``error: <kind>: <msg>``
line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cabin, nn
from .dataset import (
    CabinDataset,
    extract_target_pixels,
    load_pixel_map,
    normalize_input,
    save_pixel_map,
    split_cases,
    stack_hash,
)
from .errors import ConfigurationError, DataError, ShapeError, SurrogateError
from .experiment import (
    DESK_K_VALUES,
    SweepReport,
    TrainConfig,
    grid_search,
    load_config,
    sweep,
    train,
)
from .metrics import evaluate_model, ssim

log = logging.getLogger("cabin_surrogate")


def _grid(text: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _parse_case(text: str) -> cabin.CaseSpec:
    parts = text.split(",")
    if len(parts) != 6:
        raise ConfigurationError(f"--case needs 6 comma-separated values, got {len(parts)}")
    try:
        return cabin.CaseSpec(*(float(p) for p in parts))
    except ValueError:
        raise ConfigurationError(f"--case has a non-numeric value: {text!r}") from None


def _load_data(corpus: str, map_dir: str):
    cases, images, _ = cabin.load_corpus(corpus)
    pixel_map, split = load_pixel_map(map_dir)
    if pixel_map.source_hash and pixel_map.source_hash != stack_hash(images):
        raise DataError(f"map {map_dir} was extracted from a different corpus")
    if split is None:
        raise DataError(f"map {map_dir} has no split.csv; rerun extract")
    return CabinDataset(cases, images, pixel_map), split


def _train_config(args, **extra) -> TrainConfig:
    overrides = {
        "k": getattr(args, "k", None),
        "seed": getattr(args, "seed", None),
        "depth": args.depth,
        "width": args.width,
        "max_epochs": args.epochs,
        "eval_every": args.eval_every,
        "model": getattr(args, "model", None),
        **extra,
    }
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> None:
    w, h = args.grid
    if w < 16 or h < 16:
        raise ConfigurationError(f"grid {w}x{h} is below the 16x16 minimum")
    out = cabin.generate_corpus(args.out, w, h, args.seed)
    print(f"wrote {len(cabin.enumerate_cases())} images ({w}x{h}) to {out}")


def cmd_extract(args) -> None:
    cases, images, _ = cabin.load_corpus(args.corpus)
    pixel_map = extract_target_pixels(images)
    split = split_cases(cases, args.seed)
    save_pixel_map(args.out, pixel_map, split)
    print(f"targets={len(pixel_map)} train={len(split.train_ids)} val={len(split.val_ids)} "
          f"test={len(split.test_ids)} retries={split.retries}")


def cmd_train(args) -> None:
    cfg = _train_config(args)
    dataset, split = _load_data(args.corpus, args.map)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    res = train(cfg, dataset, split, log_path=out / "log.jsonl")
    nn.save_checkpoint(out / "model.ckpt", res.model, cfg.digest())
    res.checkpoint = "model.ckpt"
    (out / "result.json").write_text(json.dumps(res.summary(), indent=2) + "\n")
    print(f"best_epoch={res.best_epoch} val_mse={res.best_val_mse:.6g} "
          f"val_ssim={res.val.ssim_mean:.4f} test_ssim={res.test.ssim_mean:.4f}")


def cmd_eval(args) -> None:
    dataset, split = _load_data(args.corpus, args.map)
    model, _ = nn.load_checkpoint(args.checkpoint)
    ids = {"train": split.train_ids, "val": split.val_ids, "test": split.test_ids}[args.split]
    rep = evaluate_model(model, ids, dataset, bbox_only=args.bbox_only)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"eval_{args.split}.csv", "w") as f:
        f.write("case_id,ssim,mse\n")
        for cid, s, m in zip(rep.case_ids, rep.ssim, rep.mse):
            f.write(f"{cid},{s:.6f},{m:.8g}\n")
    print(f"split={args.split} n={len(ids)} ssim_mean={rep.ssim_mean:.6f} "
          f"ssim_std={rep.ssim_std:.6f} mse_mean={rep.mse_mean:.6g}")


def cmd_sweep(args) -> None:
    base = _train_config(args, k=None)
    dataset, split = _load_data(args.corpus, args.map)
    k_values = args.k or list(DESK_K_VALUES)
    if args.grid_search:
        (depth, width), table = grid_search(dataset, split, k_values, base, jobs=args.jobs)
        log.info("grid search picked depth=%d width=%d", depth, width)
        base = replace(base, depth=depth, width=width)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "grid_search.csv", "w") as f:
            f.write("depth,width,k,test_ssim\n")
            for (d, w), row in sorted(table.items()):
                for k, s in sorted(row.items()):
                    f.write(f"{d},{w},{k},{s:.6f}\n")
    report = sweep(dataset, split, k_values, args.seeds, args.models, base, args.jobs, args.out)
    failed = sum(r.failed for r in report.results)
    print(f"runs={len(report.results)} failed={failed} out={args.out}")


def cmd_predict(args) -> None:
    case = _parse_case(args.case)
    model, _ = nn.load_checkpoint(args.checkpoint)
    pixel_map, _ = load_pixel_map(args.map)
    if model.output_dim != len(pixel_map):
        raise ShapeError(f"checkpoint predicts {model.output_dim} pixels, map has {len(pixel_map)}")
    x = normalize_input(case)
    t0 = time.perf_counter()
    img = cabin.restore(nn.predict(model, x), pixel_map)
    ms = (time.perf_counter() - t0) * 1000.0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cabin.write_pgm(out, img)
    print(f"latency_ms={ms:.3f}")


def cmd_render_diff(args) -> None:
    a, b = cabin.read_pgm(args.a), cabin.read_pgm(args.b)
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"image sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    diff = np.abs(a.pixels.astype(np.int16) - b.pixels.astype(np.int16)).astype(np.uint8)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cabin.write_pgm(out, cabin.Image8(a.width, a.height, diff))
    print(f"ssim={ssim(a, b):.10g}")


def cmd_report(args) -> None:
    path = Path(args.sweep) / "runs.jsonl"
    try:
        summaries = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot read sweep results: {exc}") from None
    if not summaries:
        raise DataError(f"{path} holds no runs")
    report = SweepReport.from_summaries(summaries)
    report.write(args.out, args.cost, args.total_cases)
    print(f"wrote table1.csv and table2.csv to {args.out}")


# ---------------------------------------------------------------- parser


def _add_train_flags(p: argparse.ArgumentParser, single_k: bool = True) -> None:
    p.add_argument("--corpus", required=True, help="directory written by `gen`")
    p.add_argument("--map", required=True, help="directory written by `extract`")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="flat key = value training config")
    if single_k:
        p.add_argument("--k", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--model", choices=("mlp", "linear"))
    p.add_argument("--depth", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--eval-every", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cabin-surrogate", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="render the synthetic case corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=_grid, default=(cabin.DEFAULT_WIDTH, cabin.DEFAULT_HEIGHT))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("extract", help="find target pixels and split the cases")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train one model")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--bbox-only", action="store_true",
                   help="score only the bounding box of the target pixels")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train every (model, k, seed) cell")
    _add_train_flags(p, single_k=False)
    p.add_argument("--k", type=_int_list, help="comma-separated training sizes")
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3])
    p.add_argument("--models", type=lambda s: s.split(","), default=["mlp", "linear"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--grid-search", action="store_true",
                   help="pick depth/width with seed 0 before sweeping")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("predict", help="predict and restore one case image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--case", required=True,
                   help="solar,altitude,azimuth,discharge,flow,ambient")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("render-diff", help="absolute difference image and SSIM")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_diff)

    p = sub.add_parser("report", help="rebuild table CSVs from a sweep directory")
    p.add_argument("--sweep", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cost", type=float, default=0.75, help="simulation hours per case")
    p.add_argument("--total-cases", type=int, default=2160)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SurrogateError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: OSError: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
