"""``tslab`` command line: generate, train, sweep, eval, audit, transform, report."""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger("tslab")


def _csv_ints(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _csv_domains(s: str) -> list[str]:
    from .shapegen import DOMAIN_NAMES, parse_domain

    try:
        return [DOMAIN_NAMES[parse_domain(v.strip())] for v in s.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _domain(s: str) -> str:
    return _csv_domains(s)[0]


def _fill(s: str) -> tuple[int, int, int]:
    parts = _csv_ints(s)
    if len(parts) != 3 or not all(0 <= v <= 255 for v in parts):
        raise argparse.ArgumentTypeError(f"--fill needs three byte values R,G,B, got {s!r}")
    return tuple(parts)


def _jobs_default() -> int:
    try:
        return max(1, int(os.environ.get("TSLAB_JOBS", "1")))
    except ValueError:
        return 1


def write_manifest(path: Path, argv: Sequence[str], **extra) -> Path:
    from . import __version__
    from .tensor import backend

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": ["tslab", *argv],
        "versions": {"tslab": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "kernel_backend": backend.NAME,
        **extra,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# -- generate ----------------------------------------------------------------------

def cmd_generate(args, argv) -> int:
    from .shapegen import DOMAIN_NAMES, generate_split, parse_domain, resolve_bank, split_paths, write_tsd
    from .shapegen.trajectories import DomainId

    domain = parse_domain(args.domain)
    bank = resolve_bank(args.mnist_idx) if domain in (DomainId.MNIST, DomainId.MNIST_BG) else None
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise SystemExit(f"error: cannot create output directory {out}: {e}")
    splits = generate_split(domain, {"train": args.train, "val": args.val, "eval": args.eval}, args.seed, bank)
    paths = split_paths(out, domain)
    for role, split in splits.items():
        try:
            write_tsd(paths[role], split)
        except OSError as e:
            raise SystemExit(f"error: cannot write {paths[role]}: {e}")
        counts = " ".join(f"{c}" for c in split.class_counts())
        print(f"{paths[role]}: {len(split)} clips, per class [{counts}]")
    write_manifest(out / f"{DOMAIN_NAMES[domain].lower()}_manifest.json", argv, seed=args.seed)
    return 0


# -- training ----------------------------------------------------------------------

def _train_config(args, family: str, seed: int):
    from .harness import TrainConfig

    kw = dict(batch_size=args.batch, learning_rate=args.lr, momentum=args.momentum, seed=seed,
              flip_augment=args.flip, target_val_acc=args.target_val_acc,
              precise_bn_batches=args.precise_bn)
    if args.max_epochs is not None:
        kw["max_epochs"] = args.max_epochs
    if args.patience is not None:
        kw["patience"] = args.patience
    return TrainConfig.for_family(family, **kw)


def _load_split(data: Path, domain: str, role: str, limit: int = 0):
    from .shapegen import read_tsd, split_paths

    path = split_paths(data, domain)[role]
    split = read_tsd(path, role)
    return split.subset(limit) if 0 < limit < len(split) else split


def _require_datasets(data: Path, source: str, targets: Sequence[str]) -> None:
    from .shapegen import split_paths

    missing = [str(split_paths(data, source)[r]) for r in ("train", "val")]
    missing += [str(split_paths(data, d)["eval"]) for d in targets]
    missing = [m for m in missing if not Path(m).exists()]
    if missing:
        raise SystemExit("error: missing dataset files (run `tslab generate` first):\n  " + "\n  ".join(missing))


def run_one(job: dict) -> dict:
    """Train one (config, seed) and cross-evaluate; runs in a worker process."""
    from .harness import TrainConfig, cross_domain_eval, train
    from .models import ModelConfig

    logging.basicConfig(level=job.get("log_level", logging.INFO), format="%(message)s")
    data = Path(job["data"])
    cfg = ModelConfig.from_dict(job["config"])
    tcfg = TrainConfig(**job["train"])
    tr = _load_split(data, job["source"], "train", job["train_clips"])
    va = _load_split(data, job["source"], "val", job["val_clips"])
    rec, best = train(cfg, tr, va, tcfg, source_domain=job["source"], checkpoint_path=job["checkpoint"])
    targets = {d: _load_split(data, d, "eval", job["eval_clips"]) for d in job["targets"]}
    cross_domain_eval(rec, targets, best)
    out = rec.to_json()
    Path(job["part"]).write_text(json.dumps(out, sort_keys=True) + "\n")
    return out


def _completed_ids(results: Path) -> set[str]:
    if not results.exists():
        return set()
    return {json.loads(l)["run_id"] for l in results.read_text().splitlines() if l.strip()}


def _run_jobs(args, argv, configs) -> int:
    from .harness.train import make_run_id

    data, results = Path(args.data), Path(args.results)
    _require_datasets(data, args.source, args.targets)
    results.parent.mkdir(parents=True, exist_ok=True)
    parts = results.with_name(results.name + ".runs")
    ckpts = results.with_name(results.name + ".ckpt")
    parts.mkdir(exist_ok=True)
    ckpts.mkdir(exist_ok=True)
    done = _completed_ids(results)
    jobs = []
    for cfg in configs:
        for seed in args.seeds:
            tcfg = asdict(_train_config(args, cfg.family, seed))
            rid = make_run_id(cfg.to_dict(), tcfg, args.source)
            if rid in done:
                print(f"skip {cfg.name} seed {seed}: run {rid} already recorded")
                continue
            jobs.append({"config": cfg.to_dict(), "train": tcfg, "source": args.source, "targets": args.targets,
                         "data": str(data), "train_clips": args.train_clips, "val_clips": args.val_clips,
                         "eval_clips": args.eval_clips, "checkpoint": str(ckpts / f"{rid}.tsck"),
                         "part": str(parts / f"{rid}.json"), "run_id": rid, "log_level": log.getEffectiveLevel()})
    write_manifest(results.with_name(results.name + ".manifest.json"), argv, seeds=args.seeds,
                   runs=[j["run_id"] for j in jobs])

    def record(out: dict) -> None:
        # only this (parent) process appends, so lines never interleave
        with open(results, "a") as fh:
            fh.write(json.dumps(out, sort_keys=True) + "\n")
        ev = " ".join(f"{d}={a:.3f}" for d, a in out["evals"].items())
        print(f"{out['preset']} seed {out['seed']}: best val {out['best_val_acc']:.3f} "
              f"(epoch {out['best_epoch']}) {ev}")

    if args.jobs <= 1 or len(jobs) <= 1:
        for j in jobs:
            record(run_one(j))
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for out in pool.map(run_one, jobs):
                record(out)
    return 0


def cmd_sweep(args, argv) -> int:
    from .models import sweep_config

    return _run_jobs(args, argv, [sweep_config(args.family, n) for n in args.sizes])


def cmd_train(args, argv) -> int:
    from .models import preset, sweep_config

    cfg = preset(args.preset) if args.preset else sweep_config(args.family, args.size)
    return _run_jobs(args, argv, [cfg])


# -- eval / audit --------------------------------------------------------------------

def cmd_eval(args, argv) -> int:
    from .harness import evaluate
    from .harness import checkpoint

    state, extra = checkpoint.load(args.checkpoint)
    print(f"{args.checkpoint}: {state.config.name} (epoch {extra.get('epoch')})")
    for d in args.domains:
        r = evaluate(state, _load_split(Path(args.data), d, args.role, args.eval_clips))
        print(f"  {d:<9} top1 {r['top1']:.4f}  top5 {r['top5']:.4f}")
    return 0


def cmd_audit(args, argv) -> int:
    from .models import audit_against_table

    print(audit_against_table().format())
    return 0


# -- transform / report ---------------------------------------------------------------

def _frame_index(p: Path) -> int:
    digits = "".join(ch for ch in p.stem if ch.isdigit())
    if not digits:
        raise SystemExit(f"error: cannot read a frame index from file name {p.name}")
    return int(digits)


def cmd_transform(args, argv) -> int:
    from . import domainmod as dm

    frames = {_frame_index(p): p for p in sorted(Path(args.frames).glob("*.png"))}
    if not frames:
        raise SystemExit(f"error: no PNG frames in {args.frames}")
    if args.kind == "s1":
        if not args.masks:
            raise SystemExit("error: --kind s1 needs --masks DIR")
        side = {_frame_index(p): p for p in Path(args.masks).glob("*.png")}
    else:
        if not args.boxes:
            raise SystemExit(f"error: --kind {args.kind} needs --boxes FILE")
        side = dm.read_boxes(args.boxes)
    missing = sorted(set(frames) - set(side))
    if missing:
        what = "masks" if args.kind == "s1" else "box entries"
        raise SystemExit(f"error: no {what} for frames {missing}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, path in sorted(frames.items()):
        img = dm.read_frame(path)
        if args.kind == "s1":
            res = dm.s1_compose(img, dm.read_mask(side[i]), args.sigma_blur)
        elif args.kind == "s2":
            res = dm.s2_compose(img, side[i], args.sigma_blur)
        else:
            res = dm.t_compose(img, side[i], args.fill)
        dm.write_frame(out / path.name, res)
    print(f"wrote {len(frames)} frames to {out}")
    write_manifest(out / "manifest.json", argv)
    return 0


def cmd_report(args, argv) -> int:
    from .report import read_results, write_report

    runs = read_results(args.results)
    if not runs:
        raise SystemExit(f"error: {args.results} holds no records")
    files = write_report(runs, args.out)
    for name in sorted(files):
        print(Path(args.out) / name)
    write_manifest(Path(args.out) / "manifest.json", argv)
    return 0


# -- parser ----------------------------------------------------------------------------

def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seeds", type=_csv_ints, default=[0, 1, 2, 3, 4], help="comma-separated seeds")
    p.add_argument("--source", type=_domain, default="2Dot", help="source (training) domain")
    p.add_argument("--targets", type=_csv_domains, default=["5Dot", "MNIST", "MNIST-bg"],
                   help="comma-separated target domains (evaluated on their eval split)")
    p.add_argument("--results", default="results/results.jsonl", help="JSONL results file (appended)")
    p.add_argument("--data", default="data", help="directory holding the generated .tsd files")
    p.add_argument("--lr", type=float, default=0.001, help="learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--batch", type=int, default=64, help="batch size")
    p.add_argument("--max-epochs", type=int, default=None, help="epoch limit (default 100; 300 for TimeSformer)")
    p.add_argument("--patience", type=int, default=None, help="early-stopping patience (default 10; 100 for TimeSformer)")
    p.add_argument("--flip", action="store_true", help="random horizontal flips (p=0.5 per clip)")
    p.add_argument("--target-val-acc", type=float, default=None,
                   help="stop once val accuracy reaches this fraction")
    p.add_argument("--precise-bn", type=int, default=0, metavar="N",
                   help="re-estimate batch-norm stats on N training batches after each epoch (0 = off)")
    p.add_argument("--train-clips", type=int, default=0, help="use only the first N training clips (0 = all)")
    p.add_argument("--val-clips", type=int, default=0, help="use only the first N validation clips (0 = all)")
    p.add_argument("--eval-clips", type=int, default=0, help="use only the first N eval clips per target (0 = all)")
    p.add_argument("--jobs", type=int, default=_jobs_default(), help="parallel runs (env TSLAB_JOBS)")


def build_parser() -> argparse.ArgumentParser:
    from .models import FAMILY_ALIASES

    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="tslab", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write Temporal Shape splits", formatter_class=fmt)
    p.add_argument("--domain", required=True, choices=["2dot", "5dot", "mnist", "mnist-bg"])
    p.add_argument("--train", type=int, default=4000)
    p.add_argument("--val", type=int, default=1000)
    p.add_argument("--eval", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.add_argument("--mnist-idx", default=None, help="directory with MNIST IDX files (default: bundled subset)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="train sizes x seeds and cross-evaluate", formatter_class=fmt)
    p.add_argument("--family", required=True, choices=sorted(FAMILY_ALIASES))
    p.add_argument("--sizes", type=_csv_ints, default=[2, 4, 6, 8, 10, 12, 16, 24, 32, 48],
                   help="hidden units (conv families) or head dims (attention)")
    _add_training_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train a single configuration", formatter_class=fmt)
    p.add_argument("--family", choices=sorted(FAMILY_ALIASES), default="cnn3d")
    p.add_argument("--size", type=int, default=4)
    p.add_argument("--preset", default=None, help="named preset (overrides --family/--size)")
    _add_training_flags(p)
    p.set_defaults(func=cmd_train, seeds=[0])

    p = sub.add_parser("eval", help="evaluate a checkpoint on generated splits", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="data")
    p.add_argument("--domains", type=_csv_domains, default=["2Dot", "5Dot", "MNIST", "MNIST-bg"])
    p.add_argument("--role", choices=["train", "val", "eval"], default="eval")
    p.add_argument("--eval-clips", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("audit", help="reconcile parameter counts with the published table", formatter_class=fmt)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("transform", help="apply S1/S2/T compositing to PNG frames", formatter_class=fmt)
    p.add_argument("--kind", required=True, choices=["s1", "s2", "t"])
    p.add_argument("--frames", required=True, help="directory of PNG frames (index in the file name)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--masks", default=None, help="directory of 0/255 mask PNGs (s1)")
    g.add_argument("--boxes", default=None, help="JSON file {frame index: [[x0,y0,x1,y1], ...]} (s2, t)")
    p.add_argument("--sigma-blur", type=float, default=9.0)
    p.add_argument("--fill", type=_fill, default=(124, 116, 104), help="R,G,B fill for t")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("report", help="aggregate tables and plots from a results file", formatter_class=fmt)
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args, argv)


if __name__ == "__main__":
    sys.exit(main())
