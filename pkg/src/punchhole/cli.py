"""Command-line entry points: serve, simulate, export, compare."""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from .aggregate import compare_scores
from .grid import GroundTruthMask, load_mask_png, read_score_csv
from .rng import SplitMix64
from .session import GroupTesting, Sequential, Shuffled
from .simulator import (
    SECONDS_PER_QUESTION,
    AnnotatorModel,
    ExperimentConfig,
    run_experiment,
    write_report,
)


def random_mask(width: int, height: int, seed: int, n_blobs: int = 3) -> GroundTruthMask:
    """A few random rectangles of importance; handy for demos and dry runs."""
    rng = SplitMix64(seed)
    pixels = np.zeros((height, width), dtype=bool)
    for _ in range(n_blobs):
        w = 1 + rng.next_below(max(1, width // 3))
        h = 1 + rng.next_below(max(1, height // 3))
        x = rng.next_below(max(1, width - w + 1))
        y = rng.next_below(max(1, height - h + 1))
        pixels[y : y + h, x : x + w] = True
    return GroundTruthMask(pixels)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="punchhole",
        description="Punch-hole labeling: sessions, simulation and map export.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the annotation HTTP service")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--data-dir", default="punchhole-data")
    serve.add_argument("--ui", default=None, help="static frontend directory to mount at /ui")

    sim = sub.add_parser("simulate", help="run synthetic-annotator experiments")
    sim.add_argument("--width", type=int, default=64)
    sim.add_argument("--height", type=int, default=64)
    sim.add_argument("--mask", default=None, help="ground-truth mask PNG (0=unimportant)")
    sim.add_argument("--patch-size", type=int, required=True)
    sim.add_argument("--levels", type=int, default=0, help="max refinement level")
    sim.add_argument("--policy", choices=["seq", "shuf", "group"], default="seq")
    sim.add_argument("--max-group", type=int, default=8)
    sim.add_argument("--theta", type=float, default=0.0, help="hidden-area tolerance")
    sim.add_argument("--eps", type=float, default=0.0, help="answer flip probability")
    sim.add_argument("--orders", type=int, default=0, help="shuffled orders for the order study")
    sim.add_argument("--workers", type=int, default=1, help="odd worker count per majority map")
    sim.add_argument("--trials", type=int, default=1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--seconds-per-question", type=float, default=SECONDS_PER_QUESTION)
    sim.add_argument("--out", required=True, help="report output directory")

    export = sub.add_parser("export", help="export a task's importance map")
    export.add_argument("--task", required=True)
    export.add_argument("--tau", type=float, default=0.8)
    export.add_argument("--data-dir", default="punchhole-data")
    export.add_argument("--out", required=True, help="output directory")

    comp = sub.add_parser("compare", help="compare two per-patch score CSVs")
    comp.add_argument("--a", required=True)
    comp.add_argument("--b", required=True)
    return parser


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.data_dir, ui_dir=args.ui), host=args.host, port=args.port)
    return 0


def _cmd_simulate(args) -> int:
    if args.mask:
        mask = load_mask_png(args.mask)
    else:
        mask = random_mask(args.width, args.height, args.seed)
    if args.policy == "seq":
        policy = Sequential()
    elif args.policy == "shuf":
        policy = Shuffled(seed=args.seed)
    else:
        policy = GroupTesting(seed=args.seed, max_group=args.max_group)
    config = ExperimentConfig(
        base_patch_side=args.patch_size,
        max_level=args.levels,
        policies=(policy,),
        annotators=(
            AnnotatorModel(mask=mask, tolerance=args.theta, flip_prob=args.eps, seed=args.seed),
        ),
        orders=args.orders,
        workers=args.workers,
        trials=args.trials,
        seconds_per_question=args.seconds_per_question,
    )
    report = run_experiment(config)
    write_report(report, args.out, config.seconds_per_question)
    questions = sum(sum(r.questions_by_level.values()) for r in report.runs)
    print(f"runs: {len(report.runs)}")
    print(f"questions: {questions}")
    print(f"estimated_seconds: {report.total_est_seconds:.2f}")
    for (eps, m), (emp, ana) in sorted(report.majority_error.items()):
        print(f"majority_error eps={eps} m={m}: empirical {emp:.5f} analytic {ana:.5f}")
    print(f"report: {os.path.join(args.out, 'report.csv')}")
    return 0


def _cmd_export(args) -> int:
    from .service import Store

    store = Store(args.data_dir)
    payload = store.get_map(args.task, args.tau)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "map.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
    for name in (f"{args.task}.csv", f"{args.task}.png"):
        src = store.root / "maps" / name
        dst = os.path.join(args.out, "map" + os.path.splitext(name)[1])
        with open(src, "rb") as s, open(dst, "wb") as d:
            d.write(s.read())
    print(f"exported task {args.task} at tau={args.tau} to {args.out}")
    return 0


def _cmd_compare(args) -> int:
    metrics = compare_scores(read_score_csv(args.a), read_score_csv(args.b))
    print(f"iou {metrics.iou_at_half:.6f}")
    print(f"precision {metrics.precision:.6f}")
    print(f"recall {metrics.recall:.6f}")
    print(f"pearson {'undefined' if metrics.pearson is None else f'{metrics.pearson:.6f}'}")
    print(f"spearman {'undefined' if metrics.spearman is None else f'{metrics.spearman:.6f}'}")
    return 0


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "serve": _cmd_serve,
        "simulate": _cmd_simulate,
        "export": _cmd_export,
        "compare": _cmd_compare,
    }
    try:
        return handlers[args.command](args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"punchhole {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
