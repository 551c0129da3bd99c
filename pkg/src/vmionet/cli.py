"""Command-line interface: generation, training, evaluation and diagnostics.

Every run is reproducible from one --seed; subcommands that write artifacts
drop a resolved-config.json snapshot next to their outputs. Defaults can be
preloaded from a TOML or JSON config file whose top-level tables are named
after subcommands, with command-line flags taking precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import __version__, fem, geometry, mionet, pipeline
from .geometry import Region, RegionMetric, metric_dU, project_pn
from .sampling import derive_rng

THREADS_ENV = "VMIONET_THREADS"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config_file(path: str) -> dict:
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError as exc:  # Python 3.10
            raise UsageError(
                "TOML config requires Python >= 3.11; use JSON instead") from exc
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path) as fh:
        return json.load(fh)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _write_resolved(args, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items()
                if k != "func" and isinstance(v, (str, int, float, bool, list,
                                                  type(None)))}
    with open(os.path.join(outdir, "resolved-config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)


def _int_list(text: str) -> list:
    return [int(x) for x in text.split(",") if x]


def _float_list(text: str) -> list:
    return [float(x) for x in text.split(",") if x]


def _make_region_for(family: str, rng) -> Region:
    if family == "smooth":
        return geometry.random_smooth_region(rng)
    if family == "polygon":
        return geometry.random_convex_polygon(int(rng.integers(4, 7)), rng)
    sides = {"quad": 4, "pentagon": 5, "hexagon": 6}[family]
    return geometry.random_convex_polygon(sides, rng)


# -- subcommands -----------------------------------------------------------------


def _cmd_gen_regions(args) -> int:
    regions = [_make_region_for(args.family, derive_rng(args.seed, "region", i, 0))
               for i in range(args.count)]
    _write_resolved(args, args.out)
    path = os.path.join(args.out, "regions.json")
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in regions], fh)
    print(f"wrote {len(regions)} {args.family} regions to {path}")
    return EXIT_OK


def _dataset_config(args) -> pipeline.DatasetConfig:
    return pipeline.DatasetConfig(
        tasks=args.tasks, family=args.family, disk_points=args.points,
        boundary_encoding=args.boundary_encoding,
        boundary_data_points=args.boundary_data_points,
        h=args.h, seed=args.seed, variant=args.variant)


def _cmd_gen_dataset(args) -> int:
    cfg = _dataset_config(args)
    dataset = pipeline.build_dataset(cfg, workers=args.threads)
    dataset.save(args.out)
    _write_resolved(args, args.out)
    print(f"dataset: {cfg.tasks} {cfg.family} tasks ({cfg.variant}), "
          f"M={cfg.disk_points}, records {dataset.records.shape} -> {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    dataset = pipeline.Dataset.load(args.dataset)
    _write_resolved(args, args.out)
    ckpt = os.path.join(args.out, "checkpoint.vmio")
    model, history = pipeline.train_operator(
        dataset, lr=args.lr, iterations=args.iterations, batch_size=args.batch,
        seed=args.seed, width=args.width, depth=args.depth, p=args.rank,
        checkpoint_path=ckpt, checkpoint_interval=args.checkpoint_interval)
    mionet.save_checkpoint(ckpt, model, iteration=args.iterations,
                           loss=history[-1][1] if history else None,
                           seed=args.seed, meta=pipeline.checkpoint_meta(dataset))
    with open(os.path.join(args.out, "loss_history.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        writer.writerows(history)
    first = history[0][1] if history else float("nan")
    last = history[-1][1] if history else float("nan")
    print(f"trained {args.iterations} iterations: loss {first:.4e} -> {last:.4e}; "
          f"checkpoint {ckpt}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    dataset = pipeline.Dataset.load(args.dataset)
    model, _ = mionet.load_checkpoint(args.model)
    result = pipeline.evaluate_errors(model, dataset, split=args.split,
                                      eval_point_count=args.points,
                                      fresh_count=args.fresh)
    print(f"mean L2 error:          {result['mean_l2']:.6e}")
    print(f"mean relative L2 error: {result['mean_relative_l2']:.6e}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2)
    return EXIT_OK


def _load_region_file(path: str) -> Region:
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, list):
        data = data[0]
    return Region.from_dict(data)


def _cmd_predict(args) -> int:
    dataset = pipeline.Dataset.load(args.dataset)
    model, _ = mionet.load_checkpoint(args.model)
    region = _load_region_file(args.region)
    source = pipeline.GridField(dataset.config.f_gp,
                                derive_rng(args.f_seed, "predict-f"),
                                lo=region.bounding_box()[0],
                                hi=region.bounding_box()[1])
    pts = np.loadtxt(args.points_file, delimiter=",", ndmin=2)
    values = pipeline.predict_solution(model, region, source, pts, dataset)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "value"])
        for (x, y), v in zip(pts, values):
            writer.writerow([f"{x:.17g}", f"{y:.17g}", f"{v:.17g}"])
    print(f"wrote {len(values)} predictions to {args.out}")
    return EXIT_OK


def _cmd_mesh_influence(args) -> int:
    dataset = pipeline.Dataset.load(args.dataset)
    model, _ = mionet.load_checkpoint(args.model)
    result = pipeline.mesh_influence_experiment(
        model, dataset, boundary_sample_counts=args.counts,
        mesh_sizes=args.sizes, eval_point_count=args.points,
        task_seed=args.task_seed)
    print(f"{'#boundary':>10} {'mesh h':>8} {'L2':>12} {'rel L2':>12}")
    for level in result["levels"]:
        print(f"{level['boundary_points']:>10d} {level['mesh_size']:>8.3g} "
              f"{level['l2_error']:>12.4e} {level['relative_l2_error']:>12.4e}")
    pw = np.asarray(result["pairwise_relative_l2"])
    print(f"max pairwise relative L2 difference: {pw.max():.4e}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2)
    return EXIT_OK


def _cmd_bench_projection(args) -> int:
    ns = args.n
    cfg = RegionMetric(args.grid)
    means = []
    rows = []
    for n in ns:
        vals = []
        for i in range(args.regions):
            region = geometry.random_smooth_region(derive_rng(args.seed, "bench", i))
            vals.append(metric_dU(region, project_pn(region, n), cfg))
        means.append(float(np.mean(vals)))
        rows.append((n, means[-1]))
    slope = np.polyfit(np.log(ns), np.log(means), 1)[0]
    print(f"{'n':>6} {'mean dU':>14}")
    for n, m in rows:
        print(f"{n:>6d} {m:>14.6e}")
    print(f"log-log slope: {slope:.3f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "mean_dU"])
            writer.writerows(rows)
    return EXIT_OK


def _cmd_export_field(args) -> int:
    if args.field in ("pred", "error") and not args.model:
        raise UsageError("--model is required for --field pred/error")
    dataset = pipeline.Dataset.load(args.dataset)
    task = dataset.rebuild_task(args.task_index)
    region = task.region
    lo, hi = region.bounding_box()
    xs = np.linspace(lo[0], hi[0], args.grid)
    ys = np.linspace(lo[1], hi[1], args.grid)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    inside = region.contains(pts)

    values = np.full(pts.shape[0], np.nan)
    if args.field in ("pred", "error"):
        model, _ = mionet.load_checkpoint(args.model)
        disk = geometry.alpha(region, pts[inside])
        pred = pipeline.predict_disk(
            model, dataset, dataset.encode_inputs(task.radii, task.f_values),
            disk, radii=task.radii)
    if args.field in ("true", "error"):
        true = fem.eval_field(task.mesh, task.u, pts[inside])
    values[inside] = {"pred": lambda: pred,
                      "true": lambda: true,
                      "error": lambda: pred - true}[args.field]()
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "value"])
        for (x, y), v in zip(pts, values):
            writer.writerow([f"{x:.17g}", f"{y:.17g}",
                             "nan" if np.isnan(v) else f"{v:.17g}"])
    print(f"wrote {int(inside.sum())} in-domain / {pts.shape[0]} grid values "
          f"to {args.out}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser(config: dict | None = None) -> _Parser:
    parser = _Parser(prog="vmionet",
                     description="Operator learning for Poisson problems on "
                                 "varying star-shaped domains")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="TOML or JSON file with per-subcommand "
                                         "defaults", default=None)
    sub = parser.add_subparsers(dest="command", metavar="command")
    registered = {}

    def add(name, func, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(func=func)
        registered[name] = p
        return p

    p = add("gen-regions", _cmd_gen_regions, help="generate random regions")
    p.add_argument("--family", default="smooth",
                   choices=["smooth", "polygon", "quad", "pentagon", "hexagon"])
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("gen-dataset", _cmd_gen_dataset, help="generate a task dataset")
    p.add_argument("--tasks", type=int, default=300)
    p.add_argument("--family", default="smooth",
                   choices=["smooth", "polygon", "quad", "pentagon", "hexagon"])
    p.add_argument("--points", type=int, default=800, help="disk pullback points M")
    p.add_argument("--boundary-encoding", type=int, default=200)
    p.add_argument("--boundary-data-points", type=int, default=200)
    p.add_argument("--h", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", default="simple", choices=["simple", "full"])
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("--out", required=True)

    p = add("train", _cmd_train, help="train an operator on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=50_000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--rank", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-interval", type=int, default=0)

    p = add("eval", _cmd_eval, help="evaluate a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test", choices=["test", "train"])
    p.add_argument("--fresh", type=int, default=0,
                   help="evaluate on N freshly generated tasks instead")
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--out", default=None)

    p = add("predict", _cmd_predict, help="predict on a region from a file")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--region", required=True, help="region JSON file")
    p.add_argument("--f-seed", type=int, default=0)
    p.add_argument("--points-file", required=True,
                   help="CSV of x,y query points inside the region")
    p.add_argument("--out", required=True)

    p = add("mesh-influence", _cmd_mesh_influence,
            help="prediction stability across discretization levels")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--counts", type=_int_list, default=[100, 50, 25])
    p.add_argument("--sizes", type=_float_list, default=[0.01, 0.02, 0.04])
    p.add_argument("--points", type=int, default=2000)
    p.add_argument("--task-seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add("bench-projection", _cmd_bench_projection,
            help="empirical projection convergence rates")
    p.add_argument("--n", type=_int_list, default=[8, 16, 32, 64, 128, 256])
    p.add_argument("--regions", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=8192)
    p.add_argument("--out", default=None)

    p = add("export-field", _cmd_export_field,
            help="predicted/true field on a grid clipped to the region")
    p.add_argument("--model", default=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--task-index", type=int, default=0)
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--field", default="pred", choices=["pred", "true", "error"])
    p.add_argument("--out", required=True)

    # config defaults must be applied after the arguments exist, or argparse
    # keeps the add_argument defaults
    for name, section in (config or {}).items():
        if name not in registered:
            raise UsageError(f"config section {name!r} is not a subcommand")
        known = {a.dest for a in registered[name]._actions}
        unknown = set(section) - known
        if unknown:
            raise UsageError(f"unknown config keys for {name}: {sorted(unknown)}")
        registered[name].set_defaults(**section)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = None
        if "--config" in argv:
            config = _load_config_file(argv[argv.index("--config") + 1])
        parser = build_parser(config)
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse --version / --help
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except IndexError:
        print("error: --config requires a path", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
