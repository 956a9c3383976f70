"""prior-forge command line interface.

Subcommands: run, calibrate, eval, heatmap, stats, place, loss-ref,
export-trainset. Data goes to files or stdout, logs go to stderr as
structured lines, and every report path can also render matplotlib
figures next to its delimited output. Exit codes: 0 success, 2 usage or
configuration error, 3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys

import numpy as np

from . import earlystop, matchloss, metrics, report
from .backends import SimBackend, WorkerBackend, WorkerClient
from .export import export_trainset
from .pipeline import RunConfig, Taxonomy, read_dataset, run_dataset, write_dataset
from .placement import select_top1
from .prior import SpatialPrior, aggregate_class_prior, Heatmap
from .verify import Detection
from .geometry import BBox

log = logging.getLogger("prior_forge.cli")

WORKER_ENV = "PRIOR_FORGE_WORKER"


class UsageError(Exception):
    exit_code = 2


class BackendError(Exception):
    exit_code = 3


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fp:
            return json.load(fp)
    except FileNotFoundError:
        raise UsageError(f"{what} not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} is not valid JSON ({path}): {exc}")


def _load_config(path: str) -> RunConfig:
    obj = _load_json(path, "config file")
    if "taxonomy_path" in obj and "taxonomy" not in obj:
        obj["taxonomy"] = _load_json(obj["taxonomy_path"], "taxonomy file")
    try:
        return RunConfig.from_json(obj)
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"bad config {path}: {exc}")


def _read_records(path: str):
    try:
        with open(path, encoding="utf-8") as fp:
            return read_dataset(fp)
    except FileNotFoundError:
        raise UsageError(f"dataset not found: {path}")


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.backend == "sim":
        def backend_factory():
            return SimBackend({})
    else:
        worker_cmd = os.environ.get(WORKER_ENV)
        if not worker_cmd:
            raise UsageError(f"--backend worker requires {WORKER_ENV} to be set")
        argv = shlex.split(worker_cmd)

        def backend_factory():
            try:
                return WorkerBackend(WorkerClient(
                    argv, timeout=args.worker_timeout))
            except OSError as exc:
                raise BackendError(f"cannot spawn worker {argv!r}: {exc}")

    result = run_dataset(cfg, backend_factory, seed=args.seed,
                         workers=args.workers)
    if result.records:
        with open(args.out, "w", encoding="utf-8") as fp:
            write_dataset(result.records, fp)
    if result.failures:
        sidecar = args.out + ".failures.json"
        with open(sidecar, "w", encoding="utf-8") as fp:
            json.dump(result.failures, fp, indent=2)
            fp.write("\n")
        log.warning("%d scenes failed; see %s", len(result.failures), sidecar)
    if not result.records:
        raise BackendError("every scene failed; no dataset written")
    print(json.dumps({"out": args.out, "records": len(result.records),
                      "attempted": result.attempted,
                      "positive_scenes": result.positive_scene_count,
                      "failed": len(result.failures)}))
    return 0


def cmd_calibrate(args) -> int:
    try:
        step_costs = [float(x) for x in args.step_costs.split(",")]
    except ValueError:
        raise UsageError(f"bad --step-costs {args.step_costs!r}")
    try:
        with open(args.traces, encoding="utf-8") as fp:
            traces = earlystop.load_traces(fp)
    except FileNotFoundError:
        raise UsageError(f"traces file not found: {args.traces}")
    try:
        sweep = earlystop.calibration_sweep(traces, step_costs, args.tau_full,
                                            args.target_recall)
    except (earlystop.CalibrationError, ValueError) as exc:
        raise UsageError(str(exc))
    best = min(sweep, key=lambda r: r.expected_cost)
    payload = {"result": best.to_json(), "sweep": [r.to_json() for r in sweep]}
    with open(args.out, "w", encoding="utf-8") as fp:
        json.dump(payload, fp, indent=2)
        fp.write("\n")
    if args.fig:
        report.save_calibration_figure([r.to_json() for r in sweep],
                                       best.step, args.fig)
    print(json.dumps(best.to_json()))
    return 0


def _eval_instances(pred_path: str, records):
    by_key = {}
    for rec in records:
        gt = tuple(e.verified for e in rec.positives())
        if gt:
            by_key[(rec.scene_id, rec.object_class)] = gt
    instances = []
    try:
        pred_fp = open(pred_path, encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"predictions not found: {pred_path}")
    with pred_fp:
        for line in pred_fp:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            key = (obj["scene_id"], obj["object_class"])
            if key not in by_key:
                continue
            preds = tuple((BBox.from_json(p["box"]), float(p["score"]))
                          for p in obj["predictions"])
            instances.append(metrics.EvalInstance(preds, by_key[key]))
    return instances


def cmd_eval(args) -> int:
    records = _read_records(args.gt)
    instances = _eval_instances(args.pred, records)
    if not instances:
        raise UsageError("no prediction lines matched a positively "
                         "annotated (scene, class) instance")
    metric_values = {
        "mAP": metrics.mean_ap(instances),
        "IoU50@1": metrics.iou50_at_k(instances, 1),
        "IoU@1": 100.0 * float(np.mean([metrics.iou_at_k(i, 1)
                                        for i in instances])),
        "IoU50@5": metrics.iou50_at_k(instances, 5),
        "IoU@5": 100.0 * float(np.mean([metrics.iou_at_k(i, 5)
                                        for i in instances])),
    }
    center = metrics.center_histogram(records, args.center_bins)
    density, edges = metrics.area_density(records, args.area_bins)
    payload = {
        "instances": len(instances),
        "metrics": metric_values,
        "center_histogram": center.tolist(),
        "area_density": {"density": density.tolist(),
                         "bin_edges": edges.tolist()},
    }
    with open(args.report, "w", encoding="utf-8") as fp:
        json.dump(payload, fp, indent=2)
        fp.write("\n")
    if args.hist_pgm:
        peak = center.max()
        values = center / peak if peak > 0 else center
        hm = Heatmap(values.shape[1], values.shape[0], values)
        with open(args.hist_pgm, "wb") as fp:
            fp.write(hm.to_pgm())
    if args.fig:
        report.save_eval_figure(metric_values, args.fig)
    print(json.dumps(metric_values))
    return 0


def cmd_heatmap(args) -> int:
    records = _read_records(args.infile)
    selected = [r for r in records if r.object_class == args.object_class]
    if not selected:
        raise UsageError(f"no records of class {args.object_class!r} in "
                         f"{args.infile}")
    side = int(round(selected[0].image_side))
    priors = [r.to_prior() for r in selected]
    heatmap = aggregate_class_prior(priors, args.object_class, side, side,
                                    conf_min=args.conf_min,
                                    reward_min=args.reward_min)
    with open(args.out, "wb") as fp:
        fp.write(heatmap.to_pgm())
    if args.png:
        from PIL import Image
        levels = np.round(np.clip(heatmap.values, 0, 1) * 255).astype(np.uint8)
        Image.fromarray(levels, mode="L").save(args.png)
    if args.fig:
        report.save_heatmap_figure(heatmap, args.fig,
                                   title=f"{args.object_class} placement prior")
    print(json.dumps({"out": args.out, "records": len(selected),
                      "width": side, "height": side}))
    return 0


def cmd_stats(args) -> int:
    records = _read_records(args.infile)
    positives = sum(len(r.positives()) for r in records)
    total_entries = sum(len(r.entries) for r in records)
    split_counts: dict[str, int] = {}
    class_positives: dict[str, int] = {}
    for rec in records:
        split_counts[rec.split or "unassigned"] = \
            split_counts.get(rec.split or "unassigned", 0) + 1
        class_positives[rec.object_class] = \
            class_positives.get(rec.object_class, 0) + len(rec.positives())
    center = metrics.center_histogram(records, args.center_bins)
    density, edges = metrics.area_density(records, args.area_bins)
    payload = {
        "records": len(records),
        "positive_records": sum(1 for r in records if r.positives()),
        "positive_boxes": positives,
        "negative_boxes": total_entries - positives,
        "splits": split_counts,
        "class_positive_boxes": dict(sorted(class_positives.items())),
        "center_histogram": center.tolist(),
        "area_density": {"density": density.tolist(),
                         "bin_edges": edges.tolist()},
    }
    with open(args.report, "w", encoding="utf-8") as fp:
        json.dump(payload, fp, indent=2)
        fp.write("\n")
    if args.fig_dir:
        os.makedirs(args.fig_dir, exist_ok=True)
        report.save_center_histogram_figure(
            center, os.path.join(args.fig_dir, "center_histogram.png"))
        report.save_area_density_figure(
            density, edges, os.path.join(args.fig_dir, "area_density.png"))
    print(json.dumps({"records": len(records), "positive_boxes": positives}))
    return 0


def cmd_place(args) -> int:
    prior = SpatialPrior.from_json(_load_json(args.prior, "prior file"))
    dets_obj = _load_json(args.background_dets, "detections file")
    dets = [Detection(BBox.from_json(d["box"]), float(d["confidence"]),
                      d["class"]) for d in dets_obj]
    box = select_top1(prior, dets)
    payload = {"box": None if box is None else box.to_json()}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fp:
            json.dump(payload, fp)
            fp.write("\n")
    print(json.dumps(payload))
    return 0


def cmd_loss_ref(args) -> int:
    try:
        ref = matchloss.emit_loss_reference(args.infile, args.out)
    except FileNotFoundError:
        raise UsageError(f"case file not found: {args.infile}")
    print(json.dumps({"total_loss": ref["total_loss"]}))
    return 0


def cmd_export_trainset(args) -> int:
    cfg = _load_config(args.config)
    records = _read_records(args.dataset)
    with open(args.out, "w", encoding="utf-8") as fp:
        emitted = export_trainset(records, cfg, args.seed, fp,
                                  image_size=args.image_size,
                                  top_k=args.top_k)
    print(json.dumps({"out": args.out, "instances": emitted}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prior-forge",
        description="Spatial-prior extraction engine for object placement.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the extraction pipeline")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--backend", choices=["sim", "worker"], default="sim")
    p.add_argument("--out", required=True, help="dataset JSONL output path")
    p.add_argument("--seed", type=int, default=0,
                   help="master seed for all randomness (default 0)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="worker pool size (default: available parallelism)")
    p.add_argument("--worker-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="calibrate the early-stop threshold")
    p.add_argument("--traces", required=True, help="divergence traces JSONL")
    p.add_argument("--step-costs", required=True,
                   help="comma-separated cumulative cost through each step")
    p.add_argument("--tau-full", type=float, required=True,
                   help="cost of a full inpainting")
    p.add_argument("--target-recall", type=float, default=0.81)
    p.add_argument("--out", required=True, help="calibration JSON output")
    p.add_argument("--fig", help="optional cost/pass-fraction figure (png)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval", help="evaluate predictions against a dataset")
    p.add_argument("--pred", required=True, help="predictions JSONL")
    p.add_argument("--gt", required=True, help="dataset JSONL (ground truth)")
    p.add_argument("--report", required=True, help="report JSON output")
    p.add_argument("--center-bins", type=int, default=16)
    p.add_argument("--area-bins", type=int, default=24)
    p.add_argument("--hist-pgm", help="optional center-histogram PGM")
    p.add_argument("--fig", help="optional metrics figure (png)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="render a class prior heatmap")
    p.add_argument("--in", dest="infile", required=True, help="dataset JSONL")
    p.add_argument("--class", dest="object_class", required=True)
    p.add_argument("--out", required=True, help="P5 PGM output path")
    p.add_argument("--png", help="optional lossless grayscale PNG")
    p.add_argument("--fig", help="optional colormapped figure (png)")
    p.add_argument("--conf-min", type=float, default=0.4)
    p.add_argument("--reward-min", type=float, default=0.0)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("stats", help="dataset bias statistics")
    p.add_argument("--in", dest="infile", required=True, help="dataset JSONL")
    p.add_argument("--report", required=True, help="stats JSON output")
    p.add_argument("--center-bins", type=int, default=16)
    p.add_argument("--area-bins", type=int, default=24)
    p.add_argument("--fig-dir", help="optional directory for figures")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("place", help="pick the top-1 non-colliding box")
    p.add_argument("--prior", required=True, help="prior JSON")
    p.add_argument("--background-dets", required=True,
                   help="background detections JSON")
    p.add_argument("--out", help="optional output JSON path")
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("loss-ref", help="emit reference loss vectors")
    p.add_argument("--in", dest="infile", required=True, help="case JSON")
    p.add_argument("--out", required=True, help="expected-loss JSON output")
    p.set_defaults(func=cmd_loss_ref)

    p = sub.add_parser("export-trainset",
                       help="emit the trainer-facing dataset")
    p.add_argument("--dataset", required=True, help="dataset JSONL")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--seed", type=int, default=0,
                   help="seed the dataset was produced with (default 0)")
    p.add_argument("--out", required=True, help="trainset JSONL output")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--top-k", type=int, default=matchloss.DEFAULT_TOP_K)
    p.set_defaults(func=cmd_export_trainset)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": str(exc), "kind": "usage"}), file=sys.stderr)
        return UsageError.exit_code
    except BackendError as exc:
        print(json.dumps({"error": str(exc), "kind": "backend"}),
              file=sys.stderr)
        return BackendError.exit_code


if __name__ == "__main__":
    sys.exit(main())
