"""Command-line entry point.

Exit status: 0 success, 1 validation failure, 2 usage error, 3 I/O or input-format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from . import engine, imageio, perf
from .fixedpoint import load_lmqw, save_lmqw
from .graph import (GraphError, LayerGraph, graph_from_dict, graph_to_dict, infer_shapes,
                    validate_hw_constraints, weight_count)
from .hwconfig import HwConfig
from .lmiinet import ModelConfig, build_lmiinet
from .metrics import ConfusionMatrix, metrics_json
from .schedule import schedule_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def load_model(path: str | None, scale: int | None = None) -> LayerGraph:
    """Graph JSON (has ``nodes``) or a ModelConfig JSON; no path means the default config."""
    doc = json.loads(Path(path).read_text()) if path else {}
    if "nodes" in doc:
        if scale not in (None, 1):
            raise UsageError("--scale applies to model configs, not serialized graphs")
        return infer_shapes(graph_from_dict(doc))
    cfg = ModelConfig.from_dict(doc)
    if scale is not None:
        cfg = ModelConfig.from_dict({**cfg.to_dict(), "scale_divisor": scale})
    return build_lmiinet(cfg)


def _write(out: str | None, text: str) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_describe(a) -> int:
    g = load_model(a.model, a.scale)
    print("name\tkind\tshape\tmacs\tparams")
    for n in g.nodes:
        w, b = weight_count(n)
        print(f"{n.name}\t{n.kind.kind}\t{n.shape}\t{n.macs}\t{w + b}")
    total_params = sum(sum(weight_count(n)) for n in g.nodes)
    print(f"# nodes={len(g)} macs={sum(n.macs for n in g.nodes)} params={total_params}", file=sys.stderr)
    return EXIT_OK


def cmd_build(a) -> int:
    g = load_model(a.config, a.scale)
    _write(a.out, json.dumps(graph_to_dict(g), indent=1) + "\n")
    return EXIT_OK


def cmd_synth_weights(a) -> int:
    g = load_model(a.model, a.scale)
    calib = imageio.read_ppm(a.calib_image) if a.calib_image else None
    save_lmqw(engine.synthesize_weights(g, seed=a.seed, calib=calib), a.out)
    return EXIT_OK


def cmd_analyze(a) -> int:
    hw = HwConfig.load(a.hw) if a.hw else HwConfig()
    reference = perf.read_reference_csv(a.calib) if a.calib else None
    if a.model is None and a.scale is None and reference is not None:
        eff = perf.EfficiencyModel.from_reference(reference, default=a.efficiency)
        report = perf.analyze_reference(reference, hw, eff)
    else:
        g = load_model(a.model, a.scale)
        violations = validate_hw_constraints(g, hw)
        for v in violations:
            print(f"warning: {v}", file=sys.stderr)
        overrides = {r.layer_index: r.cycles for r in reference} if reference else {}
        eff = perf.EfficiencyModel(default=a.efficiency, overrides=overrides)
        report = perf.analyze(g, hw, eff, batch=a.batch)
    fmt = a.format or ("json" if a.out and a.out.endswith(".json") else "csv")
    _write(a.out, perf.report_to_json(report) if fmt == "json" else perf.report_to_csv(report))
    return EXIT_OK


def cmd_infer(a) -> int:
    g = load_model(a.model, a.scale)
    tensors = load_lmqw(a.weights)
    img = imageio.read_ppm(a.image)
    x = engine.quantize_image(img, tensors["input.act"].params)
    imageio.write_pgm(a.out, engine.predict_classes(g, tensors, x))
    return EXIT_OK


def cmd_eval(a) -> int:
    pred_dir, gt_dir = Path(a.pred), Path(a.gt)
    gts = sorted(gt_dir.glob("*.pgm"))
    if not gts:
        raise FileNotFoundError(f"no .pgm ground-truth maps in {gt_dir}")
    cm = ConfusionMatrix(a.classes, a.ignore)
    for gt_path in gts:
        cm.update(imageio.read_pgm(pred_dir / gt_path.name), imageio.read_pgm(gt_path))
    _write(a.out, metrics_json(cm))
    return EXIT_OK


def cmd_validate(a) -> int:
    report = perf.read_reference_csv(a.report)
    # the report's util column is taken as-is, like the reference
    reference = perf.read_reference_csv(a.reference)
    devs = perf.compare_to_reference(report, reference, a.cycle_tol, a.util_tol)
    print("layer,cycle_rel_err,util_diff_pp,status")
    for d in devs:
        print(f"{d.layer_index},{d.cycle_rel_err:.6f},{d.util_diff_pp:.4f},{'ok' if d.ok else 'FAIL'}")
    failed = sum(not d.ok for d in devs)
    print(f"{failed} of {len(devs)} rows flagged", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_schedule(a) -> int:
    _write(a.out, schedule_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgraseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("describe", help="print the layer table")
    s.add_argument("--model")
    s.add_argument("--scale", type=int)
    s.set_defaults(fn=cmd_describe)

    s = sub.add_parser("build", help="emit the layer graph as JSON")
    s.add_argument("--config")
    s.add_argument("--scale", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_build)

    s = sub.add_parser("synth-weights", help="write fixed-seed calibrated weights (LMQW)")
    s.add_argument("--model")
    s.add_argument("--scale", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--calib-image")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth_weights)

    s = sub.add_parser("analyze", help="per-layer cycles, utilization, latency")
    s.add_argument("--model")
    s.add_argument("--scale", type=int)
    s.add_argument("--hw")
    s.add_argument("--calib")
    s.add_argument("--efficiency", type=float, default=0.75)
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--format", choices=["csv", "json"])
    s.add_argument("--out")
    s.set_defaults(fn=cmd_analyze)

    s = sub.add_parser("infer", help="quantized inference to a class-id PGM")
    s.add_argument("--model")
    s.add_argument("--scale", type=int)
    s.add_argument("--weights", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("eval", help="pixel accuracy and mIoU over PGM maps")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--classes", type=int, default=19)
    s.add_argument("--ignore", type=int, default=255)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("validate", help="compare a report CSV with a reference CSV")
    s.add_argument("--report", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--cycle-tol", type=float, default=0.10)
    s.add_argument("--util-tol", type=float, default=0.15)
    s.set_defaults(fn=cmd_validate)

    s = sub.add_parser("schedule", help="emit the 240-epoch QAT schedule CSV")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_schedule)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, GraphError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
