"""Command line interface.

Machine-readable output (one JSON object per line) goes to stdout; human
summaries go to stderr. PBQ_SEED overrides default seeds; explicit --seed
flags win over the environment.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import QuantConfig
from .hessian import HessianState, accumulate, finalize
from .pbgptq import QuantReport, evaluate, pbgptq_quantize, rtn_quantize
from .pbmatrix import bit_budget, dequantize, pack, unpack
from .qat import train_demo
from .saliency import mask_stats
from .tensorio import TensorContainer, read_container, write_container

REPORT_KEYS = (
    "name",
    "frobenius_error",
    "relative_error",
    "bits_per_weight",
    "salient_count",
    "seconds",
)


def _default_seed() -> int:
    return int(os.environ.get("PBQ_SEED", "0"))


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")


def _say(msg: str) -> None:
    sys.stderr.write(msg + "\n")


def _report_json(report: QuantReport) -> dict:
    return {
        "name": report.name,
        "frobenius_error": report.frobenius_error,
        "relative_error": report.relative_error,
        "bits_per_weight": report.bits_per_weight,
        "salient_count": report.salient_count,
        "seconds": report.seconds,
    }


def _budget_json(ratio: float, bits: int) -> dict:
    budget = bit_budget(ratio, bits)
    return {
        "r_binary": budget.r_binary,
        "salient_bits": budget.salient_bits,
        "total_bits": budget.total_bits,
    }


def cmd_budget(args) -> int:
    if args.sweep:
        ratios = [round(0.1 * i, 1) for i in range(11)]
    else:
        ratios = [args.ratio]
    for r in ratios:
        _emit(_budget_json(r, args.salient_bits))
    _say(
        f"bit budget at {args.salient_bits}-bit salients over "
        f"{len(ratios)} ratio(s)"
    )
    return 0


def _layer_pairs(weights: TensorContainer, acts: TensorContainer):
    """Match <name>.weight with <name>.acts; every weight needs activations."""
    pairs = []
    act_names = {n for n in acts.names() if n.endswith(".acts")}
    for name in weights.names():
        if not name.endswith(".weight"):
            continue
        base = name[: -len(".weight")]
        act_key = base + ".acts"
        if act_key not in act_names:
            raise ValueError(f"no activations for layer {base!r}")
        w = weights.get(name)
        x = acts.get(act_key)
        if w.ndim != 2 or x.ndim != 2:
            raise ValueError(f"layer {base!r}: weight and acts must be 2-D")
        if w.shape[1] != x.shape[0]:
            raise ValueError(
                f"layer {base!r}: weight is {w.shape}, acts are {x.shape}; "
                f"acts rows must equal weight columns"
            )
        pairs.append((base, np.asarray(w, dtype=np.float64), np.asarray(x, dtype=np.float64)))
    if not pairs:
        raise ValueError("no '<layer>.weight' tensors found")
    return pairs


def _safe_filename(layer: str) -> str:
    return layer.replace(os.sep, "__") + ".pbtc"


def _quantize_one(item, config: QuantConfig, method: str):
    name, w, x = item
    if method == "pbgptq":
        state = HessianState(w.shape[1], config.damping_fraction)
        accumulate(state, x)
        pb, _ = pbgptq_quantize(w, state, config, name=name)
    else:
        hinv = None
        if config.criterion == "hessian":
            state = HessianState(w.shape[1], config.damping_fraction)
            accumulate(state, x)
            hinv, _ = finalize(state)
        pb = rtn_quantize(w, config, hinv)
    report = evaluate(w, pb, x, name=name)
    return name, pb, report


def cmd_quantize(args) -> int:
    weights = read_container(args.model)
    acts = read_container(args.acts)
    pairs = _layer_pairs(weights, acts)
    config = QuantConfig(
        salient_fraction=args.fraction,
        criterion=args.criterion,
        granularity=args.granularity,
        group_size=args.group_size,
        salient_bits=args.salient_bits,
        damping_fraction=args.damping,
    )
    os.makedirs(args.out_dir, exist_ok=True)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(
                pool.map(lambda it: _quantize_one(it, config, args.method), pairs)
            )
    else:
        results = [_quantize_one(it, config, args.method) for it in pairs]
    for name, pb, report in results:
        write_container(pack(pb), os.path.join(args.out_dir, _safe_filename(name)))
        _emit(_report_json(report))
    worst = max(r.relative_error for _, _, r in results)
    _say(
        f"quantized {len(results)} layer(s) with {args.method} at fraction "
        f"{args.fraction}; worst relative error {worst:.6f}"
    )
    return 0


def cmd_eval(args) -> int:
    weights = read_container(args.model)
    acts = read_container(args.acts)
    pairs = _layer_pairs(weights, acts)
    for name, w, x in pairs:
        path = os.path.join(args.quantized, _safe_filename(name))
        pb = unpack(read_container(path))
        _emit(_report_json(evaluate(w, pb, x, name=name)))
    _say(f"evaluated {len(pairs)} layer(s)")
    return 0


def cmd_inspect(args) -> int:
    pb = unpack(read_container(args.file))
    stats = mask_stats(pb.mask)
    sal = pb.mask.to_bool()
    all_salient_groups = 0
    from .saliency import group_bounds

    for start, stop in group_bounds(pb.cols, pb.group_size):
        all_salient_groups += int(sal[:, start:stop].all(axis=1).sum())
    _emit(
        {
            "rows": pb.rows,
            "cols": pb.cols,
            "group_size": pb.group_size,
            "salient_bits": pb.salient_bits,
            "salient_count": stats.salient_count,
            "salient_fraction": stats.fraction,
            "bits_per_weight": pb.bits_per_weight,
            "alpha_mean": float(pb.alpha.mean()),
            "alpha_min": float(pb.alpha.min()),
            "alpha_max": float(pb.alpha.max()),
            "mu_mean": float(pb.mu.mean()),
            "mu_min": float(pb.mu.min()),
            "mu_max": float(pb.mu.max()),
            "all_salient_groups": all_salient_groups,
            "max_salient_per_column": int(stats.per_column.max()),
        }
    )
    _say(f"{pb.rows}x{pb.cols} at {pb.bits_per_weight:.3f} bits/weight")
    return 0


def cmd_qat_demo(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    records = train_demo(
        fraction=args.fraction, steps=args.steps, seed=seed, lr=args.lr
    )
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["step", "loss", "alpha_mean"])
        for rec in records:
            writer.writerow(
                [rec.step, f"{rec.loss:.10g}", f"{rec.alpha_snapshot.mean():.10g}"]
            )
    finally:
        if args.out:
            out.close()
    _say(
        f"qat demo: fraction {args.fraction}, {args.steps} steps, seed {seed}; "
        f"loss {records[0].loss:.6f} -> {records[-1].loss:.6f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbq",
        description="Partially binarized weight quantization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("budget", help="average bits per weight for a split")
    p.add_argument("--ratio", type=float, default=0.9, help="unsalient fraction")
    p.add_argument("--salient-bits", type=int, default=8)
    p.add_argument("--sweep", action="store_true", help="sweep ratios 0.0..1.0")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("quantize", help="quantize every layer in a container")
    p.add_argument("model", help="container with <layer>.weight tensors")
    p.add_argument("acts", help="container with <layer>.acts tensors")
    p.add_argument("--out-dir", required=True, help="directory for <layer>.pbtc")
    p.add_argument("--method", choices=("rtn", "pbgptq"), default="pbgptq")
    p.add_argument("--criterion", choices=("magnitude", "hessian"), default="magnitude")
    p.add_argument("--granularity", choices=("element", "column"), default="element")
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--group-size", type=int, default=0)
    p.add_argument("--salient-bits", type=int, default=8)
    p.add_argument("--damping", type=float, default=0.01)
    p.add_argument("--jobs", type=int, default=1, help="layers quantized in parallel")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="re-evaluate quantized layers")
    p.add_argument("model")
    p.add_argument("acts")
    p.add_argument("quantized", help="directory produced by quantize")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="summarize one quantized layer")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("qat-demo", help="train the demo network, emit CSV")
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_qat_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single choke point for diagnostics
        _say(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
