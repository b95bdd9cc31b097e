"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 Monte Carlo failures found.
Output goes to ``--out``, else ``$RDCIM_OUT``, else ``./rdcim-out``.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adders import build_tree, characterize, cost, load_fixture
from .cell import DeviceParams
from .fixtures import build_network, calibrate_scales, synthetic_images
from .formats import (FormatError, atomic_write_json, atomic_write_text, csv_text, dumps,
                      load_config, load_images_csv, load_scales_json, load_weights_csv, manifest,
                      write_csv, write_images_csv, write_scales_json, write_weights_csv)
from .macro import MacroConfig
from .mapper import DATA_DIR, NetworkError, load_network, map_network
from .perf import estimate, load_preset, peripheral_breakdown, preset_report
from .reference import reference_forward
from .runtime import QuantConfig, QuantizedNetwork, ResetMode, run_inference
from .variability import DEFAULT_CORNERS, corners_from_json, fixture_bank, monte_carlo_mac, monte_carlo_read

EXIT_INPUT = 2
EXIT_VIOLATION = 3

TRANSISTOR_NOTE = ("strict 1:1 alternation averages 19 transistors per FA position "
                   "(32.1% below all-28T); the reference figure of 'nearly 37%' is kept as a calibration note")


class InputError(Exception):
    pass


def out_dir(args) -> Path:
    d = Path(args.out or os.environ.get("RDCIM_OUT") or "rdcim-out")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _args_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


def _emit(path: Path, text: str, quiet: bool):
    atomic_write_text(path, text)
    if not quiet:
        print(f"wrote {path}", file=sys.stderr)


# --- characterize ------------------------------------------------------------------

def cmd_characterize(args) -> int:
    fixture = load_fixture(args.fixture)
    names = args.tree or list(fixture.trees)
    if "all" in names:
        names = list(fixture.trees)
    rows = []
    base_transistors = None
    for name in names:
        spec = fixture.spec(name, operand_count=args.operands, operand_width=args.width)
        tree = build_tree(spec, fixture.kinds)
        samples = None if args.exhaustive else args.samples
        err = characterize(tree, samples, args.seed)
        cspec = fixture.spec(name, operand_count=args.cost_operands, operand_width=args.cost_width)
        fc = cost(build_tree(cspec, fixture.kinds), fixture.constants)
        if base_transistors is None:
            base_transistors = 28 * fc.cells
        rows.append({
            "Adder Tree Structure": fixture.label(name),
            "Avg_Error": err.avg_error, "RMSE": round(err.rmse, 6), "Max_Error": err.max_error,
            "Samples": err.samples, "Exhaustive": err.exhaustive,
            **fc.as_row(),
            "Transistors/FA": round(fc.transistors_per_cell, 4),
            "Reduction vs 28T": round(1 - fc.transistors / base_transistors, 4),
        })
    out = out_dir(args)
    text = csv_text(rows)
    _emit(out / "table2.csv", text, args.quiet)
    atomic_write_json(out / "table2.json", {
        "manifest": manifest("characterize", _args_dict(args), args.seed, out),
        "characterization_tree": {"operands": args.operands, "width": args.width},
        "cost_tree": {"operands": args.cost_operands, "width": args.cost_width},
        "rows": rows, "reference": fixture.reference, "notes": [TRANSISTOR_NOTE]})
    if not args.quiet:
        print(text, end="")
    return 0


# --- map ---------------------------------------------------------------------------

def _network(args):
    return load_network(args.network or DATA_DIR / "lenet5.json")


def _quant(args) -> QuantConfig:
    return QuantConfig(int(args.bits[0]), int(args.bits[1]))


def _weights(args, network, quant):
    """Weights from CSV, or seeded fixture weights when no CSV is given."""
    if args.weights:
        return load_weights_csv(args.weights, network), {}
    qnet = build_network(network, quant, args.seed)
    return qnet.weights, qnet.biases


def cmd_map(args) -> int:
    cfg = load_config(args.config)["macro"]
    network = _network(args)
    quant = _quant(args)
    cfg = MacroConfig(cfg.banks, cfg.rows_per_bank, cfg.cols_per_bank, cfg.accumulator_bits,
                      quant.activation_bits, quant.weight_bits, True)
    weights, _ = _weights(args, network, quant)
    plan = map_network(network, weights, args.prune, cfg)
    out = out_dir(args)
    rows = plan.table_rows()
    text = csv_text(rows)
    _emit(out / "table3.csv", text, args.quiet)
    atomic_write_json(out / "plan.json", {"manifest": manifest("map", _args_dict(args), args.seed, out),
                                          "weights_source": str(args.weights or "seeded fixture"),
                                          **plan.as_dict()})
    if not args.quiet:
        print(text, end="")
        print(dumps(plan.totals), end="")
    return 0


# --- infer -------------------------------------------------------------------------

def cmd_infer(args) -> int:
    conf = load_config(args.config)
    network = _network(args)
    quant = _quant(args)
    weights, biases = _weights(args, network, quant)
    images = load_images_csv(args.images) if args.images else synthetic_images(args.count, network.input_shape[0], args.seed)
    if images.shape[1:] != tuple(network.input_shape):
        raise InputError(f"images have shape {images.shape[1:]}, network expects {network.input_shape}")
    if args.scales:
        scheme, scales, file_biases = load_scales_json(args.scales)
        if scheme and scheme != quant.scheme_label:
            raise InputError(f"scales file is for {scheme}, run uses {quant.scheme_label}")
        biases = file_biases or biases
        quant.scales = scales
    qnet = QuantizedNetwork(network, weights, quant, biases, args.prune)
    if not args.scales:
        quant.scales = calibrate_scales(qnet, images)
    res = run_inference(qnet, images, args.mode, args.steps, params=conf["device"], seed=args.seed,
                        skip_zero=args.skip_zero, reset_mode=ResetMode(args.reset))
    out = out_dir(args)
    man = manifest("infer", _args_dict(args), args.seed, out)
    check = None
    if args.check_reference:
        pred, logits, _ = reference_forward(qnet, images, args.mode, args.steps, reset_mode=args.reset)
        check = bool(np.array_equal(pred, res.predictions) and np.array_equal(logits, res.logits))
    write_csv(out / "predictions.csv",
              [{"image": i, "prediction": int(p)} for i, p in enumerate(res.predictions)])
    atomic_write_text(out / "trace.jsonl",
                      json.dumps({"manifest": man}) + "\n"
                      + "".join(json.dumps(t) + "\n" for t in res.traces))
    credit = res.skipped_cycles / res.bank_cycles if args.skip_zero and res.bank_cycles else 0.0
    report = estimate(res.plan, conf["cost"], sparsity_credit=credit)
    atomic_write_json(out / "cost.json", {"manifest": man, "scheme": quant.scheme_label,
                                          "mode": args.mode, "matches_reference": check,
                                          **report.as_dict()})
    if not args.quiet:
        print(f"predictions: {np.bincount(res.predictions, minlength=res.logits.shape[1]).tolist()} "
              f"(class histogram, {len(res.predictions)} images)")
        if check is not None:
            print(f"reference interpreter match: {check}")
        print(report.table())
    if check is False:
        return EXIT_VIOLATION
    return 0


# --- montecarlo --------------------------------------------------------------------

def cmd_montecarlo(args) -> int:
    conf = load_config(args.config)
    d = conf["device"]
    params = DeviceParams(
        r_lrs_nominal=args.r_lrs or d.r_lrs_nominal,
        r_hrs_nominal=args.r_hrs or d.r_hrs_nominal,
        v_set=d.v_set, v_reset=d.v_reset,
        variability_fraction=d.variability_fraction if args.variability is None else args.variability,
        distribution=args.distribution or d.distribution,
        allow_narrow_window=args.allow_narrow_window or d.allow_narrow_window)
    if args.corners:
        with open(args.corners) as fh:
            corners = corners_from_json(json.load(fh))
    else:
        corners = list(DEFAULT_CORNERS)
    read = monte_carlo_read(args.trials, params, corners, args.seed)
    result = {"read": read.as_dict()}
    failures = read.read_failures
    margins = read.margins
    if args.mac_trials:
        w, a = fixture_bank(args.seed)
        mac = monte_carlo_mac(args.mac_trials, w, a, 4, params, args.seed, corners=corners)
        result["mac"] = mac.as_dict()
        failures += mac.mac_mismatches
    out = out_dir(args)
    atomic_write_json(out / "mc.json", {"manifest": manifest("montecarlo", _args_dict(args), args.seed, out),
                                        "device": params.__dict__, **result, "failures": failures})
    counts, edges = np.histogram(margins, bins=args.bins)
    write_csv(out / "margins.csv", [{"bin_lo": f"{edges[i]:.6f}", "bin_hi": f"{edges[i + 1]:.6f}",
                                     "count": int(c)} for i, c in enumerate(counts)])
    if not args.quiet:
        print(f"read trials: {read.trials}  read failures: {read.read_failures}  "
              f"min ln-margin: {read.min_margin:.4f}")
        if args.mac_trials:
            print(f"mac trials: {mac.trials}  mismatches: {mac.mac_mismatches}  "
                  f"cell misreads: {mac.cell_read_failures}")
    return EXIT_VIOLATION if failures else 0


# --- report ------------------------------------------------------------------------

def cmd_report(args) -> int:
    from . import plotting

    run = Path(args.run_dir) if args.run_dir else out_dir(args)
    run.mkdir(parents=True, exist_ok=True)
    made = []
    if (run / "table2.json").exists():
        t2 = json.loads((run / "table2.json").read_text())
        made.append(plotting.plot_adder_trees(t2["rows"], t2["reference"], run / "adder_trees.png"))
    if (run / "plan.json").exists():
        plan = json.loads((run / "plan.json").read_text())
        rows = [{"Layer": l["layer"], "Banks Used": l["banks_used"] if l["kind"] in ("conv", "fc") else "NA",
                 "Reference Banks": (l["reference"] or {}).get("banks_used", "")} for l in plan["layers"]]
        made.append(plotting.plot_mapping(rows, run / "mapping.png"))
    if (run / "mc.json").exists():
        mc = json.loads((run / "mc.json").read_text())
        hist = [r for r in _read_csv(run / "margins.csv")] if (run / "margins.csv").exists() else []
        centers = np.repeat([(float(r["bin_lo"]) + float(r["bin_hi"])) / 2 for r in hist],
                            [int(r["count"]) for r in hist])
        made.append(plotting.plot_margins(centers, mc["read"]["per_corner"], run / "margins.png"))
    if (run / "trace.jsonl").exists():
        traces = [json.loads(l) for l in (run / "trace.jsonl").read_text().splitlines()]
        traces = [t for t in traces if "layer" in t]
        made.append(plotting.plot_layer_cycles(traces, run / "layer_cycles.png"))

    constants, workload, reference = load_preset(args.preset)
    if args.config:
        constants = load_config(args.config)["cost"]
    base = preset_report(0.0, args.preset, constants)
    sparse = preset_report(args.sparsity, args.preset, constants)
    rows = [{"Scenario": "dense", "Latency (ns/cycle)": constants.cycle_latency_ns,
             "Throughput (TOPS)": round(base.throughput_TOPS, 4),
             "Energy-efficiency (TOPS/W)": round(base.efficiency_TOPS_per_W, 3),
             "Reference Throughput": reference.get("throughput_TOPS", ["", ""])[0],
             "Reference Efficiency": reference.get("efficiency_TOPS_per_W", ["", ""])[0]},
            {"Scenario": f"sparsity {args.sparsity:g} ({constants.sparsity_rule})",
             "Latency (ns/cycle)": constants.cycle_latency_ns,
             "Throughput (TOPS)": round(sparse.throughput_TOPS, 4),
             "Energy-efficiency (TOPS/W)": round(sparse.efficiency_TOPS_per_W, 3),
             "Reference Throughput": reference.get("throughput_TOPS", ["", ""])[-1],
             "Reference Efficiency": reference.get("efficiency_TOPS_per_W", ["", ""])[-1]}]
    write_csv(run / "table4.csv", rows)
    shares = peripheral_breakdown(base, constants)
    write_csv(run / "peripheral_power.csv", [{"component": k, "power_uW": v} for k, v in shares.items()])
    made.append(plotting.plot_peripheral(shares, run / "peripheral_power.png"))
    atomic_write_json(run / "cost_preset.json", {
        "manifest": manifest("report", _args_dict(args), None, run),
        "label": "calibration preset, not a prediction", "workload": workload,
        "dense": base.as_dict(), "sparse": sparse.as_dict(),
        "throughput_ratio": sparse.throughput_TOPS / base.throughput_TOPS,
        "reference_ratio": (reference["throughput_TOPS"][-1] / reference["throughput_TOPS"][0]
                            if reference.get("throughput_TOPS") else None),
        "peripheral_breakdown_uW": shares})
    if not args.quiet:
        print(base.table())
        print(csv_text(rows), end="")
        for p in made:
            print(f"figure {p}", file=sys.stderr)
    return 0


def _read_csv(path):
    import csv
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- fixtures ----------------------------------------------------------------------

def cmd_fixtures(args) -> int:
    network = _network(args)
    quant = _quant(args)
    qnet = build_network(network, quant, args.seed, args.prune)
    images = synthetic_images(args.count, network.input_shape[0], args.seed)
    qnet.quant.scales = calibrate_scales(qnet, images)
    out = out_dir(args)
    shutil.copyfile(args.network or DATA_DIR / "lenet5.json", out / "network.json")
    write_weights_csv(out / "weights.csv", qnet.weights)
    write_scales_json(out / "scales.json", qnet.quant, qnet.biases)
    write_images_csv(out / "images.csv", images)
    if not args.quiet:
        print(f"wrote network.json, weights.csv, scales.json, images.csv to {out}")
    return 0


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdcim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rdcim {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON with macro/device/cost sections")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("characterize", parents=[common], help="adder-tree error and cost table")
    c.add_argument("--fixture", help="adder fixture JSON (cells, constants, tree presets)")
    c.add_argument("--tree", action="append", help="tree preset name, repeatable, or 'all'")
    c.add_argument("--exhaustive", action="store_true")
    c.add_argument("--samples", type=int, default=100_000)
    c.add_argument("--operands", type=int, default=2)
    c.add_argument("--width", type=int, default=4)
    c.add_argument("--cost-operands", type=int, default=64)
    c.add_argument("--cost-width", type=int, default=4)
    c.set_defaults(func=cmd_characterize)

    def net_args(sp):
        sp.add_argument("--network", help="network JSON (default: packaged LeNet-5)")
        sp.add_argument("--weights", help="weight CSV layer,filter,index,value (default: seeded fixture)")
        sp.add_argument("--bits", nargs=2, metavar=("NA", "NW"), default=("1", "4"),
                        help="activation and weight bits")
        sp.add_argument("--prune", type=float, default=0.0)

    m = sub.add_parser("map", parents=[common], help="bank allocation and cycle schedule")
    net_args(m)
    m.set_defaults(func=cmd_map)

    i = sub.add_parser("infer", parents=[common], help="run inference through the macro")
    net_args(i)
    i.add_argument("--images", help="image CSV (default: synthetic fixture images)")
    i.add_argument("--count", type=int, default=100, help="synthetic image count")
    i.add_argument("--scales", help="scales JSON (default: calibrate on the images)")
    i.add_argument("--mode", choices=("cnn", "snn"), default="cnn")
    i.add_argument("-T", "--steps", type=int, default=1, help="SNN time steps")
    i.add_argument("--reset", choices=("zero", "subtract"), default="subtract")
    i.add_argument("--skip-zero", action="store_true")
    i.add_argument("--check-reference", action="store_true",
                   help="compare against the direct integer interpreter (exit 3 on mismatch)")
    i.set_defaults(func=cmd_infer)

    mc = sub.add_parser("montecarlo", parents=[common], help="variability Monte Carlo")
    mc.add_argument("--trials", type=int, default=100_000)
    mc.add_argument("--mac-trials", type=int, default=0)
    mc.add_argument("--corners", help="corner list JSON")
    mc.add_argument("--r-lrs", type=float)
    mc.add_argument("--r-hrs", type=float)
    mc.add_argument("--variability", type=float)
    mc.add_argument("--distribution", choices=("uniform", "truncnorm"))
    mc.add_argument("--allow-narrow-window", action="store_true")
    mc.add_argument("--bins", type=int, default=40)
    mc.set_defaults(func=cmd_montecarlo)

    r = sub.add_parser("report", parents=[common], help="figures, perf preset and summary tables")
    r.add_argument("run_dir", nargs="?", help="directory with earlier outputs (default: output dir)")
    r.add_argument("--preset", help="performance preset JSON")
    r.add_argument("--sparsity", type=float, default=0.30)
    r.set_defaults(func=cmd_report)

    f = sub.add_parser("fixtures", parents=[common], help="write LeNet-5 fixture files")
    net_args(f)
    f.add_argument("--count", type=int, default=100)
    f.set_defaults(func=cmd_fixtures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"rdcim: error: {exc}", file=sys.stderr)
    except (InputError, FormatError, NetworkError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"rdcim: error: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
