"""Command-line front end. Verbs exchange maps, channel files and manifests on disk."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io
from .acquisition import EmissionPlan, Waveform, add_noise, emission_seeds, synthesize_focused
from .bench import bench_adjoint_scaling, bench_fwi_scaling, write_report
from .config import UNANCHORED_DEFAULTS, RunConfig, build, load_config
from .errors import ConfigError, IoError, MissingMap, NWIError, ShapeMismatch
from .gradcheck import gradient_check, passed, smooth_random_props
from .grid import PROPERTY_NAMES, ChannelData, ProbeGeometry, PropertySet, PulseField
from .inversion import Physics, dataset_loss, loss_and_gradient, multi_pulse_invert
from .phantom import export_map, interior_mask, make_phantom, nrmse_table
from .plotting import plot_losses, plot_maps, plot_scaling
from .solver import PmlConfig, simulate

log = logging.getLogger("nwi")


class Console:
    def __init__(self, quiet):
        self.quiet = quiet

    def __call__(self, *parts):
        if not self.quiet:
            print(*parts)


# -- files ------------------------------------------------------------------------------


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out_dir, command, cfg: RunConfig, **extra):
    manifest = {
        "command": command,
        "version": _version(),
        "config": cfg.raw,
        "unanchored_defaults": UNANCHORED_DEFAULTS,
        **extra,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serialisable: {type(obj)}")


def read_manifest(directory):
    path = Path(directory) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoError(f"{path} is not valid JSON: {exc}") from exc


def save_props(props, out_dir):
    out = Path(out_dir)
    for name in PROPERTY_NAMES:
        io.write_nwimap(out / f"{name}.nwimap", getattr(props, name), name)


def load_props(directory) -> PropertySet:
    maps = {}
    for name in PROPERTY_NAMES:
        path = Path(directory) / f"{name}.nwimap"
        if not path.exists():
            raise MissingMap(name, path)
        maps[name], _ = io.read_nwimap(path)
    return PropertySet.from_dict(maps)


def channel_path(directory, index):
    return Path(directory) / f"emission_{index:03d}.csv"


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- verbs ------------------------------------------------------------------------------


def cmd_phantom(cfg: RunConfig, args, say):
    out = _out_dir(args, "phantom")
    props = make_phantom(cfg.phantom, cfg.grid)
    save_props(props, out)
    plot_maps(out / "phantom.png", {"phantom": props}, cfg.bounds, cfg.grid.dx)
    write_manifest(out, "phantom", cfg, maps=[f"{n}.nwimap" for n in PROPERTY_NAMES])
    say(f"wrote 4 maps ({cfg.grid.nx}x{cfg.grid.nz}) to {out}")
    return 0


def acquire(cfg: RunConfig, props):
    """Deterministic acquisition of every emission in the configured plan."""
    seeds = emission_seeds(cfg.seed, cfg.plan.n_emissions)
    out = []
    for index in range(cfg.plan.n_emissions):
        pulse = synthesize_focused(cfg.plan, cfg.geom, cfg.grid, index)
        clean = simulate(props, pulse, cfg.grid, cfg.pml, cfg.geom, record="channels")
        out.append((pulse, add_noise(clean, cfg.snr, seeds[index])))
    return out, seeds


def cmd_simulate(cfg: RunConfig, args, say):
    if not args.props:
        raise ConfigError("--props", "simulate needs a directory of property maps")
    props = load_props(args.props)
    if props.shape != cfg.grid.shape:
        raise ShapeMismatch(f"maps in {args.props} are {props.shape}, config grid is {cfg.grid.shape}")
    out = _out_dir(args, "data")
    data, seeds = acquire(cfg, props)
    files = []
    for index, (_, ch) in enumerate(data):
        path = channel_path(out, index)
        io.write_csv(path, ch.samples)
        files.append(path.name)
    write_manifest(out, "simulate", cfg, seeds=seeds, channels=files, props_dir=str(args.props),
                   snr_linear=None if math.isinf(cfg.snr) else cfg.snr)
    say(f"wrote {len(files)} channel files to {out}")
    return 0


def load_dataset(data_dir, cfg: RunConfig):
    """Channel files plus the pulses regenerated from the acquisition sections of the data manifest."""
    manifest = read_manifest(data_dir)
    if manifest.get("command") != "simulate":
        raise IoError(f"{data_dir} does not hold simulate output")
    acq = build(manifest["config"])
    for key in ("grid", "pml", "probe", "plan"):
        if manifest["config"][key] != cfg.raw[key]:
            raise ConfigError(key, f"differs from the acquisition recorded in {data_dir}/manifest.json")
    dataset = []
    for index, name in enumerate(manifest["channels"]):
        samples = io.read_csv(Path(data_dir) / name)
        if samples.shape != (acq.geom.nc, acq.grid.nt):
            raise ShapeMismatch(f"{name}: shape {samples.shape} != {(acq.geom.nc, acq.grid.nt)}")
        pulse = synthesize_focused(acq.plan, acq.geom, acq.grid, index)
        dataset.append((pulse, ChannelData(samples, acq.grid.dt)))
    return dataset


def cmd_invert(cfg: RunConfig, args, say):
    if not args.data:
        raise ConfigError("--data", "invert needs a simulate output directory")
    dataset = load_dataset(args.data, cfg)
    out = _out_dir(args, f"recon_{args.engine}")
    init = load_props(args.init) if args.init else cfg.initial_props()
    physics = cfg.physics()
    loss0 = dataset_loss(init, dataset, physics, args.engine)
    rounds = []
    t0 = time.perf_counter()

    def on_round(rnd, props, data_losses):
        rounds.append(sum(dl[0] for dl in data_losses))
        say(f"round {rnd}: summed data loss at round start {rounds[-1]:.6g}")

    result = multi_pulse_invert(dataset, init, cfg.loss, cfg.new_optimizer(), cfg.stage_schedule(), physics,
                                cfg.multi_pulse(args.engine), on_round=on_round)
    final = dataset_loss(result.props, dataset, physics, args.engine)
    save_props(result.props, out)
    curve = [loss0] + rounds[1:] + [final] if rounds else [loss0]
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "emission", "inner_step", "total_loss", "data_loss"])
        for rnd, (tot, dat) in enumerate(zip(result.round_losses, result.round_data_losses)):
            for em, (ts, ds) in enumerate(zip(tot, dat)):
                for k, (lt, ld) in enumerate(zip(ts, ds)):
                    w.writerow([rnd, em, k, f"{lt:.10g}", f"{ld:.10g}"])
    plot_losses(out / "loss.png", {args.engine: curve}, "summed data loss")
    plot_maps(out / "maps.png", {"initial": init, "estimate": result.props}, cfg.bounds, cfg.grid.dx)
    clamps = {}
    for st in result.optimizers:
        for k, v in st.clamp_counts.items():
            clamps[k] = clamps.get(k, 0) + v
    write_manifest(out, "invert", cfg, engine=args.engine, data_dir=str(args.data), init_dir=args.init,
                   initial_data_loss=loss0, final_data_loss=final, round_losses=curve, clamp_counts=clamps,
                   stop_reason="outer_iterations", seconds=time.perf_counter() - t0)
    say(f"data loss {loss0:.6g} -> {final:.6g}; maps in {out}")
    return 0


def cmd_eval(cfg: RunConfig, args, say):
    if not (args.est and args.truth):
        raise ConfigError("--est/--truth", "eval needs an estimate and a truth directory")
    est, truth = load_props(args.est), load_props(args.truth)
    if est.shape != truth.shape:
        raise ShapeMismatch(f"estimate {est.shape} vs truth {truth.shape}")
    exclude = cfg.exclude_pml and not args.include_pml
    mask = interior_mask(est.shape, cfg.pml.width_cells) if exclude else None
    table = nrmse_table(est, truth, cfg.bounds, mask)
    out = _out_dir(args, "eval")
    with open(out / "nrmse.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["property", "nrmse"])
        for k, v in table.items():
            w.writerow([k, f"{v:.10g}"])
    plot_maps(out / "comparison.png", {"truth": truth, "estimate": est}, cfg.bounds, cfg.grid.dx)
    write_manifest(out, "eval", cfg, est_dir=str(args.est), truth_dir=str(args.truth), pml_excluded=exclude,
                   nrmse=table)
    for k, v in table.items():
        say(f"{k:>13s}  {v:.6f}")
    return 0


def cmd_export(cfg: RunConfig, args, say):
    if not args.maps:
        raise ConfigError("--maps", "export needs a directory of property maps")
    props = load_props(args.maps)
    out = _out_dir(args, f"export_{args.format}")
    ext = {"csv": "csv", "pgm": "pgm", "nwimap": "nwimap"}[args.format]
    for name in PROPERTY_NAMES:
        export_map(getattr(props, name), cfg.bounds.of(name), out / f"{name}.{ext}", args.format, name)
    say(f"exported 4 maps as {args.format} to {out}")
    return 0


def cmd_gradcheck(cfg: RunConfig, args, say):
    gc = cfg.gradcheck
    grid = gc["grid"]
    geom = ProbeGeometry.linear(grid, max(2, grid.nz - 4), 1, row=3)
    plan = EmissionPlan(1, min(9, geom.nc), 0, Waveform(gc["f0"], 2.0, gc["amplitude"]),
                        focus_depth=8 * grid.dx)
    pulse = PulseField.zeros(grid) if gc["zero_pulse"] else synthesize_focused(plan, geom, grid, 0)
    pml = PmlConfig.tuned(grid, 3)
    props = smooth_random_props(grid.shape, gc["seed"])
    truth = smooth_random_props(grid.shape, gc["seed"] + 1)
    measured = simulate(truth, pulse, grid, pml, geom)
    physics = Physics(grid, geom, pml)

    fn = loss_and_gradient
    if args.corrupt_adjoint:
        # negative control: a gradient that is slightly wrong must be reported as FAIL
        def fn(*a):
            loss, g, ld = loss_and_gradient(*a)
            d = g.as_dict()
            d = {k: v * (1.0 + 1e-4) for k, v in d.items()}
            return loss, type(g).from_dict(d), ld

    report = gradient_check(props, pulse, measured, physics, cfg.loss, n_cells=gc["cells"], seed=gc["seed"],
                            gradient_fn=fn)
    tol = gc["tolerance"]
    say(f"{'property':>13s}  {'max rel':>10s}  {'mean rel':>10s}  cells  result")
    for name, chk in report.items():
        status = "PASS" if chk.max_rel < tol else "FAIL"
        say(f"{name:>13s}  {chk.max_rel:10.3e}  {chk.mean_rel:10.3e}  {len(chk.cells):5d}  {status}")
    ok = passed(report, tol)
    say("gradcheck", "PASS" if ok else "FAIL", f"(tolerance {tol:g})")
    return 0 if ok else 1


def cmd_bench(cfg: RunConfig, args, say):
    out = _out_dir(args, "bench")
    if args.quick:
        adj = bench_adjoint_scaling((48, 68, 96), nt=30, nts=(30, 60, 120), n_fixed=64, repeats=3)
        fwi = bench_fwi_scaling((10, 14, 20), nt=60, nts=(120, 240, 480), n_fixed=10, repeats=3)
    else:
        adj = bench_adjoint_scaling()
        fwi = bench_fwi_scaling()
    reports = [*adj, *fwi]
    write_report(out / "scaling.csv", reports)
    plot_scaling(out / "scaling.png", reports)
    summary = [r.summary() for r in reports]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    write_manifest(out, "bench", cfg, machine=reports[0].machine, series=[
        {"engine": r.engine, "axis": r.axis, "sizes": r.sizes, "seconds": r.times, "slope": r.slope,
         "config": r.config} for r in reports])
    for line in summary:
        say(line)
    return 0


VERBS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "gradcheck": cmd_gradcheck,
    "invert": cmd_invert,
    "eval": cmd_eval,
    "export": cmd_export,
    "bench": cmd_bench,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (defaults to the built-in desk setup)")
    common.add_argument("--seed", type=int, help="overrides noise.seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="nwi", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="verb", required=True)
    sub.add_parser("phantom", parents=[common], help="write the configured phantom maps")
    p = sub.add_parser("simulate", parents=[common], help="simulate channel data for every emission")
    p.add_argument("--props", help="directory of property maps")
    p = sub.add_parser("gradcheck", parents=[common], help="compare reverse-pass gradients with finite differences")
    p.add_argument("--corrupt-adjoint", action="store_true", help=argparse.SUPPRESS)
    p = sub.add_parser("invert", parents=[common], help="reconstruct maps from a simulate output directory")
    p.add_argument("--data", help="simulate output directory")
    p.add_argument("--engine", choices=("nwi", "fwi"), default="nwi")
    p.add_argument("--init", help="directory of initial maps (default: uniform init.background)")
    p = sub.add_parser("eval", parents=[common], help="NRMSE of estimated maps against truth")
    p.add_argument("--est")
    p.add_argument("--truth")
    p.add_argument("--include-pml", action="store_true", help="score the absorbing layer too")
    p = sub.add_parser("export", parents=[common], help="convert maps to csv, pgm or nwimap")
    p.add_argument("--maps")
    p.add_argument("--format", choices=("csv", "pgm", "nwimap"), default="csv")
    p = sub.add_parser("bench", parents=[common], help="time the gradient engines over problem sizes")
    p.add_argument("--quick", action="store_true", help="small sizes, for smoke runs")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    say = Console(args.quiet)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        return VERBS[args.verb](cfg, args, say)
    except NWIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
