"""Command-line entry points: gen-data, train, evaluate, update-experiment, inspect.

Exit codes: 0 success, 2 usage/config/missing-input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import persistence
from .config import RunSettings, load_settings
from .datamodel import FIELD_ORDER, load_state, save_state
from .ensemble import aggregate, collect, reconstruct_full
from .errors import ConfigError, ShredKitError
from .metrics import field_report
from .network import TrainConfig, predict
from .pipeline import (
    PreparedData,
    coverage_fraction,
    prepare,
    run_channel,
    run_update_direction,
    svd_oracle_rows,
)
from .report_io import write_csv, write_keyvalues
from .sensing import define_channels, lag_embed, measure
from .solver import perturbed_variant, simulate, solid_mask

TOOL_VERSION = "0.1.0"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shredkit",
        description="Sparse-sensor full-state estimation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_channel=True):
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        if with_channel:
            p.add_argument("--channel", choices=("ext", "reg"))
            p.add_argument("--ensemble", type=int, help="number of ensemble members")
            p.add_argument("--sensors", type=int, help="sensors per member")
            p.add_argument("--lags", type=int, help="window length minus one")
            p.add_argument("--sigma", type=float, help="measurement noise std")
            p.add_argument("--noise", choices=("additive", "multiplicative"))

    p_gen = sub.add_parser("gen-data", help="generate the transient dataset")
    add_common(p_gen, with_channel=False)
    p_gen.add_argument("--perturb", metavar="NAME=VALUE",
                       help="also generate a perturbed twin dataset")
    p_gen.add_argument("--progress", action="store_true")

    p_train = sub.add_parser("train", help="train the sensor-subset ensemble")
    add_common(p_train)

    p_eval = sub.add_parser("evaluate", help="score a trained ensemble")
    add_common(p_eval)
    p_eval.add_argument("--oracle", choices=("svd",),
                        help="report the SVD truncation floor instead")

    p_upd = sub.add_parser("update-experiment",
                           help="train on the baseline, sense the perturbed twin")
    add_common(p_upd, with_channel=False)
    p_upd.add_argument("--perturb", metavar="NAME=VALUE",
                       help="perturbation for the twin (overrides config)")

    p_ins = sub.add_parser("inspect", help="print a container's header")
    p_ins.add_argument("path", help="snapshot, basis, or checkpoint file")
    return parser


def _apply_overrides(settings: RunSettings, args) -> RunSettings:
    if getattr(args, "seed", None) is not None:
        settings = replace(settings, seed=args.seed,
                           solver=replace(settings.solver, seed=args.seed))
    if getattr(args, "out", None):
        settings = replace(settings, out_dir=args.out)
    sensing = settings.sensing
    for attr, key in (("channel", "channel"), ("ensemble", "ensemble"),
                      ("sensors", "sensors"), ("lags", "lags"),
                      ("sigma", "sigma"), ("noise", "noise")):
        value = getattr(args, attr, None)
        if value is not None:
            sensing = replace(sensing, **{key: value})
    return replace(settings, sensing=sensing)


def _parse_perturb(text: str) -> tuple[str, float]:
    if "=" not in text:
        raise ConfigError(f"--perturb expects NAME=VALUE, got {text!r}")
    name, _, raw = text.partition("=")
    try:
        return name.strip(), float(raw)
    except ValueError as exc:
        raise ConfigError(f"--perturb value {raw!r} is not a number") from exc


def _out_path(settings: RunSettings, *parts) -> str:
    os.makedirs(settings.out_dir, exist_ok=True)
    return os.path.join(settings.out_dir, *parts)


def _channel_positions(settings: RunSettings, count: int | None = None):
    return define_channels(
        settings.solver.grid,
        ext_column=settings.channels.ext_column,
        reg_column=settings.channels.reg_column,
        count=count or settings.channels.count,
        solid_mask=solid_mask(settings.solver),
    )


def _load_dataset(settings: RunSettings, name: str = "baseline.shrd"):
    path = _out_path(settings, name)
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset {path} not found; run gen-data first")
    return load_state(path)


def _train_config(settings: RunSettings) -> TrainConfig:
    return settings.train


def cmd_gen_data(settings: RunSettings, args) -> int:
    t0 = time.perf_counter()
    state = simulate(settings.solver, progress=args.progress)
    base_path = _out_path(settings, "baseline.shrd")
    save_state(state, base_path)
    artifacts = {"baseline": base_path}
    if args.perturb:
        name, value = _parse_perturb(args.perturb)
        twin_cfg = perturbed_variant(settings.solver, name, value)
        twin = simulate(twin_cfg, progress=args.progress)
        twin_path = _out_path(settings, "perturbed.shrd")
        save_state(twin, twin_path)
        artifacts["perturbed"] = twin_path
    manifest = {
        "tool_version": TOOL_VERSION,
        "config": args.config,
        "seed": settings.seed,
        "n_snapshots": state.n_times,
        "wall_seconds": round(time.perf_counter() - t0, 3),
    }
    manifest.update(artifacts)
    write_keyvalues(_out_path(settings, "manifest_gen.txt"), manifest)
    print(f"wrote {state.n_times} snapshots to {base_path}")
    return 0


def cmd_train(settings: RunSettings, args) -> int:
    t0 = time.perf_counter()
    state = _load_dataset(settings)
    data = prepare(state, energy=settings.svd.energy, rank=settings.svd.rank,
                   seed=settings.seed)
    channel = settings.sensing.channel
    positions = _channel_positions(settings)[channel]
    run = run_channel(
        data, positions, channel,
        n_models=settings.sensing.ensemble,
        n_sensors=settings.sensing.sensors,
        lags=settings.sensing.lags,
        sigma=settings.sensing.sigma,
        noise_mode=settings.sensing.noise,
        train_config=_train_config(settings),
        master_seed=settings.seed,
    )
    persistence.save_scaler(data.scaler, _out_path(settings, "scaler.txt"))
    persistence.save_bases(data.reducer.bases_, _out_path(settings, "bases.shrb"))
    manifest_pairs = [
        ("tool_version", TOOL_VERSION),
        ("config", args.config),
        ("master_seed", settings.seed),
        ("channel", channel),
        ("n_members", len(run.members)),
        ("lags", settings.sensing.lags),
        ("sigma", settings.sensing.sigma),
        ("noise_mode", settings.sensing.noise),
    ]
    for index, member in enumerate(run.members):
        ckpt = _out_path(settings, f"model_{channel}_{index:02d}.shrm")
        persistence.save_model(member.model, ckpt, extra={
            "channel": channel,
            "positions": ",".join(str(p) for p in member.sensor_config.positions),
            "noise_seed": member.sensor_config.seed,
            "sigma": member.sensor_config.sigma,
            "noise_mode": member.sensor_config.noise_mode,
            "best_epoch": member.history.best_epoch,
        })
        hist = _out_path(settings, f"history_{channel}_{index:02d}.csv")
        write_csv(hist, ("epoch", "train_loss", "valid_loss"),
                  [(e, tr, va) for e, (tr, va) in
                   enumerate(zip(member.history.train_loss, member.history.valid_loss))])
        manifest_pairs.append((f"member.{index}.positions",
                               ",".join(str(p) for p in member.sensor_config.positions)))
        manifest_pairs.append((f"member.{index}.noise_seed", member.sensor_config.seed))
        manifest_pairs.append((f"member.{index}.checkpoint", ckpt))
    manifest_pairs.append(("wall_seconds", round(time.perf_counter() - t0, 3)))
    write_keyvalues(_out_path(settings, f"ensemble_{channel}.txt"), manifest_pairs)
    best = min(min(m.history.valid_loss) for m in run.members)
    print(f"trained {len(run.members)} members on channel {channel}; "
          f"best validation loss {best:.3e}")
    return 0


def _load_trained_members(settings: RunSettings, channel: str):
    """Rebuild (model, sensor config) pairs from the ensemble manifest."""
    from .sensing import SensorConfig

    manifest_path = _out_path(settings, f"ensemble_{channel}.txt")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(
            f"ensemble manifest {manifest_path} not found; run train first"
        )
    entries = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if " = " in line:
                key, value = line.strip().split(" = ", 1)
                entries[key] = value
    sigma = float(entries["sigma"])
    noise_mode = entries["noise_mode"]
    members = []
    index = 0
    while f"member.{index}.checkpoint" in entries:
        model, _ = persistence.load_model(entries[f"member.{index}.checkpoint"])
        positions = tuple(int(p) for p in entries[f"member.{index}.positions"].split(","))
        config = SensorConfig(
            positions=positions, channel=channel, noise_mode=noise_mode,
            sigma=sigma, seed=int(entries[f"member.{index}.noise_seed"]),
        )
        members.append((model, config))
        index += 1
    return members


def cmd_evaluate(settings: RunSettings, args) -> int:
    t0 = time.perf_counter()
    state = _load_dataset(settings)
    data = prepare(state, energy=settings.svd.energy, rank=settings.svd.rank,
                   seed=settings.seed)
    if data.splits.test.size == 0:
        raise ConfigError("test split is empty; nothing to evaluate")
    channel = settings.sensing.channel

    if args.oracle == "svd":
        rows = svd_oracle_rows(data)
        path = _out_path(settings, "errors_svd.csv")
        write_csv(path, ("field", "channel", "epsilon2", "n_skipped"),
                  [(r.field, r.channel, r.error.value, len(r.error.skipped))
                   for r in rows])
        print(f"SVD truncation floor written to {path}")
        return 0

    pairs = _load_trained_members(settings, channel)
    preds = []
    configs = []
    for model, config in pairs:
        raw = measure(data.scaled_t, config)
        windows = lag_embed(raw, model.lags)
        preds.append(predict(model, windows))
        configs.append(config)
    result = aggregate(preds, configs)
    reconstruction = reconstruct_full(result, data.reducer, data.scaler, data.state)
    estimate_fields = {f.name: f.data for f in reconstruction.mean_state.fields}
    rows = field_report(data.truth_fields, estimate_fields, data.splits.test, channel)

    errors_path = _out_path(settings, f"errors_{channel}.csv")
    write_csv(errors_path, ("field", "channel", "epsilon2", "n_skipped"),
              [(r.field, r.channel, r.error.value, len(r.error.skipped)) for r in rows])

    # reduced-coefficient comparison for the first modes of each field
    reduced_rows = []
    offsets = data.reducer.layout_.offsets()
    times = data.state.times
    for name, sl in offsets.items():
        for mode in range(min(5, sl.stop - sl.start)):
            row = sl.start + mode
            for k in data.splits.test:
                reduced_rows.append((
                    name, mode, int(k), times[k],
                    data.targets[row, k], result.mean[row, k], result.std[row, k],
                ))
    write_csv(_out_path(settings, f"reduced_{channel}.csv"),
              ("field", "mode", "time_index", "time", "truth", "mean", "std"),
              reduced_rows)

    # grid dumps at the last test snapshot: truth, mean, residual, std
    last = int(data.splits.test[-1])
    grid = data.state["T"].grid
    for name in FIELD_ORDER:
        truth_snap = data.state[name].snapshot_grid(last)
        mean_snap = reconstruction.mean_state[name].snapshot_grid(last)
        std_snap = reconstruction.std_fields[name][:, last].reshape(grid.ny, grid.nx)
        dump = []
        for iy in range(grid.ny):
            for ix in range(grid.nx):
                dump.append((
                    (ix + 0.5) * grid.dx, (iy + 0.5) * grid.dy,
                    truth_snap[iy, ix], mean_snap[iy, ix],
                    truth_snap[iy, ix] - mean_snap[iy, ix], std_snap[iy, ix],
                ))
        write_csv(_out_path(settings, f"grid_{name}_{channel}.csv"),
                  ("x", "y", "truth", "mean", "residual", "std"), dump)

    cover2 = coverage_fraction(data, result, n_std=2.0)
    cover1 = coverage_fraction(data, result, n_std=1.0)
    write_csv(_out_path(settings, f"summary_{channel}.csv"),
              ("field", "epsilon2", "coverage_1std", "coverage_2std"),
              [(r.field, r.error.value, cover1[r.field], cover2[r.field])
               for r in rows])

    manifest = {
        "tool_version": TOOL_VERSION,
        "config": args.config,
        "channel": channel,
        "errors_csv": errors_path,
        "wall_seconds": round(time.perf_counter() - t0, 3),
    }
    write_keyvalues(_out_path(settings, f"manifest_evaluate_{channel}.txt"), manifest)
    for r in rows:
        print(f"epsilon2[{r.field}] = {r.error.value:.4f}")
    return 0


def cmd_update_experiment(settings: RunSettings, args) -> int:
    t0 = time.perf_counter()
    state_a = _load_dataset(settings, "baseline.shrd")
    perturbed_path = _out_path(settings, "perturbed.shrd")
    if not os.path.exists(perturbed_path):
        raise FileNotFoundError(
            f"perturbed dataset {perturbed_path} not found; "
            "run gen-data --perturb first"
        )
    state_b = load_state(perturbed_path)
    data_a = prepare(state_a, energy=settings.svd.energy, rank=settings.svd.rank,
                     seed=settings.seed)
    channels = _channel_positions(settings, count=settings.update.positions)
    verdict_rows = []
    summary = {}
    for train_channel, monitor_channel in (("ext", "reg"), ("reg", "ext")):
        direction = run_update_direction(
            data_a, state_b,
            train_positions=channels[train_channel],
            monitored_positions=channels[monitor_channel],
            train_channel=train_channel,
            monitor_channel=monitor_channel,
            n_models=settings.update.ensemble,
            n_sensors=settings.sensing.sensors,
            lags=settings.sensing.lags,
            sigma=settings.sensing.sigma,
            noise_mode=settings.sensing.noise,
            train_config=_train_config(settings),
            master_seed=settings.seed,
        )
        times = state_a.times
        for i, loc in enumerate(direction.monitored_positions):
            rows = [(times[k], direction.baseline_traces[i, k],
                     direction.truth_traces[i, k], direction.estimate_traces[i, k])
                    for k in range(times.size)]
            write_csv(
                _out_path(settings,
                          f"update_train-{train_channel}_loc{loc}.csv"),
                ("time", "baseline", "truth", "estimate"), rows,
            )
        for v in direction.report.verdicts:
            verdict_rows.append((train_channel, monitor_channel, v.location,
                                 v.dist_estimate, v.dist_baseline,
                                 int(v.estimate_closer)))
        summary[f"{train_channel}->{monitor_channel}"] = direction.report.fraction_closer
    write_csv(_out_path(settings, "update_verdicts.csv"),
              ("train_channel", "monitor_channel", "location",
               "dist_estimate", "dist_baseline", "estimate_closer"),
              verdict_rows)
    manifest = {
        "tool_version": TOOL_VERSION,
        "config": args.config,
        "wall_seconds": round(time.perf_counter() - t0, 3),
    }
    manifest.update({f"fraction_closer[{k}]": v for k, v in summary.items()})
    write_keyvalues(_out_path(settings, "manifest_update.txt"), manifest)
    for key, value in summary.items():
        print(f"{key}: estimate closer at {value:.0%} of locations")
    return 0


def cmd_inspect(args) -> int:
    path = args.path
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"SHRD":
        state = load_state(path)
        grid = state.fields[0].grid
        print(f"snapshot container: {len(state.fields)} fields, "
              f"grid {grid.nx}x{grid.ny}, {state.n_times} snapshots, "
              f"t = {state.times[0]:.3f}..{state.times[-1]:.3f} s")
        for f in state.fields:
            print(f"  {f.name}: min {f.data.min():.6g}, max {f.data.max():.6g}")
    elif magic == persistence.BASIS_MAGIC:
        bases = persistence.load_bases(path)
        print(f"basis container: {len(bases)} fields")
        for name, basis in bases.items():
            print(f"  {name}: rank {basis.rank}, grid points {basis.modes.shape[0]}")
    elif magic == persistence.MODEL_MAGIC:
        model, echo = persistence.load_model(path)
        print(f"checkpoint: {model.n_sensors} sensors, lags {model.lags}, "
              f"hidden {model.hidden_size}, decoder {model.decoder_sizes}, "
              f"{model.n_outputs} outputs")
        for key, value in echo.items():
            print(f"  {key} = {value}")
    else:
        raise ConfigError(f"unrecognised container magic {magic!r}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "inspect":
            return cmd_inspect(args)
        settings = _apply_overrides(load_settings(args.config), args)
        if args.command == "gen-data":
            return cmd_gen_data(settings, args)
        if args.command == "train":
            return cmd_train(settings, args)
        if args.command == "evaluate":
            return cmd_evaluate(settings, args)
        if args.command == "update-experiment":
            return cmd_update_experiment(settings, args)
        parser.error(f"unknown command {args.command}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ShredKitError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
