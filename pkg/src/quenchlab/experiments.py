"""Experiment orchestration behind the CLI subcommands.

Each command writes into one output directory.  Workers never share files:
realizations and sweep points compute in isolation and the parent process
merges their results in a fixed order, so the worker count cannot change
any output byte.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import RegimeReport, regime_report
from .artifacts import SnapshotWriter, read_csv, read_snapshots, write_csv
from .config import ExperimentConfig
from .data import Dataset, gen_synthetic, load_idx
from .errors import ConfigError, QuenchlabError, SchemaError
from .nn import NetArch, TrainConfig, WeightSnapshot, train_run
from .observables import (MsdCurveSet, average_curves, default_tw_list, lag_times, log_schedule,
                          msd_curves)
from .pspin import PspinParams, run_quench, steps_for_time
from .svg import line_plot

log = logging.getLogger(__name__)

MEMORY_MAX_WEIGHTS = 10**6


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_manifest(out: Path, run_id: str, command: str, cfg: ExperimentConfig, started: str, outputs):
    manifest = {
        "run_id": run_id,
        "command": command,
        "config": cfg.model_dump(mode="json"),
        "started": started,
        "finished": _now(),
        "outputs": sorted(str(p) for p in outputs),
        "code_version": f"quenchlab {__version__}",
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _pool_map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


# ---------------------------------------------------------------- p-spin

def short_lag_points(cfg: ExperimentConfig, measured, t_max: int, first: int) -> list[int]:
    """Snapshot-only integer times ``t_w + lag`` not already in ``measured``."""
    sc = cfg.schedule
    if not sc.short_lags or t_max == 0:
        return []
    have = {0, *measured}
    tws = default_tw_list(sorted(have), sc.tw_every)
    return [t for t in lag_times(tws, t_max, sc.lag_base, first) if t not in have]


def pspin_snapshot_times(cfg: ExperimentConfig, times: list[float]) -> list[float]:
    dt = cfg.pspin.dt
    steps = [steps_for_time(t, dt) for t in times]
    if not steps:
        return []
    return [n * dt for n in short_lag_points(cfg, steps, steps[-1], steps[0])]


def pspin_schedule_times(cfg: ExperimentConfig) -> list[float]:
    ps, sc = cfg.pspin, cfg.schedule
    t_max = ps.t_max if sc.t_max is None else sc.t_max
    if t_max > ps.t_max:
        raise ConfigError(f"schedule.t_max={t_max} exceeds pspin.t_max={ps.t_max}")
    if t_max == 0:
        return []
    key = "schedule.t_max" if sc.t_max is not None else "pspin.t_max"
    try:
        n_max = steps_for_time(t_max, ps.dt)
        key = "schedule.first_step"
        first = steps_for_time(sc.first_step if sc.first_step is not None else ps.dt, ps.dt)
    except QuenchlabError as exc:
        raise ConfigError(f"{key} / pspin.dt: {exc}") from None
    if first > n_max:
        raise ConfigError("schedule.first_step exceeds t_max")
    return [n * ps.dt for n in log_schedule(n_max, sc.base, first)]


def _pspin_params(cfg: ExperimentConfig, r: int) -> PspinParams:
    ps = cfg.pspin
    # realization r shifts every seed by r
    return PspinParams(N=ps.N, T_final=ps.T_final, dt=ps.dt, t_max=ps.t_max,
                       disorder_seed=ps.disorder_seed + r, init_seed=ps.init_seed + r,
                       noise_seed=ps.noise_seed + r, p=ps.p)


def _pspin_worker(job):
    params, times, extra, tw_every = job
    logbook, snaps = run_quench(params, times, extra)
    curves = msd_curves(snaps, default_tw_list(logbook.times, tw_every), "spins")
    return logbook.times, logbook.column("energy"), curves


def run_pspin(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    if cfg.pspin is None:
        raise ConfigError("missing [pspin] section")
    started = _now()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = cfg.run_id("pspin", ("pspin", "schedule"))
    times = pspin_schedule_times(cfg)
    extra = pspin_snapshot_times(cfg, times)
    jobs = [(_pspin_params(cfg, r), times, extra, cfg.schedule.tw_every)
            for r in range(cfg.pspin.realizations)]
    results = _pool_map(_pspin_worker, jobs, threads)

    t_axis = results[0][0]
    energy = np.mean([r[1] for r in results], axis=0)
    curves = average_curves([r[2] for r in results])
    T = cfg.pspin.T_final
    D = T if T > 0 else None

    files = [write_csv(out / "loss_curve.csv", "loss_curve_pspin", zip(t_axis, energy))]
    files.append(write_csv(out / "msd.csv", "msd", _msd_rows(curves, run_id, {tw: D for tw in curves.curves})))
    files.append(_write_manifest(out, run_id, "pspin", cfg, started, files))
    return {"run_id": run_id, "times": t_axis, "energy": energy, "curves": curves}


def _msd_rows(curves: MsdCurveSet, run_id: str, noise: dict):
    for tw, (t, d) in curves.curves.items():
        D = noise.get(tw)
        for ti, di in zip(t, d):
            yield (curves.system, run_id, tw, ti, di, D, di / D if D else None)


# ---------------------------------------------------------------- training

def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset | None]:
    tr = cfg.train
    if tr.dataset == "synthetic":
        train = gen_synthetic(tr.n_train, tr.input_dim, tr.synthetic_mode, tr.data_seed, "train")
        test = gen_synthetic(tr.n_test, tr.input_dim, tr.synthetic_mode, tr.data_seed, "test") \
            if tr.n_test >= 2 else None
    else:
        train = load_idx(tr.train_images, tr.train_labels, "train")
        test = None
        if tr.test_images and tr.test_labels:
            test = load_idx(tr.test_images, tr.test_labels, "test")
        if tr.model == "ToyA" or tr.label_mode == "parity":
            train = train.parity()
            test = test.parity() if test is not None else None
    return train, test


def build_arch(cfg: ExperimentConfig, input_dim: int) -> NetArch:
    tr = cfg.train
    try:
        if tr.model == "ToyA":
            return NetArch("ToyA", input_dim, tr.layer_sizes(), tr.output_dim or 1, tr.init_seed)
        return NetArch("FullyConnectedB", input_dim, tr.layer_sizes(), tr.output_dim or 10, tr.init_seed)
    except QuenchlabError as exc:
        raise ConfigError(f"train: {exc}") from None


def train_schedule(cfg: ExperimentConfig) -> list[int]:
    tr, sc = cfg.train, cfg.schedule
    t_max = tr.max_iterations if sc.t_max is None else sc.t_max
    if t_max > tr.max_iterations:
        raise ConfigError(f"schedule.t_max={t_max} exceeds train.max_iterations={tr.max_iterations}")
    if t_max != int(t_max):
        raise ConfigError("schedule.t_max must be an integer iteration count for training")
    if t_max == 0:
        return []
    first = sc.first_step if sc.first_step is not None else 1
    if first > t_max:
        raise ConfigError("schedule.first_step exceeds t_max")
    return list(log_schedule(int(t_max), sc.base, first))


def run_train(cfg: ExperimentConfig, out_dir, threads: int = 1) -> dict:
    if cfg.train is None:
        raise ConfigError("missing [train] section")
    started = _now()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_id = cfg.run_id("train", ("train", "schedule"))
    tr = cfg.train
    schedule = train_schedule(cfg)
    train, test = load_datasets(cfg)
    arch = build_arch(cfg, train.dim)
    try:
        tcfg = TrainConfig(arch, tr.batch_size, tr.learning_rate, tr.max_iterations,
                           tr.data_seed, tr.shuffle_seed, min(tr.noise_subset_size, len(train)))
    except QuenchlabError as exc:
        raise ConfigError(f"train: {exc}") from None

    extra = short_lag_points(cfg, schedule, schedule[-1], 1) if schedule else []
    n_points = len(set(schedule) | {0}) + len(extra)
    in_memory = n_points <= tr.memory_snapshot_limit and arch.n_params <= MEMORY_MAX_WEIGHTS
    snap_path = out / "snapshots.qlsnap"
    with SnapshotWriter(snap_path, arch.n_params) as writer:
        logbook, snaps = train_run(tcfg, train, schedule, test_data=test,
                                   snapshot_sink=writer, keep_snapshots=in_memory,
                                   snapshot_times=extra)
    if not in_memory:
        iters, W = read_snapshots(snap_path)
        snaps = [WeightSnapshot(W[i], int(iters[i])) for i in range(len(iters))]

    times = logbook.times
    D = dict(zip(times, logbook.column("D")))
    curves = msd_curves(snaps, default_tw_list(times, cfg.schedule.tw_every), "weights")

    cols = [logbook.columns[c] for c in ("train_loss", "test_loss", "train_acc", "test_acc")]
    files = [write_csv(out / "loss_curve.csv", "loss_curve_train", zip(times, *cols))]
    files.append(write_csv(out / "noise.csv", "noise", ((run_id, t, D[t]) for t in times)))
    files.append(write_csv(out / "msd.csv", "msd", _msd_rows(curves, run_id, D)))
    files.append(snap_path)
    files.append(_write_manifest(out, run_id, "train", cfg, started, files))
    return {"run_id": run_id, "log": logbook, "curves": curves, "noise": D, "arch": arch}


# ---------------------------------------------------------------- analysis

def _read_optional(path: Path, schema: str):
    if not path.exists() or path.stat().st_size == 0:
        return []
    return read_csv(path, schema)


def load_run(run_dir) -> dict:
    """Read a run directory back into loss series, MSD curves and noise."""
    run_dir = Path(run_dir)
    loss_path = run_dir / "loss_curve.csv"
    if not loss_path.exists():
        raise FileNotFoundError(2, "run artifact not found", str(loss_path))
    with open(loss_path, encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    if header and header[-1] == "energy":
        rows = read_csv(loss_path, "loss_curve_pspin")
        kind, loss_key = "pspin", "energy"
    else:
        rows = read_csv(loss_path, "loss_curve_train")
        kind, loss_key = "train", "train_loss"
    t = np.array([r["t"] for r in rows])
    loss = np.array([r[loss_key] for r in rows])

    msd_rows = _read_optional(run_dir / "msd.csv", "msd")
    noise_rows = _read_optional(run_dir / "noise.csv", "noise")
    system = msd_rows[0]["system"] if msd_rows else ("spins" if kind == "pspin" else "weights")
    curves = MsdCurveSet(system)
    grouped: dict = {}
    noise: dict = {}
    for r in msd_rows:
        grouped.setdefault(r["tw"], []).append((r["t"], r["delta"]))
        if r["D_tw"] is not None:
            noise[r["tw"]] = r["D_tw"]
    for tw, pts in grouped.items():
        pts.sort()
        curves.curves[tw] = (np.array([p[0] for p in pts]), np.array([p[1] for p in pts]))
    for r in noise_rows:
        noise[r["tw"]] = r["D"]

    run_id = None
    manifest = run_dir / "manifest.json"
    if manifest.exists():
        run_id = json.loads(manifest.read_text(encoding="utf-8")).get("run_id")
    if run_id is None and msd_rows:
        run_id = msd_rows[0]["run_id"]
    extra = {}
    if kind == "train":
        extra = {k: np.array([np.nan if r[k] is None else r[k] for r in rows])
                 for k in ("test_loss", "train_acc", "test_acc")}
    return {"kind": kind, "t": t, "loss": loss, "curves": curves, "noise": noise or None,
            "run_id": run_id or "unknown", **extra}


def run_analyze(cfg: ExperimentConfig, run_dir) -> RegimeReport:
    run_dir = Path(run_dir)
    run = load_run(run_dir)
    an = cfg.analysis
    rep = regime_report(run["t"], run["loss"], run["curves"], run["noise"],
                        theta=an.theta, eps_loss=an.eps_loss, window=an.window,
                        slope_t_max=an.slope_t_max)
    write_csv(run_dir / "regime_report.csv", "regime_report",
              [(run["run_id"], rep.t1, rep.t2, rep.collapse_score_pre, rep.collapse_score_post,
                rep.late_slope, rep.plateau_q)])
    _plots(run_dir, run, rep)
    return rep


def _plots(run_dir: Path, run: dict, rep: RegimeReport):
    t, loss = run["t"], run["loss"]
    ylabel = "energy per spin" if run["kind"] == "pspin" else "loss"
    series = [("train loss" if run["kind"] == "train" else "E/N", t, loss)]
    if run["kind"] == "train":
        series += [("test loss", t, run["test_loss"]), ("train acc", t, run["train_acc"]),
                   ("test acc", t, run["test_acc"])]
    line_plot(run_dir / "loss.svg", series, title=f"t1={rep.t1} t2={rep.t2}",
              xlabel="t", ylabel=ylabel, logx=True)
    curves = run["curves"]
    line_plot(run_dir / "msd.svg", [(f"tw={tw:g}", c[0], c[1]) for tw, c in curves.curves.items()],
              title="mean-square displacement", xlabel="t", ylabel="Delta", logx=True, logy=True)
    noise = run["noise"] or {}
    resc = [(f"tw={tw:g}", c[0], c[1] / noise[tw]) for tw, c in curves.curves.items()
            if noise.get(tw)]
    line_plot(run_dir / "msd_rescaled.svg", resc, title="Delta / D(tw)",
              xlabel="t", ylabel="Delta/D", logx=True, logy=True)


# ---------------------------------------------------------------- sweep

def _sweep_worker(job):
    cfg, out_dir = job
    try:
        run_train(cfg, out_dir, threads=1)
        rep = run_analyze(cfg, out_dir)
        rows = read_csv(Path(out_dir) / "loss_curve.csv", "loss_curve_train")
        return {"final_train_loss": rows[-1]["train_loss"], "report": asdict(rep), "error": None}
    except (QuenchlabError, OSError, ArithmeticError, ValueError) as exc:
        return {"final_train_loss": None, "report": None, "error": f"{type(exc).__name__}: {exc}"}


def _sort_key(v):
    return (0, float(v), "") if isinstance(v, (int, float)) else (1, 0.0, str(v))


def run_sweep(cfg: ExperimentConfig, out_dir, threads: int = 1) -> list[dict]:
    if cfg.sweep is None:
        raise ConfigError("missing [sweep] section")
    started = _now()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    param = cfg.sweep.parameter
    values = sorted(cfg.sweep.values, key=_sort_key)
    jobs = [(cfg.with_train_value(param, v), out / f"{param}={v}") for v in values]
    results = _pool_map(_sweep_worker, jobs, threads)

    rows, summary = [], []
    for v, res in zip(values, results):
        rep = res["report"] or {}
        rows.append((str(v), res["final_train_loss"], rep.get("t1"), rep.get("t2"),
                     rep.get("collapse_score_post"), rep.get("plateau_q")))
        summary.append({"value": v, **res})
        if res["error"]:
            log.error("sweep point %s=%s failed: %s", param, v, res["error"])
    files = [write_csv(out / "sweep.csv", "sweep", rows)]
    run_id = cfg.run_id("sweep", ("train", "schedule", "analysis", "sweep"))
    manifest = _write_manifest(out, run_id, "sweep", cfg, started, files)
    data = json.loads(manifest.read_text(encoding="utf-8"))
    data["failures"] = {str(s["value"]): s["error"] for s in summary if s["error"]}
    manifest.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary
