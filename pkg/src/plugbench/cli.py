"""Command-line entry point orchestrating all workflows.

Every subcommand writes a timestamped run directory containing a full
config snapshot (flags > config file > defaults), output CSVs,
checkpoints, and logs, so any run can be re-executed from its snapshot.
"""
from __future__ import annotations

import os
import sys


def _early_thread_pin(argv: list[str]) -> None:
    # single-threaded BLAS before numpy loads; --jobs 1 is the determinism
    # contract and parallel workers each stay single-threaded anyway
    os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
    os.environ.setdefault("OMP_NUM_THREADS", "1")


_early_thread_pin(sys.argv)

import argparse
import dataclasses
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import __version__, demos, evaluate as ev, sense, sim, train as train_mod
from .control import ControllerGains
from .policy import Policy

log = logging.getLogger("plugbench")


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

DEFAULTS = {
    "geometry": "cardoor",
    "region": None,              # {dx, dy, dtheta}; None -> geometry default
    "grid": {"m_x": 3, "m_y": 10, "m_theta": 10},
    "val_count": 30,
    "seed": 0,
    "seeds": [0, 1, 2],
    "eval_seed": 4242,
    "trials": 30,
    "timeout_steps": 300,
    "d_tilde_fraction": 0.8,
    "n_val": 10,
    "lr": 1e-3,
    "batch_size": 8,
    "epochs": 10,
    "k": 10,
    "h": 10,
    "sensor_backbone": "feedforward",
    "action_head": "feedforward",
    "augment": True,
    "grad_clip": 5.0,
    "linear_gain": 0.005,
    "angular_gain": 0.05,
    "velocity_limit": [0.05, 0.05, 0.5],
    "jobs": 1,
    "out": "runs",
}


def load_config_file(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            raise SystemExit("TOML configs need Python >= 3.11; use JSON instead")
        return tomllib.loads(text)
    return json.loads(text)


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config_file(args.config))
    for key in cfg:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def make_run_dir(cfg: dict, name: str) -> Path:
    stamp = time.strftime("%Y%m%d_%H%M%S")
    run_dir = Path(cfg["out"]) / f"{stamp}_{name}"
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")
    return run_dir


def build_setup(cfg: dict) -> demos.RecordSetup:
    geom = sim.load_geometry(cfg["geometry"])
    gains = ControllerGains(cfg["linear_gain"], cfg["angular_gain"],
                            tuple(cfg["velocity_limit"]))
    return dataclasses.replace(demos.default_setup(geom), gains=gains)


def build_region(cfg: dict, geom: sim.ConnectorGeometry) -> demos.ToleranceRegion:
    if cfg["region"]:
        return demos.ToleranceRegion.from_dict(cfg["region"])
    return demos.default_region(geom)


def train_config(cfg: dict) -> train_mod.TrainConfig:
    return train_mod.TrainConfig(
        lr=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        seeds=tuple(cfg["seeds"]), k=cfg["k"], h=cfg["h"],
        sensor_backbone=cfg["sensor_backbone"], action_head=cfg["action_head"],
        augment=cfg["augment"], grad_clip=cfg["grad_clip"], n_val=cfg["n_val"])


def eval_config(cfg: dict) -> ev.EvalConfig:
    return ev.EvalConfig(trials=cfg["trials"], timeout_steps=cfg["timeout_steps"],
                         d_tilde_fraction=cfg["d_tilde_fraction"])


# ---------------------------------------------------------------------------
# parallel helpers (process pool over independent work items)
# ---------------------------------------------------------------------------

def _run_parallel(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    import multiprocessing as mp
    ctx = mp.get_context("spawn")
    with ctx.Pool(min(jobs, len(items))) as pool:
        return pool.map(fn, items)


_WORKER_STATE: dict = {}


def _train_seed_worker(payload):
    from . import demos as dm, train as tm
    cfg_dict, seed, dataset_path, out_dir, run_id = payload
    ds = dm.load_dataset(dataset_path)
    tcfg = train_config(cfg_dict)
    tr, val = dm.split_dataset(ds, cfg_dict["n_val"], seed=cfg_dict["seed"])
    stats = dm.fit_dataset_stats(tr, ds.wrench_scale)
    return tm.train_seed(tcfg, tr, val, stats, ds.wrench_scale, seed,
                         out_dir, run_id)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_demos(args) -> int:
    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, "gen-demos")
    geom = sim.load_geometry(cfg["geometry"])
    region = build_region(cfg, geom)
    grid = demos.StartPoseGrid(**cfg["grid"])
    setup = build_setup(cfg)
    out = args.dataset or str(run_dir / "dataset")
    t0 = time.time()
    ds = demos.generate_dataset(out, geom, region, grid, seed=cfg["seed"],
                                val_count=cfg["val_count"], setup=setup)
    log.info("dataset %s: %d train + %d val demos (%d failures) in %.0fs",
             out, ds.manifest["train_count"], ds.manifest["val_count"],
             ds.manifest["failures"], time.time() - t0)
    print(f"dataset written to {out}: {ds.manifest['demo_count']} demos")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, "train")
    ds = demos.load_dataset(args.dataset)
    payloads = [(cfg, seed, args.dataset, str(run_dir), "bc")
                for seed in cfg["seeds"]]
    results = _run_parallel(_train_seed_worker, payloads, cfg["jobs"])
    result = train_mod.TrainResult(list(results))
    train_mod.write_report(str(run_dir / "training.csv"), result)
    for sr in result.seeds:
        print(f"seed {sr.seed}: best epoch {sr.best_epoch} "
              f"val MSE {sr.best_val_mse:.6f} -> {sr.checkpoint_path}")
    # both readings of "lowest validation MSE": per-seed minima and the
    # pooled minimum across seeds
    best = min(result.seeds, key=lambda s: s.best_val_mse)
    print(f"lowest val MSE across seeds: {best.best_val_mse:.6f} (seed {best.seed})")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, "eval")
    setup = build_setup(cfg)
    geom = setup.geometry
    region = build_region(cfg, geom)
    policies = [Policy.load(p) for p in args.checkpoints]
    poses = demos.random_poses(region, geom, cfg["trials"], seed=cfg["eval_seed"])
    result = ev.evaluate(policies, poses, setup, cfg["eval_seed"],
                         eval_config(cfg))
    ev.write_trials_csv(str(run_dir / "trials.csv"), result)
    ev.write_summary_csv(str(run_dir / "summary.csv"), result, label="bc")
    if args.emit_trace:
        rec = ev.rollout(ev.PolicyActor(policies[0]), setup, poses[0],
                         [cfg["eval_seed"], policies[0].seed, 0],
                         stats=policies[0].stats, keep_trace=True)
        ev.write_traces_jsonl(str(run_dir / "trace_trial0.jsonl"), rec)
    print(f"mu_SR {result.mu_sr:.1f}%  sigma_SR {result.sigma_sr:.2f}  "
          f"mean time {result.mean_seconds_success:.2f}s "
          f"({result.mean_steps_success:.0f} steps)")
    print(f"results in {run_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, f"sweep-{args.axis}")
    ds = demos.load_dataset(args.dataset)
    setup = build_setup(cfg)
    tcfg = train_config(cfg)
    values = ([int(v) for v in args.values.split(",")] if args.values else
              {"k": [1, 3, 5, 7, 10], "h": [1, 3, 5, 7, 10],
               "demos": [10, 25, 50, 75, 100, 200, 300]}[args.axis])
    kwargs = dict(base_cfg=tcfg, dataset=ds, setup=setup, out_dir=str(run_dir),
                  eval_seed=cfg["eval_seed"], n_val=cfg["n_val"],
                  trials=cfg["trials"])
    if args.axis == "k":
        rows = ev.sweep_history(values, cfg["h"], **kwargs)
    elif args.axis == "h":
        rows = ev.sweep_horizon(values, cfg["k"], **kwargs)
    else:
        rows = ev.sweep_demos(values, **kwargs)
    path = run_dir / f"sweep_{args.axis}.csv"
    ev.write_sweep_csv(str(path), rows, args.axis)
    for r in rows:
        print(f"{args.axis}={r.setting}: median {r.rate_median:.1f}% "
              f"(min {r.rate_min:.1f}, max {r.rate_max:.1f})")
    print(f"curve written to {path}")
    return 0


def cmd_baseline(args) -> int:
    cfg = resolve_config(args)
    run_dir = make_run_dir(cfg, "baseline")
    setup = build_setup(cfg)
    region = build_region(cfg, setup.geometry)
    poses = demos.random_poses(region, setup.geometry, cfg["trials"],
                               seed=cfg["eval_seed"])
    result = ev.evaluate_baseline(ev.StrideSearchParams(), setup, poses,
                                  cfg["eval_seed"], eval_config(cfg))
    ev.write_trials_csv(str(run_dir / "baseline_trials.csv"), result)
    ev.write_summary_csv(str(run_dir / "baseline_summary.csv"), result,
                         label="stride_search")
    print(f"stride search: {result.mu_sr:.1f}% over {cfg['trials']} poses")
    return 0


def cmd_teleop(args) -> int:
    import asyncio
    from . import teleop
    cfg = resolve_config(args)
    out = args.dataset or "teleop_data"
    if args.headless_client:
        async def run():
            ready = asyncio.Event()
            server = asyncio.create_task(
                teleop.serve(port=args.port, out_dir=out, ready=ready))
            await asyncio.wait_for(ready.wait(), 10)
            report = await teleop.run_headless_client(
                args.port, geometry=cfg["geometry"], seed=cfg["seed"])
            server.cancel()
            return report
        report = asyncio.run(run())
        print(f"inserted={report.inserted} inputs={report.inputs_sent} "
              f"latency mean {report.mean_latency * 1e3:.1f} ms "
              f"max {report.max_latency * 1e3:.1f} ms")
        print(f"saved: {report.saved_path or '(none)'}")
        return 0 if report.inserted and report.saved_path else 1
    print(f"teleop server on ws://127.0.0.1:{args.port}/session "
          f"(demos -> {out}); Ctrl-C to stop")
    import asyncio as aio
    try:
        aio.run(teleop.serve(port=args.port, out_dir=out))
    except KeyboardInterrupt:
        pass
    return 0


def cmd_replay(args) -> int:
    cfg = resolve_config(args)
    demo = demos.read_demo(args.demo_file)
    geom = sim.load_geometry(cfg["geometry"])
    setup = demos.default_setup(geom)
    pose, inserted = demos.replay_demo(setup, demo)
    print(f"replayed {demo.length} steps: final pose "
          f"({pose.x:.6f}, {pose.y:.6f}, {pose.theta:.6f}) inserted={inserted}")
    return 0 if inserted == demo.success else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="plugbench",
        description="Planar connector-insertion simulator and BC pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or TOML run configuration file")
        p.add_argument("--geometry", help="bundled geometry id or JSON path")
        p.add_argument("--seed", type=int)
        p.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",")])
        p.add_argument("--eval-seed", dest="eval_seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--k", type=int)
        p.add_argument("--h", type=int)
        p.add_argument("--n-val", dest="n_val", type=int)
        p.add_argument("--sensor-backbone", dest="sensor_backbone")
        p.add_argument("--action-head", dest="action_head")
        p.add_argument("--jobs", type=int)
        p.add_argument("--out")

    p = sub.add_parser("gen-demos", help="record oracle demonstrations")
    common(p)
    p.add_argument("--dataset", help="output dataset directory")
    p.add_argument("--grid", type=_parse_grid, help="m_x x m_y x m_theta, e.g. 3x10x10")
    p.add_argument("--val-count", dest="val_count", type=int)
    p.set_defaults(fn=cmd_gen_demos)

    p = sub.add_parser("train", help="train policies on a dataset")
    common(p)
    p.add_argument("dataset", help="dataset directory from gen-demos")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation of checkpoints")
    common(p)
    p.add_argument("checkpoints", nargs="+", help="policy checkpoint files")
    p.add_argument("--emit-trace", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="k / h / demo-count sweeps")
    common(p)
    p.add_argument("axis", choices=["k", "h", "demos"])
    p.add_argument("dataset")
    p.add_argument("--values", help="comma-separated setting values")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("baseline", help="rule-based stride-search baseline")
    common(p)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("teleop", help="teleoperation session server")
    common(p)
    p.add_argument("--port", type=int, default=8763)
    p.add_argument("--dataset", help="directory for saved human demos")
    p.add_argument("--headless-client", action="store_true",
                   help="run the scripted conformance client")
    p.set_defaults(fn=cmd_teleop)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(p)
    p.set_defaults(fn=cmd_gradcheck_real)

    p = sub.add_parser("replay", help="re-simulate a stored demonstration")
    common(p)
    p.add_argument("demo_file")
    p.set_defaults(fn=cmd_replay)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error (missing input): {e}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as e:
        print(f"error ({type(e).__name__}): {e}", file=sys.stderr)
        return 3


def _parse_grid(text: str) -> dict:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("grid must look like 3x10x10")
    return {"m_x": int(parts[0]), "m_y": int(parts[1]), "m_theta": int(parts[2])}


def cmd_gradcheck_real(args) -> int:
    import numpy as _np
    from . import autodiff as ad
    from .autodiff import gradcheck
    from .autodiff.tensor import Tensor
    from .policy import ACTION_HEADS, SENSOR_BACKBONES, Policy as Pol, PolicyConfig
    from .sense import NormStats

    t0 = time.time()
    failures = 0
    print(f"{'check':38s} {'max rel err':>12s}")
    from .autodiff.opchecks import op_gradcheck_cases
    rng = np.random.default_rng(0)
    for name, (fn, make) in op_gradcheck_cases(rng).items():
        params = make()
        err = gradcheck.check(lambda: fn(params),
                              [p for p in params if p.requires_grad])
        flag = "" if err < 1e-5 else "  FAIL"
        if err >= 1e-5:
            failures += 1
        print(f"op::{name:34s} {err:12.3e}{flag}")
    stats = NormStats(_np.zeros(3), _np.ones(3), _np.ones(3))
    for sensor in SENSOR_BACKBONES:
        for head in ACTION_HEADS:
            pol = Pol(PolicyConfig(k=2, h=2, sensor_backbone=sensor,
                                   action_head=head), stats, seed=3,
                      dtype=_np.float64)
            rng2 = _np.random.default_rng(7)
            imgs = Tensor(rng2.uniform(0, 1, (1, 2, 64, 64)), dtype=_np.float64)
            wr = Tensor(rng2.normal(size=(1, 2, 3)), dtype=_np.float64)
            tgt = Tensor(rng2.normal(size=(1, 2, 3)), dtype=_np.float64)

            def f():
                return ad.mse_loss(pol.forward(imgs, wr), tgt)

            err = gradcheck.check(f, pol.parameters(), max_entries=2,
                                  rng=_np.random.default_rng(11))
            flag = "" if err < 1e-3 else "  FAIL"
            if err >= 1e-3:
                failures += 1
            print(f"e2e::{sensor}+{head:28s} {err:12.3e}{flag}")
    print(f"total {time.time() - t0:.1f}s, {failures} failures")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
