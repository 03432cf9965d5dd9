"""Closed-loop evaluation: MPC-style rollouts, success-rate statistics,
sweep experiments, and the rule-based stride-search baseline.

At every control step the actor predicts a chunk of future actions and
only the first is executed; the chunk is re-predicted next step.  Time
is reported on the simulated clock (seconds = steps * dt, exactly).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import sense, train as train_mod
from .control import control_output
from .demos import (Dataset, Demonstration, OracleDemonstrator, RecordSetup,
                    fit_dataset_stats, random_poses, split_dataset)
from .policy import Observation, Policy, build_observation
from .sim import (PlanarPose, control_step, insertion_depth, is_inserted,
                  make_world, sensed_wrench)

STATIONARY_WINDOW = 50
STATIONARY_EPS = 0.0005  # m of tip progress over the window


class EvalError(RuntimeError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    trials: int = 30
    timeout_steps: int = 300
    d_tilde_fraction: float = 0.8
    keep_traces: bool = False

    def __post_init__(self):
        if self.trials < 1 or self.timeout_steps < 1:
            raise ValueError("trials and timeout must be >= 1")


@dataclass
class TraceStep:
    t: int
    pose: tuple[float, float, float]
    w_meas: tuple[float, float, float]
    action: np.ndarray      # executed action, actor units (first chunk entry)
    chunk: np.ndarray       # full predicted chunk, actor units


@dataclass
class TrialRecord:
    start_pose: PlanarPose
    success: bool
    steps: int
    seconds: float
    stationary: bool
    trace: list[TraceStep] = field(default_factory=list)


class PolicyActor:
    """Wraps a trained policy; actions live in training-normalized units."""

    def __init__(self, policy: Policy):
        self.policy = policy
        self.stats = policy.stats
        self.k = policy.config.k

    def reset(self):
        pass

    def act(self, world, t, w_meas, obs: Observation):
        chunk = self.policy.predict(obs)
        physical = sense.denormalize_action(chunk.astype(np.float64), self.stats)
        return physical, chunk


class OracleActor:
    """The scripted demonstrator wrapped as a single-step-chunk policy."""

    def __init__(self, setup: RecordSetup, phase_offset: float = 0.0):
        self.oracle = OracleDemonstrator(setup.geometry, setup.oracle_params,
                                         phase_offset=phase_offset)
        self.scale = np.asarray(setup.wrench_scale, dtype=np.float64)

    def reset(self):
        self.oracle.reset()

    def act(self, world, t, w_meas, obs):
        a = self.oracle.action(world, t, w_meas).astype(np.float32)
        return a.astype(np.float64) * self.scale, a[None, :].copy()


def rollout(actor, setup: RecordSetup, start_pose: PlanarPose, seed,
            config: EvalConfig | None = None, stats: sense.NormStats | None = None,
            keep_trace: bool = False) -> TrialRecord:
    """Run one closed-loop trial at 20 Hz until insertion or timeout."""
    config = config or EvalConfig()
    actor.reset()
    rng = np.random.default_rng([*np.atleast_1d(seed).tolist(), 0xE7A1])
    world = make_world(setup.geometry, start_pose, params=setup.sim_params)
    k = getattr(actor, "k", 1)
    fingerprint = stats.fingerprint() if stats is not None else ""
    img_hist: list[np.ndarray] = []
    wr_hist: list[np.ndarray] = []
    trace: list[TraceStep] = []
    tip_progress: list[float] = []
    success = False
    steps = 0
    for t in range(config.timeout_steps):
        w_true = sensed_wrench(world)
        w_meas = sense.measure_wrench(w_true, rng, setup.noise_sigma_force,
                                      setup.noise_sigma_torque).astype(np.float32)
        img = sense.render(world, setup.camera)
        img_hist.append(img)
        if stats is not None:
            wr_hist.append(sense.normalize_wrench(w_meas, stats).astype(np.float32))
        else:
            wr_hist.append(w_meas)
        if len(img_hist) > k:
            img_hist.pop(0)
            wr_hist.pop(0)
        obs = build_observation(img_hist, wr_hist, k, fingerprint,
                                setup.camera.width)
        physical, chunk = actor.act(world, t, w_meas, obs)
        if not np.all(np.isfinite(physical)):
            return TrialRecord(start_pose, False, t, t * setup.sim_params.control_dt,
                               False, trace)
        executed = physical[0] if physical.ndim == 2 else physical
        u = control_output(setup.gains, executed, w_meas.astype(np.float64))
        world = control_step(world, tuple(u))
        steps = t + 1
        tip_progress.append(insertion_depth(world))
        if keep_trace or config.keep_traces:
            trace.append(TraceStep(
                t, (world.plug_pose.x, world.plug_pose.y, world.plug_pose.theta),
                tuple(float(v) for v in w_meas),
                chunk[0].copy(), chunk.copy()))
        if is_inserted(world, config.d_tilde_fraction):
            success = True
            break
    stationary = False
    if not success and len(tip_progress) > STATIONARY_WINDOW:
        gain = tip_progress[-1] - tip_progress[-1 - STATIONARY_WINDOW]
        stationary = gain < STATIONARY_EPS
    return TrialRecord(start_pose, success, steps,
                       steps * setup.sim_params.control_dt, stationary, trace)


# ---------------------------------------------------------------------------
# evaluation over seeds
# ---------------------------------------------------------------------------

@dataclass
class EvalResult:
    per_seed: dict[int, list[TrialRecord]]

    @property
    def per_seed_rates(self) -> dict[int, float]:
        return {s: 100.0 * np.mean([t.success for t in trials])
                for s, trials in self.per_seed.items()}

    @property
    def mu_sr(self) -> float:
        return float(np.mean(list(self.per_seed_rates.values())))

    @property
    def sigma_sr(self) -> float:
        return float(np.std(list(self.per_seed_rates.values())))

    def successful_trials(self) -> list[TrialRecord]:
        return [t for trials in self.per_seed.values() for t in trials if t.success]

    @property
    def mean_steps_success(self) -> float:
        ok = self.successful_trials()
        return float(np.mean([t.steps for t in ok])) if ok else float("nan")

    @property
    def mean_seconds_success(self) -> float:
        ok = self.successful_trials()
        return float(np.mean([t.seconds for t in ok])) if ok else float("nan")

    @property
    def stationary_fraction(self) -> float:
        all_trials = [t for trials in self.per_seed.values() for t in trials]
        return float(np.mean([t.stationary for t in all_trials]))


def evaluate(policies: list[Policy], test_poses: list[PlanarPose],
             setup: RecordSetup, eval_seed: int,
             config: EvalConfig | None = None) -> EvalResult:
    """Evaluate each per-seed policy on the same unseen test poses."""
    config = config or EvalConfig()
    per_seed: dict[int, list[TrialRecord]] = {}
    for policy in policies:
        actor = PolicyActor(policy)
        trials = [rollout(actor, setup, pose, [eval_seed, policy.seed, j],
                          config, stats=policy.stats)
                  for j, pose in enumerate(test_poses)]
        per_seed[policy.seed] = trials
    return EvalResult(per_seed)


def write_trials_csv(path: str, result: EvalResult) -> None:
    with open(path, "w") as f:
        f.write("seed,trial,start_x,start_y,start_theta,success,steps,seconds,stationary\n")
        for seed in sorted(result.per_seed):
            for j, tr in enumerate(result.per_seed[seed]):
                p = tr.start_pose
                f.write(f"{seed},{j},{p.x:.9g},{p.y:.9g},{p.theta:.9g},"
                        f"{int(tr.success)},{tr.steps},{tr.seconds:.4f},"
                        f"{int(tr.stationary)}\n")


def write_summary_csv(path: str, result: EvalResult, label: str = "") -> None:
    with open(path, "w") as f:
        f.write("label,mu_sr,sigma_sr,mean_steps_success,mean_seconds_success,"
                "stationary_frac\n")
        f.write(f"{label},{result.mu_sr:.4f},{result.sigma_sr:.4f},"
                f"{result.mean_steps_success:.2f},{result.mean_seconds_success:.4f},"
                f"{result.stationary_fraction:.4f}\n")


def write_traces_jsonl(path: str, trial: TrialRecord) -> None:
    """Per-step JSON-lines trace for debugging and the replay view."""
    with open(path, "w") as f:
        for s in trial.trace:
            f.write(json.dumps({
                "t": s.t, "pose": list(s.pose), "w_meas": list(s.w_meas),
                "action": [float(v) for v in s.action],
                "chunk": [[float(v) for v in row] for row in s.chunk],
            }) + "\n")


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    setting: float
    rate_min: float
    rate_median: float
    rate_max: float
    mu_sr: float
    sigma_sr: float
    stationary_frac: float


def _train_and_eval(cfg: train_mod.TrainConfig, train_demos, val_demos,
                    wrench_scale, setup, test_poses, eval_seed, out_dir,
                    run_id) -> EvalResult:
    stats = fit_dataset_stats(train_demos, wrench_scale)
    result = train_mod.train(cfg, train_demos, val_demos, stats, wrench_scale,
                             out_dir, run_id)
    policies = [Policy.load(p) for p in result.best_checkpoints()]
    return evaluate(policies, test_poses, setup, eval_seed)


def _sweep(settings, make_cfg, subset_fn, dataset: Dataset, setup, out_dir,
           eval_seed, n_val, trials) -> list[SweepRow]:
    test_poses = random_poses(
        sense_region(dataset), dataset.geometry, trials, seed=eval_seed)
    rows = []
    for value in settings:
        cfg = make_cfg(value)
        tr, val = split_dataset(dataset, n_val, seed=0)
        tr = subset_fn(tr, value)
        result = _train_and_eval(cfg, tr, val, dataset.wrench_scale, setup,
                                 test_poses, eval_seed, out_dir,
                                 run_id=f"sweep_{value}")
        rates = sorted(result.per_seed_rates.values())
        rows.append(SweepRow(value, rates[0], float(np.median(rates)), rates[-1],
                             result.mu_sr, result.sigma_sr,
                             result.stationary_fraction))
    return rows


def sense_region(dataset: Dataset):
    from .demos import ToleranceRegion
    return ToleranceRegion.from_dict(dataset.manifest["region"])


def nested_subset(demos_list: list[Demonstration], m: int,
                  seed: int = 0) -> list[Demonstration]:
    """First m entries of a fixed seeded permutation: larger subsets contain
    smaller ones."""
    perm = np.random.default_rng([seed, 0x5B5E]).permutation(len(demos_list))
    return [demos_list[i] for i in perm[:m]]


def sweep_history(k_values, fixed_h, base_cfg: train_mod.TrainConfig,
                  dataset: Dataset, setup, out_dir, eval_seed: int,
                  n_val: int = 10, trials: int = 30) -> list[SweepRow]:
    return _sweep(k_values,
                  lambda k: replace(base_cfg, k=k, h=fixed_h),
                  lambda d, _: d, dataset, setup, out_dir, eval_seed, n_val,
                  trials)


def sweep_horizon(h_values, fixed_k, base_cfg: train_mod.TrainConfig,
                  dataset: Dataset, setup, out_dir, eval_seed: int,
                  n_val: int = 10, trials: int = 30) -> list[SweepRow]:
    return _sweep(h_values,
                  lambda h: replace(base_cfg, k=fixed_k, h=h),
                  lambda d, _: d, dataset, setup, out_dir, eval_seed, n_val,
                  trials)


def sweep_demos(m_values, base_cfg: train_mod.TrainConfig, dataset: Dataset,
                setup, out_dir, eval_seed: int, n_val: int = 10,
                trials: int = 30, subset_seed: int = 0) -> list[SweepRow]:
    return _sweep(m_values,
                  lambda m: base_cfg,
                  lambda d, m: nested_subset(d, m, subset_seed),
                  dataset, setup, out_dir, eval_seed, n_val, trials)


def write_sweep_csv(path: str, rows: list[SweepRow], setting_name: str) -> None:
    with open(path, "w") as f:
        f.write(f"{setting_name},rate_min,rate_median,rate_max,mu_sr,sigma_sr,"
                "stationary_frac\n")
        for r in rows:
            f.write(f"{r.setting},{r.rate_min:.4f},{r.rate_median:.4f},"
                    f"{r.rate_max:.4f},{r.mu_sr:.4f},{r.sigma_sr:.4f},"
                    f"{r.stationary_frac:.4f}\n")


# ---------------------------------------------------------------------------
# stride-search baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrideSearchParams:
    stride: float = 0.003            # lateral step between search levels [m]
    sweep_extent: float = 0.010      # max |lateral offset| searched [m]
    push_force: float = 4.5          # constant +x target [N]
    level_steps: int = 14            # control steps spent per search level
    position_gain: float = 900.0     # N/m servo toward the level offset
    lateral_force_max: float = 6.0   # clamp on the lateral servo force [N]
    theta_gain: float = 30.0         # N.m/rad self-leveling torque
    wiggle_amp_force: float = 1.2    # N on Fy
    wiggle_amp_torque: float = 0.5   # N.m
    wiggle_freq: float = 2.0         # Hz


class StrideSearchActor:
    """Lawnmower sweep over lateral offsets relative to the trial's own
    start pose, servoing the end-effector's proprioceptive position; no
    learning and no socket-pose access.

    Phases: approach straight until the force sensor reports contact,
    sweep level-by-level while pressing, and once the plug drops forward
    past the capture threshold stop sweeping and push home.
    """

    CONTACT_FORCE = 0.5     # N on the insertion axis
    CAPTURE_ADVANCE = 0.004  # m of forward progress since first contact

    def __init__(self, params: StrideSearchParams, setup: RecordSetup):
        self.params = params
        self.dt = setup.sim_params.control_dt
        levels = [0.0]
        i = 1
        while i * params.stride <= params.sweep_extent:
            levels.extend([i * params.stride, -i * params.stride])
            i += 1
        self.levels = levels
        self.reset()

    def reset(self):
        self.origin_y: float | None = None
        self.contact_t: int | None = None
        self.contact_x: float | None = None
        self.captured_y: float | None = None

    def act(self, world, t, w_meas, obs):
        par = self.params
        pose = world.plug_pose
        if self.origin_y is None:
            self.origin_y = pose.y
        if self.contact_t is None and abs(w_meas[0]) > self.CONTACT_FORCE:
            self.contact_t = t
            self.contact_x = pose.x

        if self.contact_t is None:
            y_target = self.origin_y
        elif self.captured_y is not None:
            y_target = self.captured_y
        elif pose.x - self.contact_x > self.CAPTURE_ADVANCE:
            self.captured_y = pose.y
            y_target = self.captured_y
        else:
            idx = ((t - self.contact_t) // par.level_steps) % len(self.levels)
            y_target = self.origin_y + self.levels[idx]

        phase = 2.0 * math.pi * par.wiggle_freq * t * self.dt
        fy = par.position_gain * (y_target - pose.y)
        fy = max(-par.lateral_force_max, min(par.lateral_force_max, fy))
        fy += par.wiggle_amp_force * math.sin(phase)
        tau = (-par.theta_gain * pose.theta
               + par.wiggle_amp_torque * math.sin(phase + math.pi / 2.0))
        a = np.array([par.push_force, fy, tau])
        return a, a[None, :].copy()


def stride_search_baseline(params: StrideSearchParams, setup: RecordSetup,
                           start_pose: PlanarPose, seed,
                           config: EvalConfig | None = None) -> TrialRecord:
    return rollout(StrideSearchActor(params, setup), setup, start_pose, seed,
                   config)


def evaluate_baseline(params: StrideSearchParams, setup: RecordSetup,
                      test_poses: list[PlanarPose], eval_seed: int,
                      config: EvalConfig | None = None) -> EvalResult:
    trials = [stride_search_baseline(params, setup, pose, [eval_seed, 0, j], config)
              for j, pose in enumerate(test_poses)]
    return EvalResult({0: trials})
