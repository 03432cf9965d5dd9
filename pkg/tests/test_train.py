import numpy as np
import pytest

from plugbench import autodiff as ad
from plugbench import demos, sim, train
from plugbench.autodiff.tensor import Tensor
from plugbench.policy import Policy
from plugbench.sense import NormStats


@pytest.fixture(scope="module")
def tiny_pool():
    geom = sim.load_geometry("cardoor")
    setup = demos.default_setup(geom)
    region = demos.default_region(geom)
    train_poses = demos.grid_poses(region, demos.StartPoseGrid(1, 2, 2), geom, seed=0)
    val_poses = demos.random_poses(region, geom, 2, seed=50)
    train_d = [demos.record_demo(setup, p, seed=i) for i, p in enumerate(train_poses)]
    val_d = [demos.record_demo(setup, p, seed=100 + i) for i, p in enumerate(val_poses)]
    stats = demos.fit_dataset_stats(train_d, setup.wrench_scale)
    return train_d, val_d, stats, setup


def test_window_bound(tiny_pool):
    train_d, _, _, _ = tiny_pool
    h = 7
    pairs = train.window_index(train_d, h)
    for di, t in pairs:
        assert t + h <= train_d[di].length - 1
    counts = {}
    for di, _ in pairs:
        counts[di] = counts.get(di, 0) + 1
    for di, demo in enumerate(train_d):
        assert counts[di] == demo.length - h


def test_window_skips_short_demos(caplog):
    geom = sim.load_geometry("cardoor")
    short = demos.Demonstration(
        "cardoor", sim.PlanarPose(0, 0, 0), 0.05,
        np.zeros((3, 3), np.float32), np.zeros((3, 3), np.float32),
        np.zeros((3, 64, 64), np.uint8), True)
    with caplog.at_level("WARNING"):
        pairs = train.window_index([short], h=5)
    assert pairs == []
    assert "no valid window" in caplog.text


def test_chunk_loss_zero_when_exact(tiny_pool):
    train_d, _, stats, setup = tiny_pool
    builder = train.BatchBuilder(train_d, stats, 4, 3, setup.wrench_scale, False)
    pairs = train.window_index(train_d, 3)[:4]
    images, wrenches, targets = builder.build(pairs)

    class Exact:
        def forward(self, i, w):
            return Tensor(targets)

    loss = train.chunk_loss(Exact(), images, wrenches, targets)
    assert loss.item() == 0.0


def test_chunk_loss_uniform_offset():
    targets = np.zeros((4, 5, 3), dtype=np.float32)

    class Offset:
        def forward(self, i, w):
            return Tensor(targets + np.float32(0.1))

    loss = train.chunk_loss(Offset(), np.zeros((4, 1, 64, 64), np.float32),
                            np.zeros((4, 1, 3), np.float32), targets)
    assert loss.item() == pytest.approx(0.01, rel=1e-6)


def test_h1_equals_single_step_mse_bitwise(tiny_pool):
    # the horizon objective at h=1 is exactly the single-step objective
    train_d, _, stats, setup = tiny_pool
    builder = train.BatchBuilder(train_d, stats, 5, 1, setup.wrench_scale, False)
    pairs = train.window_index(train_d, 1)
    policy = Policy(train.TrainConfig(k=5, h=1, seeds=(0,)).policy_config(),
                    stats, seed=0)
    rng = np.random.default_rng(0)
    for trial in range(100):
        batch = [pairs[j] for j in rng.choice(len(pairs), size=8, replace=False)]
        images, wrenches, targets = builder.build(batch)
        with ad.no_grad():
            pred = policy.forward(Tensor(images), Tensor(wrenches)).data
        chunk = train.chunk_loss(policy, images, wrenches, targets).item()
        # independent single-step oracle: plain mean of squared residuals
        single = float(np.mean(np.square(pred[:, 0, :] - targets[:, 0, :])))
        assert chunk == single


def test_overfit_single_repeated_sample(tiny_pool, tmp_path):
    # one window repeated throughout each epoch: memorization sanity
    train_d, _, stats, setup = tiny_pool
    one = train_d[0]
    sub = demos.Demonstration(one.geometry_id, one.start_pose, one.dt,
                              one.w_meas[:3], one.actions[:3], one.images[:3],
                              True)
    cfg = train.TrainConfig(epochs=10, seeds=(0,), k=2, h=2, augment=False,
                            n_val=0)
    result = train.train_seed(cfg, [sub] * 64, [], stats, setup.wrench_scale,
                              seed=0, out_dir=str(tmp_path), run_id="overfit")
    assert result.epochs[-1].train_loss < 1e-3


def test_train_loss_decreases(tiny_pool, tmp_path):
    train_d, val_d, stats, setup = tiny_pool
    cfg = train.TrainConfig(epochs=3, seeds=(0,), k=4, h=2)
    res = train.train_seed(cfg, train_d, val_d, stats, setup.wrench_scale,
                           seed=0, out_dir=str(tmp_path))
    assert res.epochs[-1].train_loss < res.epochs[0].train_loss


def test_checkpoint_is_argmin_of_val(tiny_pool, tmp_path):
    train_d, val_d, stats, setup = tiny_pool
    cfg = train.TrainConfig(epochs=4, seeds=(0,), k=3, h=1)
    res = train.train_seed(cfg, train_d, val_d, stats, setup.wrench_scale,
                           seed=1, out_dir=str(tmp_path))
    vals = [e.val_mse for e in res.epochs]
    assert res.best_epoch == int(np.argmin(vals))
    assert res.best_val_mse == min(vals)


def test_checkpoint_val_mse_reproducible(tiny_pool, tmp_path):
    train_d, val_d, stats, setup = tiny_pool
    cfg = train.TrainConfig(epochs=2, seeds=(0,), k=3, h=2)
    res = train.train_seed(cfg, train_d, val_d, stats, setup.wrench_scale,
                           seed=2, out_dir=str(tmp_path))
    policy = Policy.load(res.checkpoint_path)
    builder = train.BatchBuilder(val_d, policy.stats, cfg.k, cfg.h,
                                 setup.wrench_scale, False)
    recomputed = train.validation_mse(policy, builder,
                                      train.window_index(val_d, cfg.h))
    assert recomputed == pytest.approx(res.best_val_mse, abs=1e-6)


def test_same_seed_identical_curves(tiny_pool, tmp_path):
    train_d, val_d, stats, setup = tiny_pool
    cfg = train.TrainConfig(epochs=2, seeds=(0,), k=3, h=1)
    r1 = train.train_seed(cfg, train_d, val_d, stats, setup.wrench_scale,
                          seed=5, out_dir=str(tmp_path), run_id="a")
    r2 = train.train_seed(cfg, train_d, val_d, stats, setup.wrench_scale,
                          seed=5, out_dir=str(tmp_path), run_id="b")
    assert [e.train_loss for e in r1.epochs] == [e.train_loss for e in r2.epochs]
    assert [e.val_mse for e in r1.epochs] == [e.val_mse for e in r2.epochs]
    a = (tmp_path / "a_5_best.pbck").read_bytes()
    b = (tmp_path / "b_5_best.pbck").read_bytes()
    assert a == b


def test_report_csv(tiny_pool, tmp_path):
    train_d, val_d, stats, setup = tiny_pool
    cfg = train.TrainConfig(epochs=2, seeds=(0, 1), k=3, h=1)
    res = train.train(cfg, train_d, val_d, stats, setup.wrench_scale,
                      str(tmp_path), run_id="rep")
    path = tmp_path / "report.csv"
    train.write_report(str(path), res)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "seed,epoch,train_loss,val_mse,wall_seconds"
    assert len(lines) == 1 + 2 * 2


def test_config_validation():
    with pytest.raises(ValueError):
        train.TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        train.TrainConfig(epochs=0)
