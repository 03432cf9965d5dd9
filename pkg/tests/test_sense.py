from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from plugbench import sense, sim
from plugbench.sense import NormStats, NormalizationError

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def geom():
    return sim.load_geometry("cardoor")


@pytest.fixture(scope="module")
def camera(geom):
    return sense.default_camera(geom)


def test_render_background_and_socket_only(geom, camera):
    # plug far outside the view box: only background and socket shades
    w = sim.make_world(geom, sim.PlanarPose(10.0, 10.0, 0.0))
    img = sense.render(w, camera)
    assert set(np.unique(img)) <= {sense.BACKGROUND, sense.SOCKET_SHADE}
    empty = img.copy()
    # any other far-away pose gives the identical empty-world image
    w2 = sim.make_world(geom, sim.PlanarPose(-10.0, 3.0, 1.0))
    assert np.array_equal(sense.render(w2, camera), empty)


def test_render_determinism(geom, camera):
    w = sim.make_world(geom, sim.PlanarPose(-0.05, 0.004, 0.05))
    a = sense.render(w, camera)
    b = sense.render(w, camera)
    assert np.array_equal(a, b)
    assert a.dtype == np.uint8 and a.shape == (64, 64)


def test_render_plug_occludes_socket(geom, camera):
    w = sim.make_world(geom, sim.goal_pose(geom))
    img = sense.render(w, camera)
    assert (img == sense.PLUG_SHADE).sum() > 0
    assert (img == sense.SOCKET_SHADE).sum() > 0


def test_render_matches_golden(geom, camera):
    w = sim.make_world(geom, sim.goal_pose(geom))
    img = sense.render(w, camera)
    golden = np.asarray(Image.open(GOLDEN / "goal_cardoor.png"))
    assert np.array_equal(img, golden)


def test_measure_wrench_zero_sigma_identity():
    rng = np.random.default_rng(0)
    w = np.array([1.0, -2.0, 0.3])
    out = sense.measure_wrench(w, rng, sigma_force=0.0, sigma_torque=0.0)
    assert np.array_equal(out, w)


def test_measure_wrench_seeded_repeatability():
    w = np.array([0.5, 0.5, 0.0])
    a = [sense.measure_wrench(w, np.random.default_rng(7)) for _ in range(3)]
    assert np.array_equal(a[0], a[1]) and np.array_equal(a[1], a[2])
    b = sense.measure_wrench(w, np.random.default_rng(8))
    assert not np.array_equal(a[0], b)


def test_measure_wrench_noise_std():
    rng = np.random.default_rng(123)
    n = 100_000
    samples = np.array([sense.measure_wrench(np.zeros(3), rng) for _ in range(n)])
    stds = samples.std(axis=0)
    assert abs(stds[0] - 0.05) / 0.05 < 0.02
    assert abs(stds[1] - 0.05) / 0.05 < 0.02
    assert abs(stds[2] - 0.005) / 0.005 < 0.02


def _stats():
    rng = np.random.default_rng(0)
    wr = rng.normal([1.0, -0.5, 0.1], [2.0, 1.0, 0.05], size=(500, 3))
    ac = rng.uniform(-1, 1, size=(500, 3)) * [6.0, 6.0, 4.0]
    return sense.fit_norm_stats(wr, ac), wr, ac


def test_norm_stats_mean_one_std():
    stats, wr, _ = _stats()
    z = sense.normalize_wrench(wr, stats)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(z.std(axis=0) - 1.0) < 1e-6)


def test_norm_points():
    stats, _, _ = _stats()
    z = sense.normalize_wrench(stats.wrench_mean, stats)
    assert np.allclose(z, 0.0)
    z1 = sense.normalize_wrench(stats.wrench_mean + stats.wrench_std, stats)
    assert np.allclose(z1, 1.0)


def test_action_roundtrip():
    stats, _, ac = _stats()
    norm = sense.normalize_action(ac, stats)
    assert np.all(np.abs(norm) <= 1.0 + 1e-12)
    back = sense.denormalize_action(norm, stats)
    assert np.max(np.abs(back - ac)) < 1e-6


def test_zero_variance_names_component():
    wr = np.zeros((10, 3))
    wr[:, 0] = np.linspace(0, 1, 10)
    wr[:, 2] = np.linspace(0, 1, 10)
    ac = np.ones((10, 3))
    with pytest.raises(NormalizationError, match="Fy"):
        sense.fit_norm_stats(wr, ac)


def test_stats_json_roundtrip(tmp_path):
    stats, _, _ = _stats()
    p = tmp_path / "stats.json"
    stats.save(str(p))
    loaded = NormStats.load(str(p))
    assert np.array_equal(loaded.wrench_mean, stats.wrench_mean)
    assert loaded.fingerprint() == stats.fingerprint()


def test_augment_identity():
    img = np.full((3, 8, 8), 100.0, dtype=np.float32)
    out = sense.apply_photometric(img, 0.0, 1.0)
    assert np.array_equal(out, img)


def test_augment_brightness_shift():
    img = np.full((2, 8, 8), 128.0, dtype=np.float32)
    out = sense.apply_photometric(img, 0.2, 1.0)
    assert out.mean() == pytest.approx(128.0 * 1.2)


def test_augment_contrast_scales_std():
    rng = np.random.default_rng(0)
    img = rng.uniform(80, 160, size=(2, 16, 16)).astype(np.float32)
    out = sense.apply_photometric(img, 0.0, 1.2)
    assert out.std() == pytest.approx(img.std() * 1.2, rel=1e-4)


def test_augment_clamps():
    img = np.full((1, 4, 4), 250.0, dtype=np.float32)
    out = sense.apply_photometric(img, 0.2, 1.2)
    assert out.max() <= 255.0


def test_augment_shared_parameters_across_history():
    # every frame in one history receives the identical transform
    rng = np.random.default_rng(5)
    hist = np.stack([np.full((8, 8), v, dtype=np.float32) for v in (50, 100, 150)])
    out = sense.augment(hist, rng)
    m = hist.mean()
    # recover the applied (shift, contrast) from two frames; check the third
    c = (out[2].mean() - out[0].mean()) / (150.0 - 50.0)
    s = (out[0].mean() - m - (50.0 - m) * c) / m
    predicted = m + (100.0 - m) * c + s * m
    assert out[1].mean() == pytest.approx(predicted, abs=1e-3)
