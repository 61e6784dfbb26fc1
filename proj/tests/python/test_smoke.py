import math

import numpy as np
import pytest

import scalelab


def test_tree_sum_split_order():
    values = np.array([1e16, 1.0, -1e16, 1.0])
    assert scalelab.tree_sum(values) == (1e16 + 1.0) + (-1e16 + 1.0)
    with pytest.raises(scalelab.Error):
        scalelab.tree_sum([])


def test_cholesky_and_pdf():
    s = np.array([[4.0, 2.0], [2.0, 3.0]])
    lower = scalelab.cholesky(s)
    np.testing.assert_allclose(lower @ lower.T, s, rtol=1e-15)
    assert abs(scalelab.gaussian_pdf([0.0], [0.0], [[1.0]]) - 0.3989422804014327) < 1e-15
    with pytest.raises(scalelab.NotPositiveDefinite):
        scalelab.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_render_grid_integrates_to_one():
    grid = scalelab.render_grid(3, 64, [1.0], [0.0, 0.0, 0.0], [0.08, 0.08, 0.08], [0.0, 0.0, 0.0])
    assert grid.shape == (64, 64, 64)
    assert abs(grid.sum() * (2.0 / 64) ** 3 - 1.0) < 1e-3


def test_mixture_density_matches_single_component():
    args = (2, [1.0], [0.1, -0.2], [0.3, 0.2], [0.4])
    cov = np.array([[0.09, 0.4 * 0.06], [0.4 * 0.06, 0.04]])
    x = [0.05, 0.0]
    assert math.isclose(scalelab.mixture_density(x, *args), scalelab.gaussian_pdf(x, [0.1, -0.2], cov), rel_tol=1e-12)


def test_counts_and_losses():
    assert scalelab.param_count(3, 50) == 500
    assert scalelab.msle([0.0, 1.0], [0.0, 1.0]) == 0.0


def test_schedules():
    eta = 0.00105
    assert scalelab.lr_at("warmup", eta, 4, 32, 0) == eta
    assert scalelab.lr_at("warmup", eta, 4, 32, 160) == 4 * eta
    assert scalelab.lr_at("warmup", eta, 4, 32, 80) == 2.5 * eta
    assert scalelab.lr_at("linear", eta, 4, 32, 0) == 4 * eta
    assert scalelab.lr_at("constant", eta, 4, 32, 999) == eta


def test_harness_arithmetic():
    assert abs(scalelab.efficiency(100, 30, 4) - 83.3333333) < 1e-6
    mean, half = scalelab.ci95([1, 2, 3])
    assert mean == 2.0 and abs(half - 2.4841377117195456) < 1e-9
    assert abs(scalelab.predict_speedup(0, 100, 10, 8) - 2.3529411764705883) < 1e-12
    data = [(n, 3.5 + 120.0 / n + 2.25 * math.log2(n)) for n in (1, 2, 4, 8, 16)]
    t_s, t_p, c, residual = scalelab.fit_speedup(data)
    assert math.isclose(t_s, 3.5, rel_tol=1e-6) and math.isclose(t_p, 120, rel_tol=1e-6)
    assert math.isclose(c, 2.25, rel_tol=1e-6) and residual < 1e-9
    with pytest.raises(scalelab.Error):
        scalelab.efficiency(0, 1, 1)


def test_generate_shape_and_range():
    x = scalelab.generate(count=5, n=2, side=8, seed=3)
    assert x.shape == (5, 8, 8)
    assert x.min() >= 0.0 and x.max() <= 1.0
    np.testing.assert_array_equal(x, scalelab.generate(count=5, n=2, side=8, seed=3))


def test_train_and_time_to_loss():
    config = {
        "batch": 16,
        "workers": 2,
        "max_epochs": 2,
        "target_loss": 0.0,
        "model": {"n": 2, "K": 2, "side": 8, "latent": 8, "encoder": [{"kernel": 3, "filters": 2}]},
    }
    seen = []
    log = scalelab.train(config, {"count": 64}, validation_size=16, on_epoch=lambda *r: seen.append(r))
    assert log.status == "status=exhausted"
    assert len(log.records) == 2 and len(seen) == 2
    assert np.all(np.diff(log.elapsed) >= 0)
    single = scalelab.train({**config, "workers": 1}, {"count": 64}, validation_size=16)
    np.testing.assert_array_equal(single.val_loss, log.val_loss)
    outcome, seconds, epoch = scalelab.time_to_loss(log, log.records[1][2])
    assert outcome == "reached" and epoch <= 2 and seconds is not None
    assert scalelab.time_to_loss(log, -1.0)[0] == "not_reached"


def test_strong_mode_rejects_odd_worker_counts():
    with pytest.raises(scalelab.Error, match="power-of-two"):
        scalelab.train({"workers": 3}, {"count": 300})
