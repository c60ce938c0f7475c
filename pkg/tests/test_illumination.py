import csv

import numpy as np
import pytest

from vlcopt.illumination import (
    IlluminanceField, UndefinedUniformity, build_field, cv_rmse, cv_value_and_grad, totals,
    write_map_csv,
)
from vlcopt.scenario import table2_scenario

S64 = table2_scenario(64)
F64 = build_field(S64)


def test_grid_size():
    assert F64.n_points == 729


def test_center_is_brightest():
    tot = totals(F64, np.ones(64))
    center = np.argmin(np.linalg.norm(F64.points, axis=1))
    assert tot[center] == pytest.approx(tot.max())


def test_zero_leds():
    assert totals(F64, np.zeros(64)).mean() == 0
    with pytest.raises(UndefinedUniformity):
        cv_rmse(F64, np.zeros(64))


def _field(E):
    E = np.asarray(E, dtype=float)
    return IlluminanceField(np.zeros((E.shape[0], 2)), E, 0.3, (0.0, 0.0))


def test_uniform_field():
    assert cv_rmse(_field(np.full((5, 1), 7.0)), [1.0]) == (7.0, 0.0, 0.0)


def test_two_points_hand():
    mean, rmse, cv = cv_rmse(_field([[1.0], [3.0]]), [1.0])
    assert (mean, rmse, cv) == (2.0, 1.0, 0.5)


def test_table2_baselines():
    _, _, cv64 = cv_rmse(F64, np.ones(64))
    s36 = table2_scenario(36)
    _, _, cv36 = cv_rmse(build_field(s36), np.ones(36))
    assert cv36 == pytest.approx(0.2939, abs=0.02)
    assert cv64 == pytest.approx(0.3037, abs=0.02)


def test_scale_invariance():
    a = np.random.default_rng(0).uniform(0, 1, 64)
    bright = build_field(S64.replace(max_luminous_intensity=1234.0))
    assert cv_rmse(bright, a)[2] == pytest.approx(cv_rmse(F64, a)[2], rel=1e-12)


def test_rmse_identity():
    a = np.random.default_rng(1).uniform(0, 1, 64)
    tot = totals(F64, a)
    mean, rmse, _ = cv_rmse(F64, a)
    assert rmse**2 == pytest.approx(np.mean(tot**2) - mean**2, rel=1e-9)


def test_superset_never_darker():
    rng = np.random.default_rng(2)
    a = (rng.uniform(size=64) < 0.5).astype(float)
    b = np.maximum(a, (rng.uniform(size=64) < 0.3).astype(float))
    assert cv_rmse(F64, b)[0] >= cv_rmse(F64, a)[0]


def test_cv_gradient_fd():
    a = np.random.default_rng(3).uniform(0.2, 0.9, 64)
    _, g = cv_value_and_grad(F64, a)
    h = 1e-6
    fd = np.array([(cv_rmse(F64, a + h * e)[2] - cv_rmse(F64, a - h * e)[2]) / (2 * h)
                   for e in np.eye(64)])
    assert np.abs(g - fd).max() <= 1e-6 * np.abs(fd).max()


def test_map_csv(tmp_path):
    path = tmp_path / "map.csv"
    assert write_map_csv(path, F64, np.ones(64)) == 729
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 729 and set(rows[0]) == {"x", "y", "lux"}
