"""Receiver-plane illuminance sampling and CV(RMSE) uniformity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .channel import illuminance_matrix
from .scenario import Scenario


class UndefinedUniformity(ValueError):
    """CV(RMSE) requested for a field with zero mean illuminance."""


@dataclass(frozen=True)
class IlluminanceField:
    points: np.ndarray      # (K, 2) sample coordinates
    E: np.ndarray           # (K, N_T) lux per LED at peak intensity
    grid_spacing: float
    origin: tuple[float, float]   # coordinates of the first lattice point

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def lattice_axis(extent: float, spacing: float) -> np.ndarray:
    """``ceil(extent / spacing)`` points at cell centers, symmetric about 0."""
    n = math.ceil(extent / spacing - 1e-9)
    return (np.arange(n) - (n - 1) / 2) * spacing


def build_field(scenario: Scenario) -> IlluminanceField:
    xs = lattice_axis(scenario.room_size[0], scenario.grid_spacing)
    ys = lattice_axis(scenario.room_size[1], scenario.grid_spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts3 = np.column_stack([pts, np.full(len(pts), scenario.receiver_plane_height)])
    E = illuminance_matrix(scenario.led_xyz, pts3, scenario)
    return IlluminanceField(pts, E, scenario.grid_spacing, (float(xs[0]), float(ys[0])))


def totals(field: IlluminanceField, activation) -> np.ndarray:
    """Per-point illuminance ``sum_j E[mu, j] a_j`` (fractional weights allowed)."""
    return field.E @ np.asarray(activation, dtype=float)


def cv_rmse(field: IlluminanceField, activation) -> tuple[float, float, float]:
    """Mean illuminance, population RMSE and their ratio."""
    tot = totals(field, activation)
    mean = float(tot.mean())
    if mean <= 0:
        raise UndefinedUniformity("mean illuminance is zero")
    rmse = float(np.sqrt(np.mean((tot - mean) ** 2)))
    return mean, rmse, rmse / mean


def cv_value_and_grad(field: IlluminanceField, activation) -> tuple[float, np.ndarray]:
    """CV(RMSE) of the weighted field and its gradient with respect to the weights."""
    a = np.asarray(activation, dtype=float)
    tot = field.E @ a
    K = tot.size
    mean = tot.mean()
    if mean <= 0:
        raise UndefinedUniformity("mean illuminance is zero")
    dev = tot - mean
    rmse = np.sqrt(dev @ dev / K)
    d_mean = field.E.mean(axis=0)
    if rmse == 0:
        d_rmse = np.zeros_like(a)
    else:
        d_rmse = field.E.T @ dev / (K * rmse)
    return rmse / mean, d_rmse / mean - rmse * d_mean / mean**2


def write_map_csv(path, field: IlluminanceField, activation, scale: float = 1.0) -> int:
    """Write ``x, y, lux`` rows; ``scale`` is the relative drive level of active LEDs."""
    tot = totals(field, activation) * scale
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "lux"])
        for (x, y), v in zip(field.points, tot):
            w.writerow([f"{x:.6g}", f"{y:.6g}", f"{v:.6g}"])
    return len(tot)
