"""Line-of-sight Lambertian channel, receiver noise and point illuminance.

LEDs face straight down and photodiodes straight up, so irradiance and
incidence angles are both measured from the vertical axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.constants import elementary_charge

from .scenario import Scenario


def lambertian_order(semiangle_deg: float) -> float:
    """Lambertian emission order ``-ln 2 / ln cos(semiangle)``."""
    if not 0 < semiangle_deg < 90:
        raise ValueError(f"semi-angle must be in (0, 90) degrees, got {semiangle_deg}")
    return -np.log(2.0) / np.log(np.cos(np.radians(semiangle_deg)))


def concentrator_gain(fov_deg: float, index: float) -> float:
    """Non-imaging concentrator gain ``kappa^2 / sin^2(FOV)`` inside the field of view."""
    return index**2 / np.sin(np.radians(fov_deg)) ** 2


def _geometry(leds: np.ndarray, points: np.ndarray):
    """Distances and cosines of the vertical-axis angles, shape (n_points, n_leds)."""
    diff = leds[None, :, :] - points[:, None, :]
    d = np.linalg.norm(diff, axis=-1)
    if np.any(d == 0):
        raise ValueError("degenerate geometry: LED and receiver coincide")
    cos_angle = diff[..., 2] / d
    return d, cos_angle


def gain_matrix(leds, users, scenario: Scenario) -> np.ndarray:
    """DC gains ``h[i, j]`` from LED ``j`` to user ``i``."""
    leds = np.atleast_2d(np.asarray(leds, dtype=float))
    users = np.atleast_2d(np.asarray(users, dtype=float))
    d, cos_t = _geometry(leds, users)
    if np.any(cos_t <= 0):
        raise ValueError("every LED must be above every receiver")
    order = lambertian_order(scenario.semiangle_deg)
    g = concentrator_gain(scenario.fov_deg, scenario.concentrator_index)
    h = (scenario.detector_area * (order + 1) / (2 * np.pi * d**2)
         * cos_t**order * scenario.filter_gain * g * cos_t)
    # cos is decreasing on [0, 90]: outside the FOV iff cos(psi) < cos(FOV)
    inside = cos_t >= np.cos(np.radians(scenario.fov_deg)) - 1e-15
    return np.where(inside, h, 0.0)


def channel_gain(led, user, scenario: Scenario) -> float:
    return float(gain_matrix(led, user, scenario)[0, 0])


def noise_variance(h_row, scenario: Scenario, bias: float) -> float:
    """Shot + ambient + thermal noise variance for a user whose serving LEDs
    (gains ``h_row``) all carry DC bias ``bias``."""
    lo, hi = scenario.current_range
    if not lo - 1e-12 <= bias <= hi + 1e-12:
        raise ValueError(f"DC bias {bias} outside [{lo}, {hi}]")
    gamma, B = scenario.responsivity, scenario.bandwidth
    p_avg = scenario.eo_coefficient * float(np.sum(h_row)) * bias
    shot = 2 * gamma * elementary_charge * p_avg * B
    ambient = (4 * np.pi * elementary_charge * scenario.detector_area * gamma
               * scenario.ambient_photocurrent * (1 - np.cos(np.radians(scenario.fov_deg))) * B)
    thermal = scenario.preamp_noise_density**2 * B
    return shot + ambient + thermal


def noise_variances(gains: np.ndarray, user_cell: np.ndarray, led_cell: np.ndarray,
                    active: np.ndarray, scenario: Scenario, bias: float) -> np.ndarray:
    """Per-user noise variance given the current cell layout.

    Only the user's own-cell active LEDs feed the shot-noise term unless
    ``scenario.intercell_dc_noise`` is set, in which case every active LED does.
    """
    active = np.asarray(active, dtype=float)
    out = np.empty(gains.shape[0])
    for i in range(gains.shape[0]):
        if scenario.intercell_dc_noise:
            mask = active
        else:
            mask = active * (led_cell == user_cell[i])
        out[i] = noise_variance(gains[i] * mask, scenario, bias)
    return out


def illuminance_matrix(leds, points, scenario: Scenario) -> np.ndarray:
    """Horizontal illuminance (lux) at each point from each LED at peak intensity.

    No field-of-view cutoff: illumination is perceived regardless of the PD.
    """
    leds = np.atleast_2d(np.asarray(leds, dtype=float))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d, cos_t = _geometry(leds, points)
    order = lambertian_order(scenario.semiangle_deg)
    cos_t = np.clip(cos_t, 0.0, None)
    return scenario.max_luminous_intensity * cos_t**order * cos_t / d**2


def illuminance(led, sample, scenario: Scenario) -> float:
    return float(illuminance_matrix(led, sample, scenario)[0, 0])


@dataclass(frozen=True)
class ChannelMatrix:
    """Full user-by-LED gain matrix plus the noise variances for one cell layout.

    Per-cell blocks are slices of ``gains``: rows of a cell's users and
    columns of its LEDs; the same rows against other cells' LED columns are
    the inter-cell blocks.
    """

    gains: np.ndarray
    noise: np.ndarray

    def block(self, users, leds) -> np.ndarray:
        return self.gains[np.ix_(list(users), list(leds))]
