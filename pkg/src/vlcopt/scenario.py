"""Experiment description: room geometry, device placement, physics constants
and solver knobs.

Coordinates are in meters with the room footprint centered on the origin,
``x, y`` in ``(-L/2, L/2)`` and ``z`` measured from the floor.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import tomli
import tomli_w

SEED_ENV_VAR = "VLCOPT_SEED"

# LED pitch and peak intensity per grid size, chosen so that the all-on
# CV(RMSE) on the 0.3 m lattice lands at 0.2995 (36 LEDs) and 0.2991 (64 LEDs).
LED_SPACING_PRESETS = {36: 1.2, 64: 0.9}
LUMINOUS_INTENSITY_PRESETS = {36: 900.0, 64: 600.0}
USER_COUNT_PRESETS = {36: 12, 64: 16}


class ScenarioError(ValueError):
    """Raised when a scenario field violates its invariant."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SolverSettings:
    penalty_lambda: float = 1e5
    # allocator dual step in normalized units; 0.01 there needs ~10^5 iterations
    stepsize_a: float = 0.3
    eps1: float = 1e-6
    eps2: float = 1e-3
    eps3: float = 1e-3
    max_inner_iters: int = 3000
    max_outer_iters: int = 10
    rng_seed: int = 0
    restarts: int = 4
    adaptive_penalty: bool = False
    identity_init: bool = False

    def __post_init__(self):
        for name in ("eps1", "eps2", "eps3", "stepsize_a"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"solver.{name}", "must be > 0")
        if not self.penalty_lambda >= 1:
            raise ScenarioError("solver.penalty_lambda", "must be >= 1")
        for name in ("max_inner_iters", "max_outer_iters"):
            if int(getattr(self, name)) < 1:
                raise ScenarioError(f"solver.{name}", "must be >= 1")
        if self.restarts < 0:
            raise ScenarioError("solver.restarts", "must be >= 0")


@dataclass(frozen=True)
class Scenario:
    room_size: tuple[float, float, float] = (8.0, 8.0, 3.0)
    led_positions: tuple[tuple[float, float, float], ...] = ()
    user_positions: tuple[tuple[float, float, float], ...] = ()
    receiver_plane_height: float = 0.75
    semiangle_deg: float = 80.0
    detector_area: float = 1e-4
    fov_deg: float = 60.0
    filter_gain: float = 1.0
    concentrator_index: float = 1.0
    responsivity: float = 0.54
    eo_coefficient: float = 0.44
    ambient_photocurrent: float = 10.93
    preamp_noise_density: float = 5e-12
    bandwidth: float = 1e8
    current_range: tuple[float, float] = (0.0, 2.0)
    max_luminous_intensity: float = 600.0
    dimming_target: float = 0.7
    uniformity_threshold: float = 0.25
    distance_threshold: float = 3.0
    grid_spacing: float = 0.3
    intercell_dc_noise: bool = False
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        _validate(self)

    @cached_property
    def led_xyz(self) -> np.ndarray:
        return np.asarray(self.led_positions, dtype=float).reshape(-1, 3)

    @cached_property
    def user_xyz(self) -> np.ndarray:
        return np.asarray(self.user_positions, dtype=float).reshape(-1, 3)

    @property
    def n_leds(self) -> int:
        return len(self.led_positions)

    @property
    def n_users(self) -> int:
        return len(self.user_positions)

    @property
    def led_height(self) -> float:
        return self.led_positions[0][2]

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_solver(self, **changes) -> "Scenario":
        return dataclasses.replace(self, solver=dataclasses.replace(self.solver, **changes))


def _validate(s: Scenario) -> None:
    if len(s.room_size) != 3 or min(s.room_size) <= 0:
        raise ScenarioError("room_size", "needs three positive extents")
    if not s.led_positions:
        raise ScenarioError("led_positions", "at least one LED is required")
    if not s.user_positions:
        raise ScenarioError("user_positions", "at least one user is required")
    if len(s.user_positions) > len(s.led_positions):
        raise ScenarioError("user_positions", "more users than LEDs")
    heights = {p[2] for p in s.led_positions}
    if len(heights) != 1:
        raise ScenarioError("led_positions", "all LEDs must share one mounting height")
    if s.led_height <= s.receiver_plane_height:
        raise ScenarioError("led_positions", "LED plane must be above the receiver plane")
    if not 0 < s.receiver_plane_height < s.room_size[2]:
        raise ScenarioError("receiver_plane_height", "must lie inside the room")
    if not 0 < s.semiangle_deg < 90:
        raise ScenarioError("semiangle_deg", "must be in (0, 90) degrees")
    if not 0 < s.fov_deg <= 90:
        raise ScenarioError("fov_deg", "must be in (0, 90] degrees")
    lo, hi = s.current_range
    if not lo < hi:
        raise ScenarioError("current_range", f"I_l={lo} must be below I_h={hi}")
    if not 0 < s.dimming_target <= 1:
        raise ScenarioError("dimming_target", "must be in (0, 1]")
    if not s.uniformity_threshold > 0:
        raise ScenarioError("uniformity_threshold", "must be > 0")
    for name in ("detector_area", "distance_threshold", "grid_spacing",
                 "max_luminous_intensity", "responsivity", "eo_coefficient"):
        if not getattr(s, name) > 0:
            raise ScenarioError(name, "must be > 0")
    for name in ("bandwidth", "ambient_photocurrent", "preamp_noise_density",
                 "filter_gain", "concentrator_index"):
        if getattr(s, name) < 0:
            raise ScenarioError(name, "must be >= 0")


def led_grid(n_leds: int, room_size=(8.0, 8.0, 3.0), height: float = 2.5,
             spacing: float | None = None) -> list[tuple[float, float, float]]:
    """Square LED grid centered in the room.

    Without an explicit ``spacing`` the preset pitch for 36/64 LEDs is used,
    falling back to one LED per ``L / sqrt(n)`` cell for other sizes.
    """
    k = math.isqrt(n_leds)
    if k * k != n_leds:
        raise ScenarioError("leds.count", "grid layout needs a perfect square")
    if spacing is None:
        spacing = LED_SPACING_PRESETS.get(n_leds, min(room_size[:2]) / k)
    offsets = (np.arange(k) - (k - 1) / 2) * spacing
    return [(float(x), float(y), float(height)) for y in offsets for x in offsets]


def place_users_random(scenario: Scenario, n: int, seed: int) -> list[tuple[float, float, float]]:
    """Uniform user drop on the receiver plane; a pure function of ``(scenario, n, seed)``."""
    if n < 1:
        raise ValueError("need at least one user")
    rng = np.random.default_rng(seed)
    half = np.asarray(scenario.room_size[:2]) / 2
    pts = []
    while len(pts) < n:
        x, y = rng.uniform(-half, half)
        # open interval: drop points that land exactly on a wall
        if abs(x) < half[0] and abs(y) < half[1]:
            pts.append((float(x), float(y), float(scenario.receiver_plane_height)))
    return pts


def table2_scenario(n_leds: int = 64, n_users: int | None = None, seed: int = 0,
                    **overrides) -> Scenario:
    """Default indoor setup: 8 x 8 x 3 m room, LEDs at 2.5 m, users at 0.75 m."""
    if n_users is None:
        n_users = USER_COUNT_PRESETS.get(n_leds, max(1, n_leds // 4))
    leds = led_grid(n_leds)
    base = Scenario(
        led_positions=tuple(leds),
        user_positions=((0.0, 0.0, 0.75),),
        max_luminous_intensity=LUMINOUS_INTENSITY_PRESETS.get(n_leds, 600.0),
        solver=SolverSettings(rng_seed=seed),
    )
    users = place_users_random(base, n_users, seed)
    return dataclasses.replace(base, user_positions=tuple(users), **overrides)


# -- config file I/O --------------------------------------------------------

_PHYSICS_KEYS = {
    "semiangle_deg", "detector_area", "fov_deg", "filter_gain", "concentrator_index",
    "responsivity", "eo_coefficient", "ambient_photocurrent", "preamp_noise_density",
    "bandwidth", "max_luminous_intensity", "intercell_dc_noise",
}
_TARGET_KEYS = {"dimming_target", "uniformity_threshold", "distance_threshold", "grid_spacing"}


def load_scenario(source: str | Mapping[str, Any]) -> Scenario:
    """Build a validated :class:`Scenario` from TOML text (or an already parsed mapping).

    Physics constants that are omitted take their default values. The
    ``VLCOPT_SEED`` environment variable, when set, overrides ``solver.rng_seed``.
    """
    if isinstance(source, str):
        try:
            cfg = tomli.loads(source)
        except tomli.TOMLDecodeError as exc:
            raise ScenarioError("<config>", f"parse error: {exc}") from exc
    else:
        cfg = dict(source)

    room = cfg.get("room", {})
    room_size = tuple(float(v) for v in room.get("size", (8.0, 8.0, 3.0)))
    led_height = float(room.get("led_height", 2.5))
    rx_height = float(room.get("receiver_plane_height", 0.75))

    solver_cfg = dict(cfg.get("solver", {}))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        solver_cfg["rng_seed"] = int(env_seed)
    try:
        solver = SolverSettings(**solver_cfg)
    except TypeError as exc:
        raise ScenarioError("solver", str(exc)) from exc

    kwargs: dict[str, Any] = {}
    for table in ("physics", "targets"):
        for key, value in cfg.get(table, {}).items():
            allowed = _PHYSICS_KEYS if table == "physics" else _TARGET_KEYS
            if key not in allowed:
                raise ScenarioError(f"{table}.{key}", "unknown field")
            kwargs[key] = value
    if "current_range" in cfg.get("electrical", {}):
        kwargs["current_range"] = tuple(float(v) for v in cfg["electrical"]["current_range"])

    leds_cfg = cfg.get("leds", {})
    if "positions" in leds_cfg:
        leds = [tuple(float(c) for c in p) for p in leds_cfg["positions"]]
    else:
        n_leds = int(leds_cfg.get("count", 64))
        leds = led_grid(n_leds, room_size, led_height, leds_cfg.get("spacing"))
        if "max_luminous_intensity" not in kwargs:
            kwargs["max_luminous_intensity"] = LUMINOUS_INTENSITY_PRESETS.get(n_leds, 600.0)

    users_cfg = cfg.get("users", {})
    proto = Scenario(room_size=room_size, led_positions=tuple(leds),
                     user_positions=((0.0, 0.0, rx_height),),
                     receiver_plane_height=rx_height, **kwargs)
    if "positions" in users_cfg:
        users = [tuple(float(c) for c in p) for p in users_cfg["positions"]]
    else:
        n_users = int(users_cfg.get("count", USER_COUNT_PRESETS.get(len(leds), 1)))
        users = place_users_random(proto, n_users, int(users_cfg.get("seed", solver.rng_seed)))
    return dataclasses.replace(proto, user_positions=tuple(users), solver=solver)


def load_scenario_file(path: str | os.PathLike) -> Scenario:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    """Mapping in the config-file layout with explicit positions (reloads to an equal Scenario)."""
    return {
        "room": {
            "size": list(s.room_size),
            "led_height": s.led_height,
            "receiver_plane_height": s.receiver_plane_height,
        },
        "leds": {"positions": [list(p) for p in s.led_positions]},
        "users": {"positions": [list(p) for p in s.user_positions]},
        "physics": {k: getattr(s, k) for k in sorted(_PHYSICS_KEYS)},
        "electrical": {"current_range": list(s.current_range)},
        "targets": {k: getattr(s, k) for k in sorted(_TARGET_KEYS)},
        "solver": dataclasses.asdict(s.solver),
    }


def dump_scenario(s: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(s))
