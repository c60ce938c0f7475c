"""Two-step hybrid dimming: coarse control through the number of active
LEDs, fine control through the DC bias."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass


class DimmingError(ValueError):
    pass


@dataclass(frozen=True)
class DimmingConfig:
    eta: float
    n_leds: int
    n_active: int
    bias: float
    headroom: float
    i_low: float
    i_high: float

    @property
    def i_mid(self) -> float:
        return (self.i_low + self.i_high) / 2


def _headroom(bias: float, i_low: float, i_high: float) -> float:
    return min(bias - i_low, i_high - bias)


def plan_dimming(eta: float, n_leds: int, i_low: float, i_high: float) -> DimmingConfig:
    """Number of active LEDs ``floor(eta * N)`` and the DC bias that restores ``eta`` exactly."""
    if not 0 < eta <= 1:
        raise DimmingError(f"dimming level must be in (0, 1], got {eta}")
    if not i_low < i_high:
        raise DimmingError(f"empty current range [{i_low}, {i_high}]")
    # guard against 0.7 * 10 = 6.999999...
    n_active = math.floor(eta * n_leds + 1e-9)
    if n_active < 1:
        raise DimmingError(f"floor({eta} * {n_leds}) = 0 active LEDs")
    i_mid = (i_low + i_high) / 2
    bias = eta * n_leds * (i_mid - i_low) / n_active + i_low
    if bias > i_high:
        raise DimmingError(f"DC bias {bias:.6g} A exceeds I_h = {i_high} A")
    headroom = _headroom(bias, i_low, i_high)
    if headroom == 0:
        warnings.warn("zero signal headroom: DC bias sits on a current limit", stacklevel=2)
    return DimmingConfig(eta, n_leds, n_active, bias, headroom, i_low, i_high)


def dimming_level(n_active: int, bias: float, n_leds: int, i_low: float, i_high: float) -> float:
    """Dimming level as a fraction (1.0 = every LED at the mid-range current)."""
    i_mid = (i_low + i_high) / 2
    return n_active * (bias - i_low) / (n_leds * (i_mid - i_low))


def analog_dimming(eta: float, n_leds: int, i_low: float, i_high: float) -> DimmingConfig:
    """All LEDs on, amplitude dimming: ``I_B = eta (I_0 - I_l) + I_l``."""
    if not 0 < eta <= 1:
        raise DimmingError(f"dimming level must be in (0, 1], got {eta}")
    i_mid = (i_low + i_high) / 2
    bias = eta * (i_mid - i_low) + i_low
    return DimmingConfig(eta, n_leds, n_leds, bias, _headroom(bias, i_low, i_high), i_low, i_high)


def digital_dimming(eta: float, n_leds: int, i_low: float, i_high: float) -> DimmingConfig:
    """All LEDs on at full brightness; the duty cycle ``eta`` carries the dimming."""
    if not 0 < eta <= 1:
        raise DimmingError(f"dimming level must be in (0, 1], got {eta}")
    i_mid = (i_low + i_high) / 2
    return DimmingConfig(eta, n_leds, n_leds, i_mid, _headroom(i_mid, i_low, i_high), i_low, i_high)
