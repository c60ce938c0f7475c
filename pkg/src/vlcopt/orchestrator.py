"""Alternating LED selection / power allocation and the dimming baselines.

One TASP-HD outer iteration freezes the precoders and picks the active
LEDs, re-forms the cells over that selection, then re-solves every cell's
power allocation with the inter-cell interference of the previous powers
held fixed. The sum-rate is clamped to be nondecreasing; a clamp ends the
loop, and the state that produced the best rate is the one returned.

The analog (AD) and digital (DD) baselines keep every LED on and solve the
allocation once on the full partition.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .allocator import AllocationState, run_algorithm1
from .cells import CellPartition, associate_leds, cluster_users, update_cells
from .channel import gain_matrix, noise_variances
from .dimming import DimmingConfig, analog_dimming, digital_dimming, plan_dimming
from .illumination import IlluminanceField, build_field, cv_rmse, totals
from .precoding import PAM_VARIANCE, assemble, fr_mbe, pseudo_inverse, sinr, sum_rate
from .scenario import Scenario
from .selector import SelectionProblem, SelectionState, solve_selection

log = logging.getLogger(__name__)

SCHEMES = ("tasp-hd", "tasp-hd-up", "ad", "dd")


class RunFailure(RuntimeError):
    """A run could not produce a valid operating point."""


class FrequencyReuseError(ValueError):
    pass


@dataclass(frozen=True)
class Instance:
    """Geometry-derived quantities shared by every scheme on one scenario."""

    scenario: Scenario
    gains: np.ndarray               # (N_R, N_T)
    field: IlluminanceField
    clusters: tuple
    centroids: np.ndarray

    @property
    def signal_scale(self) -> float:
        return self.scenario.responsivity * self.scenario.eo_coefficient

    @property
    def n_leds(self) -> int:
        return self.gains.shape[1]

    @property
    def n_users(self) -> int:
        return self.gains.shape[0]


def prepare(scenario: Scenario) -> Instance:
    H = gain_matrix(scenario.led_xyz, scenario.user_xyz, scenario)
    clusters, centroids = cluster_users(scenario.user_xyz, scenario.distance_threshold)
    return Instance(scenario, H, build_field(scenario), clusters, centroids)


@dataclass
class RunResult:
    scheme: str
    eta: float
    dimming: DimmingConfig
    activation: np.ndarray
    partition: CellPartition
    W: np.ndarray
    sinr: np.ndarray
    sum_rate: float                 # physical-layer rate, before any duty-cycle scaling
    rate_scale: float               # fraction of time carrying data (DD duty cycle)
    rate_trace: list
    converged: bool
    iterations: int
    cv: float
    lux_min: float
    lux_max: float
    orthogonal_rate: float = math.nan   # sum-rate with every cell on its own band
    drive: float = 1.0                  # luminous output of an active LED relative to I_0
    mbe: dict = field(default_factory=dict)
    selection: SelectionState | None = None
    allocations: list = field(default_factory=list)

    @property
    def effective_rate(self) -> float:
        return self.rate_scale * self.sum_rate

    def summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "eta": self.eta,
            "n_leds": int(self.activation.size),
            "n_active": int(self.activation.sum()),
            "n_users": int(self.sinr.size),
            "n_cells": self.partition.num_cells,
            "bias": self.dimming.bias,
            "headroom": self.dimming.headroom,
            "sum_rate": self.sum_rate,
            "rate_scale": self.rate_scale,
            "orthogonal_rate": self.orthogonal_rate,
            "mbe": {str(k): v for k, v in self.mbe.items()},
            "cv": self.cv,
            "lux_min": self.lux_min,
            "lux_max": self.lux_max,
            "drive": self.drive,
            "iterations": self.iterations,
            "converged": self.converged,
            "rate_trace": list(self.rate_trace),
            "active_leds": [int(j) for j in np.flatnonzero(self.activation)],
            "cells": [{"users": list(u), "leds": list(l)}
                      for u, l in zip(self.partition.user_clusters, self.partition.led_sets)],
            "sinr": [float(x) for x in self.sinr],
        }


def _noise(inst: Instance, partition: CellPartition, activation, bias: float) -> np.ndarray:
    return noise_variances(inst.gains, partition.user_cell(inst.n_users),
                           partition.led_cell(inst.n_leds), activation, inst.scenario, bias)


def _directions(inst: Instance, partition: CellPartition, activation) -> list:
    """Per-cell ZF directions ``pinv(H_c diag(a_c))``."""
    a = np.asarray(activation, dtype=float)
    out = []
    for users, leds in zip(partition.user_clusters, partition.led_sets):
        Hc = inst.gains[np.ix_(users, leds)] * a[list(leds)][None, :]
        out.append(pseudo_inverse(Hc))
    return out


def interference_power(inst: Instance, activation, W, user_cell) -> np.ndarray:
    """Inter-cell interference ``delta_i`` (A^2) each user receives through ``W``."""
    a = np.asarray(activation, dtype=float)
    G = (inst.gains * a[None, :]) @ W
    uc = np.asarray(user_cell)
    mask = uc[:, None] != uc[None, :]
    return PAM_VARIANCE * inst.signal_scale**2 * np.sum(np.where(mask, G**2, 0.0), axis=1)


def initial_precoder(inst: Instance, partition: CellPartition, headroom: float,
                     identity: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Starting precoder on ``partition`` and the per-user powers it implies.

    By default each cell uses its ZF directions with a common power that
    fills half of the tightest row budget. With ``identity`` each cell's
    block is the orthonormal polar factor of its ZF directions, so
    ``W_c^T W_c = I``, scaled into the amplitude budget.
    """
    ones = np.ones(inst.n_leds)
    blocks, q = [], np.zeros(inst.n_users)
    for users, P in zip(partition.user_clusters, _directions(inst, partition, ones)):
        bound = headroom**2 / len(users)
        if identity:
            U, _, Vt = np.linalg.svd(P, full_matrices=False)
            B = U @ Vt
            B *= headroom / max(np.abs(B).sum(axis=1).max(), 1e-300)
            blocks.append(B)
            q[list(users)] = np.nan
            continue
        level = 0.5 * bound / np.abs(P @ P.T).sum(axis=1).max()
        blocks.append(P * math.sqrt(level))
        q[list(users)] = level
    return assemble(inst.n_leds, inst.n_users, partition, blocks), q


def allocate(inst: Instance, partition: CellPartition, activation, dimming: DimmingConfig,
             noise, delta, settings) -> tuple[np.ndarray, np.ndarray, list]:
    """Per-cell allocation with frozen inter-cell interference ``delta``.

    Returns the assembled precoder, the per-user powers and the
    per-cell allocator states.
    """
    k2 = inst.signal_scale**2
    m_all = 2 * k2 / (np.pi * np.e * (np.asarray(delta) + np.asarray(noise)))
    blocks, states = [], []
    q = np.zeros(inst.n_users)
    for users, P in zip(partition.user_clusters, _directions(inst, partition, activation)):
        st = run_algorithm1(P, m_all[list(users)], dimming.headroom,
                            stepsize_a=settings.stepsize_a, eps=settings.eps2,
                            max_iters=settings.max_inner_iters, keep_trace=False)
        blocks.append(P * np.sqrt(st.q)[None, :])
        q[list(users)] = st.q
        states.append(st)
    return assemble(inst.n_leds, inst.n_users, partition, blocks), q, states


def _metrics(inst: Instance, activation, drive: float):
    _, _, cv = cv_rmse(inst.field, activation)
    lux = totals(inst.field, activation) * drive
    return cv, float(lux.min()), float(lux.max())


def _drive(dimming: DimmingConfig) -> float:
    """Relative luminous output of an active LED, 1.0 at the mid-range current."""
    return (dimming.bias - dimming.i_low) / (dimming.i_mid - dimming.i_low)


def _gauss_seidel_delta(inst, partition, activation, q_prev) -> np.ndarray:
    """Inter-cell interference of the new partition's directions with last powers."""
    blocks = [P * np.sqrt(np.nan_to_num(q_prev[list(users)], nan=0.0))[None, :]
              for users, P in zip(partition.user_clusters,
                                  _directions(inst, partition, activation))]
    W = assemble(inst.n_leds, inst.n_users, partition, blocks)
    return interference_power(inst, activation, W, partition.user_cell(inst.n_users))


def _evaluate(inst, activation, W, partition, noise) -> tuple[np.ndarray, float]:
    xi = sinr(inst.gains, activation, W, partition.user_cell(inst.n_users), noise,
              inst.signal_scale)
    return xi, sum_rate(xi)


def _finalize(res: RunResult, inst: Instance, noise) -> RunResult:
    """Fill the orthogonal-band rate and the MBE for FR-1 and FR-N_c."""
    cells = res.partition.num_cells
    xi = sinr(inst.gains, res.activation, res.W, res.partition.user_cell(inst.n_users), noise,
              inst.signal_scale, reuse_groups=np.arange(cells))
    res.orthogonal_rate = sum_rate(xi)
    res.mbe = {1: evaluate_fr(res, 1)}
    if cells > 1:
        res.mbe[cells] = evaluate_fr(res, cells)
    return res


def _single_solve(inst: Instance, scheme: str, dimming: DimmingConfig, rate_scale: float,
                  drive: float, settings) -> RunResult:
    ones = np.ones(inst.n_leds)
    partition = associate_leds(inst.gains, inst.clusters, inst.centroids)
    W0, q0 = initial_precoder(inst, partition, dimming.headroom, settings.identity_init)
    noise = _noise(inst, partition, ones, dimming.bias)
    delta = interference_power(inst, ones, W0, partition.user_cell(inst.n_users))
    W, _, states = allocate(inst, partition, ones, dimming, noise, delta, settings)
    xi, rate = _evaluate(inst, ones, W, partition, noise)
    cv, lo, hi = _metrics(inst, ones, drive)
    res = RunResult(scheme, dimming.eta, dimming, ones, partition, W, xi, rate, rate_scale,
                    [rate], True, 1, cv, lo, hi, drive=drive, allocations=states)
    return _finalize(res, inst, noise)


def run_ad(scenario: Scenario, eta: float | None = None, instance: Instance | None = None) -> RunResult:
    """Analog dimming: every LED on, DC bias scaled with the dimming level."""
    inst = instance or prepare(scenario)
    eta = scenario.dimming_target if eta is None else eta
    lo, hi = scenario.current_range
    dim = analog_dimming(eta, inst.n_leds, lo, hi)
    return _single_solve(inst, "ad", dim, 1.0, _drive(dim), scenario.solver)


def run_dd(scenario: Scenario, eta: float | None = None, instance: Instance | None = None) -> RunResult:
    """Digital dimming: every LED on at full bias, data only during the duty cycle ``eta``."""
    inst = instance or prepare(scenario)
    eta = scenario.dimming_target if eta is None else eta
    lo, hi = scenario.current_range
    dim = digital_dimming(eta, inst.n_leds, lo, hi)
    # time-averaged light output follows the duty cycle
    return _single_solve(inst, "dd", dim, eta, eta * _drive(dim), scenario.solver)


def run_tasp_hd(scenario: Scenario, eta: float | None = None, instance: Instance | None = None,
                uniformity: bool = True) -> RunResult:
    """Joint LED selection and ZF precoding under hybrid dimming.

    ``uniformity=False`` drops the CV(RMSE) limit (the unconstrained variant).
    Any CV-feasible selection is also admissible for that variant, so it
    runs the constrained search as well and keeps the better of the two.
    With every LED forced on there is no selection to make and a CV above
    the limit is only logged.

    Raises
    ------
    RunFailure
        When the first selection finds no CV-feasible set of LEDs.
    """
    inst = instance or prepare(scenario)
    if not uniformity:
        relaxed = _tasp(scenario, eta, inst, False)
        try:
            bounded = _tasp(scenario, eta, inst, True)
        except RunFailure:
            return relaxed
        if bounded.sum_rate > relaxed.sum_rate:
            return replace(bounded, scheme=relaxed.scheme)
        return relaxed
    return _tasp(scenario, eta, inst, True)


def _tasp(scenario, eta, inst, uniformity):
    eta = scenario.dimming_target if eta is None else eta
    settings = scenario.solver
    lo, hi = scenario.current_range
    dim = plan_dimming(eta, inst.n_leds, lo, hi)
    scheme = "tasp-hd" if uniformity else "tasp-hd-up"
    if dim.n_active == inst.n_leds:
        res = _single_solve(inst, scheme, dim, 1.0, _drive(dim), settings)
        if uniformity and res.cv > scenario.uniformity_threshold:
            log.warning("CV %.4f above limit with every LED on", res.cv)
        return res

    cv_limit = scenario.uniformity_threshold if uniformity else math.inf
    partition = associate_leds(inst.gains, inst.clusters, inst.centroids)
    W, q = initial_precoder(inst, partition, dim.headroom, settings.identity_init)
    activation = np.ones(inst.n_leds)
    noise = _noise(inst, partition, activation, dim.bias)

    trace, best, converged = [], None, False
    t = 0
    for t in range(1, settings.max_outer_iters + 1):
        problem = SelectionProblem(inst.gains, W, partition.user_cell(inst.n_users), noise,
                                   inst.signal_scale, inst.field, dim.n_active, cv_limit)
        sel = solve_selection(problem, settings.penalty_lambda, settings.restarts,
                              seed=settings.rng_seed + t, eps1=settings.eps1,
                              adaptive_penalty=settings.adaptive_penalty, gains=inst.gains,
                              user_clusters=inst.clusters, centroids=inst.centroids)
        if not sel.feasible:
            if best is None:
                raise RunFailure(f"no CV-feasible selection (best CV {sel.cv:.4f}): {sel.report}")
            log.info("outer %d: selection infeasible, keeping iteration %d", t, best["t"])
            trace.append(trace[-1])
            converged = True
            break

        active = np.flatnonzero(sel.a)
        new_part = update_cells(active, inst.gains, inst.clusters, inst.centroids)
        new_noise = _noise(inst, new_part, sel.a, dim.bias)
        if np.isnan(q).any():
            delta = interference_power(inst, sel.a, W, partition.user_cell(inst.n_users))
        else:
            delta = _gauss_seidel_delta(inst, new_part, sel.a, q)
        W_new, q_new, states = allocate(inst, new_part, sel.a, dim, new_noise, delta, settings)
        xi, rate = _evaluate(inst, sel.a, W_new, new_part, new_noise)
        log.debug("outer %d: R = %.6f", t, rate)

        if best is None or rate >= best["rate"]:
            best = {"t": t, "rate": rate, "sel": sel, "part": new_part, "W": W_new,
                    "xi": xi, "states": states, "noise": new_noise}
            trace.append(rate)
        else:
            # keep the sequence monotone; the clamp also meets the stopping test
            trace.append(trace[-1])
        if len(trace) > 1 and (trace[-1] - trace[-2]) ** 2 <= settings.eps3:
            converged = True
            break
        partition, W, q, noise = new_part, W_new, q_new, new_noise

    sel = best["sel"]
    cv, lo_lux, hi_lux = _metrics(inst, sel.a, _drive(dim))
    res = RunResult(scheme, eta, dim, sel.a, best["part"], best["W"], best["xi"], best["rate"],
                    1.0, trace, converged, t, cv, lo_lux, hi_lux, drive=_drive(dim),
                    selection=sel, allocations=best["states"])
    return _finalize(res, inst, best["noise"])


def evaluate_fr(result: RunResult, n: int) -> float:
    """Mean bandwidth efficiency under frequency reuse ``n``.

    ``n = 1`` shares the band and keeps the inter-cell interference.
    ``n`` equal to the number of cells gives every cell its own band, which
    removes the inter-cell terms and divides the rate by ``n``.
    """
    cells = result.partition.num_cells
    if n == 1:
        return fr_mbe(result.effective_rate, 1)
    if n != cells:
        raise FrequencyReuseError(f"FR-{n} needs {n} cells, the partition has {cells}")
    return fr_mbe(result.rate_scale * result.orthogonal_rate, n)
