"""Independent reference computations used by the tests.

Everything here is written with scalar loops or brute force so it shares
no code path with the vectorized implementation it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

E_CHARGE = 1.602176634e-19


def hand_gain(led, user, semiangle_deg=80.0, fov_deg=60.0, area=1e-4, ts=1.0, kappa=1.0):
    dx, dy, dz = (led[0] - user[0], led[1] - user[1], led[2] - user[2])
    d = math.sqrt(dx * dx + dy * dy + dz * dz)
    cos_t = dz / d
    if math.degrees(math.acos(min(1.0, cos_t))) > fov_deg:
        return 0.0
    order = -math.log(2) / math.log(math.cos(math.radians(semiangle_deg)))
    g = kappa**2 / math.sin(math.radians(fov_deg)) ** 2
    return area * (order + 1) / (2 * math.pi * d * d) * cos_t**order * ts * g * cos_t


def hand_noise(h_sum, bias, gamma=0.54, zeta=0.44, chi=10.93, area=1e-4, fov_deg=60.0,
               i_amp=5e-12, B=1e8):
    shot = 2 * gamma * E_CHARGE * (zeta * h_sum * bias) * B
    amb = 4 * math.pi * E_CHARGE * area * gamma * chi * (1 - math.cos(math.radians(fov_deg))) * B
    return shot + amb + i_amp**2 * B


def loop_sinr(H, a, W, user_cell, noise, k):
    """SINR by explicit summation over users, streams and LEDs."""
    n_users, n_leds = len(H), len(H[0])
    out = []
    for i in range(n_users):
        amp = [sum(H[i][j] * a[j] * W[j][s] for j in range(n_leds)) for s in range(n_users)]
        inter = sum(amp[s] ** 2 for s in range(n_users) if user_cell[s] != user_cell[i])
        desired = 2 * k * k * amp[i] ** 2
        out.append(desired / (math.pi * math.e * (k * k / 3 * inter + noise[i])))
    return out


def loop_rate(xi):
    return 0.5 * sum(math.log2(1 + x) for x in xi)


def cv_of(E, a):
    tot = [sum(E[p][j] * a[j] for j in range(len(a))) for p in range(len(E))]
    mean = sum(tot) / len(tot)
    rmse = math.sqrt(sum((t - mean) ** 2 for t in tot) / len(tot))
    return rmse / mean


def exhaustive_selection(H, W, user_cell, noise, k, n_active, E=None, cv_limit=math.inf):
    """Best binary selection with exactly ``n_active`` LEDs by enumeration.

    Returns ``(rate, selection)``; ``rate`` is ``-inf`` if no subset meets
    the CV limit.
    """
    n_leds = len(H[0])
    best, best_sel = -math.inf, None
    for combo in itertools.combinations(range(n_leds), n_active):
        a = [1.0 if j in combo else 0.0 for j in range(n_leds)]
        if E is not None and math.isfinite(cv_limit) and cv_of(E, a) > cv_limit:
            continue
        r = loop_rate(loop_sinr(H, a, W, user_cell, noise, k))
        if r > best:
            best, best_sel = r, a
    return best, best_sel


def grid_allocation(P, m, headroom, res: int = 400, refine: int = 12) -> float:
    """Optimal sum-rate of one cell's allocation by grid search.

    The row functions are positively homogeneous in ``q``, so the optimum
    lies on the ray through some direction ``v`` of the simplex, scaled
    until the tightest row meets ``dI^2 / N_R``. The simplex is gridded
    densely, then the best cell is refined by repeated local grids.
    """
    P = np.asarray(P, dtype=float)
    m = np.asarray(m, dtype=float)
    n = P.shape[1]
    bound = headroom**2 / n

    def best_on(V):
        g = np.abs(np.einsum("ji,ki,ni->njk", P, P, V)).sum(-1).max(-1)
        t = bound / g
        r = 0.5 * np.log2(1 + m[None, :] * V * t[:, None]).sum(1)
        k = int(np.argmax(r))
        return float(r[k]), V[k]

    if n == 1:
        return best_on(np.ones((1, 1)))[0]
    if n == 2:
        w = np.linspace(0, 1, res * 50 + 1)
        V = np.c_[w, 1 - w]
    else:
        V = np.array([(i, j, res - i - j) for i in range(res + 1)
                      for j in range(res + 1 - i)], dtype=float) / res
    best, v = best_on(V)
    step = 1.0 / res
    for _ in range(refine):
        if n == 2:
            w = np.clip(v[0] + np.linspace(-step, step, 201), 0, 1)
            V = np.c_[w, 1 - w]
        else:
            g = np.linspace(-step, step, 41)
            A, B = np.meshgrid(g, g)
            V = np.c_[v[0] + A.ravel(), v[1] + B.ravel(), v[2] - A.ravel() - B.ravel()]
            V = V[(V >= 0).all(1)]
        r, cand = best_on(V)
        if r > best:
            best, v = r, cand
        step /= 5
    return best
