"""Per-cell ZF power allocation by Lagrangian duality and projected subgradient.

For one cell with ZF directions ``P = pinv(H_hat)`` (LEDs x users) the
problem is::

    max_q  1/2 sum_i log2(1 + m_i q_i)
    s.t.   sum_k |[P diag(q) P^T]_{j,k}| <= dI^2 / N_R   for every LED row j
           q >= 0

where ``m_i`` folds the frozen inter-cell interference and noise of user
``i``. The row constraint is the mean-inequality strengthening of the
amplitude limit ``||[P diag(sqrt q)]_{j,:}||_1 <= dI``.

Internally powers are normalized by ``u_i = b / max_j P_ji^2`` (an upper
bound implied by every row's diagonal term) and each row by its bound, so
``x = q / u`` lives in the unit box and the dual variables are O(1).

Each absolute value is written as ``|y| = max_{|s| <= 1} s y``. For fixed
soft signs ``s`` the Lagrangian is linear in every row, so its maximizer is
the closed-form KKT power. The signs that make this maximizer exact for the
true Lagrangian minimize a smooth convex function over the box
``[-1, 1]``; a few Frank-Wolfe sweeps with exact line search find them,
warm-started from the previous dual iterate. Because ``s y <= |y|`` for any
admissible ``s``, the reported dual value upper bounds the optimum at every
iterate, whatever the inner accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LN2 = np.log(2.0)


def row_values(P: np.ndarray, q) -> np.ndarray:
    """``||[P diag(q) P^T]_{j,:}||_1`` for each row ``j``."""
    S = (P * np.asarray(q, dtype=float)[None, :]) @ P.T
    return np.abs(S).sum(axis=1)


def strengthen_constraint(P: np.ndarray, q, headroom: float, n_users: int | None = None):
    """Row values of the strengthened constraint and its bound ``dI^2 / N_R``."""
    n = P.shape[1] if n_users is None else n_users
    return row_values(P, q), headroom**2 / n


def coefficient_matrix(P: np.ndarray, signs: np.ndarray | None = None) -> np.ndarray:
    """Linear row coefficients ``C[j, i] = P[j, i] sum_k s[j, k] P[k, i]``.

    With all signs +1 this is the plain row sum of ``P diag(q) P^T``.
    """
    if signs is None:
        return P * P.sum(axis=0)[None, :]
    return P * (signs @ P)


def kkt_q(mu, lam, m, coeffs) -> np.ndarray:
    """Closed-form stationary power per user, clamped at 0.

    Users whose denominator ``sum_j mu_j C[j, i] - lam_i`` is not positive get
    ``inf``: the Lagrangian is unbounded along that coordinate and the caller
    caps it.
    """
    mu = np.asarray(mu, dtype=float)
    m = np.asarray(m, dtype=float)
    d = mu @ np.asarray(coeffs, dtype=float) - np.asarray(lam, dtype=float)
    q = np.full(m.shape, np.inf)
    pos = d > 0
    q[pos] = 1.0 / (2 * LN2 * d[pos]) - 1.0 / m[pos]
    return np.maximum(q, 0.0)


def stepsizes(a: float, n: int) -> np.ndarray:
    """Diminishing dual step ``a / sqrt(t)`` for ``t = 1..n``."""
    return a / np.sqrt(np.arange(1, n + 1))


def dual_step(mu, lam, violation, q, theta: float):
    """Projected subgradient step on the duals.

    ``mu`` moves along the row violation and ``lam`` against the powers;
    both are clipped at zero.
    """
    mu = np.maximum(np.asarray(mu, dtype=float) + theta * np.asarray(violation, dtype=float), 0.0)
    lam = np.maximum(np.asarray(lam, dtype=float) - theta * np.asarray(q, dtype=float), 0.0)
    return mu, lam


def rate(m, q) -> float:
    return 0.5 * float(np.sum(np.log2(1 + np.asarray(m) * np.asarray(q))))


@dataclass
class AllocationState:
    q: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    m: np.ndarray
    rate: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    # complementary-slackness residuals at the returned point
    row_slackness: np.ndarray | None = None
    power_slackness: np.ndarray | None = None


def _signs(S: np.ndarray, previous: np.ndarray) -> np.ndarray:
    s = np.sign(S)
    return np.where(s == 0, previous, s)


def _line_search(Pn, signs, step, mu, lam, snr_cap, iters: int = 12) -> float:
    """Exact step along a Frank-Wolfe direction of the inner sign problem.

    The inner value is convex along the segment, so bisect on the sign of
    its slope ``-sum_j mu_j sum_k step_jk S_jk``.
    """
    def slope(gamma):
        C = coefficient_matrix(Pn, signs + gamma * step)
        x = np.minimum(kkt_q(mu, lam, snr_cap, C), 1.0)
        S = (Pn * x[None, :]) @ Pn.T
        return -float(mu @ (step * S).sum(axis=1))

    if slope(1.0) <= 0:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if slope(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def run_algorithm1(P: np.ndarray, m, headroom: float, stepsize_a: float = 0.3,
                   eps: float = 1e-3, max_iters: int = 3000, mu0: float = 0.1,
                   lam0: float = 0.1, feas_tol: float = 1e-3, gap_tol: float = 1e-3,
                   sign_sweeps: int = 10, inner_tol: float = 1e-7,
                   keep_trace: bool = True) -> AllocationState:
    """Dual projected-subgradient allocation for one cell.

    Parameters
    ----------
    P : ndarray, shape (n_leds, n_users)
        ZF directions of the cell.
    m : array_like
        Per-user SINR per unit power.
    headroom : float
        Signal amplitude limit ``dI`` in A.
    stepsize_a : float
        Dual step ``theta_t = a / sqrt(t)``, in normalized dual units.
    eps : float
        Stop once the iterate sum-rate moves by at most ``sqrt(eps)``, the
        iterate violates no row by more than ``feas_tol`` and the duality gap
        is within ``gap_tol`` of the best rate.
    max_iters : int
        Cap ``T``; reaching it flags the result as non-converged.

    Returns
    -------
    AllocationState
        Best feasible powers seen. An infeasible iterate is pulled onto the
        constraint boundary by uniform scaling, which keeps the ZF structure.
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    m = np.asarray(m, dtype=float)
    n_leds, n_users = P.shape
    bound = headroom**2 / n_users
    if bound <= 0:
        zero = np.zeros(n_users)
        return AllocationState(zero, np.zeros(n_leds), zero.copy(), m, 0.0, 0, True)

    cap = bound / np.max(P**2, axis=0)           # u_i
    Pn = P * np.sqrt(cap / bound)[None, :]       # rows normalized to bound 1
    snr_cap = m * cap                            # s_i

    mu = np.full(n_leds, mu0)
    lam = np.full(n_users, lam0)
    signs = _signs(Pn @ Pn.T, np.ones((n_leds, n_leds)))

    best_x = np.zeros(n_users)
    best_r = 0.0
    prev_r = None
    best_dual = np.inf
    converged = False
    trace = []
    t = 0
    for t in range(1, max_iters + 1):
        theta = stepsize_a / np.sqrt(t)
        for _ in range(sign_sweeps):
            C = coefficient_matrix(Pn, signs)
            x = np.minimum(kkt_q(mu, lam, snr_cap, C), 1.0)
            S = (Pn * x[None, :]) @ Pn.T
            step = _signs(S, signs) - signs
            gap = float(mu @ (step * S).sum(axis=1))
            if gap <= inner_tol * (1.0 + best_r):
                break
            signs = signs + _line_search(Pn, signs, step, mu, lam, snr_cap) * step
        d = mu @ C - lam
        dual = float(np.sum(0.5 * np.log2(1 + snr_cap * x) - d * x) + mu.sum())

        g = np.abs(S).sum(axis=1)
        worst = float(g.max())
        x_feas = x / worst if worst > 1 else x
        r = rate(snr_cap, x_feas)
        if r > best_r:
            best_r, best_x = r, x_feas
        if keep_trace:
            trace.append({"t": t, "rate": best_r, "iterate_rate": r, "dual": dual,
                          "max_violation": max(worst - 1, 0.0),
                          "mu_norm": float(np.linalg.norm(mu)),
                          "lam_norm": float(np.linalg.norm(lam))})

        best_dual = min(best_dual, dual)
        if (prev_r is not None and (r - prev_r) ** 2 <= eps and worst - 1 <= feas_tol
                and best_dual - best_r <= gap_tol * best_r):
            converged = True
            break
        prev_r = r

        mu, lam = dual_step(mu, lam, g - 1, x, theta)

    q = best_x * cap
    g_best = row_values(P, q)
    return AllocationState(
        q=q, mu=mu, lam=lam, m=m, rate=rate(m, q), iterations=t, converged=converged,
        trace=trace, row_slackness=mu * (g_best / bound - 1), power_slackness=lam * best_x)
