"""LED selection by penalty relaxation of the binary activation vector.

With the precoders ``W`` frozen, the activations ``a`` enter the sum-rate
through ``G = H diag(a) W`` only. The binary constraint is relaxed to the
box. The penalty ``-lam * sum(a - a^2)`` is convex, so as ``lam`` grows
it pushes the relaxed optimum to a vertex of the box. The activation count is kept
by Euclidean projection onto ``{sum a = n, 0 <= a <= 1}`` and the
uniformity limit by a log barrier, so every iterate is strictly
CV-feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cells import InfeasibleAssociation, update_cells
from .illumination import IlluminanceField, cv_rmse, cv_value_and_grad
from .precoding import PAM_VARIANCE, sinr, sum_rate

LN2 = math.log(2.0)
# extra leading stages of the graduated start, as multiples of -|R(a0)|
GRADUATED_STAGES = (1.0, 0.3, 0.1, 0.03, 0.01)


@dataclass(frozen=True)
class SelectionProblem:
    """Everything the selection step holds fixed."""

    H: np.ndarray              # (N_R, N_T) gains
    W: np.ndarray              # (N_T, N_R) block-sparse precoder
    user_cell: np.ndarray
    noise: np.ndarray          # per-user variance, frozen during selection
    signal_scale: float        # responsivity x E/O coefficient
    field: IlluminanceField
    n_active: int
    cv_limit: float = math.inf

    @property
    def n_leds(self) -> int:
        return self.H.shape[1]


@dataclass
class SelectionState:
    a: np.ndarray                  # rounded 0/1 selection
    relaxed: np.ndarray            # relaxed optimum it was rounded from
    n_active: int
    penalty_lambda: float
    rate: float                    # sum-rate of ``a`` with the frozen W
    cv: float
    feasible: bool
    restart: int = 0
    objective_trace: list = field(default_factory=list)
    report: str = ""


class SelectionInfeasible(RuntimeError):
    def __init__(self, message: str, best: SelectionState | None = None):
        super().__init__(message)
        self.best = best


def relaxed_rate(a, problem: SelectionProblem) -> float:
    """Sum-rate with fractional activations (intra-cell streams assumed nulled)."""
    xi = sinr(problem.H, a, problem.W, problem.user_cell, problem.noise, problem.signal_scale)
    return sum_rate(xi)


def rate_and_grad(a, problem: SelectionProblem) -> tuple[float, np.ndarray]:
    """Relaxed sum-rate and its gradient with respect to ``a``."""
    a = np.asarray(a, dtype=float)
    H, W = problem.H, problem.W
    uc = np.asarray(problem.user_cell)
    mask = uc[:, None] != uc[None, :]
    k2 = problem.signal_scale**2
    c1 = 2 * k2 / (np.pi * np.e)
    c2 = PAM_VARIANCE * k2

    G = (H * a[None, :]) @ W
    g = np.diag(G)
    inter = np.where(mask, G**2, 0.0)
    D = c2 * inter.sum(axis=1) + problem.noise
    xi = c1 * g**2 / D
    r = 1.0 / (2 * LN2 * (1 + xi))

    # V[i, k] = dR/dG[i, k]
    V = np.where(mask, -(c1 * g**2 / D**2)[:, None] * 2 * c2 * G, 0.0)
    V[np.diag_indices_from(V)] = 2 * c1 * g / D
    V *= r[:, None]
    grad = np.sum((H.T @ V) * W, axis=1)
    return 0.5 * float(np.sum(np.log2(1 + xi))), grad


def penalty(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.sum(a - a * a))


def penalized_objective(a, problem: SelectionProblem, lam: float) -> float:
    """``R(a) - lam * sum(a - a^2)``."""
    return relaxed_rate(a, problem) - lam * penalty(a)


def project_count(v, n: float, tol: float = 1e-12) -> np.ndarray:
    """Euclidean projection onto ``{a : sum(a) = n, 0 <= a <= 1}``.

    The projection is ``clip(v - tau, 0, 1)`` with ``tau`` found by bisection.
    """
    v = np.asarray(v, dtype=float)
    if not 0 <= n <= v.size:
        raise ValueError(f"cannot place {n} units in {v.size} slots")
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        s = np.clip(v - tau, 0.0, 1.0).sum()
        if abs(s - n) <= tol:
            break
        if s > n:
            lo = tau
        else:
            hi = tau
    a = np.clip(v - tau, 0.0, 1.0)
    # spread the bisection residual over the free coordinates
    free = (a > 0) & (a < 1)
    if free.any():
        a[free] += (n - a.sum()) / free.sum()
        a = np.clip(a, 0.0, 1.0)
    return a


def top_n(a, n: int) -> np.ndarray:
    """0/1 vector with the ``n`` largest entries of ``a`` set; ties go to the lowest index."""
    a = np.asarray(a, dtype=float)
    order = np.lexsort((np.arange(a.size), -a))
    out = np.zeros(a.size)
    out[order[:n]] = 1.0
    return out


def round_and_repair(a, n_active: int, gains=None, user_clusters=None, centroids=None,
                     max_swaps: int | None = None) -> np.ndarray:
    """Top-``n_active`` rounding, then swaps until every user keeps a line-of-sight LED.

    A user left without an active LOS LED gets the lowest-index excluded LED
    it can see, in exchange for the selected LED with the smallest relaxed
    value whose removal does not strand another user.

    Raises
    ------
    InfeasibleAssociation
        When no swap restores a feasible partition.
    """
    a = np.asarray(a, dtype=float)
    sel = top_n(a, n_active)
    if gains is None:
        return sel
    clusters = user_clusters if user_clusters is not None else [[i] for i in range(gains.shape[0])]
    limit = max_swaps if max_swaps is not None else a.size
    for _ in range(limit + 1):
        try:
            update_cells(np.flatnonzero(sel), gains, clusters, centroids)
            return sel
        except InfeasibleAssociation as err:
            user = err.user
        swap = _repair_swap(sel, a, gains, user)
        if swap is None:
            raise InfeasibleAssociation(user, f"no swap gives user {user} a line-of-sight LED")
        add, drop = swap
        sel[add], sel[drop] = 1.0, 0.0
    raise InfeasibleAssociation(user, "selection repair did not settle")


def _repair_swap(sel, a, gains, user):
    visible = gains[user] > 0
    for add in np.flatnonzero((sel == 0) & visible):
        on = np.flatnonzero(sel == 1)
        for drop in on[np.lexsort((on, a[on]))]:
            trial = sel.copy()
            trial[add], trial[drop] = 1.0, 0.0
            # dropping must not strand a user that was covered before
            covered = (gains[:, trial == 1] > 0).any(axis=1)
            if covered.all() or covered.sum() > (gains[:, sel == 1] > 0).any(axis=1).sum():
                return int(add), int(drop)
    return None


def _cv(problem, a):
    return cv_rmse(problem.field, a)[2]


def _phase_one(problem: SelectionProblem, a, margin: float, iters: int = 500):
    """Projected descent on CV(RMSE) until it drops below the limit minus ``margin``."""
    target = problem.cv_limit - margin
    cv, g = cv_value_and_grad(problem.field, a)
    step = 1.0
    for _ in range(iters):
        if cv <= target:
            return a, cv
        while step > 1e-12:
            trial = project_count(a - step * g, problem.n_active)
            cv_t, g_t = cv_value_and_grad(problem.field, trial)
            if cv_t < cv - 1e-4 * g @ (a - trial):
                a, cv, g = trial, cv_t, g_t
                step *= 2
                break
            step *= 0.5
        else:
            break
    return a, cv


def _ascent(problem, a, lam, barrier, stage, trace, iters, tol):
    """Projected gradient ascent with Armijo backtracking for one penalty stage."""
    limit = problem.cv_limit

    def value_grad(x):
        r, gr = rate_and_grad(x, problem)
        val = r - lam * penalty(x)
        grad = gr - lam * (1 - 2 * x)
        cv = np.nan
        if math.isfinite(limit):
            cv, gcv = cv_value_and_grad(problem.field, x)
            if cv >= limit:
                return -math.inf, grad, cv
            val += barrier * math.log(limit - cv)
            grad = grad - barrier * gcv / (limit - cv)
        return val, grad, cv

    f, g, cv = value_grad(a)
    step = 1.0 / max(np.abs(g).max(), 1e-300)
    for it in range(iters):
        trace.append({"stage": stage, "iteration": it, "lambda": lam, "objective": f,
                      "penalty": penalty(a), "cv": cv})
        moved = False
        while step * np.abs(g).max() > 1e-14:
            trial = project_count(a + step * g, problem.n_active)
            f_t, g_t, cv_t = value_grad(trial)
            if f_t >= f + 1e-4 * g @ (trial - a):
                moved = np.abs(trial - a).max() > 1e-12
                gain = f_t - f
                a, f, g, cv = trial, f_t, g_t, cv_t
                step *= 2
                break
            step *= 0.5
        if not moved or gain <= tol * max(abs(f), 1.0):
            break
    return a


def _relaxed_solve(problem, a0, lam_final, eps1, stage_iters, tol, trace, graduated=False):
    r0 = relaxed_rate(a0, problem)
    scale = max(abs(r0), 1e-12)
    # a negative weight makes the penalty concave and smooths the landscape
    lams = [-c * scale for c in GRADUATED_STAGES] if graduated else []
    lam = 1e-2 * scale
    while lam < lam_final:
        lams.append(lam)
        lam *= 10
    lams.append(lam_final)
    barrier = 1e-2 * scale
    a = a0
    path = []
    for stage, lam in enumerate(lams):
        a = _ascent(problem, a, lam, max(barrier, eps1), stage, trace, stage_iters, tol)
        path.append(a)
        barrier *= 0.1
    return a, path


def _cv_repair(problem, sel, max_swaps: int = 50):
    """Greedy single swaps that lower CV(RMSE) until the limit holds."""
    cv = _cv(problem, sel)
    for _ in range(max_swaps):
        if cv <= problem.cv_limit:
            break
        best = None
        for drop in np.flatnonzero(sel == 1):
            for add in np.flatnonzero(sel == 0):
                trial = sel.copy()
                trial[drop], trial[add] = 0.0, 1.0
                c = _cv(problem, trial)
                if c < cv - 1e-12 and (best is None or c < best[0]):
                    best = (c, trial)
        if best is None:
            break
        cv, sel = best
    return sel, cv


def _finish(problem, relaxed, lam, restart, trace, gains, user_clusters, centroids):
    """Round one relaxed point; returns ``(state or None, note)``."""
    n = problem.n_active
    try:
        sel = round_and_repair(relaxed, n, gains, user_clusters, centroids)
    except InfeasibleAssociation as err:
        return None, str(err)
    cv = _cv(problem, sel)
    if cv > problem.cv_limit:
        sel, cv = _cv_repair(problem, sel)
        if gains is not None and cv <= problem.cv_limit:
            try:
                update_cells(np.flatnonzero(sel), gains, user_clusters, centroids)
            except InfeasibleAssociation as err:
                return None, str(err)
    ok = cv <= problem.cv_limit
    state = SelectionState(sel, relaxed, n, lam, relaxed_rate(sel, problem), cv, ok, restart, trace)
    return state, "" if ok else f"rounded CV {cv:.4f} above limit"


def solve_selection(problem: SelectionProblem, penalty_lambda: float = 1e5,
                    restarts: int = 4, seed: int = 0, eps1: float = 1e-6,
                    adaptive_penalty: bool = False, gains=None, user_clusters=None,
                    centroids=None, stage_iters: int = 200, tol: float = 1e-10) -> SelectionState:
    """Penalty-relaxed LED selection followed by rounding.

    Starts from the uniform point ``n/N`` and ``restarts`` seeded random
    points; each start that can be made CV-feasible is driven through a
    geometric penalty schedule ending at ``penalty_lambda`` (or
    ``1e3 * |R(a0)|`` in adaptive mode) and rounded. The best rounded
    selection by sum-rate wins, ties going to the earlier start. When
    ``gains`` is given the rounding also keeps every user covered.

    A returned state with ``feasible=False`` is an infeasibility report: no
    start produced a selection meeting the CV limit, and ``a`` holds the
    most uniform candidate found.
    """
    n, N = problem.n_active, problem.n_leds
    if n == N:
        a = np.ones(N)
        cv = _cv(problem, a)
        ok = cv <= problem.cv_limit
        return SelectionState(a, a.copy(), n, penalty_lambda, relaxed_rate(a, problem), cv, ok,
                              report="" if ok else f"CV {cv:.4f} above limit with every LED on")

    rng = np.random.default_rng(seed)
    uniform = np.full(N, n / N)
    starts = [uniform, uniform]
    starts += [project_count(rng.uniform(0, 1, N), n) for _ in range(restarts)]
    finite = math.isfinite(problem.cv_limit)
    margin = 1e-3 * problem.cv_limit if finite else 0.0

    best, fallback, notes = None, None, []
    for k, a0 in enumerate(starts):
        trace = []
        if finite:
            a0, cv0 = _phase_one(problem, a0, margin)
            if cv0 >= problem.cv_limit:
                notes.append(f"start {k}: relaxed CV stuck at {cv0:.4f}")
                cand = top_n(a0, n)
                c = _cv(problem, cand)
                if fallback is None or c < fallback.cv:
                    fallback = SelectionState(cand, a0, n, penalty_lambda,
                                              relaxed_rate(cand, problem), c, False, k, trace)
                continue
        lam_final = 1e3 * abs(relaxed_rate(a0, problem)) if adaptive_penalty else penalty_lambda
        _, path = _relaxed_solve(problem, a0, lam_final, eps1, stage_iters, tol, trace,
                                 graduated=k == 1)
        # every stage's relaxed point is a rounding candidate; the last one comes first
        seen = set()
        for relaxed in reversed(path):
            key = tuple(np.flatnonzero(top_n(relaxed, n)))
            if key in seen:
                continue
            seen.add(key)
            state, note = _finish(problem, relaxed, lam_final, k, trace, gains,
                                  user_clusters, centroids)
            if note:
                notes.append(f"start {k}: {note}")
            if state is None:
                continue
            if not state.feasible:
                if fallback is None or state.cv < fallback.cv:
                    fallback = state
            elif best is None or state.rate > best.rate:
                best = state
    if best is not None:
        return best
    if fallback is None:
        raise SelectionInfeasible("no start produced a selection: " + "; ".join(notes))
    fallback.report = "; ".join(notes)
    return fallback
