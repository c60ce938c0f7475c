"""Zero-forcing precoders, SINR and sum-rate.

Network-wide quantities use a block-sparse precoder ``W`` of shape
``(N_T, N_R)``: ``W[j, k]`` is nonzero only when LED ``j`` and user ``k``
belong to the same cell. The effective user-to-user matrix is then
``G = H diag(a) W`` with ``G[i, k]`` the amplitude user ``i`` receives from
the stream of user ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RCOND = 1e-10
PAM_VARIANCE = 1.0 / 3.0


class SingularChannel(np.linalg.LinAlgError):
    pass


def pseudo_inverse(H: np.ndarray, rcond: float = RCOND) -> np.ndarray:
    """Right inverse ``H^T (H H^T)^{-1}`` via SVD; raises if ``H`` lacks full row rank."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    if s.size < H.shape[0] or s.size == 0 or s[-1] <= rcond * s[0]:
        raise SingularChannel(f"channel of shape {H.shape} is rank deficient")
    return (Vt.T / s) @ U.T


@dataclass(frozen=True)
class Precoder:
    W: np.ndarray           # (n_leds_in_cell, n_users_in_cell)
    sqrt_q: np.ndarray

    def row_l1(self, activation=None) -> np.ndarray:
        AW = self.W if activation is None else np.asarray(activation)[:, None] * self.W
        return np.abs(AW).sum(axis=1)


def zf_precoder(H_c: np.ndarray, a_c, q_c) -> Precoder:
    """ZF precoder ``pinv(H_c diag(a_c)) diag(sqrt(q_c))``."""
    H_hat = np.asarray(H_c, dtype=float) * np.asarray(a_c, dtype=float)[None, :]
    sq = np.sqrt(np.asarray(q_c, dtype=float))
    return Precoder(pseudo_inverse(H_hat) * sq[None, :], sq)


@dataclass(frozen=True)
class RateReport:
    sinr: np.ndarray
    rates: np.ndarray
    sum_rate: float
    mbe: dict


def sinr_terms(H, activation, W, user_cell, reuse_groups=None):
    """Desired amplitude ``G[i, i]`` and the per-stream inter-cell amplitudes.

    ``reuse_groups[c]`` is the frequency group of cell ``c``; cells in
    different groups do not interfere. Returns ``(G, mask)`` where
    ``mask[i, k]`` marks streams counted as interference for user ``i``.
    """
    a = np.asarray(activation, dtype=float)
    G = (np.asarray(H) * a[None, :]) @ W
    uc = np.asarray(user_cell)
    mask = uc[:, None] != uc[None, :]
    if reuse_groups is not None:
        grp = np.asarray(reuse_groups)[uc]
        mask &= grp[:, None] == grp[None, :]
    return G, mask


def sinr(H, activation, W, user_cell, noise, signal_scale: float, reuse_groups=None) -> np.ndarray:
    """Per-user SINR with uniform PAM symbols; intra-cell streams are assumed nulled by ZF.

    ``signal_scale`` is the PD responsivity times the E/O coefficient.
    """
    G, mask = sinr_terms(H, activation, W, user_cell, reuse_groups)
    k2 = signal_scale**2
    interference = PAM_VARIANCE * k2 * np.sum(np.where(mask, G**2, 0.0), axis=1)
    desired = 2 * k2 * np.diag(G) ** 2
    return desired / (np.pi * np.e * (interference + np.asarray(noise)))


def sum_rate(sinr_values) -> float:
    """``1/2 sum log2(1 + sinr)`` in bit/s/Hz."""
    xi = np.asarray(sinr_values, dtype=float)
    if np.any(xi < 0):
        raise ValueError("negative SINR")
    return 0.5 * float(np.sum(np.log2(1 + xi)))


def fr_mbe(rate: float, n: int) -> float:
    """Mean bandwidth efficiency of reuse factor ``n``."""
    if n < 1:
        raise ValueError("reuse factor must be >= 1")
    return rate / n


def assemble(n_leds: int, n_users: int, partition, blocks) -> np.ndarray:
    """Scatter per-cell precoder blocks into the network-wide ``W``."""
    W = np.zeros((n_leds, n_users))
    for users, leds, block in zip(partition.user_clusters, partition.led_sets, blocks):
        if block is None:
            continue
        W[np.ix_(list(leds), list(users))] = block
    return W


def emitted_signals(W_c: np.ndarray, symbols: np.ndarray, bias: float) -> np.ndarray:
    """LED drive currents ``W d + I_B`` for a batch of symbol vectors (columns)."""
    return W_c @ symbols + bias
