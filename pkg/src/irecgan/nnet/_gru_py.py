"""Pure-numpy gated recurrent kernels (fallback backend).

Gate layout along the last axis of ``W``, ``U`` and ``b`` is ``[z | r | n]``:

    z = sigmoid(x Wz + h Uz + bz)          update gate
    r = sigmoid(x Wr + h Ur + br)          reset gate
    n = tanh(x Wn + (r * h) Un + bn)       candidate
    h' = (1 - z) * n + z * h

Padded steps (``mask == 0``) carry the previous state through unchanged.
"""
from __future__ import annotations

import numpy as np


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(xw, mask, h0, U):
    """Run the recurrence given precomputed input projections.

    ``xw`` is ``x @ W + b`` with shape (B, T, 3H). Returns hidden states and
    gate activations, each (B, T, H).
    """
    B, T, H3 = xw.shape
    H = H3 // 3
    hs = np.empty((B, T, H))
    zs = np.empty((B, T, H))
    rs = np.empty((B, T, H))
    ns = np.empty((B, T, H))
    Uzr = U[:, : 2 * H]
    Un = U[:, 2 * H:]
    hp = h0
    for t in range(T):
        a = hp @ Uzr
        z = _sig(xw[:, t, :H] + a[:, :H])
        r = _sig(xw[:, t, H:2 * H] + a[:, H:])
        n = np.tanh(xw[:, t, 2 * H:] + (r * hp) @ Un)
        m = mask[:, t, None]
        h = m * ((1.0 - z) * n + z * hp) + (1.0 - m) * hp
        hs[:, t] = h
        zs[:, t] = z
        rs[:, t] = r
        ns[:, t] = n
        hp = h
    return hs, zs, rs, ns


def gru_backward(mask, h0, U, hs, zs, rs, ns, dhs):
    """Backpropagate through time.

    Returns ``(dpre, dU, dh0)`` where ``dpre`` (B, T, 3H) is the gradient with
    respect to the pre-activations ``x @ W + b`` of every step.
    """
    B, T, H = hs.shape
    Uzr = U[:, : 2 * H]
    Un = U[:, 2 * H:]
    dpre = np.zeros((B, T, 3 * H))
    dU = np.zeros_like(U)
    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        hp = hs[:, t - 1] if t > 0 else h0
        z, r, n = zs[:, t], rs[:, t], ns[:, t]
        m = mask[:, t, None]
        dtot = dhs[:, t] + dh
        dhn = dtot * m
        dn = dhn * (1.0 - z)
        dz = dhn * (hp - n)
        dhp = dtot * (1.0 - m) + dhn * z
        dn_pre = dn * (1.0 - n * n)
        drh = dn_pre @ Un.T
        dr = drh * hp
        dhp += drh * r
        dU[:, 2 * H:] += (r * hp).T @ dn_pre
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        dzr = np.concatenate([dz_pre, dr_pre], axis=1)
        dhp += dzr @ Uzr.T
        dU[:, : 2 * H] += hp.T @ dzr
        dpre[:, t, :H] = dz_pre
        dpre[:, t, H:2 * H] = dr_pre
        dpre[:, t, 2 * H:] = dn_pre
        dh = dhp
    return dpre, dU, dh
