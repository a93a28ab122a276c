"""Pure-NumPy reference implementation of the recurrent kernels.

Semantics (gate layout, update order, cached intermediates) are the
contract; the compiled twin in _recurrent_cy.pyx must match it to within
float rounding.  Inputs arrive pre-projected: xp = X @ Wx + bias, laid out
as the four gate blocks [input, forget, cell, output] of width b each.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def lstm_forward(xp: np.ndarray, Wh: np.ndarray):
    """Run the LSTM recurrence over a padded batch.

    xp: (B, T, 4b) pre-projected inputs; Wh: (b, 4b) recurrent weights.
    Returns (H, C, G, TC): hidden states, cell states, post-activation
    gates and tanh(C), each (B, T, ...) -- the cache for the backward pass.
    """
    B, T, four_b = xp.shape
    b = four_b // 4
    H = np.zeros((B, T, b))
    C = np.zeros((B, T, b))
    G = np.zeros((B, T, four_b))
    TC = np.zeros((B, T, b))
    h_prev = np.zeros((B, b))
    c_prev = np.zeros((B, b))
    for t in range(T):
        z = xp[:, t] + h_prev @ Wh
        i = _sigmoid(z[:, :b])
        f = _sigmoid(z[:, b : 2 * b])
        g = np.tanh(z[:, 2 * b : 3 * b])
        o = _sigmoid(z[:, 3 * b :])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        G[:, t, :b] = i
        G[:, t, b : 2 * b] = f
        G[:, t, 2 * b : 3 * b] = g
        G[:, t, 3 * b :] = o
        C[:, t] = c
        TC[:, t] = tc
        H[:, t] = h
        h_prev, c_prev = h, c
    return H, C, G, TC


def lstm_backward(
    dH: np.ndarray,
    Wh: np.ndarray,
    H: np.ndarray,
    C: np.ndarray,
    G: np.ndarray,
    TC: np.ndarray,
):
    """Backpropagate through time; returns (dXp, dWh)."""
    B, T, b = H.shape
    dXp = np.zeros((B, T, 4 * b))
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, b))
    dc_next = np.zeros((B, b))
    for t in range(T - 1, -1, -1):
        i = G[:, t, :b]
        f = G[:, t, b : 2 * b]
        g = G[:, t, 2 * b : 3 * b]
        o = G[:, t, 3 * b :]
        tc = TC[:, t]
        c_prev = C[:, t - 1] if t > 0 else np.zeros((B, b))
        h_prev = H[:, t - 1] if t > 0 else np.zeros((B, b))

        dh = dH[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f

        dz = np.empty((B, 4 * b))
        dz[:, :b] = di * i * (1.0 - i)
        dz[:, b : 2 * b] = df * f * (1.0 - f)
        dz[:, 2 * b : 3 * b] = dg * (1.0 - g * g)
        dz[:, 3 * b :] = do * o * (1.0 - o)

        dXp[:, t] = dz
        dWh += h_prev.T @ dz
        dh_next = dz @ Wh.T
    return dXp, dWh
