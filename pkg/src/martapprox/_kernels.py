"""Sequential path kernels (numba). Inputs are pre-drawn uniforms / bits."""

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def chain_walk(cum, x0, u, states):
    # states[:, 0] <- x0; states[:, t+1] = first j with u[:, t] < cum[state, j]
    n_paths, n = u.shape
    n_states = cum.shape[1]
    for p in range(n_paths):
        s = x0[p]
        states[p, 0] = s
        for t in range(n):
            v = u[p, t]
            j = 0
            while j < n_states - 1 and v >= cum[s, j]:
                j += 1
            s = j
            states[p, t + 1] = s


@nb.njit(cache=True, nogil=True)
def shift_walk(y0, bits, y):
    # y[:, t+1] = (y[:, t] + bits[:, t]) / 2
    n_paths, n = bits.shape
    for p in range(n_paths):
        v = y0[p]
        y[p, 0] = v
        for t in range(n):
            v = 0.5 * (v + bits[p, t])
            y[p, t + 1] = v


def empty_states(n_paths, n):
    return np.empty((n_paths, n + 1), dtype=np.int64)
