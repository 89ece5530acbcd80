"""Hot loops with a numba path and a pure-numpy fallback.

Set ``SCALELAB_NO_NUMBA=1`` to force the numpy implementations (useful for
debugging and for the kernel benchmark).  Both paths implement the same
arithmetic in the same order, so results agree to rounding.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("SCALELAB_NO_NUMBA", "0").lower() in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# coordinate descent, covariance form: c = b - G theta is kept up to date


def cd_gram_numpy(G, theta, c, lam, idx, n_sweeps):
    max_change = 0.0
    for _ in range(n_sweeps):
        max_change = 0.0
        for j in idx:
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = theta[j]
            z = c[j] + gjj * old
            if z > lam:
                new = (z - lam) / gjj
            elif z < -lam:
                new = (z + lam) / gjj
            else:
                new = 0.0
            diff = new - old
            if diff != 0.0:
                theta[j] = new
                c -= diff * G[j]
                step = abs(diff) * np.sqrt(gjj)
                if step > max_change:
                    max_change = step
    return max_change


def _cd_gram_loop(G, theta, c, lam, idx, n_sweeps):
    d = c.shape[0]
    max_change = 0.0
    for _ in range(n_sweeps):
        max_change = 0.0
        for t in range(idx.shape[0]):
            j = idx[t]
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            old = theta[j]
            z = c[j] + gjj * old
            if z > lam:
                new = (z - lam) / gjj
            elif z < -lam:
                new = (z + lam) / gjj
            else:
                new = 0.0
            diff = new - old
            if diff != 0.0:
                theta[j] = new
                for k in range(d):
                    c[k] -= diff * G[j, k]
                step = abs(diff) * np.sqrt(gjj)
                if step > max_change:
                    max_change = step
    return max_change


# ---------------------------------------------------------------------------
# coordinate descent, residual form (n < d): r = y - Xs theta


def cd_resid_numpy(Xs, col_sq, theta, r, lam, idx, n_sweeps):
    max_change = 0.0
    for _ in range(n_sweeps):
        max_change = 0.0
        for j in idx:
            cj = col_sq[j]
            if cj <= 0.0:
                continue
            col = Xs[:, j]
            old = theta[j]
            z = col @ r + cj * old
            if z > lam:
                new = (z - lam) / cj
            elif z < -lam:
                new = (z + lam) / cj
            else:
                new = 0.0
            diff = new - old
            if diff != 0.0:
                theta[j] = new
                r -= diff * col
                step = abs(diff) * np.sqrt(cj)
                if step > max_change:
                    max_change = step
    return max_change


def _cd_resid_loop(Xs, col_sq, theta, r, lam, idx, n_sweeps):
    n = r.shape[0]
    max_change = 0.0
    for _ in range(n_sweeps):
        max_change = 0.0
        for t in range(idx.shape[0]):
            j = idx[t]
            cj = col_sq[j]
            if cj <= 0.0:
                continue
            old = theta[j]
            z = 0.0
            for i in range(n):
                z += Xs[i, j] * r[i]
            z += cj * old
            if z > lam:
                new = (z - lam) / cj
            elif z < -lam:
                new = (z + lam) / cj
            else:
                new = 0.0
            diff = new - old
            if diff != 0.0:
                theta[j] = new
                for i in range(n):
                    r[i] -= diff * Xs[i, j]
                step = abs(diff) * np.sqrt(cj)
                if step > max_change:
                    max_change = step
    return max_change


# ---------------------------------------------------------------------------
# pair sum of a spectral function's divergence: sum_{i<j} (f_i - f_j)/(x_i - x_j)


def pair_divergence_numpy(x, fx, dfx, tie=1e-12):
    dx = x[:, None] - x[None, :]
    df = fx[:, None] - fx[None, :]
    close = np.abs(dx) < tie
    safe = np.where(close, 1.0, dx)
    ratio = np.where(close, 0.5 * (dfx[:, None] + dfx[None, :]), df / safe)
    return float(np.sum(np.triu(ratio, 1)))


def _pair_divergence_loop(x, fx, dfx, tie=1e-12):
    m = x.shape[0]
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            dx = x[i] - x[j]
            if abs(dx) < tie:
                total += 0.5 * (dfx[i] + dfx[j])
            else:
                total += (fx[i] - fx[j]) / dx
    return total


if numba is not None:
    cd_gram_numba = numba.njit(cache=True)(_cd_gram_loop)
    cd_resid_numba = numba.njit(cache=True)(_cd_resid_loop)
    pair_divergence_numba = numba.njit(cache=True)(_pair_divergence_loop)
else:  # pragma: no cover
    cd_gram_numba = cd_gram_numpy
    cd_resid_numba = cd_resid_numpy
    pair_divergence_numba = pair_divergence_numpy


def cd_gram(G, theta, c, lam, idx, n_sweeps):
    if USE_NUMBA:
        return cd_gram_numba(G, theta, c, float(lam), np.ascontiguousarray(idx, dtype=np.int64), int(n_sweeps))
    return cd_gram_numpy(G, theta, c, float(lam), idx, int(n_sweeps))


def cd_resid(Xs, col_sq, theta, r, lam, idx, n_sweeps):
    if USE_NUMBA:
        return cd_resid_numba(Xs, col_sq, theta, r, float(lam), np.ascontiguousarray(idx, dtype=np.int64), int(n_sweeps))
    return cd_resid_numpy(Xs, col_sq, theta, r, float(lam), idx, int(n_sweeps))


def pair_divergence(x, fx, dfx, tie=1e-12):
    x = np.ascontiguousarray(x, dtype=np.float64)
    fx = np.ascontiguousarray(fx, dtype=np.float64)
    dfx = np.ascontiguousarray(dfx, dtype=np.float64)
    if USE_NUMBA:
        return float(pair_divergence_numba(x, fx, dfx, tie))
    return pair_divergence_numpy(x, fx, dfx, tie)
