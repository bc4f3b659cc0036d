"""Pure numpy versions of the fused kernels (used when the compiled core is absent)."""
import numpy as np


def _mlp(x, W1, b1, W2, b2, W3, b3, sign):
    a1 = np.tanh(x @ W1 + b1)
    a2 = np.tanh(a1 @ W2 + b2)
    return sign * (a2 @ W3 + b3), a1, a2


def _mlp_back(x, a1, a2, gk, W1, W2, W3, sign, gw):
    gy = sign * gk
    gw[4] += a2.T @ gy
    gw[5] += gy.sum(axis=0)
    gz2 = (gy @ W3.T) * (1.0 - a2 * a2)
    gw[2] += a1.T @ gz2
    gw[3] += gz2.sum(axis=0)
    gz1 = (gz2 @ W2.T) * (1.0 - a1 * a1)
    gw[0] += x.T @ gz1
    gw[1] += gz1.sum(axis=0)
    return gz1 @ W1.T


def rk4_mlp_forward(h0, W1, b1, W2, b2, W3, b3, dt, n_steps, active, sign):
    """Integrate dh/dt = sign * mlp(h) with ``n_steps`` RK4 steps on active rows."""
    idx = np.flatnonzero(active)
    m, H = W1.shape
    X = np.empty((n_steps, 4, idx.size, m))
    A1 = np.empty((n_steps, 4, idx.size, H))
    A2 = np.empty((n_steps, 4, idx.size, H))
    x = h0[idx]
    half = 0.5 * dt
    for s in range(n_steps):
        X[s, 0] = x
        k1, A1[s, 0], A2[s, 0] = _mlp(x, W1, b1, W2, b2, W3, b3, sign)
        X[s, 1] = x + half * k1
        k2, A1[s, 1], A2[s, 1] = _mlp(X[s, 1], W1, b1, W2, b2, W3, b3, sign)
        X[s, 2] = x + half * k2
        k3, A1[s, 2], A2[s, 2] = _mlp(X[s, 2], W1, b1, W2, b2, W3, b3, sign)
        X[s, 3] = x + dt * k3
        k4, A1[s, 3], A2[s, 3] = _mlp(X[s, 3], W1, b1, W2, b2, W3, b3, sign)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out = h0.copy()
    out[idx] = x
    return out, (idx, X, A1, A2)


def rk4_mlp_backward(cache, g, W1, b1, W2, b2, W3, b3, dt, n_steps, sign):
    idx, X, A1, A2 = cache
    gw = [np.zeros_like(W1), np.zeros_like(b1), np.zeros_like(W2),
          np.zeros_like(b2), np.zeros_like(W3), np.zeros_like(b3)]
    gh = g.copy()
    G = g[idx]
    for s in range(n_steps - 1, -1, -1):
        gk1 = G * (dt / 6.0)
        gk2 = G * (dt / 3.0)
        gk3 = G * (dt / 3.0)
        gk4 = G * (dt / 6.0)
        gx = G.copy()
        gx4 = _mlp_back(X[s, 3], A1[s, 3], A2[s, 3], gk4, W1, W2, W3, sign, gw)
        gx += gx4
        gk3 += dt * gx4
        gx3 = _mlp_back(X[s, 2], A1[s, 2], A2[s, 2], gk3, W1, W2, W3, sign, gw)
        gx += gx3
        gk2 += 0.5 * dt * gx3
        gx2 = _mlp_back(X[s, 1], A1[s, 1], A2[s, 1], gk2, W1, W2, W3, sign, gw)
        gx += gx2
        gk1 += 0.5 * dt * gx2
        gx += _mlp_back(X[s, 0], A1[s, 0], A2[s, 0], gk1, W1, W2, W3, sign, gw)
        G = gx
    gh[idx] = G
    return (gh, *gw)


def affine_rollout_forward(A, b, z0, n):
    """Iterate ``z <- A z + b`` ``n`` times per row; returns (B, n+1, d)."""
    B, d = z0.shape
    Z = np.empty((B, n + 1, d))
    Z[:, 0] = z0
    z = z0[:, :, None]
    bb = b[:, :, None]
    for j in range(1, n + 1):
        z = A @ z + bb
        Z[:, j] = z[:, :, 0]
    return Z


def affine_rollout_backward(A, Z, gZ):
    n = Z.shape[1] - 1
    At = np.swapaxes(A, -1, -2)
    gA = np.zeros_like(A)
    gb = np.zeros(Z.shape[::2])
    lam = gZ[:, n].copy()
    for j in range(n, 0, -1):
        gA += lam[:, :, None] * Z[:, j - 1, None, :]
        gb += lam
        lam = gZ[:, j - 1] + (At @ lam[:, :, None])[:, :, 0]
    return gA, gb, lam
