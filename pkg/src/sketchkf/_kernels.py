"""Compiled per-entry loops.

The censoring pass and the update-selection correction walk the rows of a
batch one at a time, with the running estimate threaded through.  These
loops are compiled with numba; everything else stays in numpy.
"""

from __future__ import annotations

import numpy as np
from numba import njit

ACTION_SKIP = 0
ACTION_FIRST_ORDER = 1
ACTION_SECOND_ORDER = 2


@njit(cache=True)
def ac_lms_pass(theta, X, y, thresh, mu):
    """Single censoring pass; returns the keep-mask and the inner estimate."""
    D, p = X.shape
    keep = np.zeros(D, dtype=np.bool_)
    for i in range(D):
        e = y[i]
        for j in range(p):
            e -= X[i, j] * theta[j]
        if abs(e) > thresh[i]:
            keep[i] = True
            if mu != 0.0:
                step = mu * e
                for j in range(p):
                    theta[j] += step * X[i, j]
    return keep, theta


@njit(cache=True)
def secular_downdate(vals, vecs, u, tol):
    """Eigendecomposition of ``V diag(vals) V^T - u u^T``.

    ``vals`` must be sorted descending with matching eigenvector columns in
    ``vecs``.  Deflates negligible components and (near-)repeated
    eigenvalues with Givens rotations, solves the secular equation by
    bracketed Newton iteration relative to the nearest pole, and rebuilds eigenvectors from
    the Loewner-corrected weights so they stay orthogonal.
    """
    p = vals.size
    V = vecs.copy()
    lam = vals.copy()
    z = V.T @ u
    scale = max(abs(lam[0]), np.sum(z * z), 1e-300)
    ztol = tol * np.sqrt(scale)

    # merge components of (nearly) equal eigenvalues into one
    for j in range(p - 1):
        if abs(z[j]) <= ztol:
            continue
        for l in range(j + 1, p):
            if abs(lam[l] - lam[j]) > tol * scale:
                break
            if abs(z[l]) <= ztol:
                continue
            r = np.hypot(z[j], z[l])
            c = z[j] / r
            s = z[l] / r
            for row in range(p):
                a = V[row, j]
                b = V[row, l]
                V[row, j] = c * a + s * b
                V[row, l] = -s * a + c * b
            z[j] = r
            z[l] = 0.0

    active = np.empty(p, dtype=np.int64)
    m = 0
    for j in range(p - 1, -1, -1):  # ascending order of eigenvalues
        if abs(z[j]) > ztol:
            active[m] = j
            m += 1
    new_vals = lam.copy()
    new_vecs = V.copy()
    if m == 0:
        return new_vals, new_vecs

    d = np.empty(m)
    w = np.empty(m)
    for a in range(m):
        d[a] = lam[active[a]]
        w[a] = z[active[a]]
    w2 = w * w
    znorm2 = np.sum(w2)

    # root a lies in (d[a-1], d[a]); root 0 in [d[0] - |z|^2, d[0]).
    # each root is stored as origin index + offset for accurate differences.
    origin = np.empty(m, dtype=np.int64)
    delta = np.empty(m)
    for a in range(m):
        lo = d[a] - znorm2 if a == 0 else d[a - 1]
        hi = d[a]
        mid = 0.5 * (lo + hi)
        f = 1.0
        for b in range(m):
            f -= w2[b] / (d[b] - mid)
        # f decreasing: f(mid) > 0 means the root is right of mid, closer to d[a]
        if a == 0 or f > 0:
            o = a
        else:
            o = a - 1
        left = lo - d[o]
        right = hi - d[o]
        off = 0.5 * (left + right)
        # Newton on the decreasing secular function, safeguarded by the bracket
        for _ in range(200):
            f = 1.0
            fp = 0.0
            for b in range(m):
                t = 1.0 / ((d[b] - d[o]) - off)
                f -= w2[b] * t
                fp -= w2[b] * t * t
            if f > 0:
                left = off
            else:
                right = off
            step = -f / fp if fp != 0.0 else 0.0
            cand = off + step
            if not (left < cand < right):
                cand = 0.5 * (left + right)
            if cand == off or abs(cand - off) <= 4e-16 * abs(off) or right - left <= 4e-16 * max(abs(left), abs(right)):
                off = cand
                break
            off = cand
        origin[a] = o
        delta[a] = off

    # Loewner weights: zhat_j^2 = -(mu_j - d_j) prod_{i != j} (mu_i - d_j) / (d_i - d_j)
    zhat = np.empty(m)
    for j in range(m):
        prod = -((d[origin[j]] - d[j]) + delta[j])
        for i in range(m):
            if i != j:
                prod *= ((d[origin[i]] - d[j]) + delta[i]) / (d[i] - d[j])
        zhat[j] = np.sqrt(max(prod, 0.0))
        if w[j] < 0:
            zhat[j] = -zhat[j]

    Vact = np.empty((p, m))
    for a in range(m):
        Vact[:, a] = V[:, active[a]]
    Wm = np.empty((m, m))
    for i in range(m):
        norm = 0.0
        for j in range(m):
            diff = (d[j] - d[origin[i]]) - delta[i]
            Wm[j, i] = zhat[j] / diff
            norm += Wm[j, i] * Wm[j, i]
        norm = np.sqrt(norm)
        for j in range(m):
            Wm[j, i] /= norm
    rotated = Vact @ Wm
    for a in range(m):
        new_vals[active[a]] = d[origin[a]] + delta[a]
        new_vecs[:, active[a]] = rotated[:, a]

    order = np.argsort(-new_vals)
    return new_vals[order].copy(), new_vecs[:, order].copy()


@njit(cache=True)
def us_slot_pass(theta, P, X, y, r, tau, decay, k, mu_factor, vals, vecs, trace, refresh_every, tol, exact_div):
    """Update-selection correction over the rows of one slot.

    ``k == 0`` uses the trace-only gamma estimate; ``k > 0`` reads the top-k
    pairs of the tracked eigensystem ``(vals, vecs)``, which is downdated
    after every second-order step and recomputed from ``P`` every
    ``refresh_every`` downdates.  ``exact_div`` adds the innovation-free
    trace term of the symmetric KL to the gate.
    """
    D, p = X.shape
    actions = np.zeros(D, dtype=np.int8)
    gammas = np.zeros(D)
    errs = np.zeros(D)
    ss = np.zeros(D)
    divs = np.zeros(D)
    since_refresh = 0
    Px = np.empty(p)
    for i in range(D):
        xn2 = 0.0
        e = y[i]
        for j in range(p):
            xn2 += X[i, j] * X[i, j]
            e -= X[i, j] * theta[j]
        errs[i] = e
        if xn2 == 0.0:
            continue
        if k == 0:
            g = xn2 * trace / p
        else:
            g = 0.0
            cap = 0.0
            topsum = 0.0
            for a in range(k):
                t = 0.0
                for j in range(p):
                    t += vecs[j, a] * X[i, j]
                g += vals[a] * t * t
                cap += t * t
                topsum += vals[a]
            if k < p:
                g += (xn2 - cap) * (trace - topsum) / (p - k)
        if g < 0.0:
            g = 0.0
        sig2 = r[i]
        s = g + sig2
        div = 0.5 * (e * e / s) * (2.0 * g + g * g / sig2) / s
        if exact_div:
            div += 0.5 * g * g / (sig2 * s)
        gammas[i] = g
        ss[i] = s
        divs[i] = div
        if div >= tau / (i + 1.0) ** decay:
            for a in range(p):
                acc = 0.0
                for b in range(p):
                    acc += P[a, b] * X[i, b]
                Px[a] = acc
            s_exact = sig2
            for a in range(p):
                s_exact += X[i, a] * Px[a]
            coef = e / s_exact
            for a in range(p):
                theta[a] += Px[a] * coef
            for a in range(p):
                pa = Px[a] / s_exact
                for b in range(p):
                    P[a, b] -= pa * Px[b]
            unorm2 = 0.0
            for a in range(p):
                unorm2 += Px[a] * Px[a]
            trace -= unorm2 / s_exact
            if k > 0:
                since_refresh += 1
                if since_refresh >= refresh_every:
                    Psym = 0.5 * (P + P.T)
                    ev, evec = np.linalg.eigh(Psym)
                    vals = ev[::-1].copy()
                    vecs = evec[:, ::-1].copy()
                    trace = np.trace(Psym)
                    since_refresh = 0
                else:
                    vals, vecs = secular_downdate(vals, vecs, Px / np.sqrt(s_exact), tol)
            actions[i] = ACTION_SECOND_ORDER
        elif mu_factor != 0.0:
            mu = mu_factor * g / (xn2 * s)
            step = mu * e
            for j in range(p):
                theta[j] += step * X[i, j]
            actions[i] = ACTION_FIRST_ORDER
    return theta, P, actions, gammas, errs, ss, divs, vals, vecs, trace
