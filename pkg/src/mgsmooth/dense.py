"""Dense factorizations and eigensolvers for the analysis oracle.

Everything here is written out rather than delegated so the solver and the
spectra it reports share no code path with the test oracles (power iteration,
constructed spectra, cross-library checks live in the tests).  LU with partial
pivoting and Cholesky cover the solve paths; eigenvalues come from Householder
Hessenberg reduction plus Francis double-shift QR for general matrices and
tred2/tql2 for symmetric ones.  Intended for desk-scale systems; the
documented ceiling is n = 4096.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, SingularMatrixError

_EPS = np.finfo(float).eps


def lu_factor(A: np.ndarray):
    """PA = LU with partial pivoting; returns (LU, perm).

    perm[i] is the original row sitting at position i.  Pivots below 1e-12
    relative to the matrix scale raise SingularMatrixError carrying the
    elimination step.
    """
    A = np.array(A, dtype=float)
    n, m = A.shape
    if n != m:
        raise SingularMatrixError("lu_factor requires a square matrix")
    scale = np.abs(A).max()
    if scale == 0.0:
        raise SingularMatrixError("zero matrix", pivot_index=0)
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[p, k]) <= 1e-12 * scale:
            raise SingularMatrixError(
                f"singular to working precision at pivot {k}", pivot_index=k)
        if p != k:
            A[[k, p]] = A[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        A[k + 1:, k] /= A[k, k]
        if k + 1 < n:
            A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
    return A, perm


def lu_solve(lu: np.ndarray, perm: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve Ax = b; b may carry multiple right-hand sides as columns."""
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    x = (b[:, None] if single else b)[perm].astype(float)
    n = lu.shape[0]
    for k in range(n):               # L y = Pb, unit diagonal
        if k + 1 < n:
            x[k + 1:] -= np.outer(lu[k + 1:, k], x[k])
    for k in range(n - 1, -1, -1):   # U x = y
        x[k] /= lu[k, k]
        if k > 0:
            x[:k] -= np.outer(lu[:k, k], x[k])
    return x[:, 0] if single else x


def lu_solve_t(lu: np.ndarray, perm: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A^T x = b with the factorization of A (A = P^T L U)."""
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    y = (b[:, None] if single else b).astype(float).copy()
    n = lu.shape[0]
    for k in range(n):               # U^T y = b, forward, non-unit diagonal
        y[k] /= lu[k, k]
        if k + 1 < n:
            y[k + 1:] -= np.outer(lu[k, k + 1:], y[k])
    for k in range(n - 1, -1, -1):   # L^T w = y, backward, unit diagonal
        y[k] -= lu[k + 1:, k] @ y[k + 1:]
    x = np.empty_like(y)
    x[perm] = y
    return x[:, 0] if single else x


def solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    lu, perm = lu_factor(A)
    return lu_solve(lu, perm, b)


def inverse(A: np.ndarray) -> np.ndarray:
    lu, perm = lu_factor(A)
    return lu_solve(lu, perm, np.eye(A.shape[0]))


def cholesky(A: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L L^T = A; raises NumericError if not SPD."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if d <= 0.0:
            raise NumericError(
                f"matrix not positive definite (pivot {j}: {d:.3e})")
        L[j, j] = np.sqrt(d)
        if j + 1 < n:
            L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def tri_solve(L: np.ndarray, b: np.ndarray, lower: bool = True,
              trans: bool = False) -> np.ndarray:
    """Triangular solve with L or its transpose."""
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    x = (b[:, None] if single else b).astype(float).copy()
    n = L.shape[0]
    T = L.T if trans else L
    forward = lower != trans
    if forward:
        for k in range(n):
            x[k] /= T[k, k]
            if k + 1 < n:
                x[k + 1:] -= np.outer(T[k + 1:, k], x[k])
    else:
        for k in range(n - 1, -1, -1):
            x[k] /= T[k, k]
            if k > 0:
                x[:k] -= np.outer(T[:k, k], x[k])
    return x[:, 0] if single else x


def hessenberg(A: np.ndarray) -> np.ndarray:
    """Orthogonal similarity reduction to upper Hessenberg form."""
    H = np.array(A, dtype=float)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        H[k + 1:, k:] -= 2.0 * np.outer(v, v @ H[k + 1:, k:])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v)
        H[k + 2:, k] = 0.0
    return H


def eig_spectrum(A: np.ndarray) -> np.ndarray:
    """All eigenvalues of a general real square matrix, as complex values."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    if n == 1:
        return np.array([complex(A[0, 0])])
    scale = np.abs(A).max()
    if scale > 0 and np.abs(A - A.T).max() <= 1e-12 * scale:
        return eig_symmetric(A).astype(complex)
    return _hqr(hessenberg(A))


def _hqr(H: np.ndarray) -> np.ndarray:
    """Francis double-shift QR on an upper Hessenberg matrix, eigenvalues only."""
    H = np.array(H, dtype=float)
    n = H.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = np.abs(H).sum()
    if anorm == 0.0:
        return np.zeros(n, dtype=complex)
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            for l in range(nn, 0, -1):
                s = abs(H[l - 1, l - 1]) + abs(H[l, l])
                if s == 0.0:
                    s = anorm
                if abs(H[l, l - 1]) <= _EPS * s:
                    H[l, l - 1] = 0.0
                    break
            else:
                l = 0
            x = H[nn, nn]
            if l == nn:                      # isolated real eigenvalue
                wr[nn] = x + t
                nn -= 1
                break
            y = H[nn - 1, nn - 1]
            w = H[nn, nn - 1] * H[nn - 1, nn]
            if l == nn - 1:                  # trailing 2x2 block converged
                p = 0.5 * (y - x)
                q = p * p + w
                z = np.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + np.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn] = z
                    wi[nn - 1] = -z
                nn -= 2
                break
            if its == 60:
                raise NumericError("QR eigensolver failed to converge")
            if its > 0 and its % 10 == 0:    # exceptional shift
                t += x
                for i in range(nn + 1):
                    H[i, i] -= x
                s = abs(H[nn, nn - 1]) + abs(H[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            for m in range(nn - 2, l - 1, -1):
                z = H[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / H[m + 1, m] + H[m, m + 1]
                q = H[m + 1, m + 1] - z - r - s
                r = H[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(H[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(H[m - 1, m - 1]) + abs(z) + abs(H[m + 1, m + 1]))
                if u <= _EPS * v:
                    break
            for i in range(m + 2, nn + 1):
                H[i, i - 2] = 0.0
                if i != m + 2:
                    H[i, i - 3] = 0.0
            for k in range(m, nn):           # double QR step, bulge chasing
                if k != m:
                    p = H[k, k - 1]
                    q = H[k + 1, k - 1]
                    r = H[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = np.copysign(np.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        H[k, k - 1] = -H[k, k - 1]
                else:
                    H[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                hi = min(nn, k + 3)
                if k != nn - 1:
                    row = H[k, k:nn + 1] + q * H[k + 1, k:nn + 1] + r * H[k + 2, k:nn + 1]
                    H[k, k:nn + 1] -= row * x
                    H[k + 1, k:nn + 1] -= row * y
                    H[k + 2, k:nn + 1] -= row * z
                    col = x * H[l:hi + 1, k] + y * H[l:hi + 1, k + 1] + z * H[l:hi + 1, k + 2]
                    H[l:hi + 1, k] -= col
                    H[l:hi + 1, k + 1] -= col * q
                    H[l:hi + 1, k + 2] -= col * r
                else:
                    row = H[k, k:nn + 1] + q * H[k + 1, k:nn + 1]
                    H[k, k:nn + 1] -= row * x
                    H[k + 1, k:nn + 1] -= row * y
                    col = x * H[l:hi + 1, k] + y * H[l:hi + 1, k + 1]
                    H[l:hi + 1, k] -= col
                    H[l:hi + 1, k + 1] -= col * q
    return wr + 1j * wi


def _tred2(A: np.ndarray, vectors: bool):
    """Householder reduction of a symmetric matrix to tridiagonal form.

    Returns (d, e, Z): diagonal, subdiagonal (e[i] couples rows i-1 and i,
    e[0] unused), and the accumulated orthogonal transform when requested.
    """
    n = A.shape[0]
    Z = np.array(A, dtype=float)
    d = np.zeros(n)
    e = np.zeros(n)
    for i in range(n - 1, 0, -1):
        l = i - 1
        h = 0.0
        if l > 0:
            scale = np.abs(Z[i, :i]).sum()
            if scale == 0.0:
                e[i] = Z[i, l]
            else:
                Z[i, :i] /= scale
                h = Z[i, :i] @ Z[i, :i]
                f = Z[i, l]
                g = -np.copysign(np.sqrt(h), f)
                e[i] = scale * g
                h -= f * g
                Z[i, l] = f - g
                f = 0.0
                for j in range(i):
                    if vectors:
                        Z[j, i] = Z[i, j] / h
                    g = Z[j, :j + 1] @ Z[i, :j + 1] + Z[j + 1:i, j] @ Z[i, j + 1:i]
                    e[j] = g / h
                    f += e[j] * Z[i, j]
                hh = f / (h + h)
                for j in range(i):
                    fj = Z[i, j]
                    e[j] = gj = e[j] - hh * fj
                    Z[j, :j + 1] -= fj * e[:j + 1] + gj * Z[i, :j + 1]
        else:
            e[i] = Z[i, l]
        d[i] = h
    d[0] = 0.0
    e[0] = 0.0
    if vectors:
        for i in range(n):
            if d[i] != 0.0:      # d still holds the Householder h here
                G = Z[i, :i] @ Z[:i, :i]
                Z[:i, :i] -= np.outer(Z[:i, i], G)
            d[i] = Z[i, i]
            Z[i, i] = 1.0
            Z[i, :i] = 0.0
            Z[:i, i] = 0.0
        return d, e, Z
    for i in range(n):
        d[i] = Z[i, i]
    return d, e, None


def _tql2(d: np.ndarray, e: np.ndarray, Z: np.ndarray | None):
    """QL with implicit shifts on a symmetric tridiagonal matrix."""
    n = d.size
    e = np.roll(e, -1)           # now e[i] couples d[i] and d[i+1]
    for l in range(n):
        its = 0
        while True:
            for m in range(l, n - 1):
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= _EPS * dd:
                    break
            else:
                m = n - 1
            if m == l:
                break
            if its == 50:
                raise NumericError("tql2 failed to converge")
            its += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + np.copysign(r, g))
            s = c = 1.0
            p = 0.0
            for i in range(m - 1, l - 1, -1):
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if Z is not None:
                    col = Z[:, i + 1].copy()
                    Z[:, i + 1] = s * Z[:, i] + c * col
                    Z[:, i] = c * Z[:, i] - s * col
            else:
                d[l] -= p
                e[l] = g
                e[m] = 0.0
    order = np.argsort(d, kind="stable")
    d = d[order]
    if Z is not None:
        Z = Z[:, order]
    return d, Z


def eig_symmetric(A: np.ndarray, vectors: bool = False):
    """Eigenvalues ascending, optionally with an orthonormal eigenbasis."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if n == 1:
        d = np.array([float(A[0, 0])])
        return (d, np.ones((1, 1))) if vectors else d
    d, e, Z = _tred2(A, vectors)
    d, Z = _tql2(d, e, Z)
    return (d, Z) if vectors else d


def power_iteration(matvec, n: int, iters: int = 1000, seed: int = 0) -> float:
    """Dominant eigenvalue modulus of a linear operator by power iteration.

    Reliable when the dominant eigenvalue is well separated; the analysis
    module only consults it under that condition.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = matvec(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        est = nw
        v = w / nw
    return float(est)
