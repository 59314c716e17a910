"""Dense small-matrix kernels.

Everything here targets d up to roughly 100: cyclic Jacobi for symmetric
spectra, balanced Hessenberg + shifted QR for general spectra, degree-13
Pade scaling-and-squaring for the exponential, and Gaussian elimination
with partial pivoting for solves.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, NumericalError, ShapeError, SingularMatrixError

SYMMETRY_TOL = 1e-12
SINGULAR_TOL = 1e-12
_EPS = np.finfo(float).eps


def as_matrix(m, square=False, name="matrix"):
    """Return ``m`` as a finite 2-D float array."""
    a = np.asarray(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if a.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    if square and a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class SpectralSummary:
    sym_min_eig: float
    sym_max_eig: float
    min_real_part: float
    spectral_norm: float


# --------------------------------------------------------------------------
# symmetric eigenproblem


def _jacobi_batch(a, want_vectors=False, tol=1e-14, max_sweeps=60):
    """Cyclic Jacobi on a stack of symmetric matrices of shape (B, d, d).

    Rotations are computed per stack element, so every matrix is processed
    independently of its neighbours in the batch.
    """
    a = np.array(a, dtype=float, copy=True)
    nb, d, _ = a.shape
    # exact power-of-two normalisation per matrix; undone on the eigenvalues
    big = np.max(np.abs(a), axis=(1, 2))
    unit = np.where(big > 0, 2.0 ** np.round(np.log2(np.where(big > 0, big, 1.0))), 1.0)
    a /= unit[:, None, None]
    v = np.broadcast_to(np.eye(d), a.shape).copy() if want_vectors else None
    scale = np.sqrt(np.sum(a * a, axis=(1, 2)))
    thresh = tol * np.where(scale > 0, scale, 1.0)
    iu = np.triu_indices(d, 1)
    rows = np.arange(nb)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(a[:, iu[0], iu[1]] ** 2, axis=1))
        if np.all(off <= thresh):
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[:, p, q]
                active = np.abs(apq) > 0.0
                if not np.any(active):
                    continue
                app = a[:, p, p]
                aqq = a[:, q, q]
                safe = np.where(active, apq, 1.0)
                with np.errstate(over="ignore"):
                    theta = (aqq - app) / (2.0 * safe)
                    huge = np.abs(theta) > 1e150
                    t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(huge, 0.5 / np.where(huge, theta, 1.0), t)
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # columns p, q
                ap = a[:, :, p].copy()
                aq = a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - s[:, None] * aq
                a[:, :, q] = s[:, None] * ap + c[:, None] * aq
                # rows p, q
                rp = a[:, p, :].copy()
                rq = a[:, q, :].copy()
                a[:, p, :] = c[:, None] * rp - s[:, None] * rq
                a[:, q, :] = s[:, None] * rp + c[:, None] * rq
                a[rows, p, q] = np.where(active, 0.0, a[:, p, q])
                a[rows, q, p] = np.where(active, 0.0, a[:, q, p])
                if v is not None:
                    vp = v[:, :, p].copy()
                    vq = v[:, :, q].copy()
                    v[:, :, p] = c[:, None] * vp - s[:, None] * vq
                    v[:, :, q] = s[:, None] * vp + c[:, None] * vq
    else:
        off = np.sqrt(2.0 * np.sum(a[:, iu[0], iu[1]] ** 2, axis=1))
        if np.any(off > thresh * 1e3):
            raise NumericalError(
                f"Jacobi did not converge in {max_sweeps} sweeps "
                f"(max off-diagonal norm {off.max():.3e})"
            )
    w = np.diagonal(a, axis1=1, axis2=2) * unit[:, None]
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    if v is not None:
        v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w, v


def _check_symmetric(a):
    asym = np.max(np.abs(a - np.swapaxes(a, -1, -2)))
    if asym > SYMMETRY_TOL:
        raise ShapeError(f"matrix is not symmetric (max asymmetry {asym:.3e})")


def sym_eigenvalues(m, eigenvectors=False):
    """Eigenvalues of a symmetric matrix in ascending order.

    With ``eigenvectors=True`` returns ``(w, V)`` where the columns of ``V``
    are orthonormal eigenvectors.
    """
    a = as_matrix(m, square=True)
    _check_symmetric(a)
    a = 0.5 * (a + a.T)
    w, v = _jacobi_batch(a[None], want_vectors=eigenvectors)
    if eigenvectors:
        return w[0], v[0]
    return w[0]


def sym_eigenvalues_batch(stack):
    """Ascending eigenvalues for each symmetric matrix in a (B, d, d) stack."""
    a = np.asarray(stack, dtype=float)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise DimensionError(f"expected a (B, d, d) stack, got {a.shape}")
    _check_symmetric(a)
    a = 0.5 * (a + np.swapaxes(a, 1, 2))
    return _jacobi_batch(a)[0]


def sym_extreme_eigenvalues(m):
    w = sym_eigenvalues(m)
    return float(w[0]), float(w[-1])


# --------------------------------------------------------------------------
# general eigenproblem


def _balance(a):
    """Parlett-Reinsch balancing by powers of two (similarity transform).

    Scale factors are kept inside a safe range, as in LAPACK's gebal, so
    that tiny entries are never pushed into underflow.
    """
    a = a.copy()
    n = a.shape[0]
    radix = 2.0
    sfmin1 = np.finfo(float).tiny / _EPS
    sfmax1 = 1.0 / sfmin1
    sfmin2 = sfmin1 * radix
    sfmax2 = 1.0 / sfmin2
    scale = np.ones(n)
    converged = False
    while not converged:
        converged = True
        for i in range(n):
            c = np.sum(np.abs(a[:, i])) - abs(a[i, i])
            r = np.sum(np.abs(a[i, :])) - abs(a[i, i])
            ca = np.max(np.abs(a[:, i]))
            ra = np.max(np.abs(a[i, :]))
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g and max(f, c, ca) < sfmax2 and min(r, g, ra) > sfmin2:
                f *= radix
                c *= radix
                ca *= radix
                r /= radix
                g /= radix
                ra /= radix
            g = c / radix
            while g >= r and max(r, ra) < sfmax2 and min(f, c, g, ca) > sfmin2:
                f /= radix
                c /= radix
                g /= radix
                ca /= radix
                r *= radix
                ra *= radix
            if c + r >= 0.95 * s:
                continue
            if f < 1.0 and scale[i] < 1.0 and f * scale[i] <= sfmin1:
                continue
            if f > 1.0 and scale[i] > 1.0 and scale[i] >= sfmax1 / f:
                continue
            converged = False
            scale[i] *= f
            diag = a[i, i]
            a[i, :] /= f
            a[:, i] *= f
            a[i, i] = diag
    return a


def _norm2(x):
    """Euclidean norm without underflow/overflow in the squares."""
    big = np.max(np.abs(x))
    if big == 0.0 or not np.isfinite(big):
        return float(big)
    return float(big * np.sqrt(np.sum((x / big) ** 2)))


def _hessenberg(a):
    """Householder reduction to upper Hessenberg form."""
    h = a.copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        alpha = _norm2(x)
        if alpha == 0.0:
            continue
        if x[0] > 0:
            alpha = -alpha
        u = x
        u[0] -= alpha
        unorm = _norm2(u)
        if unorm == 0.0:
            continue
        u /= unorm
        h[k + 1:, k:] -= 2.0 * np.outer(u, u @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ u, u)
        h[k + 2:, k] = 0.0
    return h


def _francis(a, budget):
    """Eigenvalues of a real upper Hessenberg matrix by double-shift QR.

    Real arithmetic throughout (EISPACK ``hqr`` layout): converged 2x2
    blocks yield either two real roots or an exact conjugate pair. ``a`` is
    overwritten. Returns ``(wr, wi)``.
    """
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = 0.0
    for i in range(n):
        anorm += np.sum(np.abs(a[i, max(i - 1, 0):]))
    nn = n - 1
    shift = 0.0
    total = 0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + shift
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = np.sqrt(abs(q))
                x += shift
                if q >= 0.0:
                    z = p + np.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if total >= budget:
                raise NumericalError(
                    f"double-shift QR did not converge within {budget} iterations; "
                    f"active block [{l}, {nn}], last subdiagonal "
                    f"|h[{nn},{nn - 1}]| = {abs(a[nn, nn - 1]):.3e}"
                )
            if its and its % 10 == 0:
                # exceptional shift to break cycles
                shift += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1
            m = nn - 2
            while True:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
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
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                # row modification
                rows = a[k, k:nn + 1] + q * a[k + 1, k:nn + 1]
                if k != nn - 1:
                    rows = rows + r * a[k + 2, k:nn + 1]
                    a[k + 2, k:nn + 1] -= rows * z
                a[k + 1, k:nn + 1] -= rows * y
                a[k, k:nn + 1] -= rows * x
                # column modification
                top = min(nn, k + 3) + 1
                cols = x * a[l:top, k] + y * a[l:top, k + 1]
                if k != nn - 1:
                    cols = cols + z * a[l:top, k + 2]
                    a[l:top, k + 2] -= cols * r
                a[l:top, k + 1] -= cols * q
                a[l:top, k] -= cols
    return wr, wi


def eigenvalues_general(m):
    """All eigenvalues (with multiplicity) of a real square matrix.

    Balance, reduce to Hessenberg form, then run Francis double-shift QR
    with deflation and a budget of ``100 * d`` iterations. Complex
    eigenvalues come out as exact conjugate pairs. Sorted by real part,
    then by descending imaginary part.
    """
    a = as_matrix(m, square=True)
    n = a.shape[0]
    if n == 1:
        return np.array([complex(a[0, 0])])
    big = np.max(np.abs(a))
    if big == 0.0:
        return np.zeros(n, dtype=complex)
    # exact power-of-two normalisation keeps the iteration away from under/overflow
    scale = 2.0 ** np.round(np.log2(big))
    h = _hessenberg(_balance(a / scale))
    wr, wi = _francis(h, budget=100 * n)
    w = (wr + 1j * wi) * scale
    order = np.lexsort((-w.imag, w.real))
    return w[order]


def min_real_part(m):
    return float(np.min(eigenvalues_general(m).real))


# --------------------------------------------------------------------------
# exponential

_PADE13 = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)


def matrix_exponential(m, t=1.0):
    """Return ``exp(m * t)``.

    Scaling and squaring around a [13/13] Pade approximant, with the scaled
    argument brought to 1-norm at most 0.5.
    """
    a = as_matrix(m, square=True)
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    x = a * float(t)
    n = x.shape[0]
    ident = np.eye(n)
    norm1 = np.max(np.sum(np.abs(x), axis=0))
    if norm1 == 0.0:
        return ident
    s = max(0, int(np.ceil(np.log2(norm1 / 0.5))))
    x = x / (2.0 ** s)
    b = _PADE13
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    u = x @ (x6 @ (b[13] * x6 + b[11] * x4 + b[9] * x2)
             + b[7] * x6 + b[5] * x4 + b[3] * x2 + b[1] * ident)
    v = (x6 @ (b[12] * x6 + b[10] * x4 + b[8] * x2)
         + b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * ident)
    r = solve_linear(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r


# --------------------------------------------------------------------------
# norms and solves


def spectral_norm(m):
    """Largest singular value, computed as sqrt(lambda_max(m^T m))."""
    a = as_matrix(m)
    g = a.T @ a
    w = sym_eigenvalues(0.5 * (g + g.T))
    return float(np.sqrt(max(w[-1], 0.0)))


def solve_linear(a, rhs):
    """Solve ``a x = rhs`` by Gaussian elimination with partial pivoting.

    ``rhs`` may be a vector or a matrix of right-hand sides. Raises
    :class:`SingularMatrixError` when a pivot falls below
    ``1e-12 * ||a||_inf``.
    """
    a = as_matrix(a, square=True, name="a")
    b = np.asarray(rhs, dtype=float)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if b.ndim != 2 or b.shape[0] != a.shape[0]:
        raise DimensionError(f"rhs of shape {np.shape(rhs)} does not match a {a.shape}")
    n = a.shape[0]
    anorm = np.max(np.sum(np.abs(a), axis=1))
    if anorm == 0.0:
        raise SingularMatrixError("matrix is zero")
    lu = a.copy()
    x = b.copy()
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) <= SINGULAR_TOL * anorm:
            raise SingularMatrixError(
                f"pivot {abs(lu[p, k]):.3e} at column {k} below "
                f"{SINGULAR_TOL:g} * ||a|| = {SINGULAR_TOL * anorm:.3e}"
            )
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            x[[k, p]] = x[[p, k]]
        f = lu[k + 1:, k] / lu[k, k]
        lu[k + 1:, k:] -= np.outer(f, lu[k, k:])
        x[k + 1:] -= np.outer(f, x[k])
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - lu[k, k + 1:] @ x[k + 1:]) / lu[k, k]
    resid = np.max(np.abs(a @ x - b))
    xnorm = np.max(np.abs(x))
    if resid > 1e-10 * (anorm * xnorm + np.max(np.abs(b))):
        raise SingularMatrixError(f"solve residual {resid:.3e} too large; matrix ill-conditioned")
    return x[:, 0] if vector else x


def spectral_summary(a):
    """Spectral quantities of ``a`` used by the bounds."""
    a = as_matrix(a, square=True)
    lo, hi = sym_extreme_eigenvalues(a + a.T)
    return SpectralSummary(
        sym_min_eig=lo,
        sym_max_eig=hi,
        min_real_part=min_real_part(a),
        spectral_norm=spectral_norm(a),
    )
