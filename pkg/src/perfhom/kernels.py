"""Hot loops of the finite-difference solver, in two interchangeable flavours.

Each public kernel has a numba version (``*_nb``) and a vectorised numpy
version (``*_np``); the module-level names bind to one of them according to
:data:`perfhom._accel.USE_NUMBA`. Both versions implement the same
arithmetic, but they are not bitwise identical to each other: the numba
loops are compiled with reassociation enabled (vectorised partial sums),
the numpy path uses pairwise summation. Within one backend every reduction
has a fixed order, so results are reproducible run to run.

Operator convention: for a 3-D node array ``x`` and a boolean-like mask
``free`` (nonzero = unknown), the operator is

    (A x)_i = (2 (cx + cy + cz) + shift_i) x_i - sum_axes c_a (x_{i+e_a} + x_{i-e_a})

at free nodes, with non-free neighbours read as 0, and ``(A x)_i = 0`` at
non-free nodes. ``c_a = 1 / h_a**2``. Nodes on the array faces must not be
free; callers guarantee this.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit, njit_fast

__all__ = ["apply_operator", "cg", "apply_operator_nb", "apply_operator_np", "cg_nb", "cg_np"]


# --------------------------------------------------------------------------
# numba


@njit
def apply_operator_nb(x, free, shift, cx, cy, cz, out):
    nx, ny, nz = x.shape
    d0 = 2.0 * (cx + cy + cz)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if free[i, j, k] == 0:
                    out[i, j, k] = 0.0
                    continue
                acc = (d0 + shift[i, j, k]) * x[i, j, k]
                if free[i - 1, j, k]:
                    acc -= cx * x[i - 1, j, k]
                if free[i + 1, j, k]:
                    acc -= cx * x[i + 1, j, k]
                if free[i, j - 1, k]:
                    acc -= cy * x[i, j - 1, k]
                if free[i, j + 1, k]:
                    acc -= cy * x[i, j + 1, k]
                if free[i, j, k - 1]:
                    acc -= cz * x[i, j, k - 1]
                if free[i, j, k + 1]:
                    acc -= cz * x[i, j, k + 1]
                out[i, j, k] = acc


@njit
def _dot_nb(a, b):
    s = 0.0
    for i in range(a.size):
        s += a[i] * b[i]
    return s


@njit_fast
def _matvec_dot_nb(p, freef, shift, cx, cy, cz, ap):
    # p vanishes off the free set, so neighbours need no mask test
    nx, ny, nz = p.shape
    d0 = 2.0 * (cx + cy + cz)
    s = 0.0
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                v = ((d0 + shift[i, j, k]) * p[i, j, k]
                     - cx * (p[i - 1, j, k] + p[i + 1, j, k])
                     - cy * (p[i, j - 1, k] + p[i, j + 1, k])
                     - cz * (p[i, j, k - 1] + p[i, j, k + 1])) * freef[i, j, k]
                ap[i, j, k] = v
                s += v * p[i, j, k]
    return s


@njit_fast
def _update_nb(x, r, p, ap, alpha):
    rr = 0.0
    for i in range(x.size):
        x[i] += alpha * p[i]
        r[i] -= alpha * ap[i]
        rr += r[i] * r[i]
    return rr


@njit_fast
def _precondition_nb(r, inv_diag, z, jacobi):
    rz = 0.0
    for i in range(r.size):
        z[i] = r[i] * inv_diag[i] if jacobi else r[i]
        rz += r[i] * z[i]
    return rz


@njit_fast
def _direction_nb(p, z, beta):
    for i in range(p.size):
        p[i] = z[i] + beta * p[i]


@njit
def cg_nb(b, x, free, shift, cx, cy, cz, tol, max_iter, jacobi):
    """Conjugate gradients from a zero initial guess; writes into ``x``.

    ``b`` must vanish off the free set. Returns ``(iterations,
    relative_residual)``; on exit through the convergence test the
    residual is recomputed from scratch, not taken from the recursion.
    """
    shape = b.shape
    bf = b.reshape(-1)
    xf = x.reshape(-1)
    n = bf.size
    for i in range(n):
        xf[i] = 0.0
    bnorm = math.sqrt(_dot_nb(bf, bf))
    if bnorm == 0.0:
        return 0, 0.0
    freef3 = np.empty(shape)
    ff = freef3.reshape(-1)
    fr = free.reshape(-1)
    shf = shift.reshape(-1)
    d0 = 2.0 * (cx + cy + cz)
    inv_diag = np.empty(n)
    for i in range(n):
        ff[i] = 1.0 if fr[i] != 0 else 0.0
        inv_diag[i] = 1.0 / (d0 + shf[i])
    r = bf.copy()
    z = np.empty(n) if jacobi else r
    rz = _precondition_nb(r, inv_diag, z, jacobi) if jacobi else _dot_nb(r, r)
    p = z.copy()
    # faces are never written by the matvec, so they must start at zero
    ap = np.zeros(n)
    ap3 = ap.reshape(shape)
    p3 = p.reshape(shape)
    rr = _dot_nb(r, r)
    it = 0
    while it < max_iter:
        pap = _matvec_dot_nb(p3, freef3, shift, cx, cy, cz, ap3)
        if pap <= 0.0:
            break
        alpha = rz / pap
        rr = _update_nb(xf, r, p, ap, alpha)
        it += 1
        if math.sqrt(rr) <= tol * bnorm:
            _matvec_dot_nb(x, freef3, shift, cx, cy, cz, ap3)
            rr = 0.0
            for i in range(n):
                r[i] = bf[i] - ap[i]
                rr += r[i] * r[i]
            if math.sqrt(rr) <= tol * bnorm:
                break
            rz = _precondition_nb(r, inv_diag, z, jacobi) if jacobi else rr
            for i in range(n):
                p[i] = z[i]
            continue
        rz_new = _precondition_nb(r, inv_diag, z, jacobi) if jacobi else rr
        beta = rz_new / rz
        rz = rz_new
        _direction_nb(p, z, beta)
    return it, math.sqrt(rr) / bnorm


# --------------------------------------------------------------------------
# numpy


def apply_operator_np(x, free, shift, cx, cy, cz, out):
    fm = free != 0
    xm = np.where(fm, x, 0.0)
    res = (2.0 * (cx + cy + cz) + shift) * xm
    res[1:, :, :] -= cx * xm[:-1, :, :]
    res[:-1, :, :] -= cx * xm[1:, :, :]
    res[:, 1:, :] -= cy * xm[:, :-1, :]
    res[:, :-1, :] -= cy * xm[:, 1:, :]
    res[:, :, 1:] -= cz * xm[:, :, :-1]
    res[:, :, :-1] -= cz * xm[:, :, 1:]
    out[...] = np.where(fm, res, 0.0)


def _dot_np(a, b):
    return float(np.add.reduce((a * b).reshape(-1)))


def cg_np(b, x, free, shift, cx, cy, cz, tol, max_iter, jacobi):
    x[...] = 0.0
    bnorm = math.sqrt(_dot_np(b, b))
    if bnorm == 0.0:
        return 0, 0.0
    inv_diag = 1.0 / (2.0 * (cx + cy + cz) + shift) if jacobi else None

    def precondition(v):
        return v * inv_diag if jacobi else v.copy()

    r = b.copy()
    z = precondition(r)
    p = z.copy()
    ap = np.empty_like(b)
    rz = _dot_np(r, z)
    rr = _dot_np(r, r)
    it = 0
    while it < max_iter:
        apply_operator_np(p, free, shift, cx, cy, cz, ap)
        pap = _dot_np(p, ap)
        if pap <= 0.0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rr = _dot_np(r, r)
        it += 1
        if math.sqrt(rr) <= tol * bnorm:
            apply_operator_np(x, free, shift, cx, cy, cz, ap)
            r = b - ap
            rr = _dot_np(r, r)
            if math.sqrt(rr) <= tol * bnorm:
                break
            z = precondition(r)
            p = z.copy()
            rz = _dot_np(r, z)
            continue
        z = precondition(r)
        rz_new = _dot_np(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return it, math.sqrt(rr) / bnorm


if USE_NUMBA:
    apply_operator = apply_operator_nb
    cg = cg_nb
else:
    apply_operator = apply_operator_np
    cg = cg_np
