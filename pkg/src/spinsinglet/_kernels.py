"""Compiled RK4 kernels for the stochastic engine.

The generator is stored as one CSR matrix whose nonzeros carry a term id;
the time-dependent coefficient of each term is ``scale * f(t)`` with ``f``
one of the sweep-schedule shapes (kind -1 means ``f = 1``).
"""

import math

import numba
import numpy as np

OK = 0
NORM_GROWTH = 1


@numba.njit(cache=True, nogil=True)
def _schedule(kind, q0, xi, tmax, t):
    if kind < 0:
        return 1.0
    if kind == 1:
        return q0 * math.exp(-xi * t)
    if kind == 2:
        return q0 * max(0.0, 1.0 - t / tmax)
    if kind == 3:
        return q0 / (1.0 + xi * t)
    return q0


@numba.njit(cache=True, nogil=True)
def _coefficients(t, scales, kinds, q0, xi, tmax, out):
    for i in range(scales.shape[0]):
        out[i] = scales[i] * _schedule(kinds[i], q0[i], xi[i], tmax[i], t)


@numba.njit(cache=True, nogil=True)
def _deriv(indptr, indices, data, term, coef, x, y):
    n = x.shape[0]
    for r in range(n):
        acc = 0j
        for p in range(indptr[r], indptr[r + 1]):
            acc += coef[term[p]] * data[p] * x[indices[p]]
        y[r] = -1j * acc


@numba.njit(cache=True, nogil=True)
def _norm2(x):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i].real * x[i].real + x[i].imag * x[i].imag
    return s


@numba.njit(cache=True, nogil=True)
def rk4_step(psi, out, t, h, indptr, indices, data, term, scales, kinds, q0, xi, tmax):
    """One RK4 step of size ``h`` from ``psi`` at time ``t`` into ``out``."""
    n = psi.shape[0]
    nt = scales.shape[0]
    c = np.empty(nt, np.complex128)
    k1 = np.empty(n, np.complex128)
    k2 = np.empty(n, np.complex128)
    k3 = np.empty(n, np.complex128)
    k4 = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    _coefficients(t, scales, kinds, q0, xi, tmax, c)
    _deriv(indptr, indices, data, term, c, psi, k1)
    for i in range(n):
        tmp[i] = psi[i] + 0.5 * h * k1[i]
    _coefficients(t + 0.5 * h, scales, kinds, q0, xi, tmax, c)
    _deriv(indptr, indices, data, term, c, tmp, k2)
    for i in range(n):
        tmp[i] = psi[i] + 0.5 * h * k2[i]
    _deriv(indptr, indices, data, term, c, tmp, k3)
    for i in range(n):
        tmp[i] = psi[i] + h * k3[i]
    _coefficients(t + h, scales, kinds, q0, xi, tmax, c)
    _deriv(indptr, indices, data, term, c, tmp, k4)
    for i in range(n):
        out[i] = psi[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@numba.njit(cache=True, nogil=True)
def advance(psi, prev, step0, nsteps, dt, threshold, norms,
            indptr, indices, data, term, scales, kinds, q0, xi, tmax):
    """Fixed-grid RK4 from grid step ``step0`` for up to ``nsteps`` steps.

    Stops after the first step whose squared norm is ``<= threshold``; on
    return ``prev`` holds the state at the start of that step. ``norms``
    (length ``nsteps``) receives the squared norm after each step taken.
    Returns ``(steps_taken, crossed, status)``.
    """
    n = psi.shape[0]
    nt = scales.shape[0]
    c = np.empty(nt, np.complex128)
    k1 = np.empty(n, np.complex128)
    k2 = np.empty(n, np.complex128)
    k3 = np.empty(n, np.complex128)
    k4 = np.empty(n, np.complex128)
    tmp = np.empty(n, np.complex128)
    last = _norm2(psi)
    for s in range(nsteps):
        for i in range(n):
            prev[i] = psi[i]
        t = (step0 + s) * dt
        _coefficients(t, scales, kinds, q0, xi, tmax, c)
        _deriv(indptr, indices, data, term, c, psi, k1)
        for i in range(n):
            tmp[i] = psi[i] + 0.5 * dt * k1[i]
        _coefficients(t + 0.5 * dt, scales, kinds, q0, xi, tmax, c)
        _deriv(indptr, indices, data, term, c, tmp, k2)
        for i in range(n):
            tmp[i] = psi[i] + 0.5 * dt * k2[i]
        _deriv(indptr, indices, data, term, c, tmp, k3)
        for i in range(n):
            tmp[i] = psi[i] + dt * k3[i]
        _coefficients((step0 + s + 1) * dt, scales, kinds, q0, xi, tmax, c)
        _deriv(indptr, indices, data, term, c, tmp, k4)
        for i in range(n):
            psi[i] = psi[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        nrm = _norm2(psi)
        norms[s] = nrm
        if nrm > last * (1.0 + 1e-6):
            return s + 1, False, NORM_GROWTH
        last = nrm
        if nrm <= threshold:
            return s + 1, True, OK
    return nsteps, False, OK
