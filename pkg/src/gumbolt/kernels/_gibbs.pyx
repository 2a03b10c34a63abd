# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops for block-Gibbs and tempered-ladder sampling.

Mirrors ``gumbolt.kernels.reference`` function for function; see that module
for the semantics and the uniform-consumption contract.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


def gibbs_sweeps(
    double[::1] a,
    double[::1] b,
    double[:, ::1] w,
    cnp.uint8_t[:, ::1] z1,
    cnp.uint8_t[:, ::1] z2,
    double[:, :, ::1] u1,
    double[:, :, ::1] u2,
):
    cdef Py_ssize_t n_sweeps = u1.shape[0]
    cdef Py_ssize_t n_chains = z1.shape[0]
    cdef Py_ssize_t n1 = z1.shape[1]
    cdef Py_ssize_t n2 = z2.shape[1]
    cdef Py_ssize_t s, c, i, j
    cdef double logit

    with nogil:
        for s in range(n_sweeps):
            for c in range(n_chains):
                for j in range(n2):
                    logit = b[j]
                    for i in range(n1):
                        if z1[c, i]:
                            logit += w[j, i]
                    z2[c, j] = u2[s, c, j] < _sigmoid(logit)
                for i in range(n1):
                    logit = a[i]
                    for j in range(n2):
                        if z2[c, j]:
                            logit += w[j, i]
                    z1[c, i] = u1[s, c, i] < _sigmoid(logit)


def tempered_sweeps(
    double[::1] a,
    double[::1] b,
    double[:, ::1] w,
    double[::1] betas,
    cnp.uint8_t[:, :, ::1] z1,
    cnp.uint8_t[:, :, ::1] z2,
    double[:, :, :, ::1] u1,
    double[:, :, :, ::1] u2,
    u_swap,
    Py_ssize_t parity0,
    energy_out,
    long long[::1] attempted,
    long long[::1] accepted,
):
    cdef Py_ssize_t n_sweeps = u1.shape[0]
    cdef Py_ssize_t n_betas = betas.shape[0]
    cdef Py_ssize_t n_chains = z1.shape[1]
    cdef Py_ssize_t n1 = z1.shape[2]
    cdef Py_ssize_t n2 = z2.shape[2]
    cdef Py_ssize_t s, t, c, i, j, k
    cdef double logit, beta, e, delta
    cdef cnp.uint8_t tmp

    cdef bint do_swap = u_swap is not None
    cdef bint record = energy_out is not None
    cdef double[:, :, ::1] uswap_mv
    cdef double[:, :, ::1] eout_mv
    if do_swap:
        uswap_mv = u_swap
    else:
        uswap_mv = np.empty((0, 0, 0), dtype=np.float64)
    if record:
        eout_mv = energy_out
    else:
        eout_mv = np.empty((0, 0, 0), dtype=np.float64)

    energies_arr = np.empty((n_betas, n_chains), dtype=np.float64)
    cdef double[:, ::1] energies = energies_arr

    with nogil:
        for s in range(n_sweeps):
            for t in range(n_betas):
                beta = betas[t]
                for c in range(n_chains):
                    for j in range(n2):
                        logit = b[j]
                        for i in range(n1):
                            if z1[t, c, i]:
                                logit += w[j, i]
                        z2[t, c, j] = u2[s, t, c, j] < _sigmoid(logit * beta)
                    for i in range(n1):
                        logit = a[i]
                        for j in range(n2):
                            if z2[t, c, j]:
                                logit += w[j, i]
                        z1[t, c, i] = u1[s, t, c, i] < _sigmoid(logit * beta)
            for t in range(n_betas):
                for c in range(n_chains):
                    e = 0.0
                    for i in range(n1):
                        if z1[t, c, i]:
                            e += a[i]
                    for j in range(n2):
                        if z2[t, c, j]:
                            e += b[j]
                            for i in range(n1):
                                if z1[t, c, i]:
                                    e += w[j, i]
                    energies[t, c] = -e
            if do_swap:
                t = (parity0 + s) % 2
                while t < n_betas - 1:
                    attempted[t] += n_chains
                    for c in range(n_chains):
                        delta = (betas[t] - betas[t + 1]) * (energies[t, c] - energies[t + 1, c])
                        if uswap_mv[s, t, c] < exp(delta):
                            accepted[t] += 1
                            for i in range(n1):
                                tmp = z1[t, c, i]
                                z1[t, c, i] = z1[t + 1, c, i]
                                z1[t + 1, c, i] = tmp
                            for j in range(n2):
                                tmp = z2[t, c, j]
                                z2[t, c, j] = z2[t + 1, c, j]
                                z2[t + 1, c, j] = tmp
                            e = energies[t, c]
                            energies[t, c] = energies[t + 1, c]
                            energies[t + 1, c] = e
                    t += 2
            if record:
                for t in range(n_betas):
                    for c in range(n_chains):
                        eout_mv[s, t, c] = energies[t, c]
