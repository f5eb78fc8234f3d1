# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batch kernels.  Same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, log1p

cnp.import_array()

DPO, REF_FREE, HYPO_HARD, HYPO_SOFT = 0, 1, 2, 3


cdef inline double _softplus(double x) nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double z
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


def objective_terms(int code, dtheta, dref, double beta, double gamma, alpha, double h):
    if code < 0 or code > 3:
        raise ValueError(f"unknown objective code {code}")
    cdef const double[::1] dt = np.ascontiguousarray(dtheta, dtype=np.float64)
    cdef const double[::1] dr = np.ascontiguousarray(dref, dtype=np.float64)
    cdef Py_ssize_t n = dt.shape[0], i
    cdef double a = 1.0 if alpha is None else <double>alpha
    cdef double e, arg
    loss_arr = np.empty(n, dtype=np.float64)
    weight_arr = np.empty(n, dtype=np.float64)
    eff_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] loss = loss_arr
    cdef double[::1] weight = weight_arr
    cdef double[::1] eff = eff_arr
    with nogil:
        for i in range(n):
            if code == 0:
                e = dr[i]
            elif code == 1:
                e = 0.0
            elif code == 2:
                e = dr[i] if dr[i] > gamma else gamma
            else:
                e = dr[i] if dr[i] > gamma else gamma
                e = e + log1p(exp(-a * fabs(dr[i] - gamma))) / a
            arg = beta * (dt[i] - e - h)
            eff[i] = e
            loss[i] = _softplus(-arg)
            weight[i] = _sigmoid(-arg)
    return loss_arr, weight_arr, eff_arr


def tabular_margins(const double[:, ::1] logits, const cnp.int64_t[::1] prompts,
                    const cnp.int64_t[::1] chosen, const cnp.int64_t[::1] rejected):
    cdef Py_ssize_t n = prompts.shape[0], i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for i in range(n):
            out[i] = logits[prompts[i], chosen[i]] - logits[prompts[i], rejected[i]]
    return out_arr


def scatter_pairs(double[:, ::1] grad, const cnp.int64_t[::1] prompts,
                  const cnp.int64_t[::1] chosen, const cnp.int64_t[::1] rejected,
                  const double[::1] coef):
    cdef Py_ssize_t n = prompts.shape[0], i
    with nogil:
        for i in range(n):
            grad[prompts[i], chosen[i]] += coef[i]
            grad[prompts[i], rejected[i]] -= coef[i]
