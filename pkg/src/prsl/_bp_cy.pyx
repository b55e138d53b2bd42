# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled flooding loop for sum-product and max-product.

Same contract and array layout as ``_bp_py.run_bp``. The sweep runs without
the GIL so separate graphs can be processed from several threads.
"""
import numpy as np

from libc.math cimport fabs

cdef double FLOOR = 1e-300


cdef inline bint _finish(double[::1] buf, Py_ssize_t card) noexcept nogil:
    cdef Py_ssize_t m
    cdef double total = 0.0
    cdef double raw = 0.0
    for m in range(card):
        raw += buf[m]
    for m in range(card):
        if not buf[m] >= FLOOR:
            buf[m] = FLOOR
        total += buf[m]
    for m in range(card):
        buf[m] /= total
    return not raw >= FLOOR


cdef inline double _damp(double[:, ::1] m_fv, Py_ssize_t t, double[::1] buf,
                         Py_ssize_t card, double damping) noexcept nogil:
    cdef Py_ssize_t m
    cdef double new, change, delta = 0.0
    for m in range(card):
        new = (1.0 - damping) * buf[m] + damping * m_fv[t, m]
        change = fabs(new - m_fv[t, m])
        if change > delta:
            delta = change
        m_fv[t, m] = new
    return delta


def run_bp(Py_ssize_t[::1] card, double[:, ::1] psi, signed char[::1] fac_kind,
           signed char[::1] fac_evid, double[::1] fac_const, Py_ssize_t[::1] fac_ptr,
           Py_ssize_t[::1] edge_var, double[:, ::1] edge_q, Py_ssize_t[::1] fac_tab_ptr,
           double[::1] tables, Py_ssize_t[::1] var_ptr, Py_ssize_t[::1] var_edges,
           bint max_mode, double damping, double tol, Py_ssize_t max_iters):
    cdef Py_ssize_t n_vars = psi.shape[0]
    cdef Py_ssize_t width = psi.shape[1]
    cdef Py_ssize_t n_fac = fac_kind.shape[0]
    cdef Py_ssize_t n_edges = edge_var.shape[0]
    cdef Py_ssize_t max_scope = 1
    cdef Py_ssize_t f, e, e2, t, v, m, i, lo, hi, c, it = 0, flat, stride, ti
    cdef double p, val, w, delta, total
    cdef bint collapsed = False, converged = False, done, enumerate_factor

    for f in range(n_fac):
        if fac_ptr[f + 1] - fac_ptr[f] > max_scope:
            max_scope = fac_ptr[f + 1] - fac_ptr[f]

    m_fv_arr = np.zeros((n_edges, width))
    m_vf_arr = np.zeros((n_edges, width))
    cdef double[:, ::1] m_fv = m_fv_arr
    cdef double[:, ::1] m_vf = m_vf_arr
    cdef double[::1] buf = np.zeros(width)
    cdef double[::1] s = np.zeros(max(n_edges, 1))
    cdef Py_ssize_t[::1] assign = np.zeros(max_scope, dtype=np.intp)
    beliefs_arr = np.zeros((n_vars, width))
    cdef double[:, ::1] beliefs = beliefs_arr

    for e in range(n_edges):
        c = card[edge_var[e]]
        for m in range(c):
            m_fv[e, m] = 1.0 / c

    with nogil:
        for it in range(1, max_iters + 1):
            # variable -> factor
            for v in range(n_vars):
                c = card[v]
                for i in range(var_ptr[v], var_ptr[v + 1]):
                    e = var_edges[i]
                    for m in range(c):
                        buf[m] = psi[v, m]
                    for ti in range(var_ptr[v], var_ptr[v + 1]):
                        e2 = var_edges[ti]
                        if e2 != e:
                            for m in range(c):
                                buf[m] *= m_fv[e2, m]
                    if _finish(buf, c):
                        collapsed = True
                    for m in range(c):
                        m_vf[e, m] = buf[m]

            # factor -> variable
            delta = 0.0
            for f in range(n_fac):
                lo = fac_ptr[f]
                hi = fac_ptr[f + 1]
                enumerate_factor = fac_kind[f] == 1 or (max_mode and fac_evid[f] == 1)
                if not enumerate_factor:
                    for e in range(lo, hi):
                        c = card[edge_var[e]]
                        total = 0.0
                        for m in range(c):
                            val = m_vf[e, m] * edge_q[e, m]
                            if max_mode:
                                if val > total:
                                    total = val
                            else:
                                total += val
                        s[e] = total
                    for t in range(lo, hi):
                        p = fac_const[f]
                        for e in range(lo, hi):
                            if e != t:
                                p *= s[e]
                        c = card[edge_var[t]]
                        for m in range(c):
                            if fac_evid[f] == 1:
                                buf[m] = 1.0 - edge_q[t, m] * p
                            else:
                                buf[m] = edge_q[t, m] * p
                        if _finish(buf, c):
                            collapsed = True
                        w = _damp(m_fv, t, buf, c, damping)
                        if w > delta:
                            delta = w
                    continue

                for t in range(lo, hi):
                    c = card[edge_var[t]]
                    for m in range(c):
                        buf[m] = 0.0
                    for i in range(hi - lo):
                        assign[i] = 0
                    done = False
                    while not done:
                        if fac_kind[f] == 1:
                            flat = 0
                            for i in range(hi - lo):
                                flat = flat * card[edge_var[lo + i]] + assign[i]
                            val = tables[fac_tab_ptr[f] + flat]
                        else:
                            p = fac_const[f]
                            for i in range(hi - lo):
                                p *= edge_q[lo + i, assign[i]]
                            val = 1.0 - p if fac_evid[f] == 1 else p
                        w = val
                        for i in range(hi - lo):
                            if lo + i != t:
                                w *= m_vf[lo + i, assign[i]]
                        m = assign[t - lo]
                        if max_mode:
                            if w > buf[m]:
                                buf[m] = w
                        else:
                            buf[m] += w
                        # odometer over the scope, last axis fastest
                        i = hi - lo - 1
                        while True:
                            if i < 0:
                                done = True
                                break
                            assign[i] += 1
                            if assign[i] < card[edge_var[lo + i]]:
                                break
                            assign[i] = 0
                            i -= 1
                    if _finish(buf, c):
                        collapsed = True
                    w = _damp(m_fv, t, buf, c, damping)
                    if w > delta:
                        delta = w
            if delta < tol:
                converged = True
                break

        for v in range(n_vars):
            c = card[v]
            for m in range(c):
                buf[m] = psi[v, m]
            for i in range(var_ptr[v], var_ptr[v + 1]):
                e = var_edges[i]
                for m in range(c):
                    buf[m] *= m_fv[e, m]
            if _finish(buf, c):
                collapsed = True
            for m in range(c):
                beliefs[v, m] = buf[m]

    return beliefs_arr, it, converged, collapsed
