"""Pure-Python/numpy flooding loop; the fallback when the extension is absent.

Array layout is shared with ``_bp_cy.pyx`` (see ``loopy.FactorGraph``).
"""
import numpy as np

FLOOR = 1e-300
NOISY_OR = 0
TABLE = 1


def _finish(buf, card):
    """Floor, then normalize; report total collapse."""
    raw_total = buf[:card].sum()
    collapsed = not raw_total >= FLOOR
    buf[:card] = np.maximum(buf[:card], FLOOR)
    buf[:card] /= buf[:card].sum()
    return collapsed


def run_bp(card, psi, fac_kind, fac_evid, fac_const, fac_ptr, edge_var, edge_q,
           fac_tab_ptr, tables, var_ptr, var_edges, max_mode, damping, tol, max_iters):
    n_vars, width = psi.shape
    n_fac = fac_kind.shape[0]
    n_edges = edge_var.shape[0]
    ecard = card[edge_var]

    m_fv = np.zeros((n_edges, width))
    m_vf = np.zeros((n_edges, width))
    for e in range(n_edges):
        m_fv[e, : ecard[e]] = 1.0 / ecard[e]

    dense = {}
    for f in range(n_fac):
        lo, hi = fac_ptr[f], fac_ptr[f + 1]
        shape = tuple(int(c) for c in ecard[lo:hi])
        if fac_kind[f] == TABLE:
            size = int(np.prod(shape)) if shape else 1
            dense[f] = tables[fac_tab_ptr[f]: fac_tab_ptr[f] + size].reshape(shape)
        elif max_mode and fac_evid[f] == 1:
            p_off = np.asarray(fac_const[f])
            for e in range(lo, hi):
                p_off = np.multiply.outer(p_off, edge_q[e, : ecard[e]])
            dense[f] = 1.0 - p_off

    reduce = np.max if max_mode else np.sum
    collapsed = False
    converged = False
    it = 0
    buf = np.empty(width)
    for it in range(1, max_iters + 1):
        for v in range(n_vars):
            c = card[v]
            edges = var_edges[var_ptr[v]: var_ptr[v + 1]]
            for e in edges:
                buf[:] = 0.0
                buf[:c] = psi[v, :c]
                for e2 in edges:
                    if e2 != e:
                        buf[:c] *= m_fv[e2, :c]
                collapsed |= _finish(buf, c)
                m_vf[e] = buf

        delta = 0.0
        for f in range(n_fac):
            lo, hi = fac_ptr[f], fac_ptr[f + 1]
            if f in dense:
                table = dense[f]
                for t in range(lo, hi):
                    weighted = table
                    for e in range(lo, hi):
                        if e == t:
                            continue
                        shape = [1] * (hi - lo)
                        shape[e - lo] = ecard[e]
                        weighted = weighted * m_vf[e, : ecard[e]].reshape(shape)
                    axes = tuple(i for i in range(hi - lo) if i != t - lo)
                    out = reduce(weighted, axis=axes) if axes else weighted
                    buf[:] = 0.0
                    buf[: ecard[t]] = out
                    collapsed |= _finish(buf, ecard[t])
                    new = (1.0 - damping) * buf + damping * m_fv[t]
                    delta = max(delta, float(np.max(np.abs(new - m_fv[t]))))
                    m_fv[t] = new
            else:
                s = np.array([reduce(m_vf[e, : ecard[e]] * edge_q[e, : ecard[e]]) for e in range(lo, hi)])
                for t in range(lo, hi):
                    p = fac_const[f]
                    for i, e in enumerate(range(lo, hi)):
                        if e != t:
                            p *= s[i]
                    q = edge_q[t, : ecard[t]]
                    buf[:] = 0.0
                    buf[: ecard[t]] = 1.0 - q * p if fac_evid[f] == 1 else q * p
                    collapsed |= _finish(buf, ecard[t])
                    new = (1.0 - damping) * buf + damping * m_fv[t]
                    delta = max(delta, float(np.max(np.abs(new - m_fv[t]))))
                    m_fv[t] = new
        if delta < tol:
            converged = True
            break

    beliefs = np.zeros((n_vars, width))
    for v in range(n_vars):
        c = card[v]
        buf[:] = 0.0
        buf[:c] = psi[v, :c]
        for e in var_edges[var_ptr[v]: var_ptr[v + 1]]:
            buf[:c] *= m_fv[e, :c]
        collapsed |= _finish(buf, c)
        beliefs[v] = buf
    return beliefs, it, converged, collapsed
