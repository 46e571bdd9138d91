"""Pure NumPy implementation of the hot training kernels.

These functions operate on *stacked network families*: Q shape-identical
scalar-output networks stored as per-layer arrays of shape (Q, n_out, n_in)
and (Q, n_out).  The compiled extension ``mnolearn._kernels`` implements the
same signatures; ``mnolearn.backend`` picks one at import time.

All arrays are float64 and C-contiguous.
"""

import numpy as np

BACKEND_NAME = "python"


def family_forward(ws, bs, x):
    """Forward pass of Q stacked scalar-output networks on a batch.

    ws[l]: (Q, n_out, n_in), bs[l]: (Q, n_out), x: (B, d_in).
    Returns (out, hs) with out of shape (B, Q) and hs the list of
    post-activation hidden states, each (B, Q, width).
    """
    n_layers = len(ws)
    q = ws[0].shape[0]
    b_sz = x.shape[0]
    h = np.broadcast_to(x[:, None, :], (b_sz, q, x.shape[1]))
    hs = []
    for ell in range(n_layers - 1):
        z = np.einsum("qoi,bqi->bqo", ws[ell], h) + bs[ell][None, :, :]
        h = np.maximum(z, 0.0)
        hs.append(h)
    out = np.einsum("qi,bqi->bq", ws[-1][:, 0, :], h) + bs[-1][None, :, 0]
    return out, hs


def family_backprop(ws, bs, x, hs, up):
    """Accumulate gradients of sum_b up[b, q] * out[b, q] over the batch.

    Arguments mirror family_forward; hs is its cached hidden-state list.
    Returns (dws, dbs) shaped like (ws, bs).  The ReLU derivative at 0 is 0.
    """
    n_layers = len(ws)
    q = ws[0].shape[0]
    b_sz = x.shape[0]
    dws = [np.zeros_like(w) for w in ws]
    dbs = [np.zeros_like(b) for b in bs]
    h_last = hs[-1] if n_layers > 1 else np.broadcast_to(
        x[:, None, :], (b_sz, q, x.shape[1])
    )
    dws[-1][:, 0, :] = np.einsum("bq,bqi->qi", up, h_last)
    dbs[-1][:, 0] = up.sum(axis=0)
    delta = up[:, :, None] * ws[-1][None, :, 0, :]
    for ell in range(n_layers - 2, -1, -1):
        dz = delta * (hs[ell] > 0.0)
        h_in = hs[ell - 1] if ell > 0 else np.broadcast_to(
            x[:, None, :], (b_sz, q, x.shape[1])
        )
        dws[ell] = np.einsum("bqo,bqi->qoi", dz, h_in)
        dbs[ell] = dz.sum(axis=0)
        delta = np.einsum("qoi,bqo->bqi", ws[ell], dz)
    return dws, dbs


def mno_contract(theta, lv, bv, tv):
    """s[b] = sum_{p,k,n} theta[p,k,n] lv[b,p] bv[b,k] tv[b,n]."""
    return np.einsum("pkn,bp,bk,bn->b", theta, lv, bv, tv)


def mno_theta_grad(g, lv, bv, tv):
    """dtheta[p,k,n] = sum_b g[b] lv[b,p] bv[b,k] tv[b,n]."""
    return np.einsum("b,bp,bk,bn->pkn", g, lv, bv, tv)


def mno_upstreams(theta, g, lv, bv, tv):
    """Upstream coefficients for the three subnetwork families.

    ul[b,p] = g[b] * sum_{k,n} theta[p,k,n] bv[b,k] tv[b,n], and likewise
    for ub and ut with the other two roles.
    """
    ul = np.einsum("b,pkn,bk,bn->bp", g, theta, bv, tv)
    ub = np.einsum("b,pkn,bp,bn->bk", g, theta, lv, tv)
    ut = np.einsum("b,pkn,bp,bk->bn", g, theta, lv, bv)
    return ul, ub, ut
