"""Pure-numpy pair kernels; fallback for the compiled ``_ckernels`` module.

Every function takes the per-point outputs ``E`` (N, d), pair index arrays
``I``/``Jx`` and per-pair weights ``w``. ``arccos`` selects the loss whose
normalization is kept inside the loss (``E`` holds raw outputs); otherwise
``E`` holds unit embeddings and the loss is the half squared distance.
"""

import numpy as np

CHUNK = 8192


def _active(I, Jx, w):
    I = np.asarray(I, dtype=np.int64)
    Jx = np.asarray(Jx, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    keep = w != 0.0
    return I[keep], Jx[keep], w[keep]


def _unit(E):
    r = np.linalg.norm(E, axis=1)
    return E / r[:, None], r


def pair_loss(E, I, Jx, w, arccos):
    E = np.ascontiguousarray(E, dtype=np.float64)
    I, Jx, w = _active(I, Jx, w)
    if arccos:
        A, _ = _unit(E)
        vals = 1.0 - np.einsum("bk,bk->b", A[I], A[Jx])
    else:
        diff = E[I] - E[Jx]
        vals = 0.5 * np.einsum("bk,bk->b", diff, diff)
    return float(np.dot(w, vals))


def pair_output_grad(E, I, Jx, w, arccos):
    E = np.ascontiguousarray(E, dtype=np.float64)
    I, Jx, w = _active(I, Jx, w)
    G = np.zeros_like(E)
    if arccos:
        A, r = _unit(E)
        a, b = A[I], A[Jx]
        c = np.einsum("bk,bk->b", a, b)[:, None]
        gi = -w[:, None] * (b - c * a) / r[I][:, None]
        gj = -w[:, None] * (a - c * b) / r[Jx][:, None]
    else:
        gi = w[:, None] * (E[I] - E[Jx])
        gj = -gi
    np.add.at(G, I, gi)
    np.add.at(G, Jx, gj)
    return G


def _arccos_blocks(A, r, I, Jx):
    """Unit-weight output Hessian blocks (H11, H12, H22) for each pair."""
    a, b = A[I], A[Jx]
    ri, rj = r[I], r[Jx]
    c = np.einsum("bk,bk->b", a, b)
    d = A.shape[1]
    eye = np.eye(d)[None]
    ab = a[:, :, None] * b[:, None, :]
    sym = ab + ab.transpose(0, 2, 1)
    aa = a[:, :, None] * a[:, None, :]
    bb = b[:, :, None] * b[:, None, :]
    H11 = (c[:, None, None] * eye + sym - 3.0 * c[:, None, None] * aa) / (ri**2)[:, None, None]
    H22 = (c[:, None, None] * eye + sym - 3.0 * c[:, None, None] * bb) / (rj**2)[:, None, None]
    H12 = (-eye + aa + bb - c[:, None, None] * ab) / (ri * rj)[:, None, None]
    return H11, H12, H22


def pair_ggn_diag(E, J, I, Jx, w, arccos, cross):
    E = np.ascontiguousarray(E, dtype=np.float64)
    J = np.ascontiguousarray(J, dtype=np.float64)
    I, Jx, w = _active(I, Jx, w)
    out = np.zeros(J.shape[2])
    if arccos:
        A, r = _unit(E)
    for s in range(0, I.shape[0], CHUNK):
        i, j, ww = I[s : s + CHUNK], Jx[s : s + CHUNK], w[s : s + CHUNK]
        Ji, Jj = J[i], J[j]
        if arccos:
            H11, H12, H22 = _arccos_blocks(A, r, i, j)
            acc = np.einsum("bkp,bkl,blp->bp", Ji, H11, Ji, optimize=True)
            acc += np.einsum("bkp,bkl,blp->bp", Jj, H22, Jj, optimize=True)
            if cross:
                acc += 2.0 * np.einsum("bkp,bkl,blp->bp", Ji, H12, Jj, optimize=True)
        elif cross:
            diff = Ji - Jj
            acc = np.einsum("bkp,bkp->bp", diff, diff)
        else:
            acc = np.einsum("bkp,bkp->bp", Ji, Ji) + np.einsum("bkp,bkp->bp", Jj, Jj)
        out += ww @ acc
    return out
