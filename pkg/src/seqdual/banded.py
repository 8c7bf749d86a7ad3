"""Banded direct solves for KKT systems assembled in node-interleaved order."""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.linalg.lapack
import scipy.sparse as sp


class KktFactorizationError(np.linalg.LinAlgError):
    pass


def block_triplets(blocks: np.ndarray, row_offsets, col_offsets):
    """COO triplets placing ``blocks[i]`` (shape ``(m, p, q)``) at the given offsets."""
    blocks = np.asarray(blocks, float)
    if blocks.ndim == 2:
        blocks = blocks[:, :, None]
    m, p, q = blocks.shape
    rr = np.asarray(row_offsets)[:, None, None] + np.arange(p)[None, :, None]
    cc = np.asarray(col_offsets)[:, None, None] + np.arange(q)[None, None, :]
    rr, cc = np.broadcast_to(rr, blocks.shape), np.broadcast_to(cc, blocks.shape)
    keep = blocks != 0
    return rr[keep], cc[keep], blocks[keep]


def assemble(triplets, shape) -> sp.csr_matrix:
    rows = np.concatenate([t[0] for t in triplets]) if triplets else np.zeros(0, int)
    cols = np.concatenate([t[1] for t in triplets]) if triplets else np.zeros(0, int)
    vals = np.concatenate([t[2] for t in triplets]) if triplets else np.zeros(0)
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


def order_from_keys(keys: np.ndarray) -> np.ndarray:
    return np.argsort(keys, kind="stable")


def solve_banded_sparse(K: sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """Solve ``K x = rhs`` by banded LU; ``K`` must already be in banded order."""
    K = sp.coo_matrix(K)
    n = K.shape[0]
    d = K.row - K.col
    lower = int(max(d.max(initial=0), 0))
    upper = int(max((-d).max(initial=0), 0))
    ab = np.zeros((lower + upper + 1, n))
    np.add.at(ab, (upper + K.row - K.col, K.col), K.data)
    try:
        return scipy.linalg.solve_banded((lower, upper), ab, rhs, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise KktFactorizationError(f"KKT factorization failure: {exc}") from None


def solve_kkt(H: sp.spmatrix, G: sp.spmatrix, rhs_x: np.ndarray, rhs_y: np.ndarray,
              var_keys: np.ndarray, row_keys: np.ndarray,
              dual_reg: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``[[H, G^T], [G, -dual_reg I]] [dx; dy] = [rhs_x; rhs_y]``.

    Unknowns are interleaved by ``var_keys`` / ``row_keys`` (positions along
    the time axis) so the permuted matrix has a narrow band.
    """
    nx, ny = H.shape[0], G.shape[0]
    lower_right = -dual_reg * sp.identity(ny) if dual_reg else None
    K = sp.bmat([[H, G.T], [G, lower_right]], format="csr")
    perm = order_from_keys(np.concatenate([var_keys, row_keys]))
    Kp = K[perm][:, perm]
    rhs = np.concatenate([rhs_x, rhs_y])[perm]
    sol_p = solve_banded_sparse(Kp, rhs)
    sol = np.empty_like(sol_p)
    sol[perm] = sol_p
    if not np.all(np.isfinite(sol)):
        raise KktFactorizationError("KKT factorization failure: non-finite solution")
    return sol[:nx], sol[nx:]


def affine_recursion(M: np.ndarray, b: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """Run ``x_{i+1} = M_i x_i + b_i`` from ``x0`` as one banded triangular solve.

    Parameters
    ----------
    M : ndarray, shape (N, n, n)
    b : ndarray, shape (N, n)
    x0 : ndarray, shape (n,)

    Returns
    -------
    ndarray, shape (N + 1, n)
        Non-finite entries are left in place for the caller to report.
    """
    M = np.asarray(M, float)
    N, n, _ = M.shape
    size = n * (N + 1)
    kd = 2 * n - 1
    ab = np.zeros((kd + 1, size))
    ab[0] = 1.0
    # entry (row=(i+1)n+c, col=in+a) = -M[i,c,a] sits on sub-diagonal n+c-a
    cols = n * np.arange(N)[:, None, None] + np.arange(n)[None, None, :]
    diag = n + np.arange(n)[:, None] - np.arange(n)[None, :]
    diag = np.broadcast_to(diag, (N, n, n))
    cols = np.broadcast_to(cols, (N, n, n))
    ab[diag.ravel(), cols.ravel()] = -M.ravel()
    rhs = np.concatenate([np.asarray(x0, float), np.asarray(b, float).ravel()])
    with np.errstate(all="ignore"):
        x, info = scipy.linalg.lapack.dtbtrs(ab, rhs[:, None], uplo="L")
    if info != 0:
        raise KktFactorizationError(f"triangular recursion failed (info={info})")
    return x[:, 0].reshape(N + 1, n)
