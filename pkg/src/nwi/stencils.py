"""Second-order central difference kernels on the collocated grid.

``grad`` uses central differences inside and one-sided first-order differences on
the border; ``laplacian`` is the 5-point stencil closed with a zero-normal-derivative
mirror (ghost value equals the border value), which makes it self-adjoint.

Each kernel has a sparse-matrix twin acting on ``field.ravel()`` (C order); the
adjoint pass uses the transposes of these matrices.
"""

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import GridTooSmall, ShapeMismatch


def _check(field):
    if field.ndim != 2 or field.shape[0] < 3 or field.shape[1] < 3:
        raise GridTooSmall(f"stencils need a 2-D field of at least 3x3, got {field.shape}")


def _diff_axis(f, axis, dx):
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dx)
    out[0] = (f[1] - f[0]) / dx
    out[-1] = (f[-1] - f[-2]) / dx
    return np.moveaxis(out, 0, axis)


def grad(field, dx):
    """Return ``(d/dx, d/dz)`` of a 2-D map."""
    field = np.asarray(field, dtype=float)
    _check(field)
    return _diff_axis(field, 0, dx), _diff_axis(field, 1, dx)


def laplacian(field, dx):
    field = np.asarray(field, dtype=float)
    _check(field)
    p = np.pad(field, 1, mode="edge")
    return (p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * field) / (dx * dx)


def density_coupling(invq_grad, u_grad):
    """Dot product of two gradient fields, cell by cell."""
    gx, gz = invq_grad
    ux, uz = u_grad
    if not (gx.shape == gz.shape == ux.shape == uz.shape):
        raise ShapeMismatch("gradient components must share one shape")
    return gx * ux + gz * uz


# -- sparse twins ---------------------------------------------------------------


def _diff_1d(n, dx):
    main = np.zeros(n)
    upper = np.full(n - 1, 0.5)
    lower = np.full(n - 1, -0.5)
    main[0], upper[0] = -1.0, 1.0
    main[-1], lower[-1] = 1.0, -1.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / dx


def _lap_1d(n, dx):
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (dx * dx)


@lru_cache(maxsize=32)
def operator_matrices(nx, nz, dx):
    """Sparse ``(Dx, Dz, L)`` acting on C-ordered flattened ``(nx, nz)`` maps."""
    if nx < 3 or nz < 3:
        raise GridTooSmall(f"grid {nx}x{nz} too small for stencils")
    ix, iz = sp.identity(nx, format="csr"), sp.identity(nz, format="csr")
    dmat_x = sp.kron(_diff_1d(nx, dx), iz, format="csr")
    dmat_z = sp.kron(ix, _diff_1d(nz, dx), format="csr")
    # Same summation order as ``laplacian`` is not guaranteed; callers compare to tolerance.
    lmat = (sp.kron(_lap_1d(nx, dx), iz) + sp.kron(ix, _lap_1d(nz, dx))).tocsr()
    return dmat_x, dmat_z, lmat


@lru_cache(maxsize=32)
def transposed_operators(nx, nz, dx):
    return tuple(m.T.tocsr() for m in operator_matrices(nx, nz, dx))


def _mirrored(n, taps):
    # taps: weights for offsets -1, 0, +1; ghost cells copy the border cell
    m = sp.lil_matrix((n, n))
    for i in range(n):
        for off, w in zip((-1, 0, 1), taps):
            if w:
                j = min(max(i + off, 0), n - 1)
                m[i, j] += w
    return m.tocsr()


_SMOOTH = (1.0, 2.0, 1.0)
_DIFF = (1.0, 0.0, -1.0)


@lru_cache(maxsize=32)
def sobel_factors(nx, nz):
    """1-D factors ``(diff_x, smooth_x, diff_z, smooth_z)`` of the separable Sobel kernels.

    ``Gx m = diff_x @ m @ smooth_z.T`` and ``Gz m = smooth_x @ m @ diff_z.T``. Applying
    the factors one after the other keeps the response of a constant map exactly zero.
    """
    if nx < 3 or nz < 3:
        raise GridTooSmall(f"grid {nx}x{nz} too small for the Sobel operator")
    return _mirrored(nx, _DIFF), _mirrored(nx, _SMOOTH), _mirrored(nz, _DIFF), _mirrored(nz, _SMOOTH)


@lru_cache(maxsize=32)
def sobel_operators(nx, nz):
    """Sparse 3x3 Sobel operators ``(Gx, Gz)`` on flattened maps, with mirror closure.

    ``Gx`` differences along x (axis 0) and smooths along z; ``Gz`` the reverse.
    """
    dfx, smx, dfz, smz = sobel_factors(nx, nz)
    return sp.kron(dfx, smz, format="csr"), sp.kron(smx, dfz, format="csr")


def sobel(m):
    """Two-component Sobel response ``(Gx m, Gz m)`` of a 2-D map."""
    m = np.asarray(m, dtype=float)
    _check(m)
    dfx, smx, dfz, smz = sobel_factors(*m.shape)
    return dfx @ (smz @ m.T).T, smx @ (dfz @ m.T).T


def sobel_transpose(rx, rz):
    """``Gx^T rx + Gz^T rz`` for response maps of the same shape."""
    dfx, smx, dfz, smz = sobel_factors(*rx.shape)
    return (smz.T @ (dfx.T @ rx).T).T + (dfz.T @ (smx.T @ rz).T).T
