"""Pure numpy versions of the hot kernels.

These mirror ``_kernels.pyx`` call for call and are used whenever the
compiled extension is unavailable (or ``ARGMAX_BAYES_PURE=1`` is set).
"""

import numpy as np


def basis_matrix(knots, order, x):
    """Dense B-spline basis matrix via the triangular de Boor scheme.

    Parameters
    ----------
    knots : ndarray, shape (J + order,)
        Extended (clamped) knot vector.
    order : int
        Spline order (degree + 1).
    x : ndarray, shape (n,)
        Evaluation points inside ``[knots[0], knots[-1]]``. The last
        interval is closed on the right.

    Returns
    -------
    ndarray, shape (n, J)
    """
    knots = np.asarray(knots, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n_basis = knots.size - order
    degree = order - 1
    n = x.size

    span = np.searchsorted(knots, x, side="right") - 1
    span = np.clip(span, degree, n_basis - 1)

    vals = np.zeros((n, order))
    vals[:, 0] = 1.0
    left = np.empty((n, order))
    right = np.empty((n, order))
    for j in range(1, order):
        left[:, j] = x - knots[span + 1 - j]
        right[:, j] = knots[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved

    out = np.zeros((n, n_basis))
    rows = np.arange(n)[:, None]
    cols = span[:, None] - degree + np.arange(order)[None, :]
    out[rows, cols] = vals
    return out


def local_linear(xdata, ydata, xeval, neighbors, bandwidth):
    """Tricube-weighted local linear fits at each evaluation point.

    Returns the fitted intercepts and the (0, 0) entry of the inverse
    weighted Gram matrix, which equals the self-leverage when the
    evaluation point is itself a data point.
    """
    xdata = np.asarray(xdata, dtype=np.float64)
    ydata = np.asarray(ydata, dtype=np.float64)
    xeval = np.asarray(xeval, dtype=np.float64)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    bandwidth = np.asarray(bandwidth, dtype=np.float64)
    m, d = xeval.shape
    p = d + 1

    diff = xdata[neighbors] - xeval[:, None, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2)) / bandwidth[:, None]
    w = np.where(dist < 1.0, (1.0 - dist**3) ** 3, 0.0)

    design = np.concatenate([np.ones(diff.shape[:2] + (1,)), diff], axis=2)
    wd = design * w[:, :, None]
    gram = np.einsum("mki,mkj->mij", wd, design)
    rhs = np.einsum("mki,mk->mi", wd, ydata[neighbors])
    ridge = 1e-12 * np.trace(gram, axis1=1, axis2=2)
    gram = gram + ridge[:, None, None] * np.eye(p)

    e0 = np.zeros((m, p, 2))
    e0[:, :, 0] = rhs
    e0[:, 0, 1] = 1.0
    try:
        sol = np.linalg.solve(gram, e0)
    except np.linalg.LinAlgError:
        sol = np.full((m, p, 2), np.nan)
        for i in range(m):
            try:
                sol[i] = np.linalg.solve(gram[i], e0[i])
            except np.linalg.LinAlgError:
                pass
    return sol[:, 0, 0].copy(), sol[:, 0, 1].copy()
