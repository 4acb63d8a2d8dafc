"""Local linear regression with tricube weights and span-based neighbourhoods.

For span ``s`` each fit uses the ``floor(s n)`` nearest design points, with
distances scaled by the distance to the farthest of them (the usual loess
definition for ``s < 1``).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import _backend


class LocalLinear:
    """Tricube local linear smoother over scattered points in ``[0, 1]^d``.

    Parameters
    ----------
    X : array_like, shape (n, d)
    Y : array_like, shape (n,)
    span : float
        Fraction of the data used in each local fit, in (0, 1].
    """

    def __init__(self, X, Y, span: float):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.X = X
        self.Y = np.asarray(Y, dtype=float).ravel()
        if self.X.shape[0] != self.Y.size:
            raise ValueError("X and Y disagree in length")
        if not 0.0 < span <= 1.0:
            raise ValueError("span must lie in (0, 1]")
        n, d = X.shape
        self.span = float(span)
        self.k = min(n, max(d + 2, int(np.floor(span * n))))
        self._tree = cKDTree(X)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def _local(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dist, idx = self._tree.query(points, k=self.k)
        dist = dist.reshape(points.shape[0], -1)
        idx = idx.reshape(points.shape[0], -1)
        h = dist[:, -1]
        # tie-heavy designs can leave the k-th distance equal to the nearest
        h = np.where(h > 0, h, 1.0)
        return _backend.local_linear(self.X, self.Y, points, idx.astype(np.int64), h)

    def __call__(self, points) -> np.ndarray:
        return self._local(points)[0]

    def loo_residuals(self) -> np.ndarray:
        """Leave-one-out residuals ``(y_i - yhat_i) / (1 - L_ii)``."""
        fit, lev = self._local(self.X)
        return (self.Y - fit) / (1.0 - lev)

    def loo_score(self) -> float:
        res = self.loo_residuals()
        res = res[np.isfinite(res)]
        return float(np.mean(res * res)) if res.size else np.inf


def select_span(X, Y, spans: Sequence[float]) -> tuple:
    """Span with the smallest leave-one-out mean squared error.

    Returns ``(best_span, {span: score})``; ties go to the first listed span.
    """
    scores = {}
    for s in spans:
        try:
            scores[float(s)] = LocalLinear(X, Y, s).loo_score()
        except ValueError:
            scores[float(s)] = np.inf
    best = min(scores, key=lambda s: (scores[s], list(scores).index(s)))
    return best, scores
