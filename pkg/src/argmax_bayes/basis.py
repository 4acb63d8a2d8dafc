"""Univariate and tensor-product B-spline bases on [0, 1]^d.

Knot vectors are clamped: both endpoints are repeated ``order`` times, so the
basis is a partition of unity on the closed cube. Multi-indices are ordered
lexicographically (first axis varies slowest), matching ``np.kron``.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property, reduce
from typing import Sequence

import numpy as np

from . import _backend

_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class KnotVector:
    """Interior knots plus spline order; endpoints 0 and 1 are implicit.

    Parameters
    ----------
    order : int
        Spline order ``q`` (degree ``q - 1``).
    interior : tuple of float
        Strictly increasing knots in the open interval (0, 1).
    max_gap_ratio : float
        Largest allowed ratio between the widest and narrowest knot gap.
    """

    order: int
    interior: tuple = ()
    max_gap_ratio: float = field(default=10.0, compare=False)

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"order must be a positive integer, got {self.order!r}")
        object.__setattr__(self, "order", int(self.order))
        interior = tuple(float(t) for t in self.interior)
        object.__setattr__(self, "interior", interior)
        arr = np.asarray(interior)
        if arr.size:
            if np.any(arr <= 0.0) or np.any(arr >= 1.0):
                raise ValueError("interior knots must lie in the open interval (0, 1)")
            if np.any(np.diff(arr) <= 0.0):
                raise ValueError("interior knots must be strictly increasing")
        if self.gap_ratio > self.max_gap_ratio:
            raise ValueError(
                f"knot gaps not quasi-uniform: ratio {self.gap_ratio:.3g} "
                f"exceeds {self.max_gap_ratio:.3g}"
            )

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    @property
    def n_basis(self) -> int:
        return self.order + self.n_interior

    @cached_property
    def knots(self) -> np.ndarray:
        """Extended knot sequence of length ``n_basis + order``."""
        q = self.order
        return np.concatenate([np.zeros(q), np.asarray(self.interior, float), np.ones(q)])

    @cached_property
    def gap_ratio(self) -> float:
        gaps = np.diff(np.concatenate([[0.0], self.interior, [1.0]]))
        return float(gaps.max() / gaps.min())

    def reduced(self, r: int = 1) -> "KnotVector":
        """Same interior knots, order lowered by ``r`` (the derivative's basis)."""
        if not 0 <= r < self.order:
            raise ValueError(f"derivative order {r} must satisfy 0 <= r < {self.order}")
        return KnotVector(self.order - r, self.interior, self.max_gap_ratio)

    def to_json(self) -> str:
        return json.dumps({"order": self.order, "interior": list(self.interior)})

    @classmethod
    def from_json(cls, text: str) -> "KnotVector":
        obj = json.loads(text)
        return cls(int(obj["order"]), tuple(obj["interior"]))


def make_uniform_knots(order: int, num_interior: int) -> KnotVector:
    """Uniform partition with interior knots at ``l / (N + 1)``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if num_interior < 0:
        raise ValueError("num_interior must be >= 0")
    n = int(num_interior)
    return KnotVector(int(order), tuple(l / (n + 1) for l in range(1, n + 1)))


def knots_for_count(order: int, n_basis: int) -> KnotVector:
    """Uniform knot vector with exactly ``n_basis`` functions.

    When ``n_basis < order`` the order is lowered to ``n_basis`` (a single
    polynomial piece), so every count from 1 upward is representable.
    """
    if n_basis < 1:
        raise ValueError("n_basis must be >= 1")
    if n_basis < order:
        return make_uniform_knots(n_basis, 0)
    return make_uniform_knots(order, n_basis - order)


def _check_unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x < -_EDGE_TOL) or np.any(x > 1.0 + _EDGE_TOL):
        raise ValueError("evaluation points must lie in [0, 1]")
    return np.clip(x, 0.0, 1.0)


def basis_matrix(kv: KnotVector, x) -> np.ndarray:
    """Rows of univariate basis values, shape ``(len(x), J)``."""
    x = _check_unit(np.atleast_1d(x))
    return _backend.basis_matrix(kv.knots, kv.order, x.ravel())


def eval_basis(kv: KnotVector, x: float) -> np.ndarray:
    """All ``J`` basis functions at a single point."""
    return basis_matrix(kv, np.array([x], dtype=float))[0]


def _first_difference(kv: KnotVector) -> np.ndarray:
    q = kv.order
    t = kv.knots
    J = kv.n_basis
    w = np.zeros((J - 1, J))
    for i in range(J - 1):
        c = (q - 1) / (t[i + q] - t[i + 1])
        w[i, i] = -c
        w[i, i + 1] = c
    return w


def derivative_matrix(kv: KnotVector, r: int) -> np.ndarray:
    """Matrix ``W`` with ``d^r/dx^r (b_q^T theta) = b_{q-r}^T W theta``.

    Shape ``(J - r, J)``; built by composing first-difference steps.
    """
    if not 0 <= r < kv.order:
        raise ValueError(f"derivative order {r} must satisfy 0 <= r < {kv.order}")
    w = np.eye(kv.n_basis)
    current = kv
    for _ in range(r):
        w = _first_difference(current) @ w
        current = current.reduced(1)
    return w


@dataclass(frozen=True)
class TensorBasisSpec:
    """Tensor product of univariate bases, one :class:`KnotVector` per axis."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(self.dims)
        if not dims:
            raise ValueError("need at least one axis")
        if not all(isinstance(kv, KnotVector) for kv in dims):
            raise TypeError("dims must be KnotVector instances")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def uniform(cls, orders: Sequence[int], counts: Sequence[int]) -> "TensorBasisSpec":
        if len(orders) != len(counts):
            raise ValueError("orders and counts must have the same length")
        return cls(tuple(knots_for_count(q, J) for q, J in zip(orders, counts)))

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple:
        return tuple(kv.n_basis for kv in self.dims)

    @property
    def n_basis(self) -> int:
        return int(np.prod(self.shape))

    @property
    def orders(self) -> tuple:
        return tuple(kv.order for kv in self.dims)

    @cached_property
    def index_map(self) -> tuple:
        """Flat index -> multi-index, lexicographic."""
        return tuple(itertools.product(*(range(J) for J in self.shape)))

    def flat_index(self, multi: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi), self.shape))

    def check_r(self, r) -> tuple:
        if r is None:
            return (0,) * self.d
        r = tuple(int(v) for v in np.atleast_1d(r))
        if len(r) != self.d:
            raise ValueError(f"derivative order needs {self.d} entries, got {len(r)}")
        for rk, kv in zip(r, self.dims):
            if not 0 <= rk < kv.order:
                raise ValueError(f"derivative order {r} invalid for orders {self.orders}")
        return r

    def axis_rows(self, k: int, x, r: int = 0) -> np.ndarray:
        """Per-axis rows ``b_{q-r}(x)^T W_r`` of shape ``(len(x), J_k)``."""
        kv = self.dims[k]
        if r == 0:
            return basis_matrix(kv, x)
        return basis_matrix(kv.reduced(r), x) @ derivative_matrix(kv, r)

    def to_json(self) -> str:
        return json.dumps([json.loads(kv.to_json()) for kv in self.dims])


def _row_kron(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise Kronecker product of ``(n, J_k)`` matrices."""
    def pair(a, b):
        return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)
    return reduce(pair, mats)


def _points(spec: TensorBasisSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :] if spec.d > 1 or X.size == 1 else X[:, None]
    if X.shape[1] != spec.d:
        raise ValueError(f"points have dimension {X.shape[1]}, basis has {spec.d}")
    return X


def tensor_rows(spec: TensorBasisSpec, X, r=None) -> np.ndarray:
    """Rows ``g(x)`` with ``D^r f(x) = g(x) @ theta`` for each point, shape ``(n, J)``."""
    r = spec.check_r(r)
    X = _points(spec, X)
    return _row_kron([spec.axis_rows(k, X[:, k], r[k]) for k in range(spec.d)])


def tensor_eval(spec: TensorBasisSpec, r, x) -> np.ndarray:
    """Single-point version of :func:`tensor_rows`."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != spec.d:
        raise ValueError(f"point has dimension {x.size}, basis has {spec.d}")
    return tensor_rows(spec, x[None, :], r)[0]


def reduced_basis_rows(spec: TensorBasisSpec, X, r=None) -> np.ndarray:
    """Reduced-order tensor basis ``b_{J,q-r}(x)``, shape ``(n, prod(J_k - r_k))``."""
    r = spec.check_r(r)
    X = _points(spec, X)
    return _row_kron([basis_matrix(kv.reduced(rk), X[:, k])
                      for k, (kv, rk) in enumerate(zip(spec.dims, r))])


def tensor_derivative_matrix(spec: TensorBasisSpec, r=None) -> np.ndarray:
    """Kronecker-structured ``W_r`` of shape ``(prod(J_k - r_k), J)``."""
    r = spec.check_r(r)
    return reduce(np.kron, [derivative_matrix(kv, rk) for kv, rk in zip(spec.dims, r)])


def design_matrix(spec: TensorBasisSpec, X) -> np.ndarray:
    """Basis matrix ``B`` with one row per design point."""
    X = _points(spec, X)
    if X.shape[0] < 1:
        raise ValueError("need at least one design point")
    return tensor_rows(spec, X)


def grid_values(spec: TensorBasisSpec, axes: Sequence[np.ndarray], coeffs, r=None) -> np.ndarray:
    """Evaluate ``D^r f`` on a tensor grid for a batch of coefficient vectors.

    Parameters
    ----------
    axes : sequence of 1-D arrays
        Grid levels per axis.
    coeffs : ndarray, shape (count, J) or (J,)

    Returns
    -------
    ndarray, shape (count, m_1, ..., m_d) (leading axis dropped for 1-D input)
    """
    r = spec.check_r(r)
    coeffs = np.asarray(coeffs, dtype=float)
    single = coeffs.ndim == 1
    theta = np.atleast_2d(coeffs).reshape((-1,) + spec.shape)
    for k in range(spec.d):
        rows = spec.axis_rows(k, np.asarray(axes[k], float), r[k])
        # contract axis k+1 of theta (a J_k axis) with rows; result goes last
        theta = np.tensordot(theta, rows, axes=([1], [1]))
    return theta[0] if single else theta
