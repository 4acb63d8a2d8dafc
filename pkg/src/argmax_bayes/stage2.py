"""Second stage: local polynomial posterior on the credible rectangle.

Design points are sampled uniformly in the rectangle and centered at the
first-stage mode ``mu_tilde``. The polynomial coefficients get the prior
``N(xi, sigma^2 V)`` with ``V = Delta^2``, ``Delta = diag(prod_k delta_k^{-i_k})``,
which matches the scaling of ``Z'Z`` in the centered coordinates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import factorial
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .credible import CredibleRect, _coordinate_ascent
from .posterior import VarianceEstimate, as_rng, ig_update, spd_cholesky

REDUCED_QUADRATIC = ((0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1))


@dataclass(frozen=True)
class PolySpec:
    """Monomial basis ``z^i`` for the second-stage polynomial.

    ``reduced=True`` (two dimensions only) keeps ``1, x, y, x^2, y^2, xy``;
    otherwise every ``i <= m_alpha`` in lexicographic order.
    """

    m_alpha: tuple
    reduced: bool = False

    def __post_init__(self):
        m = tuple(int(v) for v in self.m_alpha)
        if not m or any(v < 0 for v in m):
            raise ValueError("m_alpha needs nonnegative per-axis degrees")
        if self.reduced and m != (2, 2):
            raise ValueError("the reduced quadratic needs m_alpha == (2, 2)")
        object.__setattr__(self, "m_alpha", m)

    @classmethod
    def reduced_quadratic(cls) -> "PolySpec":
        return cls((2, 2), reduced=True)

    @property
    def d(self) -> int:
        return len(self.m_alpha)

    @property
    def exponents(self) -> tuple:
        if self.reduced:
            return REDUCED_QUADRATIC
        return tuple(itertools.product(*(range(m + 1) for m in self.m_alpha)))

    @property
    def size(self) -> int:
        return len(self.exponents)

    def scaling(self, half_widths) -> np.ndarray:
        """Diagonal of ``Delta``: ``prod_k delta_k^{-i_k}``."""
        hw = np.asarray(half_widths, dtype=float)
        E = np.asarray(self.exponents, dtype=float)
        return np.prod(hw[None, :] ** (-E), axis=1)


def poly_design(spec: PolySpec, Z) -> np.ndarray:
    """Matrix with columns ``z^{i_j}``, shape ``(n2, W + 1)``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None] if spec.d == 1 else Z[None, :]
    if Z.shape[1] != spec.d:
        raise ValueError(f"points have dimension {Z.shape[1]}, polynomial has {spec.d}")
    E = np.asarray(spec.exponents)
    out = np.ones((Z.shape[0], E.shape[0]))
    for k in range(spec.d):
        out *= Z[:, [k]] ** E[None, :, k]
    return out


def poly_eval(spec: PolySpec, theta, Z, r=None) -> np.ndarray:
    """``D^r f_theta`` at centered points; ``theta`` may be a batch ``(count, W+1)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    E = np.asarray(spec.exponents)
    r = np.zeros(spec.d, int) if r is None else np.asarray(r, int)
    keep = np.all(E >= r, axis=1)
    coef = np.array([np.prod([factorial(e) // factorial(e - rk) for e, rk in zip(row, r)])
                     if ok else 0 for row, ok in zip(E, keep)], dtype=float)
    cols = np.ones((Z.shape[0], E.shape[0]))
    for k in range(spec.d):
        cols *= Z[:, [k]] ** np.maximum(E[None, :, k] - r[k], 0)
    cols *= coef
    return np.asarray(theta, float) @ cols.T


def sample_uniform_rect(rect: CredibleRect, n2: int, rng=None) -> np.ndarray:
    """``n2`` centered points drawn uniformly from the (clipped) rectangle."""
    if np.any(rect.upper - rect.lower <= 0):
        raise ValueError("rectangle has a zero-width side")
    if n2 < 1:
        raise ValueError("n2 must be >= 1")
    u = as_rng(rng).uniform(size=(n2, rect.d))
    return rect.lower - rect.center + u * (rect.upper - rect.lower)


@dataclass(frozen=True, eq=False)
class Stage2Prior:
    xi: np.ndarray
    v_diag: np.ndarray

    @classmethod
    def scaled(cls, spec: PolySpec, half_widths, xi=None) -> "Stage2Prior":
        delta = spec.scaling(half_widths)
        xi = np.zeros(spec.size) if xi is None else np.asarray(xi, dtype=float)
        return cls(xi, delta * delta)

    def __post_init__(self):
        if np.any(np.asarray(self.v_diag) <= 0):
            raise ValueError("V must be strictly positive")


@dataclass(frozen=True, eq=False)
class Stage2Posterior:
    spec: PolySpec
    mean: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of Z'Z + V^-1
    sigma: VarianceEstimate
    sigma2_stage2: float
    n2: int

    def draw(self, count: int, rng) -> np.ndarray:
        rng = as_rng(rng)
        z = rng.standard_normal((count, self.mean.size))
        s2 = self.sigma.draw(count, rng)
        dev = linalg.solve_triangular(self.chol, z.T, lower=True, trans="T").T
        return self.mean + np.sqrt(s2)[:, None] * dev

    def as_dict(self) -> dict:
        return {"exponents": [list(e) for e in self.spec.exponents], "mean": self.mean.tolist(),
                "covariance_unscaled": linalg.cho_solve((self.chol, True),
                                                        np.eye(self.mean.size)).tolist(),
                "sigma": self.sigma.as_dict(), "sigma2_stage2": self.sigma2_stage2,
                "n2": self.n2}


SIGMA_POLICIES = ("stage2_only", "weighted", "hierarchical")


def combined_sigma2(n1: int, sigma2_1: float, n2: int, sigma2_2: float) -> float:
    return (n1 * sigma2_1 + n2 * sigma2_2) / (n1 + n2)


def fit_stage2(spec: PolySpec, Z, Y2, prior: Stage2Prior, sigma_policy: str = "stage2_only",
               stage1: Optional[tuple] = None, beta: Sequence[float] = (5.0, 1.0)) -> Stage2Posterior:
    """Conjugate update of the polynomial coefficients.

    ``stage1`` is ``(n1, sigma2_1)`` and is required by the ``weighted`` and
    ``hierarchical`` policies.
    """
    if sigma_policy not in SIGMA_POLICIES:
        raise ValueError(f"sigma_policy must be one of {SIGMA_POLICIES}")
    Zm = poly_design(spec, Z)
    Y2 = np.asarray(Y2, dtype=float).ravel()
    if Zm.shape[0] != Y2.size:
        raise ValueError(f"{Zm.shape[0]} design points but {Y2.size} responses")
    n2 = Y2.size
    v_inv = 1.0 / prior.v_diag
    precision = Zm.T @ Zm + np.diag(v_inv)
    chol, _ = spd_cholesky(precision, "second-stage precision Z'Z + V^-1")
    mean = linalg.cho_solve((chol, True), Zm.T @ Y2 + v_inv * prior.xi)

    resid = Y2 - Zm @ prior.xi
    zr = Zm.T @ resid
    sigma2_2 = max(resid @ resid - zr @ linalg.cho_solve((chol, True), zr), 0.0) / n2

    if sigma_policy == "stage2_only":
        sigma = VarianceEstimate(sigma2_2, "empirical")
    else:
        if stage1 is None:
            raise ValueError(f"sigma_policy {sigma_policy!r} needs stage1=(n1, sigma2_1)")
        n1, s1 = stage1
        s_star = combined_sigma2(n1, s1, n2, sigma2_2)
        if sigma_policy == "weighted":
            sigma = VarianceEstimate(s_star, "empirical")
        else:
            shape, scale = ig_update(beta, n1 + n2, s_star)
            sigma = VarianceEstimate(scale / (shape - 1.0), "inverse_gamma",
                                     tuple(float(b) for b in beta), shape, scale)
    return Stage2Posterior(spec, mean, chol, sigma, sigma2_2, n2)


# ---------------------------------------------------------------------------
# mode of the polynomial
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModeSolve:
    mu_z: np.ndarray
    mu: np.ndarray
    M: float
    hessian_ok: bool
    clipped: bool
    degenerate: bool = False


def _box_maximize(spec, theta, lower, upper, resolution=41):
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(lower, upper)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    vals = poly_eval(spec, theta, pts)
    start = pts[int(np.argmax(vals))]

    def fun(p):
        return poly_eval(spec, theta, p)

    x, fx, _ = _coordinate_ascent(fun, start, lower, upper, tol=1e-12)
    return x, float(fx)


def solve_mode(spec: PolySpec, theta, rect: CredibleRect) -> ModeSolve:
    """Maximizer of ``f_theta`` over the centered rectangle ``Q``.

    The reduced quadratic uses the closed-form stationary point; any other
    case, an indefinite Hessian, or a stationary point outside ``Q`` falls
    back to a grid search plus coordinate ascent over ``Q``.
    """
    theta = np.asarray(theta, dtype=float)
    lower = rect.lower - rect.center
    upper = rect.upper - rect.center
    if spec.reduced:
        t0, t1, t2, t3, t4, t5 = theta
        H = np.array([[2 * t3, t5], [t5, 2 * t4]])
        g = np.array([-t1, -t2])
        det = H[0, 0] * H[1, 1] - H[0, 1] ** 2
        hessian_ok = bool(H[0, 0] < 0 and det > 0)
        if det == 0.0 and not np.any(g):
            zero = np.zeros(2)
            return ModeSolve(zero, rect.center.copy(), float(t0), False, False, True)
        if hessian_ok:
            mu_z = np.linalg.solve(H, g)
            if np.all(mu_z >= lower) and np.all(mu_z <= upper):
                M = float(poly_eval(spec, theta, mu_z[None, :])[0])
                return ModeSolve(mu_z, rect.center + mu_z, M, True, False)
    else:
        hessian_ok = False
    mu_z, M = _box_maximize(spec, theta, lower, upper)
    return ModeSolve(mu_z, rect.center + mu_z, M, hessian_ok, True)


@dataclass(frozen=True, eq=False)
class Stage2Samples:
    mu: np.ndarray
    M: np.ndarray
    hessian_ok: np.ndarray
    clipped: np.ndarray
    degenerate: np.ndarray

    def __len__(self):
        return self.M.size


def solve_modes(spec: PolySpec, thetas, rect: CredibleRect) -> Stage2Samples:
    """Vectorized :func:`solve_mode` over a batch of coefficient vectors."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    count = thetas.shape[0]
    mu = np.empty((count, spec.d))
    M = np.empty(count)
    ok = np.zeros(count, bool)
    clipped = np.ones(count, bool)
    degenerate = np.zeros(count, bool)
    todo = np.ones(count, bool)
    if spec.reduced:
        lower = rect.lower - rect.center
        upper = rect.upper - rect.center
        t = thetas
        h11, h22, h12 = 2 * t[:, 3], 2 * t[:, 4], t[:, 5]
        det = h11 * h22 - h12 * h12
        ok = (h11 < 0) & (det > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            z1 = (-t[:, 1] * h22 + t[:, 2] * h12) / det
            z2 = (-t[:, 2] * h11 + t[:, 1] * h12) / det
        zz = np.stack([z1, z2], axis=1)
        inside = ok & np.all(zz >= lower, axis=1) & np.all(zz <= upper, axis=1)
        mu[inside] = rect.center + zz[inside]
        M[inside] = np.einsum("ij,ij->i", t[inside], poly_design(spec, zz[inside]))
        clipped[inside] = False
        todo = ~inside
    for i in np.flatnonzero(todo):
        sol = solve_mode(spec, thetas[i], rect)
        mu[i], M[i] = sol.mu, sol.M
        ok[i], clipped[i], degenerate[i] = sol.hessian_ok, sol.clipped, sol.degenerate
    return Stage2Samples(mu, M, ok, clipped, degenerate)


def induce_stage2_mu_M(post: Stage2Posterior, count: int, rect: CredibleRect,
                       rng=None) -> Stage2Samples:
    """Posterior draws of ``(mu, M)`` from the second-stage coefficient posterior."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return solve_modes(post.spec, post.draw(count, as_rng(rng)), rect)
