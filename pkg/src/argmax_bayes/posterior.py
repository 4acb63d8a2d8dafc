"""Conjugate Gaussian posterior over tensor-product spline coefficients.

Model: ``Y = B theta + eps``, ``eps ~ N(0, sigma^2 I)``, prior
``theta | sigma^2 ~ N(eta, sigma^2 Omega)``. Only ``J x J`` systems are ever
factorized; every ``n x n`` quantity goes through the Woodbury or
Sylvester determinant identities.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .basis import (
    TensorBasisSpec,
    basis_matrix,
    design_matrix,
    grid_values,
    knots_for_count,
    tensor_rows,
)


class NumericalError(RuntimeError):
    """A factorization or solve failed even after jittering."""


def as_rng(seed) -> np.random.Generator:
    """Accept an int, a SeedSequence or a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def spd_cholesky(mat: np.ndarray, what: str = "matrix") -> tuple:
    """Lower Cholesky factor with one jittered retry.

    Returns ``(L, jitter)``; ``jitter`` is 0.0 unless the retry was needed.
    """
    mat = np.asarray(mat, dtype=float)
    try:
        return linalg.cholesky(mat, lower=True, check_finite=True), 0.0
    except (linalg.LinAlgError, ValueError):
        pass
    jitter = 1e-10 * max(np.trace(mat), 1e-300) / mat.shape[0]
    try:
        chol = linalg.cholesky(mat + jitter * np.eye(mat.shape[0]), lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        try:
            cond = np.linalg.cond(mat)
        except np.linalg.LinAlgError:
            cond = np.inf
        raise NumericalError(
            f"{what} is not positive definite (condition estimate {cond:.3e})"
        ) from exc
    warnings.warn(f"{what} needed jitter {jitter:.3e} to factorize", RuntimeWarning)
    return chol, jitter


# ---------------------------------------------------------------------------
# prior and variance
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianCoeffPrior:
    """Coefficient prior ``N(eta, sigma^2 Omega)``.

    The eigenvalue bounds of ``Omega`` are computed at construction and
    stored as ``eig_bounds``.
    """

    eta: np.ndarray
    omega: np.ndarray
    eig_bounds: tuple = field(init=False)

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float).ravel()
        omega = np.atleast_2d(np.asarray(self.omega, dtype=float))
        if omega.shape != (eta.size, eta.size):
            raise ValueError(f"omega must be {eta.size}x{eta.size}, got {omega.shape}")
        if not np.all(np.isfinite(eta)):
            raise ValueError("eta must be finite")
        if not np.allclose(omega, omega.T, rtol=1e-12, atol=1e-14):
            raise ValueError("omega must be symmetric")
        ev = np.linalg.eigvalsh(omega)
        if ev[0] <= 0:
            raise ValueError("omega must be positive definite")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "eig_bounds", (float(ev[0]), float(ev[-1])))

    @classmethod
    def isotropic(cls, n_basis: int, scale: float = 1.0, mean: float = 0.0):
        return cls(np.full(n_basis, float(mean)), scale * np.eye(n_basis))

    @property
    def n_basis(self) -> int:
        return self.eta.size

    @cached_property
    def omega_inv(self) -> np.ndarray:
        return np.linalg.inv(self.omega)

    @cached_property
    def omega_logdet(self) -> float:
        return float(np.linalg.slogdet(self.omega)[1])

    @cached_property
    def isotropic_scale(self) -> Optional[float]:
        """``c`` if ``Omega == c I`` exactly, else None."""
        c = self.omega[0, 0]
        if np.array_equal(self.omega, c * np.eye(self.n_basis)):
            return float(c)
        return None


@dataclass(frozen=True)
class VarianceEstimate:
    """Error variance used by a posterior.

    ``method`` is ``"empirical"`` (plug-in ``value``) or ``"inverse_gamma"``
    (``value`` is the posterior mean ``scale / (shape - 1)``).
    """

    value: float
    method: str = "empirical"
    hyper: Optional[tuple] = None
    shape: Optional[float] = None
    scale: Optional[float] = None

    def __post_init__(self):
        if self.method not in ("empirical", "inverse_gamma"):
            raise ValueError(f"unknown variance method {self.method!r}")
        if not np.isfinite(self.value) or self.value < 0:
            raise ValueError("variance estimate must be finite and nonnegative")

    def draw(self, count: int, rng) -> np.ndarray:
        """``count`` draws of sigma^2 (constant under the empirical mode)."""
        if self.method == "empirical":
            return np.full(count, self.value)
        rng = as_rng(rng)
        return self.scale / rng.gamma(self.shape, 1.0, size=count)

    def as_dict(self) -> dict:
        out = {"method": self.method, "value": self.value}
        if self.method == "inverse_gamma":
            out.update(hyper=list(self.hyper), shape=self.shape, scale=self.scale)
        return out


def ig_update(prior_hyper: Sequence[float], n: int, sigma2_hat: float) -> tuple:
    """Inverse-gamma posterior ``((b1 + n) / 2, (b2 + n s2) / 2)``."""
    b1, b2 = (float(v) for v in prior_hyper)
    if not b1 > 4:
        raise ValueError("beta1 must exceed 4 so the posterior mean exists")
    if not b2 > 0:
        raise ValueError("beta2 must be positive")
    if n < 1:
        raise ValueError("need n >= 1 observations")
    if sigma2_hat < 0:
        raise ValueError("sigma2_hat must be nonnegative")
    return (b1 + n) / 2.0, (b2 + n * sigma2_hat) / 2.0


def make_variance(sigma2_hat: float, n: int, mode: str = "empirical",
                  beta: Sequence[float] = (5.0, 1.0)) -> VarianceEstimate:
    if mode == "empirical":
        return VarianceEstimate(float(sigma2_hat), "empirical")
    if mode == "inverse_gamma":
        shape, scale = ig_update(beta, n, sigma2_hat)
        return VarianceEstimate(scale / (shape - 1.0), "inverse_gamma",
                                tuple(float(b) for b in beta), shape, scale)
    raise ValueError(f"unknown sigma mode {mode!r}")


# ---------------------------------------------------------------------------
# coefficient posterior
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoefficientPosterior:
    """Gaussian law ``N(mean, sigma^2 P^{-1})`` with ``P = B'B + Omega^{-1}``."""

    mean: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of P
    sigma: VarianceEstimate
    n_obs: int
    logdet: float  # log det(B Omega B' + I_n)
    jitter: float = 0.0

    @property
    def n_basis(self) -> int:
        return self.mean.size

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``P^{-1} rhs``."""
        return linalg.cho_solve((self.chol, True), rhs)

    def covariance(self) -> np.ndarray:
        """``P^{-1}`` (multiply by sigma^2 for the coefficient covariance)."""
        return self.solve(np.eye(self.n_basis))

    def draw(self, count: int, rng) -> np.ndarray:
        """Coefficient draws, shape ``(count, J)``.

        Standard normals are generated first, then the variance draws, so the
        empirical and hierarchical modes share their Gaussian stream.
        """
        rng = as_rng(rng)
        z = rng.standard_normal((count, self.n_basis))
        s2 = self.sigma.draw(count, rng)
        dev = linalg.solve_triangular(self.chol, z.T, lower=True, trans="T").T
        return self.mean + np.sqrt(s2)[:, None] * dev


def _posterior_from_design(B: np.ndarray, Y: np.ndarray, prior: GaussianCoeffPrior,
                           sigma_mode: str = "empirical",
                           beta: Sequence[float] = (5.0, 1.0)) -> CoefficientPosterior:
    n = B.shape[0]
    precision = B.T @ B + prior.omega_inv
    chol, jitter = spd_cholesky(precision, "posterior precision B'B + Omega^-1")
    rhs = B.T @ Y + prior.omega_inv @ prior.eta
    mean = linalg.cho_solve((chol, True), rhs)

    resid = Y - B @ prior.eta
    bt_r = B.T @ resid
    quad = resid @ resid - bt_r @ linalg.cho_solve((chol, True), bt_r)
    sigma2 = max(quad, 0.0) / n
    logdet = prior.omega_logdet + 2.0 * np.sum(np.log(np.diag(chol)))
    return CoefficientPosterior(mean, chol, make_variance(sigma2, n, sigma_mode, beta),
                                n, float(logdet), jitter)


def _check_data(X, Y, d=None):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if Y.size == 0 or X.shape[0] == 0:
        raise ValueError("need at least one observation")
    if X.shape[0] != Y.size:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.size} entries")
    if d is not None and X.shape[1] != d:
        raise ValueError(f"X has dimension {X.shape[1]}, expected {d}")
    return X, Y


def fit(spec: TensorBasisSpec, X, Y, prior: Optional[GaussianCoeffPrior] = None,
        sigma_mode: str = "empirical", beta: Sequence[float] = (5.0, 1.0)) -> CoefficientPosterior:
    """Posterior of the spline coefficients given data ``(X, Y)``.

    The default prior is ``eta = 0``, ``Omega = I``.
    """
    X, Y = _check_data(X, Y, spec.d)
    if prior is None:
        prior = GaussianCoeffPrior.isotropic(spec.n_basis)
    if prior.n_basis != spec.n_basis:
        raise ValueError(f"prior has {prior.n_basis} coefficients, basis has {spec.n_basis}")
    return _posterior_from_design(design_matrix(spec, X), Y, prior, sigma_mode, beta)


def empirical_sigma2(B: np.ndarray, Y, prior: GaussianCoeffPrior) -> VarianceEstimate:
    """Empirical Bayes ``(Y - B eta)'(B Omega B' + I)^{-1}(Y - B eta) / n`` (Woodbury form)."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.size < 1 or B.shape[0] != Y.size:
        raise ValueError("B and Y must describe at least one matching observation")
    post = _posterior_from_design(B, Y, prior)
    return post.sigma


# ---------------------------------------------------------------------------
# posterior process for D^r f
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TensorSurface:
    """A spline surface with fixed coefficients; callable on points."""

    basis: TensorBasisSpec
    coeffs: np.ndarray

    @property
    def d(self) -> int:
        return self.basis.d

    def __call__(self, points, r=None) -> np.ndarray:
        return tensor_rows(self.basis, points, r) @ self.coeffs

    def on_grid(self, axes, r=None) -> np.ndarray:
        return grid_values(self.basis, axes, self.coeffs, r)


@dataclass(frozen=True, eq=False)
class SurfacePosterior:
    """Posterior Gaussian process of ``D^r f`` induced by a coefficient posterior."""

    basis: TensorBasisSpec
    coeff: CoefficientPosterior
    prior: Optional[GaussianCoeffPrior] = None

    @classmethod
    def from_data(cls, spec: TensorBasisSpec, X, Y, prior=None, sigma_mode="empirical",
                  beta=(5.0, 1.0)) -> "SurfacePosterior":
        if prior is None:
            prior = GaussianCoeffPrior.isotropic(spec.n_basis)
        return cls(spec, fit(spec, X, Y, prior, sigma_mode, beta), prior)

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def sigma2(self) -> float:
        return self.coeff.sigma.value

    @property
    def mean_surface(self) -> TensorSurface:
        return TensorSurface(self.basis, self.coeff.mean)

    def center_at(self, r, x) -> float:
        """Posterior center ``A_r(x) Y + c_r(x) eta``."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return float((tensor_rows(self.basis, x, r) @ self.coeff.mean)[0])

    def centers(self, r, X) -> np.ndarray:
        return tensor_rows(self.basis, X, r) @ self.coeff.mean

    def kernel(self, r, x, y) -> float:
        """``Sigma_r(x, y)``; multiply by sigma^2 for the posterior covariance."""
        gx = tensor_rows(self.basis, np.asarray(x, float).reshape(1, -1), r)[0]
        gy = tensor_rows(self.basis, np.asarray(y, float).reshape(1, -1), r)[0]
        return float(gx @ self.coeff.solve(gy))

    def kernel_matrix(self, r, X, Y=None) -> np.ndarray:
        gx = tensor_rows(self.basis, X, r)
        gy = gx if Y is None else tensor_rows(self.basis, Y, r)
        return gx @ self.coeff.solve(gy.T)

    def sample_paths(self, r, grid, count: int, rng) -> np.ndarray:
        """Joint draws of ``D^r f`` at the given points, shape ``(count, len(grid))``."""
        if count < 1:
            raise ValueError("count must be >= 1")
        rows = tensor_rows(self.basis, grid, r)
        return self.coeff.draw(count, rng) @ rows.T

    def sample_on_grid(self, r, axes, count: int, rng) -> np.ndarray:
        """Draws on a tensor grid, shape ``(count, m_1, ..., m_d)``."""
        if count < 1:
            raise ValueError("count must be >= 1")
        return grid_values(self.basis, axes, self.coeff.draw(count, rng), r)

    def summary(self) -> dict:
        """JSON-ready description: J, knots, mean, sigma mode, logdet."""
        return {
            "J": list(self.basis.shape),
            "knots": [{"order": kv.order, "interior": list(kv.interior)} for kv in self.basis.dims],
            "mean": self.coeff.mean.tolist(),
            "sigma_mode": self.coeff.sigma.as_dict(),
            "logdet": self.coeff.logdet,
            "n": self.coeff.n_obs,
        }


# ---------------------------------------------------------------------------
# selection of the number of basis functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JSelection:
    """Marginal log-posterior over a grid of basis counts."""

    counts: tuple  # per-axis candidate counts
    scores: np.ndarray  # shape (len(counts[0]), ..., len(counts[d-1]))
    sigma2: np.ndarray  # per-candidate empirical variance
    best: tuple
    flagged: tuple = ()  # candidates with J > n

    def rows(self):
        """Yield ``(j_1, ..., j_d, score)`` in lexicographic order."""
        for idx in itertools.product(*(range(len(c)) for c in self.counts)):
            yield tuple(int(self.counts[k][i]) for k, i in enumerate(idx)) + (float(self.scores[idx]),)


def tensor_grid_axes(X) -> Optional[list]:
    """Per-axis levels if ``X`` is a full lexicographic tensor grid, else None."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        return None
    levels = [np.unique(X[:, k]) for k in range(X.shape[1])]
    if int(np.prod([lv.size for lv in levels])) != X.shape[0]:
        return None
    mesh = np.stack(np.meshgrid(*levels, indexing="ij"), axis=-1).reshape(-1, X.shape[1])
    if not np.array_equal(mesh, X):
        return None
    return levels


def _score(n, sigma2, logdet, quad=None, sigma2_ref=None):
    if sigma2_ref is None:
        return -0.5 * n * np.log(sigma2) - 0.5 * logdet
    return -0.5 * n * np.log(sigma2_ref) - 0.5 * logdet - 0.5 * quad / sigma2_ref


def marginal_logpost_J(X, Y, orders: Sequence[int], j_max, j_min=1,
                       omega_scale: float = 1.0, sigma_ref_J: Optional[Sequence[int]] = None,
                       method: str = "auto") -> JSelection:
    """Score every ``(J_1, ..., J_d)`` in ``{j_min..j_max}^d`` under ``eta = 0, Omega = cI``.

    The score is ``-n log sigma - (1/2) log det(B Omega B' + I)`` with the
    empirical Bayes sigma recomputed per candidate. Passing ``sigma_ref_J``
    fixes sigma at that candidate's estimate instead, in which case the
    quadratic term of the marginal likelihood is kept.

    ``method`` is ``"auto"`` (Kronecker eigen path for tensor-grid designs),
    ``"kron"`` or ``"dense"``.
    """
    X, Y = _check_data(X, Y)
    n, d = X.shape
    orders = tuple(int(q) for q in orders)
    if len(orders) != d:
        raise ValueError(f"need {d} orders, got {len(orders)}")
    j_max = tuple(np.broadcast_to(np.asarray(j_max, int), (d,)))
    j_min = tuple(np.broadcast_to(np.asarray(j_min, int), (d,)))
    if any(lo < 1 or hi < lo for lo, hi in zip(j_min, j_max)):
        raise ValueError("candidate range must satisfy 1 <= j_min <= j_max")
    counts = tuple(tuple(range(lo, hi + 1)) for lo, hi in zip(j_min, j_max))

    axes = tensor_grid_axes(X) if method in ("auto", "kron") else None
    if method == "kron" and axes is None:
        raise ValueError("kron method needs a lexicographic tensor-grid design")
    if axes is not None:
        sigma2, logdet = _scores_kron(axes, Y, orders, counts, omega_scale)
    else:
        sigma2, logdet = _scores_dense(X, Y, orders, counts, omega_scale)

    if sigma_ref_J is None:
        scores = _score(n, sigma2, logdet)
    else:
        ref = tuple(counts[k].index(int(j)) for k, j in enumerate(sigma_ref_J))
        scores = _score(n, sigma2, logdet, quad=n * sigma2, sigma2_ref=sigma2[ref])
    best_idx = np.unravel_index(int(np.argmax(scores)), scores.shape)
    best = tuple(int(counts[k][i]) for k, i in enumerate(best_idx))

    flagged = tuple(c for c in itertools.product(*counts) if int(np.prod(c)) > n)
    if flagged:
        warnings.warn(f"{len(flagged)} candidate(s) have more basis functions than "
                      f"observations (n={n})", RuntimeWarning)
    return JSelection(counts, scores, sigma2, best, flagged)


def _scores_kron(axes, Y, orders, counts, c):
    d = len(axes)
    Ygrid = Y.reshape([lv.size for lv in axes])
    yy = float(Y @ Y)
    n = Y.size
    eig = []
    for k in range(d):
        per = {}
        for J in counts[k]:
            Bk = basis_matrix(knots_for_count(orders[k], J), axes[k])
            lam, U = np.linalg.eigh(Bk.T @ Bk)
            per[J] = (np.clip(lam, 0.0, None), Bk @ U)
        eig.append(per)
    shape = tuple(len(cs) for cs in counts)
    sigma2 = np.empty(shape)
    logdet = np.empty(shape)
    for idx in itertools.product(*(range(s) for s in shape)):
        Js = [counts[k][i] for k, i in enumerate(idx)]
        C = Ygrid
        lam = np.ones(())
        for k in range(d):
            lam_k, BU = eig[k][Js[k]]
            C = np.tensordot(C, BU, axes=([0], [0]))  # contracted axis moves last
            lam = np.multiply.outer(lam, lam_k)
        quad = yy - np.sum(C * C / (lam + 1.0 / c))
        sigma2[idx] = max(quad, 0.0) / n
        logdet[idx] = np.sum(np.log1p(c * lam))
    return sigma2, logdet


def _scores_dense(X, Y, orders, counts, c):
    n, d = X.shape
    shape = tuple(len(cs) for cs in counts)
    rows = [{J: basis_matrix(knots_for_count(orders[k], J), X[:, k]) for J in counts[k]}
            for k in range(d)]
    sigma2 = np.empty(shape)
    logdet = np.empty(shape)
    for idx in itertools.product(*(range(s) for s in shape)):
        Js = [counts[k][i] for k, i in enumerate(idx)]
        mats = [rows[k][Js[k]] for k in range(d)]
        B = mats[0]
        for m in mats[1:]:
            B = (B[:, :, None] * m[:, None, :]).reshape(n, -1)
        J = B.shape[1]
        prior = GaussianCoeffPrior(np.zeros(J), c * np.eye(J))
        post = _posterior_from_design(B, Y, prior)
        sigma2[idx] = post.sigma.value
        logdet[idx] = post.logdet
    return sigma2, logdet


def rate_counts(n: int, alpha: Sequence[float], orders: Sequence[int],
                const: float = 1.0) -> tuple:
    """Basis counts ``J_k ~ const * (n / log n)^{a*/(a_k (2 a* + d))}``, at least ``q_k``.

    ``a*`` is the harmonic mean of the per-axis smoothness ``alpha``.
    """
    alpha = np.asarray(alpha, dtype=float)
    d = alpha.size
    a_star = d / np.sum(1.0 / alpha)
    base = n / np.log(n)
    out = []
    for a_k, q in zip(alpha, orders):
        J = int(np.ceil(const * base ** (a_star / (a_k * (2 * a_star + d)))))
        out.append(max(J, int(q)))
    return tuple(out)


def summary_json(sp: SurfacePosterior) -> str:
    return json.dumps(sp.summary(), sort_keys=True)
