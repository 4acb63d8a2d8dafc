"""Mode and maximum functionals, sup-norm band radii and credible sets."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .basis import grid_values
from .posterior import SurfacePosterior, as_rng


def unit_axes(resolution, d: int) -> list:
    """Uniform grid levels on [0, 1] per axis."""
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (d,))
    if np.any(res < 2):
        raise ValueError("grid resolution must be >= 2 per axis")
    return [np.linspace(0.0, 1.0, int(m)) for m in res]


def grid_points(axes: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def _evaluate_grid(evaluator, axes) -> np.ndarray:
    on_grid = getattr(evaluator, "on_grid", None)
    if on_grid is not None:
        return np.asarray(on_grid(axes), dtype=float)
    vals = np.asarray(evaluator(grid_points(axes)), dtype=float)
    return vals.reshape([a.size for a in axes])


@dataclass(frozen=True, eq=False)
class ModeEstimate:
    mu_tilde: np.ndarray
    M_tilde: float
    grid_resolution: tuple
    refine: Optional[dict] = None

    def as_dict(self) -> dict:
        return {"mu": self.mu_tilde.tolist(), "M": self.M_tilde,
                "grid_resolution": list(self.grid_resolution), "refine": self.refine}


def _coordinate_ascent(fun, x0, lower, upper, tol=1e-8, max_sweeps=100):
    x = np.array(x0, dtype=float)
    fx = float(fun(x[None, :])[0])
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        f_start = fx
        for k in range(x.size):
            if upper[k] <= lower[k]:
                continue

            def neg(t, k=k):
                y = x.copy()
                y[k] = t
                return -float(fun(y[None, :])[0])

            res = minimize_scalar(neg, bounds=(lower[k], upper[k]), method="bounded",
                                  options={"xatol": tol})
            if -res.fun > fx:
                x[k] = res.x
                fx = -res.fun
        if fx - f_start < tol:
            break
    return x, fx, sweeps


def argmax_surface(evaluator: Callable, resolution, d: Optional[int] = None,
                   refine: bool = False) -> ModeEstimate:
    """Grid maximizer of ``evaluator`` over [0, 1]^d.

    Ties go to the lexicographically smallest grid point. With ``refine``,
    coordinate ascent polishes the result inside the neighbouring cells.
    """
    if d is None:
        d = getattr(evaluator, "d", None)
        if d is None:
            raise ValueError("dimension d is required for plain callables")
    axes = unit_axes(resolution, d)
    vals = _evaluate_grid(evaluator, axes)
    idx = np.unravel_index(int(np.argmax(vals)), vals.shape)
    mu = np.array([axes[k][i] for k, i in enumerate(idx)])
    M = float(vals[idx])
    report = None
    if refine:
        lower = np.array([axes[k][max(i - 1, 0)] for k, i in enumerate(idx)])
        upper = np.array([axes[k][min(i + 1, axes[k].size - 1)] for k, i in enumerate(idx)])
        x, fx, sweeps = _coordinate_ascent(evaluator, mu, lower, upper)
        report = {"grid_mu": mu.tolist(), "grid_M": M, "sweeps": sweeps}
        if fx > M:
            mu, M = x, fx
    return ModeEstimate(mu, M, tuple(a.size for a in axes), report)


def mode_of_mean(sp: SurfacePosterior, resolution=201, refine: bool = False) -> ModeEstimate:
    """``(mu_tilde, M_tilde)`` of the posterior mean surface."""
    return argmax_surface(sp.mean_surface, resolution, sp.d, refine)


# ---------------------------------------------------------------------------
# induced posterior of (mu, M)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MuMSamples:
    mu: np.ndarray  # (count, d)
    M: np.ndarray  # (count,)

    def __len__(self):
        return self.M.size


def _batched_grid(sp, coeffs, axes, r, batch):
    for start in range(0, coeffs.shape[0], batch):
        yield start, grid_values(sp.basis, axes, coeffs[start:start + batch], r)


def induce_mu_M_samples(sp: SurfacePosterior, count: int, resolution=201, rng=None,
                        batch: int = 50) -> MuMSamples:
    """Argmax and max over the grid of ``count`` posterior sample paths."""
    if count < 1:
        raise ValueError("count must be >= 1")
    axes = unit_axes(resolution, sp.d)
    coeffs = sp.coeff.draw(count, as_rng(rng))
    mu = np.empty((count, sp.d))
    M = np.empty(count)
    for start, vals in _batched_grid(sp, coeffs, axes, None, batch):
        flat = vals.reshape(vals.shape[0], -1)
        best = np.argmax(flat, axis=1)
        M[start:start + flat.shape[0]] = flat[np.arange(flat.shape[0]), best]
        multi = np.unravel_index(best, vals.shape[1:])
        for k in range(sp.d):
            mu[start:start + flat.shape[0], k] = axes[k][multi[k]]
    return MuMSamples(mu, M)


# ---------------------------------------------------------------------------
# sup-norm band radii
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BandRadius:
    r: tuple
    gamma: float
    radius: float
    rho: float
    sample_count: int
    sup_devs: Optional[np.ndarray] = None

    @property
    def half_width(self) -> float:
        return self.rho * self.radius

    def as_dict(self) -> dict:
        return {"r": list(self.r), "gamma": self.gamma, "radius": self.radius,
                "rho": self.rho, "sample_count": self.sample_count}


def _check_gamma(gamma, count):
    if not 0.0 < gamma < 0.5:
        raise ValueError("gamma must lie in (0, 0.5)")
    if count < 100 or count < 10.0 / gamma:
        raise ValueError(f"count={count} too small for gamma={gamma}: "
                         f"need count >= max(100, 10/gamma)")


def sup_deviations(sp: SurfacePosterior, rs: Sequence, resolution, count: int, rng,
                   batch: int = 50) -> dict:
    """``sup_grid |D^r f - center_r|`` for each ``r``, sharing one set of draws."""
    axes = unit_axes(resolution, sp.d)
    dev = sp.coeff.draw(count, as_rng(rng)) - sp.coeff.mean
    out = {}
    for r in rs:
        r = sp.basis.check_r(r)
        sup = np.empty(count)
        for start, vals in _batched_grid(sp, dev, axes, r, batch):
            sup[start:start + vals.shape[0]] = np.abs(vals.reshape(vals.shape[0], -1)).max(axis=1)
        out[r] = sup
    return out


def _quantile(sup, gamma):
    return float(np.quantile(sup, 1.0 - gamma, method="higher"))


def band_radius(sp: SurfacePosterior, r, gamma: float = 0.05, resolution=101,
                count: int = 1000, rng=None, rho: float = 1.0) -> BandRadius:
    """Empirical ``(1 - gamma)`` quantile of the sup-norm posterior deviation of ``D^r f``."""
    _check_gamma(gamma, count)
    r = sp.basis.check_r(r)
    sup = sup_deviations(sp, [r], resolution, count, rng)[r]
    return BandRadius(r, float(gamma), _quantile(sup, gamma), float(rho), count, sup)


def band_radii(sp: SurfacePosterior, rs: Sequence, gamma: float = 0.05, resolution=101,
               count: int = 1000, rng=None, rho: float = 1.0) -> dict:
    """Radii for several derivative orders from a single batch of draws."""
    _check_gamma(gamma, count)
    sups = sup_deviations(sp, rs, resolution, count, rng)
    return {r: BandRadius(r, float(gamma), _quantile(s, gamma), float(rho), count, s)
            for r, s in sups.items()}


def unit_vector(d: int, k: int) -> tuple:
    return tuple(1 if j == k else 0 for j in range(d))


def credible_sets_membership(sp: SurfacePosterior, candidate: Callable,
                             radii: Mapping, rho: Optional[float] = None,
                             resolution=101) -> dict:
    """Check a candidate function against the sup-norm bands.

    ``candidate(points, r)`` must return ``D^r`` of the candidate at the
    points. ``radii`` maps derivative orders to :class:`BandRadius`; it must
    contain every unit vector (for the mode set) and the zero order (for the
    maximum set). ``rho`` overrides the inflation stored in each radius.
    """
    d = sp.d
    needed = [unit_vector(d, k) for k in range(d)] + [(0,) * d]
    radii = {tuple(k): v for k, v in radii.items()}
    missing = [r for r in needed if r not in radii]
    if missing:
        raise ValueError(f"missing band radius for derivative orders {missing}")
    pts = grid_points(unit_axes(resolution, d))

    def excess(r):
        dev = np.max(np.abs(candidate(pts, r) - sp.centers(r, pts)))
        scale = radii[r].rho if rho is None else rho
        return dev <= scale * radii[r].radius

    in_mu = all(excess(unit_vector(d, k)) for k in range(d))
    return {"in_C_mu": bool(in_mu), "in_C_M": bool(excess((0,) * d))}


def max_interval(M_tilde: float, radius: BandRadius, rho: Optional[float] = None) -> tuple:
    """Interval of maxima attained by functions in the zero-order band.

    Every function within sup distance ``rho R`` of the center has its
    maximum in ``[M_tilde - rho R, M_tilde + rho R]``, and each value there is
    attained, so this is the maximum credible set.
    """
    scale = radius.rho if rho is None else rho
    h = scale * radius.radius
    return (M_tilde - h, M_tilde + h)


# ---------------------------------------------------------------------------
# credible rectangles
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CredibleRect:
    """Rectangle ``|mu_k - center_k| <= half_widths_k``, clipped to the unit cube."""

    center: np.ndarray
    half_widths: np.ndarray
    provenance: str = "sample_envelope"
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).ravel()
        hw = np.asarray(self.half_widths, dtype=float).ravel()
        if center.shape != hw.shape:
            raise ValueError("center and half_widths must have the same length")
        if np.any(hw <= 0):
            raise ValueError("half widths must be positive")
        lo = np.clip(center - hw, 0.0, 1.0) if self.lower is None else np.asarray(self.lower, float)
        hi = np.clip(center + hw, 0.0, 1.0) if self.upper is None else np.asarray(self.upper, float)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_widths", hw)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return self.center.size

    @property
    def clipped(self) -> bool:
        return bool(np.any(self.lower > self.center - self.half_widths)
                    or np.any(self.upper < self.center + self.half_widths))

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def as_dict(self) -> dict:
        return {"center": self.center.tolist(), "half_widths": self.half_widths.tolist(),
                "provenance": self.provenance, "lower": self.lower.tolist(),
                "upper": self.upper.tolist(), "clipped": self.clipped}


def envelope_rect(mu_samples, center, rho_n: float = 1.0, floor=0.01) -> CredibleRect:
    """Smallest rectangle centered at ``center`` enveloping the mode samples.

    The half width per axis is ``rho_n`` times the largest one-sided distance
    from ``center`` to a sample (half the sample range when the samples are
    centered), floored by ``floor``.
    """
    mu = np.atleast_2d(np.asarray(mu_samples, dtype=float))
    if mu.shape[0] == 0:
        raise ValueError("no mode samples given")
    if mu.shape[0] < 2:
        raise ValueError("need at least two mode samples")
    center = np.asarray(center, dtype=float).ravel()
    reach = np.maximum(mu.max(axis=0) - center, center - mu.min(axis=0))
    hw = np.maximum(rho_n * reach, np.broadcast_to(np.asarray(floor, float), center.shape))
    lo, hi = center - hw, center + hw
    if rho_n >= 1.0:
        # center +- reach can round inside the extreme sample
        lo, hi = np.minimum(lo, mu.min(axis=0)), np.maximum(hi, mu.max(axis=0))
    rect = CredibleRect(center, hw, "sample_envelope", np.clip(lo, 0.0, 1.0),
                        np.clip(hi, 0.0, 1.0))
    if rect.clipped:
        warnings.warn("credible rectangle clipped to the unit cube", RuntimeWarning)
    return rect


def rate_half_widths(n: int, alpha: Sequence[float], rho_n: float = 1.0) -> np.ndarray:
    """Half widths ``rho_n * n^{-1/(2 alpha_k)}``."""
    alpha = np.asarray(alpha, dtype=float)
    return rho_n * float(n) ** (-1.0 / (2.0 * alpha))


def quantile_rect(center, radii: Sequence[BandRadius], lambda0: float,
                  rho: float = 1.0) -> CredibleRect:
    """Hypercube ``||mu - center||_inf <= rho sqrt(d) / lambda0 * max_k R_k``."""
    center = np.asarray(center, dtype=float).ravel()
    d = center.size
    h = rho * np.sqrt(d) / lambda0 * max(b.radius for b in radii)
    return CredibleRect(center, np.full(d, h), "quantile_radius")
