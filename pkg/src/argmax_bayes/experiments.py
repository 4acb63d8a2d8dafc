"""Test surface, data generation and the Monte Carlo comparison of
single-stage Bayes, two-stage Bayes and the two-stage frequentist baseline.
"""

from __future__ import annotations

import dataclasses
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .basis import TensorBasisSpec
from .credible import (
    CredibleRect,
    envelope_rect,
    induce_mu_M_samples,
    mode_of_mean,
    rate_half_widths,
)
from .loess import LocalLinear, select_span
from .posterior import GaussianCoeffPrior, SurfacePosterior, marginal_logpost_J
from .stage2 import (
    PolySpec,
    Stage2Prior,
    fit_stage2,
    induce_stage2_mu_M,
    poly_design,
    sample_uniform_rect,
)

MU0 = np.array([0.5, 0.5])
M0 = 4.0
METHODS = ("single_bayes", "two_stage_bayes", "two_stage_freq")

# substream keys, one per source of randomness inside a replication
(STAGE1_NOISE, SINGLE_NOISE, STAGE2_DESIGN, STAGE2_NOISE, STAGE1_DRAWS, STAGE2_DRAWS,
 BAND_DRAWS) = range(7)


# ---------------------------------------------------------------------------
# test surface
# ---------------------------------------------------------------------------


def f0_surface(x, y):
    """``(1 + exp(-5 u^2 - 2 v^4)) (cos 4u + cos 5v)`` with ``u = 2x - 1, v = 2y - 1``."""
    u = 2.0 * np.asarray(x, dtype=float) - 1.0
    v = 2.0 * np.asarray(y, dtype=float) - 1.0
    return (1.0 + np.exp(-5.0 * u**2 - 2.0 * v**4)) * (np.cos(4.0 * u) + np.cos(5.0 * v))


def f0_points(points) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    return f0_surface(P[:, 0], P[:, 1])


def f0_derivative(points, r=None) -> np.ndarray:
    """``D^r f0`` for ``r`` in ``{(0,0), (1,0), (0,1)}`` (analytic)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    r = (0, 0) if r is None else tuple(int(v) for v in r)
    if r == (0, 0):
        return f0_points(P)
    u = 2.0 * P[:, 0] - 1.0
    v = 2.0 * P[:, 1] - 1.0
    e = np.exp(-5.0 * u**2 - 2.0 * v**4)
    g = 1.0 + e
    h = np.cos(4.0 * u) + np.cos(5.0 * v)
    if r == (1, 0):
        return 2.0 * (-10.0 * u * e * h - 4.0 * g * np.sin(4.0 * u))
    if r == (0, 1):
        return 2.0 * (-8.0 * v**3 * e * h - 5.0 * g * np.sin(5.0 * v))
    raise ValueError(f"derivative order {r} not available for f0")


# ---------------------------------------------------------------------------
# experiment description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """Seeded description of the simulation study.

    Defaults reproduce the two-dimensional study: a 30x30 first-stage grid
    plus 864 second-stage points against a 42x42 single-stage grid, noise
    sd 0.1, cubic splines with ``J`` chosen over ``{1..20}^2``.

    Modes are searched on a 100-point grid per axis. The second-stage
    half width is the sample envelope at ``rho_n = 1`` but never below
    ``floor = 0.1111``; on this problem the envelope alone spans only a cell
    or two and leaves the local quadratic poorly determined.
    """

    design: str = "grid"
    stage1_per_axis: int = 30
    single_per_axis: int = 42
    n_iid: int = 900
    grid_offset: str = "endpoints"
    sigma0: float = 0.1
    n2: int = 864
    order: int = 4
    j_min: int = 1
    j_max: int = 20
    fix_j_stage1: Optional[tuple] = None
    fix_j_single: Optional[tuple] = None
    sigma_ref_j: Optional[tuple] = None
    sigma_mode: str = "empirical"
    beta: tuple = (5.0, 1.0)
    mode_grid: int = 100
    stage1_draws: int = 1000
    stage2_draws: int = 1000
    delta_rule: str = "envelope"
    rho_n: float = 1.0
    floor: float = 0.1111
    alpha: Optional[tuple] = None
    sigma_policy: str = "stage2_only"
    stage2_xi: str = "zero"
    gamma: float = 0.05
    rho: float = 1.0
    freq_delta: tuple = (0.06, 0.06)
    freq_replicates: int = 96
    loess_spans: tuple = (0.02, 0.05, 0.1, 0.2)
    replications: int = 100
    master_seed: int = 0
    methods: tuple = METHODS

    def __post_init__(self):
        for name in ("fix_j_stage1", "fix_j_single", "sigma_ref_j", "alpha"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, tuple(val))
        for name in ("beta", "freq_delta", "loess_spans", "methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.design not in ("grid", "iid_uniform"):
            raise ValueError(f"design must be 'grid' or 'iid_uniform', got {self.design!r}")
        if self.grid_offset not in ("endpoints", "midpoint"):
            raise ValueError("grid_offset must be 'endpoints' or 'midpoint'")
        if self.delta_rule not in ("envelope", "rate"):
            raise ValueError("delta_rule must be 'envelope' or 'rate'")
        if self.delta_rule == "rate" and self.alpha is None:
            raise ValueError("delta_rule 'rate' needs alpha")
        if self.stage2_xi not in ("zero", "stage1_max"):
            raise ValueError("stage2_xi must be 'zero' or 'stage1_max'")
        if self.sigma0 < 0:
            raise ValueError("sigma0 must be nonnegative")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.n2 < 6 or self.freq_replicates < 1:
            raise ValueError("second stage budget too small")
        if self.n1 + self.n2 != self.n_single:
            raise ValueError(
                f"unfair budget: n1 + n2 = {self.n1 + self.n2} but single stage uses {self.n_single}"
            )

    @property
    def n1(self) -> int:
        return self.stage1_per_axis**2 if self.design == "grid" else self.n_iid

    @property
    def n_single(self) -> int:
        return self.single_per_axis**2 if self.design == "grid" else self.n_iid + self.n2

    @property
    def n_freq2(self) -> int:
        return 9 * self.freq_replicates

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentSpec":
        unknown = set(mapping) - set(cls.field_names())
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**mapping)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out[f.name] = list(val) if isinstance(val, tuple) else val
        return out

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)


@dataclass
class RunRecord:
    rep: int
    method: str
    seed: int
    mu_hat: np.ndarray
    M_hat: float
    err_mu: float = field(init=False)
    err_M: float = field(init=False)
    n_total: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.mu_hat = np.asarray(self.mu_hat, dtype=float)
        self.err_mu = float(np.linalg.norm(self.mu_hat - MU0))
        self.err_M = float(abs(self.M_hat - M0))

    def as_row(self) -> dict:
        row = {"rep": self.rep, "method": self.method, "seed": self.seed}
        for k, v in enumerate(self.mu_hat):
            row[f"mu_{k + 1}"] = float(v)
        row.update(M=float(self.M_hat), err_mu=self.err_mu, err_M=self.err_M, n_total=self.n_total)
        for key in sorted(self.diagnostics):
            row[key] = self.diagnostics[key]
        return row


def stream(spec: ExperimentSpec, rep: int, key: int) -> np.random.Generator:
    """Independent generator for one source of randomness in one replication."""
    return np.random.default_rng(np.random.SeedSequence(spec.master_seed, spawn_key=(rep, key)))


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def grid_levels(m: int, offset: str = "endpoints") -> np.ndarray:
    if m < 1:
        raise ValueError("grid needs at least one level per axis")
    if offset == "endpoints":
        return np.linspace(0.0, 1.0, m) if m > 1 else np.array([0.5])
    if offset == "midpoint":
        return (np.arange(m) + 0.5) / m
    raise ValueError(f"unknown grid offset {offset!r}")


def lattice(m: int, d: int = 2, offset: str = "endpoints") -> np.ndarray:
    lv = grid_levels(m, offset)
    return np.stack(np.meshgrid(*([lv] * d), indexing="ij"), axis=-1).reshape(-1, d)


def generate_data(spec: ExperimentSpec, stage: str, rng, f: Callable = f0_points) -> tuple:
    """Design and noisy responses for ``stage`` in ``{"stage1", "single"}``."""
    rng = np.random.default_rng(rng)
    if stage not in ("stage1", "single"):
        raise ValueError(f"unknown stage {stage!r}")
    if spec.design == "grid":
        m = spec.stage1_per_axis if stage == "stage1" else spec.single_per_axis
        X = lattice(m, 2, spec.grid_offset)
        noise = rng.standard_normal(X.shape[0])
    else:
        n = spec.n1 if stage == "stage1" else spec.n_single
        X = rng.uniform(size=(n, 2))
        noise = rng.standard_normal(n)
    return X, f(X) + spec.sigma0 * noise


def kolmogorov_distance(X) -> float:
    """Sup distance between the empirical CDF of ``X`` and the uniform CDF on [0,1]^d.

    Evaluated at all corners formed by the coordinate levels (and their left
    limits), which is where the supremum is attained.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    levels = [np.unique(np.concatenate([X[:, k], [1.0]])) for k in range(d)]
    best = 0.0
    for strict in (False, True):
        mesh = np.stack(np.meshgrid(*levels, indexing="ij"), axis=-1).reshape(-1, d)
        for chunk in np.array_split(mesh, max(1, mesh.shape[0] // 2000)):
            if strict:
                below = np.all(X[None, :, :] < chunk[:, None, :], axis=2)
            else:
                below = np.all(X[None, :, :] <= chunk[:, None, :], axis=2)
            G_n = below.mean(axis=1)
            G = np.prod(chunk, axis=1)
            best = max(best, float(np.max(np.abs(G_n - G))))
    return best


# ---------------------------------------------------------------------------
# stage-one fit shared by the Bayesian methods
# ---------------------------------------------------------------------------


def select_and_fit(spec: ExperimentSpec, X, Y, fixed_j: Optional[tuple] = None) -> tuple:
    """Pick ``J`` by marginal posterior (unless fixed) and fit the spline posterior."""
    orders = (spec.order, spec.order)
    selection = None
    if fixed_j is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            selection = marginal_logpost_J(X, Y, orders, spec.j_max, spec.j_min,
                                           sigma_ref_J=spec.sigma_ref_j)
        counts = selection.best
    else:
        counts = tuple(int(j) for j in fixed_j)
    basis = TensorBasisSpec.uniform(orders, counts)
    prior = GaussianCoeffPrior.isotropic(basis.n_basis)
    sp = SurfacePosterior.from_data(basis, X, Y, prior, spec.sigma_mode, spec.beta)
    return sp, selection


# ---------------------------------------------------------------------------
# the three methods
# ---------------------------------------------------------------------------


def run_single_bayes(spec: ExperimentSpec, rep: int = 0, f: Callable = f0_points) -> RunRecord:
    """One-stage estimate: grid argmax of the posterior mean surface."""
    X, Y = generate_data(spec, "single", stream(spec, rep, SINGLE_NOISE), f)
    sp, _ = select_and_fit(spec, X, Y, spec.fix_j_single)
    mode = mode_of_mean(sp, spec.mode_grid)
    return RunRecord(rep, "single_bayes", spec.master_seed, mode.mu_tilde, mode.M_tilde,
                     n_total=X.shape[0],
                     diagnostics={"J": "x".join(map(str, sp.basis.shape)),
                                  "sigma2": sp.sigma2})


@dataclass(eq=False)
class TwoStageResult:
    stage1: SurfacePosterior
    selection: object
    mu_tilde: np.ndarray
    M_tilde: float
    stage1_samples: object
    rect: CredibleRect
    Z: np.ndarray
    Y2: np.ndarray
    stage2: object
    stage2_samples: object
    record: RunRecord


def two_stage_bayes(spec: ExperimentSpec, rep: int = 0, f: Callable = f0_points) -> TwoStageResult:
    """Full two-stage Bayesian pipeline with every intermediate kept."""
    X, Y = generate_data(spec, "stage1", stream(spec, rep, STAGE1_NOISE), f)
    sp, selection = select_and_fit(spec, X, Y, spec.fix_j_stage1)
    mode = mode_of_mean(sp, spec.mode_grid)
    mu_tilde = mode.mu_tilde

    samples = induce_mu_M_samples(sp, spec.stage1_draws, spec.mode_grid,
                                  stream(spec, rep, STAGE1_DRAWS))
    if spec.delta_rule == "envelope":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rect = envelope_rect(samples.mu, mu_tilde, spec.rho_n, spec.floor)
    else:
        hw = np.maximum(rate_half_widths(spec.n1 + spec.n2, spec.alpha, spec.rho_n), spec.floor)
        rect = CredibleRect(mu_tilde, hw, "rate")

    Z = sample_uniform_rect(rect, spec.n2, stream(spec, rep, STAGE2_DESIGN))
    Y2 = f(rect.center + Z) + spec.sigma0 * stream(spec, rep, STAGE2_NOISE).standard_normal(spec.n2)
    poly = PolySpec.reduced_quadratic()
    xi = np.zeros(poly.size)
    if spec.stage2_xi == "stage1_max":
        xi[0] = mode.M_tilde
    prior = Stage2Prior.scaled(poly, rect.half_widths, xi)
    post = fit_stage2(poly, Z, Y2, prior, spec.sigma_policy,
                      stage1=(X.shape[0], sp.sigma2), beta=spec.beta)
    s2 = induce_stage2_mu_M(post, spec.stage2_draws, rect, stream(spec, rep, STAGE2_DRAWS))

    record = RunRecord(rep, "two_stage_bayes", spec.master_seed, s2.mu.mean(axis=0),
                       float(s2.M.mean()), n_total=X.shape[0] + spec.n2,
                       diagnostics={"J": "x".join(map(str, sp.basis.shape)),
                                    "sigma2": post.sigma.value,
                                    "sigma2_stage1": sp.sigma2,
                                    "delta_1": float(rect.half_widths[0]),
                                    "delta_2": float(rect.half_widths[1]),
                                    "hessian_ok_frac": float(s2.hessian_ok.mean()),
                                    "clipped_frac": float(s2.clipped.mean())})
    return TwoStageResult(sp, selection, mu_tilde, mode.M_tilde, samples, rect, Z, Y2,
                          post, s2, record)


def run_two_stage_bayes(spec: ExperimentSpec, rep: int = 0, f: Callable = f0_points) -> RunRecord:
    return two_stage_bayes(spec, rep, f).record


def quadratic_lattice(center, delta, replicates: int) -> np.ndarray:
    """3x3 lattice ``center + {-delta, 0, delta}`` with each point repeated."""
    offs = [np.array([-1.0, 0.0, 1.0]) * dk for dk in delta]
    pts = np.stack(np.meshgrid(*offs, indexing="ij"), axis=-1).reshape(-1, len(delta))
    return np.repeat(pts, replicates, axis=0) + center


def run_two_stage_freq(spec: ExperimentSpec, rep: int = 0, f: Callable = f0_points,
                       delta: Optional[Sequence[float]] = None) -> RunRecord:
    """Loess preliminary estimate, then a least-squares quadratic on a replicated 3x3 lattice."""
    X, Y = generate_data(spec, "stage1", stream(spec, rep, STAGE1_NOISE), f)
    span, _ = select_span(X, Y, spec.loess_spans)
    smoother = LocalLinear(X, Y, span)
    prelim = mode_of_mean_callable(smoother, spec.mode_grid)

    delta = np.asarray(spec.freq_delta if delta is None else delta, dtype=float)
    center = np.clip(prelim, delta, 1.0 - delta)
    pts = quadratic_lattice(center, delta, spec.freq_replicates)
    noise = stream(spec, rep, STAGE2_NOISE).standard_normal(pts.shape[0])
    Y2 = f(pts) + spec.sigma0 * noise

    poly = PolySpec.reduced_quadratic()
    Zm = poly_design(poly, pts - center)
    flags = {"span": span, "fallback": False}
    theta, _, rank, _ = np.linalg.lstsq(Zm, Y2, rcond=None)
    t3, t4, t5 = theta[3], theta[4], theta[5]
    det = 4.0 * t3 * t4 - t5 * t5
    if rank < Zm.shape[1] or not (t3 < 0 and det > 0):
        flags["fallback"] = True
        mu_hat = prelim
        M_hat = float(smoother(prelim[None, :])[0])
    else:
        H = np.array([[2 * t3, t5], [t5, 2 * t4]])
        mu_z = np.linalg.solve(H, -theta[1:3])
        mu_hat = np.clip(center + mu_z, 0.0, 1.0)
        M_hat = float((poly_design(poly, (mu_hat - center)[None, :]) @ theta)[0])
    return RunRecord(rep, "two_stage_freq", spec.master_seed, mu_hat, M_hat,
                     n_total=X.shape[0] + pts.shape[0], diagnostics=flags)


def mode_of_mean_callable(fun: Callable, resolution: int, d: int = 2) -> np.ndarray:
    lv = np.linspace(0.0, 1.0, resolution)
    pts = np.stack(np.meshgrid(*([lv] * d), indexing="ij"), axis=-1).reshape(-1, d)
    vals = fun(pts)
    return pts[int(np.nanargmax(vals))]


def oracle_freq_delta(spec: ExperimentSpec, deltas: Sequence[float], reps: int = 20) -> dict:
    """ORACLE tuning: the baseline delta minimizing mean error against the known mode.

    Uses knowledge of the true mode, so it only serves to tune the baseline
    in simulations; it is never used by the estimators themselves.
    """
    scores = {}
    for dl in deltas:
        errs = [run_two_stage_freq(spec, rep, delta=(dl, dl)).err_mu for rep in range(reps)]
        scores[float(dl)] = float(np.mean(errs))
    best = min(scores, key=scores.get)
    return {"oracle": True, "best_delta": best, "scores": scores}


RUNNERS = {
    "single_bayes": run_single_bayes,
    "two_stage_bayes": run_two_stage_bayes,
    "two_stage_freq": run_two_stage_freq,
}


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------


def _run_task(args):
    spec, rep, method = args
    return RUNNERS[method](spec, rep)


def _box_stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    q0, q1, q2, q3, q4 = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    iqr = q3 - q1
    lo_w = float(v[v >= q1 - 1.5 * iqr].min())
    hi_w = float(v[v <= q3 + 1.5 * iqr].max())
    return {"count": int(v.size), "mean": float(v.mean()), "rmse": float(np.sqrt(np.mean(v * v))),
            "min": float(q0), "q1": float(q1), "median": float(q2), "q3": float(q3),
            "max": float(q4), "whisker_low": lo_w, "whisker_high": hi_w}


def summarize(records: Sequence[RunRecord], methods: Sequence[str]) -> dict:
    """Per-method distribution of ``err_mu`` and ``err_M``; independent of record order."""
    out = {}
    for m in methods:
        rows = sorted((r for r in records if r.method == m), key=lambda r: r.rep)
        if not rows:
            continue
        out[m] = {"err_mu": _box_stats([r.err_mu for r in rows]),
                  "err_M": _box_stats([r.err_M for r in rows])}
    return out


@dataclass(eq=False)
class MonteCarloResult:
    spec: ExperimentSpec
    records: list
    summary: dict


def monte_carlo(spec: ExperimentSpec, threads: int = 1,
                progress: Optional[Callable[[int, int], None]] = None) -> MonteCarloResult:
    """Replicate every method ``spec.replications`` times on paired seeds."""
    tasks = [(spec, rep, m) for rep in range(spec.replications) for m in spec.methods]
    records = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, rec in enumerate(pool.map(_run_task, tasks, chunksize=1), 1):
                records.append(rec)
                if progress:
                    progress(i, len(tasks))
    else:
        for i, task in enumerate(tasks, 1):
            records.append(_run_task(task))
            if progress:
                progress(i, len(tasks))
    order = {m: i for i, m in enumerate(spec.methods)}
    records.sort(key=lambda r: (r.rep, order[r.method]))
    return MonteCarloResult(spec, records, summarize(records, spec.methods))


def median_err(records, method, metric="err_mu") -> float:
    return float(np.median([getattr(r, metric) for r in records if r.method == method]))


def hessian_fd(fun: Callable, x, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian of a scalar function of a point."""
    x = np.asarray(x, dtype=float)
    d = x.size
    H = np.empty((d, d))
    E = np.eye(d) * h
    for i in range(d):
        for j in range(d):
            pts = np.stack([x + E[i] + E[j], x + E[i] - E[j], x - E[i] + E[j], x - E[i] - E[j]])
            v = fun(pts)
            H[i, j] = (v[0] - v[1] - v[2] + v[3]) / (4 * h * h)
    return 0.5 * (H + H.T)


def curvature_lambda0(h: float = 1e-4) -> float:
    """``|lambda_max|`` of the f0 Hessian at its mode (finite differences)."""
    return float(abs(np.linalg.eigvalsh(hessian_fd(f0_points, MU0, h)).max()))


__all__ = [
    "ExperimentSpec", "RunRecord", "TwoStageResult", "MonteCarloResult", "MU0", "M0", "METHODS",
    "f0_surface", "f0_points", "f0_derivative", "generate_data", "kolmogorov_distance",
    "run_single_bayes", "run_two_stage_bayes", "run_two_stage_freq", "two_stage_bayes",
    "monte_carlo", "summarize", "oracle_freq_delta", "hessian_fd", "curvature_lambda0",
]
