"""
ssep-lab CLT Harness
Error curves |E F(particle) - E F(Gaussian)| over a ladder of n, log-log rate fits,
the exact Berry-Esseen curve at t = 0, and the diagnostics suite.
"""

import logging
import math
import multiprocessing
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from core.config_manager import ExperimentConfig
from core.errors import NoiseGateError, NotPolynomialError, PreconditionError, StateSpaceTooLargeError
from core.observables import (
    Observable,
    eval_on_coordinates,
    eval_on_particle,
    gaussian_expectation_1d,
    gaussian_expectation_closed_form,
    quadratic_coefficients,
)
from core.ou_gaussian import (
    NOISE_PREFACTORS,
    BandLimitedProfile,
    GaussianLaw,
    covariance_derivative_DV,
    covariance_from_field,
    covariance_V,
    covariance_V_quadrature,
    hilbert_schmidt_bound_constant,
    initial_covariance,
    law_at_time,
    sample_coordinates,
    zero_law,
)
from core.seeding import DIAGNOSTIC_STREAM, GAUSSIAN_STREAM, PARTICLE_STREAM, replica_rng
from core.ssep_simulator import (
    Configuration,
    exact_master_distribution,
    exact_second_moment,
    exact_two_point,
    fluctuation_field,
    generator_apply_bruteforce,
    generator_expansion,
    mean_field,
    sample_initial,
    simulate,
    site_covariance,
)
from core.torus_spectral import (
    BilinearForm,
    GridField,
    SpectralField,
    discrete_derivative,
    discrete_gradient_max_norm,
    discrete_laplacian,
    eigenvalue_mu,
    extend,
    form_from_product,
    hilbert_schmidt_norm,
    inner_product_continuous,
    inner_product_discrete,
    interpolation_error,
    k_squared_grid,
    lambda_grid,
    laplacian_consistency_error,
    lattice_axes,
    mode_basis,
    project,
    projection_tail_norm,
    resize,
    shift,
    sobolev_tail_constant,
    spectral_from_triples,
    square_exchange_error,
)

log = logging.getLogger(__name__)

NOISE_RATIO = 10.0
BERRY_ESSEEN_SITE_CAP = 22
GAUSSIAN_BATCH = 100_000
ZERO_ERROR = 1e-13


# ------------------------------------------------------------------ #
#  Result types                                                       #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class ErrorRow:
    n: int
    t: float
    observable: str
    engine: str
    particle_value: float
    particle_stderr: float
    gaussian_value: float
    abs_error: float
    gaussian_stderr: float = 0.0

    @property
    def total_stderr(self) -> float:
        return math.hypot(self.particle_stderr, self.gaussian_stderr)

    def as_record(self) -> dict:
        record = asdict(self)
        record.pop("gaussian_stderr")
        return record


@dataclass
class ErrorTable:
    rows: list[ErrorRow] = field(default_factory=list)
    truncation_tails: dict[int, float] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.as_record() for row in self.rows], columns=list(ErrorRow.__dataclass_fields__)[:8])

    @property
    def errors(self) -> np.ndarray:
        return np.array([row.abs_error for row in self.rows])


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    ci_low: float
    ci_high: float
    n_points: int
    excluded: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["excluded"] = list(self.excluded)
        return out


@dataclass(frozen=True)
class DiagnosticResult:
    name: str
    status: str
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"


@dataclass
class DiagnosticsReport:
    results: list[DiagnosticResult] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def get(self, name: str) -> DiagnosticResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.results], columns=["name", "status", "value", "threshold", "detail"])

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "criteria": {r.name: r.status for r in self.results},
            "results": [asdict(r) for r in self.results],
        }


# ------------------------------------------------------------------ #
#  Particle side                                                      #
# ------------------------------------------------------------------ #

def _particle_values(cfg: ExperimentConfig, n: int, replicas: Sequence[int]) -> np.ndarray:
    obs = cfg.build_observable(n)
    rho0 = cfg.profile.on_lattice(n)
    rho_t = mean_field(rho0, cfg.t)
    out = np.empty(len(replicas))
    for i, r in enumerate(replicas):
        rng = replica_rng(cfg.master_seed, PARTICLE_STREAM, n, int(r))
        eta = simulate(sample_initial(rho0, rng), cfg.t, rng)
        out[i] = eval_on_particle(obs, fluctuation_field(eta, rho_t))
    return out


def _chunk_worker(args) -> np.ndarray:
    cfg, n, replicas = args
    return _particle_values(cfg, n, replicas)


def particle_replica_values(cfg: ExperimentConfig, n: int, threads: Optional[int] = None) -> np.ndarray:
    """F(zeta_t^n) for replicas 0..R-1, in replica order whatever the worker count."""
    R = cfg.replicas
    workers = max(1, threads or cfg.worker_count)
    chunks = [c.tolist() for c in np.array_split(np.arange(R), min(R, 4 * workers)) if c.size]
    if workers == 1:
        parts = [_particle_values(cfg, n, c) for c in chunks]
    else:
        with multiprocessing.Pool(workers) as pool:
            parts = pool.map(_chunk_worker, [(cfg, n, c) for c in chunks])
    return np.concatenate(parts)


def monte_carlo_expectation(cfg: ExperimentConfig, n: int, threads: Optional[int] = None) -> tuple[float, float]:
    """Replica mean of F(zeta_t^n) and its standard error."""
    if cfg.replicas < 2:
        raise PreconditionError(f"Monte Carlo needs at least 2 replicas, got {cfg.replicas}")
    values = particle_replica_values(cfg, n, threads)
    mean = math.fsum(values.tolist()) / values.size
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size))
    return mean, stderr


def _particle_truncation(obs: Observable, n: int) -> int:
    return min(obs.K, n)


def exact_expectation_second_moment(cfg: ExperimentConfig, n: int) -> float:
    """E F(zeta_t^n) for F of degree <= 2, with no sampling error."""
    obs = cfg.build_observable(n)
    Kp = _particle_truncation(obs, n)
    try:
        A, _, c = quadratic_coefficients(obs, Kp)
    except NotPolynomialError as exc:
        raise PreconditionError(f"exact_two_point engine needs a degree <= 2 observable: {exc}") from exc
    rho0 = cfg.profile.on_lattice(n)
    table = exact_two_point(rho0, cfg.t, cfg.ode_rtol, cfg.ode_atol, cfg.ode_method, cfg.two_point_cap)
    rho_t = mean_field(rho0, cfg.t)
    samples = mode_basis(Kp, cfg.d).lattice_samples(n)
    G = samples @ site_covariance(table, rho_t) @ samples.T / rho0.size
    # the linear part has mean zero: E zeta_t^n = 0
    return float(np.sum(A * G) + c)


def exact_enumeration_expectation(cfg: ExperimentConfig, n: int) -> float:
    """E F(zeta_t^n) by summing over every configuration of the master equation."""
    obs = cfg.build_observable(n)
    Kp = _particle_truncation(obs, n)
    rho0 = cfg.profile.on_lattice(n)
    master = exact_master_distribution(rho0, cfg.t)
    rho_t = mean_field(rho0, cfg.t).values.ravel()
    N = 2 * n + 1
    zeta = N ** (cfg.d / 2.0) * (master.occupancy_matrix() - rho_t)
    coords = zeta @ mode_basis(Kp, cfg.d).lattice_samples(n).T / rho0.size
    return float(master.probabilities @ eval_on_coordinates(obs, coords, Kp))


# ------------------------------------------------------------------ #
#  Gaussian side                                                      #
# ------------------------------------------------------------------ #

def gaussian_law(cfg: ExperimentConfig, n: int) -> GaussianLaw:
    """Law of zeta_t started from A_rho0 (or from 0 in deterministic mode), K = truncation(n)."""
    K = cfg.truncation(n)
    if cfg.zeta0 == "matched_gaussian":
        start = initial_covariance(cfg.profile, K, cfg.prefactor)
    else:
        start = zero_law(K, cfg.d, cfg.prefactor)
    return law_at_time(cfg.profile, start, cfg.t, K)


def gaussian_expectation(
    obs: Observable, law: GaussianLaw, rng_factory: Callable[[], np.random.Generator], samples: int
) -> tuple[float, float]:
    """Closed form when polynomial, Gauss-Hermite for one pairing, else Gaussian Monte Carlo."""
    if obs.is_polynomial:
        try:
            return gaussian_expectation_closed_form(obs, law), 0.0
        except NotPolynomialError:
            pass
    if obs.kind == "smooth" and obs.f.arity == 1:
        return gaussian_expectation_1d(obs, law), 0.0

    rng = rng_factory()
    values = []
    remaining = samples
    while remaining > 0:
        batch = min(remaining, GAUSSIAN_BATCH)
        values.append(eval_on_coordinates(obs, sample_coordinates(law, rng, batch), law.K))
        remaining -= batch
    values = np.concatenate(values)
    return math.fsum(values.tolist()) / values.size, float(np.std(values, ddof=1) / math.sqrt(values.size))


def truncation_tail(obs: Observable, K: int) -> float:
    """Size of the part of the observable beyond the Gaussian truncation K."""
    if obs.form is not None:
        if obs.form.K <= K:
            return 0.0
        keep = obs.form.basis.restriction_indices(K)
        mask = np.ones(obs.form.entries.shape[0], dtype=bool)
        mask[keep] = False
        dropped = obs.form.entries.copy()
        dropped[np.ix_(~mask, ~mask)] = 0.0
        return float(np.linalg.norm(dropped))
    return float(sum(projection_tail_norm(phi, K, 0.0) for phi in obs.phis))


# ------------------------------------------------------------------ #
#  Error curves                                                       #
# ------------------------------------------------------------------ #

def error_curve(cfg: ExperimentConfig, threads: Optional[int] = None) -> ErrorTable:
    """One row per n of |E F(particle) - E F(Gaussian)|."""
    log.info("error curve: engine=%s observable=%s noise_prefactor=%s (%.6g)",
             cfg.engine, cfg.observable, cfg.noise_prefactor, cfg.prefactor)
    table = ErrorTable()
    for n in cfg.n_list:
        obs = cfg.build_observable(n)
        law = gaussian_law(cfg, n)
        samples = cfg.gaussian_replica_factor * cfg.replicas
        g_value, g_err = gaussian_expectation(
            obs, law, lambda: replica_rng(cfg.master_seed, GAUSSIAN_STREAM, n), samples
        )
        if cfg.engine == "monte_carlo":
            p_value, p_err = monte_carlo_expectation(cfg, n, threads)
        elif cfg.engine == "exact_two_point":
            p_value, p_err = exact_expectation_second_moment(cfg, n), 0.0
        elif cfg.engine == "exact_enumeration":
            p_value, p_err = exact_enumeration_expectation(cfg, n), 0.0
        else:
            p_value, p_err = g_value + float(n) ** cfg.synthetic_exponent, 0.0
            g_err = 0.0

        row = ErrorRow(n, cfg.t, cfg.observable, cfg.engine, p_value, p_err, g_value, abs(p_value - g_value), g_err)
        table.rows.append(row)
        table.truncation_tails[n] = truncation_tail(obs, law.K)
        log.info("n=%d particle=%.10g (+-%.2g) gaussian=%.10g |error|=%.4g",
                 n, p_value, row.total_stderr, g_value, row.abs_error)

    smallest = float(table.errors.min()) if table.rows else 0.0
    worst_tail = max(table.truncation_tails.values(), default=0.0)
    if smallest > 0 and worst_tail > 0.01 * smallest:
        log.warning("truncation tail %.3g exceeds 1%% of the smallest error %.3g", worst_tail, smallest)
    return table


def fit_rate(table: ErrorTable, drop_noisy: bool = False, noise_ratio: float = NOISE_RATIO) -> RateFit:
    """Least-squares slope of log abs_error against log n."""
    rows = list(table.rows)
    noisy = [r for r in rows if r.total_stderr > 0 and not r.abs_error > noise_ratio * r.total_stderr]
    excluded = ()
    if noisy:
        details = [
            {"n": r.n, "abs_error": r.abs_error, "stderr": r.total_stderr,
             "ratio": r.abs_error / r.total_stderr if r.total_stderr > 0 else 0.0}
            for r in noisy
        ]
        if not drop_noisy:
            raise NoiseGateError(
                "insufficient replicas: Monte Carlo noise dominates rows n=" + ",".join(str(r.n) for r in noisy),
                details,
            )
        log.warning("noise gate excludes rows n=%s", [r.n for r in noisy])
        excluded = tuple(r.n for r in noisy)
        rows = [r for r in rows if r not in noisy]
        if len(rows) < 3:
            raise NoiseGateError(
                f"insufficient replicas: only {len(rows)} rows pass the noise gate", details
            )
    if len(rows) < 3:
        raise PreconditionError(f"rate fit needs at least 3 rows, got {len(rows)}")
    if any(r.abs_error <= 0 for r in rows):
        raise PreconditionError("rate fit needs every abs_error > 0")

    x = np.log([r.n for r in rows])
    y = np.log([r.abs_error for r in rows])
    result = stats.linregress(x, y)
    residual = y - (result.intercept + result.slope * x)
    ss_res = float(residual @ residual)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    half_width = float(stats.t.ppf(0.975, len(rows) - 2) * result.stderr)
    fit = RateFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        slope_stderr=float(result.stderr),
        r_squared=r_squared,
        ci_low=float(result.slope) - half_width,
        ci_high=float(result.slope) + half_width,
        n_points=len(rows),
        excluded=excluded,
    )
    log.info("fitted slope %.4f (95%% CI [%.4f, %.4f], R^2=%.5f)", fit.slope, fit.ci_low, fit.ci_high, fit.r_squared)
    return fit


# ------------------------------------------------------------------ #
#  Berry-Esseen                                                       #
# ------------------------------------------------------------------ #

def _single_pairing(obs: Observable) -> tuple[SpectralField, Callable[[np.ndarray], np.ndarray]]:
    if obs.kind == "linear":
        return obs.phis[0], lambda x: x
    if obs.kind == "smooth" and obs.f.arity == 1:
        return obs.phis[0], obs.f
    raise PreconditionError(f"observable {obs.name!r} is not a function of a single pairing")


def exact_initial_expectation(
    obs: Observable, rho0: BandLimitedProfile, n: int, cap: int = BERRY_ESSEEN_SITE_CAP
) -> float:
    """E f(<pr_n phi, zeta_0^n>_n) by exact convolution of the independent site summands."""
    phi, f = _single_pairing(obs)
    rho = rho0.on_lattice(n)
    if rho.size > cap:
        raise StateSpaceTooLargeError(f"exact convolution needs (2n+1)^d <= {cap} sites, got {rho.size}")
    weights = rho.N ** (-rho.d / 2.0) * project(phi, n).values.ravel()
    values, probs = np.zeros(1), np.ones(1)
    for w, r in zip(weights, rho.values.ravel()):
        new_values = np.concatenate([values + w * (1.0 - r), values - w * r])
        new_probs = np.concatenate([probs * r, probs * (1.0 - r)])
        keys, inverse = np.unique(np.round(new_values, 13), return_inverse=True)
        probs = np.bincount(inverse, weights=new_probs, minlength=keys.size)
        moment = np.bincount(inverse, weights=new_values * new_probs, minlength=keys.size)
        live = probs > 0
        values = np.where(live, moment / np.where(live, probs, 1.0), keys)[live]
        probs = probs[live]
    return float(probs @ np.asarray(f(values), dtype=float))


def berry_esseen_curve(cfg: ExperimentConfig) -> tuple[ErrorTable, Optional[RateFit]]:
    """Exact t = 0 errors |E f(<ex_n zeta_0^n, phi>) - E f(<zeta_0, phi>)| over n_list."""
    obs = cfg.build_observable()
    phi, _ = _single_pairing(obs)
    law0 = initial_covariance(cfg.profile, phi.K, cfg.prefactor)
    g_value, _ = gaussian_expectation(obs, law0, lambda: replica_rng(cfg.master_seed, GAUSSIAN_STREAM, 0), 0)
    table = ErrorTable()
    for n in cfg.n_list:
        p_value = exact_initial_expectation(obs, cfg.profile, n)
        table.rows.append(ErrorRow(n, 0.0, cfg.observable, "exact_convolution", p_value, 0.0, g_value, abs(p_value - g_value)))
        log.info("berry-esseen n=%d particle=%.12g gaussian=%.12g", n, p_value, g_value)
    if len(table.rows) < 3 or np.any(table.errors <= ZERO_ERROR):
        log.info("berry-esseen rate fit skipped (fewer than 3 rows or vanishing errors)")
        return table, None
    return table, fit_rate(table)


# ------------------------------------------------------------------ #
#  Diagnostics                                                        #
# ------------------------------------------------------------------ #

def _result(name: str, ok: bool, value: float, threshold: float, detail: str = "") -> DiagnosticResult:
    return DiagnosticResult(name, "pass" if ok else "fail", float(value), float(threshold), detail)


def _skipped(name: str, reason: str) -> DiagnosticResult:
    return DiagnosticResult(name, "skipped", detail=reason)


def _ladder_slope(ns: Sequence[int], errors: Sequence[float]) -> float:
    floored = [max(e, 1e-300) for e in errors]
    table = ErrorTable([ErrorRow(n, 0.0, "", "", e, 0.0, 0.0, e) for n, e in zip(ns, floored)])
    return fit_rate(table).slope


def _random_field(rng: np.random.Generator, n: int, d: int) -> GridField:
    return GridField(n, d, rng.standard_normal((2 * n + 1,) * d))


def _mode_samples(k: np.ndarray, n: int, d: int) -> tuple[GridField, GridField]:
    phase = sum(kj * a for kj, a in zip(k, lattice_axes(n, d)))
    shape = (2 * n + 1,) * d
    return GridField(n, d, np.broadcast_to(np.cos(phase), shape)), GridField(n, d, np.broadcast_to(np.sin(phase), shape))


def check_operator_identities(d: int, rng: np.random.Generator, n_max: int = 16) -> DiagnosticResult:
    worst = 0.0
    for n in range(1, n_max + 1):
        f, g = _random_field(rng, n, d), _random_field(rng, n, d)
        smooth = extend(_random_field(rng, n + 2, d))

        residuals = [
            np.max(np.abs(project(extend(f), n).values - f.values)),
            abs(inner_product_continuous(extend(f), smooth) - inner_product_discrete(f, project(smooth, n))),
            np.max(np.abs(extend(project(smooth, n)).coeffs - resize(smooth, n).coeffs)),
            abs(inner_product_discrete(f, g) - inner_product_continuous(extend(f), extend(g))),
        ]
        N = 2 * n + 1
        scale = N ** 2
        for j in range(d):
            backward = shift(discrete_derivative(g, j), j, -1)
            residuals.append(abs(inner_product_discrete(discrete_derivative(f, j), g)
                                 + inner_product_discrete(f, backward)) / scale)
        gradient_pairing = sum(inner_product_discrete(discrete_derivative(f, j), discrete_derivative(g, j)) for j in range(d))
        residuals.append(abs(gradient_pairing + inner_product_discrete(f, discrete_laplacian(g))) / scale)

        k = rng.integers(-n, n + 1, size=d)
        cos_k, sin_k = _mode_samples(k, n, d)
        lam = lambda_grid(n, d)[tuple(k + n)]
        residuals.append(np.max(np.abs(discrete_laplacian(cos_k).values + lam * cos_k.values)) / scale)
        for j in range(d):
            mu = eigenvalue_mu(k, j, n)
            lhs = discrete_derivative(cos_k, j).values + 1j * discrete_derivative(sin_k, j).values
            rhs = mu * (cos_k.values + 1j * sin_k.values)
            residuals.append(np.max(np.abs(lhs - rhs)) / N)
        worst = max(worst, max(float(r) for r in residuals))
    return _result("operator_identities", worst <= 1e-12, worst, 1e-12, f"n in 1..{n_max}, d={d}")


def check_eigenvalue_bounds(d: int, n_max: int = 64) -> DiagnosticResult:
    worst = 0.0
    for n in range(1, n_max + 1):
        N = 2 * n + 1
        lam = lambda_grid(n, d).ravel()
        k2 = k_squared_grid(n, d).ravel()
        worst = max(worst, float(np.max(k2 / 3.0 - lam)), float(np.max(lam - k2)))
        k = np.arange(-n, n + 1)
        mu = np.abs(N / (2 * np.pi) * (np.exp(2j * np.pi * k / N) - 1.0))
        worst = max(worst, float(np.max(np.abs(k) / np.sqrt(3.0) - mu)), float(np.max(mu - np.abs(k))))
    return _result("eigenvalue_bounds", worst <= 1e-9, worst, 1e-9, "largest bound violation")


RATE_LADDER = (4, 8, 16, 32, 64)


def _smooth_test_field(d: int) -> SpectralField:
    K = 256 if d == 1 else 64
    return SpectralField(K, d, (1.0 + k_squared_grid(K, d)) ** -3)


def check_interpolation_rate(d: int) -> DiagnosticResult:
    errors = [interpolation_error(lambda *x: np.exp(sum(np.cos(a) for a in x)), n, d, 4096 if d == 1 else 256)
              for n in RATE_LADDER]
    slope = _ladder_slope(RATE_LADDER, errors)
    return _result("interpolation_rate", slope <= -0.9, slope, -0.9, f"errors {errors}")


def check_laplacian_rate(d: int) -> DiagnosticResult:
    g = _smooth_test_field(d)
    errors = [laplacian_consistency_error(g, n) for n in RATE_LADDER]
    slope = _ladder_slope(RATE_LADDER, errors)
    return _result("laplacian_rate", slope <= -0.9, slope, -0.9, f"errors {errors}")


def check_square_exchange_rate(d: int) -> DiagnosticResult:
    g = _smooth_test_field(d)
    errors = [square_exchange_error(project(g, n)) for n in RATE_LADDER]
    slope = _ladder_slope(RATE_LADDER, errors)
    return _result("square_exchange_rate", slope <= -0.9, slope, -0.9, f"errors {errors}")


def _oracle_sizes(d: int) -> tuple[int, ...]:
    return (1, 2) if d == 1 else (1,)


def check_mean_field_vs_master(cfg: ExperimentConfig) -> DiagnosticResult:
    worst = 0.0
    for n in _oracle_sizes(cfg.d):
        rho0 = cfg.profile.on_lattice(n)
        master = exact_master_distribution(rho0, cfg.t)
        worst = max(worst, float(np.max(np.abs(master.site_means().values - mean_field(rho0, cfg.t).values))))
    return _result("mean_field_vs_master", worst <= 1e-8, worst, 1e-8)


def check_two_point_vs_master(cfg: ExperimentConfig) -> DiagnosticResult:
    n = _oracle_sizes(cfg.d)[-1]
    rho0 = cfg.profile.on_lattice(n)
    master = exact_master_distribution(rho0, cfg.t)
    means = master.site_means().values.ravel()
    cov = master.pair_moments() - np.outer(means, means)
    np.fill_diagonal(cov, 0.0)
    table = exact_two_point(rho0, cfg.t, cfg.ode_rtol, cfg.ode_atol, cfg.ode_method, cfg.two_point_cap)
    worst = float(np.max(np.abs(cov - table.V)))

    ones = GridField.constant(n, cfg.d, 1.0)
    rho_t = mean_field(rho0, cfg.t)
    N = 2 * n + 1
    zeta_sum = N ** (cfg.d / 2.0) * (master.occupancy_matrix().sum(axis=1) - rho_t.values.sum()) / rho0.size
    direct = float(master.probabilities @ zeta_sum ** 2)
    worst = max(worst, abs(direct - exact_second_moment(table, rho_t, ones, ones)))
    return _result("two_point_vs_master", worst <= 1e-8, worst, 1e-8, f"n={n}")


def _test_phi(cfg: ExperimentConfig) -> SpectralField:
    obs = cfg.build_observable()
    if obs.phis:
        return obs.phis[0]
    k = [1] + [0] * (cfg.d - 1)
    return spectral_from_triples(cfg.d, [[k, math.sqrt(2.0), 0.0]])


def _small_ladder(cfg: ExperimentConfig, limit: int) -> list[int]:
    ns = [n for n in cfg.n_list if n <= limit]
    if cfg.d == 2:
        ns = [n for n in ns if n <= 4]
    return ns or ([2, 4, 8] if cfg.d == 1 else [1, 2])


def check_inner_product_bound(cfg: ExperimentConfig) -> DiagnosticResult:
    phi = _test_phi(cfg)
    worst = -math.inf
    for n in _small_ladder(cfg, 10):
        rho0 = cfg.profile.on_lattice(n)
        table = exact_two_point(rho0, cfg.t, cfg.ode_rtol, cfg.ode_atol, cfg.ode_method, cfg.two_point_cap)
        pr_phi = project(phi, n)
        lhs = exact_second_moment(table, mean_field(rho0, cfg.t), pr_phi, pr_phi)
        rhs = (1.0 + 2 * np.pi ** 2 * cfg.t * discrete_gradient_max_norm(rho0) ** 2) * np.max(np.abs(pr_phi.values)) ** 2
        worst = max(worst, lhs / rhs)
    return _result("inner_product_bound", worst <= 1.0 + 1e-9, worst, 1.0, "largest lhs/rhs ratio")


def check_sobolev_bound(cfg: ExperimentConfig) -> DiagnosticResult:
    I = cfg.sobolev_I
    worst = -math.inf
    for n in _small_ladder(cfg, 10):
        rho0 = cfg.profile.on_lattice(n)
        table = exact_two_point(rho0, cfg.t, cfg.ode_rtol, cfg.ode_atol, cfg.ode_method, cfg.two_point_cap)
        basis = mode_basis(n, cfg.d)
        samples = basis.lattice_samples(n)
        G = samples @ site_covariance(table, mean_field(rho0, cfg.t)) @ samples.T / rho0.size
        lhs = float(basis.sobolev_weights(-I) @ np.diag(G))
        rhs = sobolev_tail_constant(I, n, cfg.d) * (1.0 + 2 * np.pi ** 2 * cfg.t * discrete_gradient_max_norm(rho0) ** 2)
        worst = max(worst, lhs / rhs)
    return _result("sobolev_bound", worst <= 1.0 + 1e-9, worst, 1.0, f"I={I}")


ETA_TAU_ETA_LADDER = (4, 8, 12, 16, 20)


def check_eta_tau_eta_decay(cfg: ExperimentConfig) -> DiagnosticResult:
    if cfg.profile.is_constant or cfg.t == 0:
        return _skipped("eta_tau_eta_decay", "correlations vanish identically (constant profile or t = 0)")
    ladder = ETA_TAU_ETA_LADDER if cfg.d == 1 else (2, 3, 4)
    values = []
    for n in ladder:
        rho0 = cfg.profile.on_lattice(n)
        table = exact_two_point(rho0, cfg.t, cfg.ode_rtol, cfg.ode_atol, cfg.ode_method, cfg.two_point_cap)
        values.append(abs(float(np.mean(table.neighbor_correlation(0)))))
    slope = _ladder_slope(ladder, values)
    return _result("eta_tau_eta_decay", slope <= -0.8, slope, -0.8, f"values {values}")


def _equilibrium_gap(cfg: ExperimentConfig, t: float, prefactor: float, c: float = 0.5) -> float:
    """|particle - Gaussian| variance of <sqrt2 cos x_1, zeta_t> at constant density c."""
    d = cfg.d
    const, first = (0, 1) if d == 1 else ([0, 0], [1, 0])
    equilibrium = cfg.with_overrides(
        rho0=[[const, c, 0.0]], t=t, K=None, observable="pairing_square",
        observable_params={"phi": [[first, math.sqrt(2.0), 0.0]]},
    )
    particle = exact_expectation_second_moment(equilibrium, 32 if d == 1 else 4)
    profile = BandLimitedProfile.constant(c, d)
    law = law_at_time(profile, initial_covariance(profile, 1, prefactor), t, 1)
    cos_index = mode_basis(1, d).labels.index("cos(" + ",".join(["1"] + ["0"] * (d - 1)) + ")")
    return abs(particle - law.cov[cos_index, cos_index])


def check_stationarity(cfg: ExperimentConfig) -> DiagnosticResult:
    t = cfg.t if cfg.t > 0 else 0.1
    gap = _equilibrium_gap(cfg, t, cfg.prefactor)
    return _result("stationarity", gap <= 2e-3, gap, 2e-3, f"noise_prefactor={cfg.noise_prefactor}, t={t}")


def check_prefactor_arbitration(cfg: ExperimentConfig) -> DiagnosticResult:
    physical = _equilibrium_gap(cfg, 0.1, NOISE_PREFACTORS["physical"])
    literal = _equilibrium_gap(cfg, 0.1, NOISE_PREFACTORS["literal"])
    ok = physical <= 2e-3 and literal >= 0.1 * 0.25
    return _result("prefactor_arbitration", ok, literal, 0.1 * 0.25, f"physical gap {physical:.3g}, literal gap {literal:.3g}")


def _diagnostic_K(cfg: ExperimentConfig) -> int:
    return min(cfg.truncation(max(cfg.n_list)), 8 if cfg.d == 1 else 3)


def check_covariance_psd(cfg: ExperimentConfig) -> DiagnosticResult:
    K = _diagnostic_K(cfg)
    lowest = min(float(np.linalg.eigvalsh(covariance_V(cfg.profile, t, K, cfg.prefactor)).min())
                 for t in cfg.diagnostic_t_grid)
    return _result("covariance_psd", lowest >= -1e-10, lowest, -1e-10, f"K={K}")


def check_closed_form_vs_quadrature(cfg: ExperimentConfig) -> DiagnosticResult:
    K = min(_diagnostic_K(cfg), 3 if cfg.d == 1 else 2)
    worst = 0.0
    for t in cfg.diagnostic_t_grid:
        closed = covariance_V(cfg.profile, t, K, cfg.prefactor)
        quad = covariance_V_quadrature(cfg.profile, t, K, cfg.prefactor)
        worst = max(worst, float(np.max(np.abs(closed - quad))))
    return _result("closed_form_vs_quadrature", worst <= 1e-8, worst, 1e-8, f"K={K}")


def check_hilbert_schmidt_bound(cfg: ExperimentConfig) -> DiagnosticResult:
    K = _diagnostic_K(cfg)
    I = cfg.sobolev_I
    C = hilbert_schmidt_bound_constant(I, K, cfg.d, cfg.prefactor)
    worst = -math.inf
    for t in cfg.diagnostic_t_grid:
        if t == 0:
            continue
        hs = hilbert_schmidt_norm(BilinearForm(K, cfg.d, covariance_V(cfg.profile, t, K, cfg.prefactor)), I) ** 2
        worst = max(worst, hs / (C * t * 0.25 ** 2))
    return _result("hilbert_schmidt_bound", worst <= 1.0, worst, 1.0, f"C_I={C:.6g}")


LIPSCHITZ_LADDER = (1e-1, 1e-2, 1e-3, 1e-4)


def _toward_half(profile: BandLimitedProfile) -> SpectralField:
    return SpectralField.single_mode((0,) * profile.d, profile.K0, 0.5) - profile.field


def check_lipschitz_ladder(cfg: ExperimentConfig) -> DiagnosticResult:
    K = _diagnostic_K(cfg)
    t = cfg.t if cfg.t > 0 else 0.1
    base = covariance_V(cfg.profile, t, K, cfg.prefactor)
    h = _toward_half(cfg.profile)
    diffs = []
    for eps in LIPSCHITZ_LADDER:
        V = covariance_from_field(cfg.profile.field + h.scaled(eps), t, K, cfg.prefactor)
        diffs.append(hilbert_schmidt_norm(BilinearForm(K, cfg.d, V - base), cfg.sobolev_I))
    monotone = all(b <= a + 1e-15 for a, b in zip(diffs, diffs[1:]))
    ok = monotone and diffs[-1] <= 1e-2 * diffs[0] + 1e-14
    return _result("lipschitz_ladder", ok, diffs[-1], 1e-2 * diffs[0], f"HS differences {diffs}")


def check_dv_finite_difference(cfg: ExperimentConfig, eps: float = 1e-5) -> DiagnosticResult:
    K = min(_diagnostic_K(cfg), 4 if cfg.d == 1 else 2)
    t = cfg.t if cfg.t > 0 else 0.1
    h = SpectralField.single_mode([1] + [0] * (cfg.d - 1), 1, 0.05)
    plus = covariance_from_field(cfg.profile.field + h.scaled(eps), t, K, cfg.prefactor)
    minus = covariance_from_field(cfg.profile.field - h.scaled(eps), t, K, cfg.prefactor)
    fd = (plus - minus) / (2 * eps)
    dv = covariance_derivative_DV(cfg.profile, h, t, K, cfg.prefactor)
    scale = float(np.linalg.norm(dv))
    rel = float(np.linalg.norm(fd - dv)) / scale if scale > 1e-14 else float(np.linalg.norm(fd))
    return _result("dv_finite_difference", rel <= 1e-6, rel, 1e-6)


def check_generator_expansion(cfg: ExperimentConfig, rng: np.random.Generator, per_n: int = 25) -> DiagnosticResult:
    phi = _test_phi(cfg)
    form = form_from_product(phi)
    worst = 0.0
    sizes = (1, 2, 4, 8) if cfg.d == 1 else (1, 2)
    for n in sizes:
        rho = cfg.profile.on_lattice(n)
        for _ in range(per_n):
            eta = Configuration.from_occupancy(n, cfg.d, rng.integers(0, 2, size=(2 * n + 1,) * cfg.d))
            brute = generator_apply_bruteforce(lambda hat: inner_product_continuous(phi, hat), rho, eta)
            first, second = generator_expansion(rho, eta, linear=phi)
            worst = max(worst, abs(brute - first - second) / (1.0 + abs(brute)))
            brute = generator_apply_bruteforce(lambda hat: form(hat, hat), rho, eta)
            first, second = generator_expansion(rho, eta, form=form)
            worst = max(worst, abs(brute - first - second) / (1.0 + abs(brute)))
    return _result("generator_expansion", worst <= 1e-9, worst, 1e-9, f"{per_n} configurations per n in {sizes}")


def _bernoulli_z(empirical: np.ndarray, exact: np.ndarray, replicas: int) -> float:
    exact = np.clip(exact, 0.0, 1.0)
    sigma = np.sqrt(exact * (1.0 - exact) / replicas)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, np.abs(empirical - exact) / sigma, np.where(empirical == exact, 0.0, np.inf))
    return float(z.max())


def check_mc_vs_master(cfg: ExperimentConfig) -> DiagnosticResult:
    """Simulated site means and pair moments E[eta_x eta_y] against the master equation."""
    if cfg.replicas < 1000:
        return _skipped("mc_vs_master", f"needs >= 1000 replicas, config has {cfg.replicas}")
    sizes = _oracle_sizes(cfg.d)
    worst = 0.0
    for n in sizes:
        rho0 = cfg.profile.on_lattice(n)
        # diagonal entries are the site means
        exact = exact_master_distribution(rho0, cfg.t).pair_moments()
        total = np.zeros_like(exact)
        for r in range(cfg.replicas):
            rng = replica_rng(cfg.master_seed, DIAGNOSTIC_STREAM, n, r)
            occ = simulate(sample_initial(rho0, rng), cfg.t, rng).occupancy.ravel().astype(float)
            total += np.outer(occ, occ)
        worst = max(worst, _bernoulli_z(total / cfg.replicas, exact, cfg.replicas))
    return _result("mc_vs_master", worst <= 5.0, worst, 5.0, f"{cfg.replicas} replicas, n in {sizes}, means and pairs")


def diagnostics_suite(cfg: ExperimentConfig) -> DiagnosticsReport:
    """Run every diagnostic; rate fits are skipped when n_list has fewer than 3 entries."""
    rng = replica_rng(cfg.master_seed, DIAGNOSTIC_STREAM, 0)
    report = DiagnosticsReport()
    checks: list[tuple[str, Callable[[], DiagnosticResult], bool]] = [
        ("operator_identities", lambda: check_operator_identities(cfg.d, rng), False),
        ("eigenvalue_bounds", lambda: check_eigenvalue_bounds(cfg.d), False),
        ("interpolation_rate", lambda: check_interpolation_rate(cfg.d), True),
        ("laplacian_rate", lambda: check_laplacian_rate(cfg.d), True),
        ("square_exchange_rate", lambda: check_square_exchange_rate(cfg.d), True),
        ("mean_field_vs_master", lambda: check_mean_field_vs_master(cfg), False),
        ("two_point_vs_master", lambda: check_two_point_vs_master(cfg), False),
        ("inner_product_bound", lambda: check_inner_product_bound(cfg), False),
        ("sobolev_bound", lambda: check_sobolev_bound(cfg), False),
        ("eta_tau_eta_decay", lambda: check_eta_tau_eta_decay(cfg), True),
        ("stationarity", lambda: check_stationarity(cfg), False),
        ("prefactor_arbitration", lambda: check_prefactor_arbitration(cfg), False),
        ("covariance_psd", lambda: check_covariance_psd(cfg), False),
        ("closed_form_vs_quadrature", lambda: check_closed_form_vs_quadrature(cfg), False),
        ("hilbert_schmidt_bound", lambda: check_hilbert_schmidt_bound(cfg), False),
        ("lipschitz_ladder", lambda: check_lipschitz_ladder(cfg), False),
        ("dv_finite_difference", lambda: check_dv_finite_difference(cfg), False),
        ("generator_expansion", lambda: check_generator_expansion(cfg, rng), False),
        ("mc_vs_master", lambda: check_mc_vs_master(cfg), False),
    ]
    for name, check, is_rate_fit in checks:
        if is_rate_fit and len(cfg.n_list) < 3:
            report.results.append(_skipped(name, "n_list has fewer than 3 entries"))
            continue
        result = check()
        log.info("diagnostic %s: %s (value=%s, threshold=%s)", name, result.status, result.value, result.threshold)
        report.results.append(result)
    return report
