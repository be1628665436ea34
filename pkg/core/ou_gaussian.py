"""
ssep-lab Ornstein-Uhlenbeck Gaussian Law
Finite-mode Gaussian law of the limiting fluctuation field: initial covariance
A_rho, heat-decayed mean, covariance V_t in closed form for band-limited rho_0,
its derivative DV_t, and sampling.

All covariances are stored in the real basis of torus_spectral.mode_basis.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad_vec

from core.errors import IndefiniteCovarianceError
from core.torus_spectral import (
    HEAT_RATE,
    GridField,
    SpectralField,
    evaluate,
    evaluate_on_grid,
    flat_mode_index,
    heat_propagate_continuous,
    k_squared_grid,
    lattice_axes,
    mode_basis,
    mode_indices,
    resize,
)

log = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-10
RANGE_CHECK_POINTS = 1024
_DEGENERATE_GAP = 1e-12

NOISE_PREFACTORS = {
    "physical": 4.0 * np.pi ** 2,
    "literal": 2.0 * np.pi ** 2,
}


def noise_prefactor_value(mode: str) -> float:
    try:
        return NOISE_PREFACTORS[mode]
    except KeyError:
        raise ValueError(
            f"unknown noise_prefactor mode {mode!r}; expected one of {sorted(NOISE_PREFACTORS)}"
        ) from None


# ------------------------------------------------------------------ #
#  Profiles                                                           #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class PhiProfile:
    """Noise profile Phi; only the clamped logistic max(x(1-x), 0) is provided."""

    kind: str = "clamped_logistic"

    def __post_init__(self):
        if self.kind != "clamped_logistic":
            raise ValueError(f"unsupported Phi profile {self.kind!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x * (1.0 - x), 0.0)

    def derivative(self, x: np.ndarray) -> np.ndarray:
        return np.where((x >= 0.0) & (x <= 1.0), 1.0 - 2.0 * x, 0.0)

    @property
    def sup_norm(self) -> float:
        return 0.25


@dataclass(frozen=True)
class BandLimitedProfile:
    """A real profile rho_0 with finitely many Fourier modes and values in [0, 1]."""

    field: SpectralField

    def __post_init__(self):
        values = evaluate_on_grid(self.field, max(RANGE_CHECK_POINTS, 2 * self.field.K + 1))
        lo, hi = float(values.min()), float(values.max())
        if lo < -1e-12 or hi > 1.0 + 1e-12:
            raise ValueError(f"profile leaves [0, 1]: range [{lo:.6g}, {hi:.6g}]")

    @property
    def K0(self) -> int:
        return self.field.K

    @property
    def d(self) -> int:
        return self.field.d

    @classmethod
    def constant(cls, c: float, d: int) -> "BandLimitedProfile":
        return cls(SpectralField.single_mode((0,) * d, 0, c))

    @property
    def is_constant(self) -> bool:
        c = self.field.coeffs.copy()
        c[(self.K0,) * self.d] = 0.0
        return bool(np.max(np.abs(c), initial=0.0) == 0.0)

    def on_lattice(self, n: int):
        """rho_0 restricted to T_n^d (exact point values, no truncation)."""
        N = 2 * n + 1
        points = np.stack(
            [np.broadcast_to(a, (N,) * self.d).ravel() for a in lattice_axes(n, self.d)], axis=1
        )
        values = evaluate(self.field, points).reshape((N,) * self.d)
        return GridField(n, self.d, np.clip(values, 0.0, 1.0))


# ------------------------------------------------------------------ #
#  Exponential series of Phi(P_s rho)                                 #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class _ExpSeries:
    """Fourier coefficients sum_i coef_i e^{-rate_i s}, grouped by output mode q."""

    Kq: int
    d: int
    q_index: np.ndarray
    coef: np.ndarray
    rate: np.ndarray


def _logistic_series(a: SpectralField) -> _ExpSeries:
    """Phi(P_s rho) = P_s rho - (P_s rho)^2 as an exponential series."""
    return _linear_minus_product(a, a, a, scale=1.0)


def _derivative_series(a: SpectralField, h: SpectralField) -> _ExpSeries:
    """(1 - 2 P_s rho) P_s h as an exponential series."""
    return _linear_minus_product(h, a, h, scale=2.0)


def _linear_minus_product(lin: SpectralField, left: SpectralField, right: SpectralField, scale: float) -> _ExpSeries:
    d = lin.d
    K = max(lin.K, left.K, right.K)
    lin, left, right = resize(lin, K), resize(left, K), resize(right, K)
    modes = mode_indices(K, d)
    k2 = (modes ** 2).sum(axis=1).astype(float)
    Kq = 2 * K

    q_lin = flat_mode_index(modes, Kq)
    c_lin = lin.coeffs.ravel()
    r_lin = HEAT_RATE * k2

    i, j = np.meshgrid(np.arange(len(modes)), np.arange(len(modes)), indexing="ij")
    i, j = i.ravel(), j.ravel()
    q_prod = flat_mode_index(modes[i] + modes[j], Kq)
    c_prod = -scale * left.coeffs.ravel()[i] * right.coeffs.ravel()[j]
    r_prod = HEAT_RATE * (k2[i] + k2[j])

    q = np.concatenate([q_lin, q_prod])
    coef = np.concatenate([c_lin, c_prod])
    rate = np.concatenate([r_lin, r_prod])
    keep = coef != 0
    return _ExpSeries(Kq, d, q[keep], coef[keep], rate[keep])


def _series_at(series: _ExpSeries, s: float) -> np.ndarray:
    """Coefficients of the series at time s over the (2Kq+1)^d box, flat."""
    out = np.zeros((2 * series.Kq + 1) ** series.d, dtype=complex)
    np.add.at(out, series.q_index, series.coef * np.exp(-series.rate * s))
    return out


def exp_convolution(alpha: np.ndarray, beta: np.ndarray, t: float) -> np.ndarray:
    """int_0^t e^{-alpha (t-s)} e^{-beta s} ds, stable in both exponent orders."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    delta = alpha - beta
    out = np.empty(delta.shape)
    close = np.abs(delta) < _DEGENERATE_GAP
    out[close] = t * np.exp(-alpha[close] * t)
    up = ~close & (delta > 0)
    out[up] = -np.exp(-beta[up] * t) * np.expm1(-delta[up] * t) / delta[up]
    down = ~close & (delta < 0)
    out[down] = np.exp(-alpha[down] * t) * np.expm1(delta[down] * t) / delta[down]
    return out


def _complex_pairing(series: _ExpSeries, K: int, weight_fn) -> np.ndarray:
    """M[k, l] = weight_fn(k, l, terms at q = -(k+l)) over the flattened K box."""
    modes = mode_indices(K, series.d)
    Mc = len(modes)
    order = np.argsort(series.q_index, kind="stable")
    q_sorted = series.q_index[order]
    starts = np.searchsorted(q_sorted, np.arange((2 * series.Kq + 1) ** series.d))
    ends = np.searchsorted(q_sorted, np.arange((2 * series.Kq + 1) ** series.d), side="right")

    M = np.zeros((Mc, Mc), dtype=complex)
    for a in range(Mc):
        q = -(modes[a] + modes)
        inside = np.all(np.abs(q) <= series.Kq, axis=1)
        for b in np.nonzero(inside)[0]:
            qi = flat_mode_index(q[b], series.Kq)
            terms = order[starts[qi]:ends[qi]]
            if terms.size:
                M[a, b] = weight_fn(modes[a], modes[b], series.coef[terms], series.rate[terms])
    return M


def _to_real(Mc: np.ndarray, K: int, d: int) -> np.ndarray:
    U = mode_basis(K, d).U
    R = (U @ Mc @ U.T).real
    return 0.5 * (R + R.T)


def _closed_form_matrix(series: _ExpSeries, K: int, t: float, prefactor: float) -> np.ndarray:
    def weight(k, l, coef, rate):
        alpha = HEAT_RATE * (k @ k + l @ l)
        return prefactor * -(k @ l) * np.sum(coef * exp_convolution(alpha, rate, t))

    return _to_real(_complex_pairing(series, K, weight), K, series.d)


# ------------------------------------------------------------------ #
#  Law                                                                #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class GaussianLaw:
    """Gaussian law over the real basis mode_basis(K, d)."""

    K: int
    d: int
    mean: np.ndarray
    cov: np.ndarray
    noise_prefactor: float = NOISE_PREFACTORS["physical"]

    def __post_init__(self):
        size = mode_basis(self.K, self.d).size
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.shape != (size,) or cov.shape != (size, size):
            raise ValueError(f"law over {size} modes needs mean ({size},) and cov ({size}, {size})")
        scale = 1.0 + float(np.max(np.abs(cov), initial=0.0))
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def basis(self):
        return mode_basis(self.K, self.d)

    def restricted(self, K: int) -> "GaussianLaw":
        """Marginal on the modes |k_j| <= K, or zero-padded when K is larger."""
        if K == self.K:
            return self
        big, small = (self.K, K) if K < self.K else (K, self.K)
        idx = mode_basis(big, self.d).restriction_indices(small)
        if K < self.K:
            return GaussianLaw(K, self.d, self.mean[idx], self.cov[np.ix_(idx, idx)], self.noise_prefactor)
        size = mode_basis(K, self.d).size
        mean = np.zeros(size)
        cov = np.zeros((size, size))
        mean[idx] = self.mean
        cov[np.ix_(idx, idx)] = self.cov
        return GaussianLaw(K, self.d, mean, cov, self.noise_prefactor)

    def decay(self, t: float) -> np.ndarray:
        return np.exp(-HEAT_RATE * self.basis.k_squared * t)


def _check_time(t: float):
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")


def initial_covariance(rho: BandLimitedProfile, K: int, noise_prefactor: float = NOISE_PREFACTORS["physical"]) -> GaussianLaw:
    """Centered law with covariance A_rho[phi, psi] = <rho(1-rho) phi, psi>."""
    series = _logistic_series(rho.field)
    phi_hat = _series_at(series, 0.0)
    modes = mode_indices(K, rho.d)
    q = -(modes[:, None, :] + modes[None, :, :])
    inside = np.all(np.abs(q) <= series.Kq, axis=-1)
    Ac = np.zeros(inside.shape, dtype=complex)
    Ac[inside] = phi_hat[flat_mode_index(q[inside], series.Kq)]
    size = mode_basis(K, rho.d).size
    return GaussianLaw(K, rho.d, np.zeros(size), _to_real(Ac, K, rho.d), noise_prefactor)


def covariance_V(
    rho0: BandLimitedProfile, t: float, K: int, noise_prefactor: float = NOISE_PREFACTORS["physical"]
) -> np.ndarray:
    """V_t[e_r, e_s] = P int_0^t <grad P_{t-s} e_r . grad P_{t-s} e_s, Phi(P_s rho0)> ds."""
    _check_time(t)
    return covariance_from_field(rho0.field, t, K, noise_prefactor)


def covariance_from_field(field: SpectralField, t: float, K: int, noise_prefactor: float) -> np.ndarray:
    """covariance_V without the range check, for perturbation and difference quotients."""
    _check_time(t)
    size = mode_basis(K, field.d).size
    if t == 0:
        return np.zeros((size, size))
    V = _closed_form_matrix(_logistic_series(field), K, t, noise_prefactor)
    log.debug("V_t closed form at t=%.4g over K=%d (%d real modes)", t, K, size)
    return V


def covariance_derivative_DV(
    rho0: BandLimitedProfile,
    h: SpectralField,
    t: float,
    K: int,
    noise_prefactor: float = NOISE_PREFACTORS["physical"],
) -> np.ndarray:
    """Directional derivative of V_t at rho0 along h."""
    _check_time(t)
    if h.d != rho0.d:
        raise ValueError(f"direction dimension {h.d} does not match profile dimension {rho0.d}")
    size = mode_basis(K, rho0.d).size
    if t == 0:
        return np.zeros((size, size))
    return _closed_form_matrix(_derivative_series(rho0.field, h), K, t, noise_prefactor)


def covariance_V_quadrature(
    rho0: BandLimitedProfile,
    t: float,
    K: int,
    noise_prefactor: float = NOISE_PREFACTORS["physical"],
    phi: Optional[PhiProfile] = None,
    grid_points: Optional[int] = None,
    epsabs: float = 1e-13,
) -> np.ndarray:
    """V_t by adaptive time quadrature of the defining integral, Phi evaluated pointwise."""
    _check_time(t)
    phi = phi or PhiProfile()
    d = rho0.d
    size = mode_basis(K, d).size
    if t == 0:
        return np.zeros((size, size))
    Kq = 2 * K
    M = grid_points or max(64, 4 * max(rho0.K0, K) + 1)
    modes = mode_indices(K, d)
    q = -(modes[:, None, :] + modes[None, :, :])
    inside = np.all(np.abs(q) <= Kq, axis=-1)
    q_pos = flat_mode_index(q[inside], Kq)
    k2 = (modes ** 2).sum(axis=1).astype(float)
    alpha = HEAT_RATE * (k2[:, None] + k2[None, :])
    dots = -(modes @ modes.T).astype(float)
    fft_idx = np.arange(-Kq, Kq + 1) % M

    def integrand(s: float) -> np.ndarray:
        values = phi(evaluate_on_grid(heat_propagate_continuous(rho0.field, s), M))
        spectrum = np.fft.fftn(values) / M ** d
        phi_hat = spectrum[np.ix_(*([fft_idx] * d))].ravel()
        Vc = np.zeros(alpha.shape, dtype=complex)
        Vc[inside] = phi_hat[q_pos]
        Vc *= noise_prefactor * dots * np.exp(-alpha * (t - s))
        return _to_real(Vc, K, d)

    V, err = quad_vec(integrand, 0.0, t, epsabs=epsabs, epsrel=1e-12)
    log.debug("V_t quadrature at t=%.4g: estimated error %.3g", t, err)
    return V


def mean_vector(zeta0: SpectralField, t: float, K: int) -> np.ndarray:
    """Real coordinates of P_t zeta0 over mode_basis(K, d)."""
    _check_time(t)
    return mode_basis(K, zeta0.d).to_real(heat_propagate_continuous(zeta0, t))


def law_at_time(
    rho0: BandLimitedProfile,
    zeta0_law: GaussianLaw,
    t: float,
    K: int,
    noise_prefactor: Optional[float] = None,
) -> GaussianLaw:
    """Law of zeta_t: heat-decayed initial law plus the independent noise covariance V_t."""
    _check_time(t)
    prefactor = zeta0_law.noise_prefactor if noise_prefactor is None else noise_prefactor
    start = zeta0_law.restricted(K)
    decay = start.decay(t)
    cov = decay[:, None] * start.cov * decay[None, :] + covariance_V(rho0, t, K, prefactor)
    return GaussianLaw(K, rho0.d, decay * start.mean, cov, prefactor)


def zero_law(K: int, d: int, noise_prefactor: float = NOISE_PREFACTORS["physical"]) -> GaussianLaw:
    size = mode_basis(K, d).size
    return GaussianLaw(K, d, np.zeros(size), np.zeros((size, size)), noise_prefactor)


# ------------------------------------------------------------------ #
#  Sampling                                                           #
# ------------------------------------------------------------------ #

def covariance_root(cov: np.ndarray, tolerance: float = PSD_TOLERANCE) -> np.ndarray:
    """Symmetric PSD square root; eigenvalues in [-tolerance, 0) are clamped to 0."""
    vals, vecs = np.linalg.eigh(cov)
    lowest = float(vals.min()) if vals.size else 0.0
    if lowest < -tolerance:
        raise IndefiniteCovarianceError(lowest, tolerance)
    if lowest < 0:
        log.warning("clamping covariance eigenvalue %.3e to 0", lowest)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def sample_coordinates(law: GaussianLaw, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` draws of the real coordinates, shape (size, modes)."""
    root = covariance_root(law.cov)
    xi = rng.standard_normal((size, law.mean.size))
    return law.mean + xi @ root


def sample(law: GaussianLaw, rng: np.random.Generator) -> SpectralField:
    return law.basis.from_real(sample_coordinates(law, rng, 1)[0])


# ------------------------------------------------------------------ #
#  Hilbert-Schmidt growth                                             #
# ------------------------------------------------------------------ #

def hilbert_schmidt_bound_constant(I: float, K: int, d: int, noise_prefactor: float) -> float:
    """C_I with sum (1+|k|^2)^-I (1+|l|^2)^-I V_t[k,l]^2 <= C_I t ||Phi||_C^2."""
    k2 = k_squared_grid(K, d).ravel()
    w = (1.0 + k2) ** (-I)
    num = np.outer(w * k2, w * k2)
    den = HEAT_RATE * (k2[:, None] + k2[None, :])
    ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(noise_prefactor ** 2 * ratio.sum())

