"""
ssep-lab Observables
The finite catalog of test functionals F evaluated on particle fluctuation fields
and on Gaussian samples, with exact Gaussian expectations where F is polynomial.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from core.errors import NotPolynomialError
from core.ou_gaussian import GaussianLaw
from core.torus_spectral import (
    BilinearForm,
    GridField,
    SpectralField,
    extend,
    form_from_product,
    inner_product_continuous,
    inner_product_discrete,
    mode_basis,
    project,
    sobolev_norm,
    spectral_from_triples,
)

log = logging.getLogger(__name__)

HERMITE_ORDER = 96


# ------------------------------------------------------------------ #
#  Scalar functions                                                   #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class ScalarFunction:
    """f: R^m -> R with recorded derivative bounds and, when polynomial, its monomials."""

    name: str
    arity: int
    func: Callable[..., np.ndarray]
    derivative_bounds: tuple[float, float, float]
    polynomial: Optional[dict[tuple[int, ...], float]] = None

    def __call__(self, *args: np.ndarray) -> np.ndarray:
        return self.func(*args)

    @property
    def degree(self) -> Optional[int]:
        if self.polynomial is None:
            return None
        return max((sum(e) for e in self.polynomial), default=0)


def _power(name: str, p: int) -> ScalarFunction:
    return ScalarFunction(name, 1, lambda x: x ** p, (math.inf, math.inf, math.inf), {(p,): 1.0})


def poly_function(coefficients: list[float]) -> ScalarFunction:
    if not 1 <= len(coefficients) <= 5:
        raise ValueError(f"poly needs 1..5 coefficients (degree <= 4), got {len(coefficients)}")
    coeffs = [float(c) for c in coefficients]
    return ScalarFunction(
        "poly", 1, lambda x: np.polynomial.polynomial.polyval(x, coeffs),
        (math.inf, math.inf, math.inf),
        {(p,): c for p, c in enumerate(coeffs) if c != 0.0},
    )


def cos_function(omega: float = 1.0) -> ScalarFunction:
    w = abs(float(omega))
    return ScalarFunction("cos", 1, lambda x: np.cos(omega * x), (w, w ** 2, w ** 3))


def exp_clip_function(clip: float = 4.0) -> ScalarFunction:
    """exp(clip * tanh(x / clip)): exponential near 0, bounded with bounded derivatives."""
    if clip <= 0:
        raise ValueError(f"exp_clip needs clip > 0, got {clip}")
    grid = np.linspace(-20 * clip, 20 * clip, 20001)
    values = np.exp(clip * np.tanh(grid / clip))
    bounds = []
    for _ in range(3):
        values = np.gradient(values, grid)
        bounds.append(float(np.max(np.abs(values))))
    return ScalarFunction("exp_clip", 1, lambda x: np.exp(clip * np.tanh(x / clip)), tuple(bounds))


def product_function() -> ScalarFunction:
    return ScalarFunction("product", 2, lambda x, y: x * y, (math.inf, 1.0, 0.0), {(1, 1): 1.0})


def constant_function(value: float) -> ScalarFunction:
    return ScalarFunction("constant", 0, lambda: float(value), (0.0, 0.0, 0.0), {(): float(value)})


# ------------------------------------------------------------------ #
#  Observable                                                         #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class Observable:
    """One of: linear <phi, zeta>; smooth f(<phi_1, zeta>, ..); quadratic A[zeta, zeta]."""

    name: str
    kind: str
    phis: tuple[SpectralField, ...] = ()
    f: Optional[ScalarFunction] = None
    form: Optional[BilinearForm] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("linear", "smooth", "quadratic"):
            raise ValueError(f"unknown observable kind {self.kind!r}")
        if self.kind == "linear" and len(self.phis) != 1:
            raise ValueError("linear observable needs exactly one test function")
        if self.kind == "smooth" and (self.f is None or self.f.arity != len(self.phis)):
            raise ValueError("smooth observable needs f with one argument per test function")
        if self.kind == "quadratic" and self.form is None:
            raise ValueError("quadratic observable needs a bilinear form")

    @property
    def d(self) -> int:
        if self.form is not None:
            return self.form.d
        return self.phis[0].d if self.phis else int(self.params.get("d", 1))

    @property
    def K(self) -> int:
        """Largest mode the observable sees."""
        if self.form is not None:
            return self.form.K
        return max((phi.K for phi in self.phis), default=0)

    @property
    def is_polynomial(self) -> bool:
        return self.kind != "smooth" or self.f.polynomial is not None

    def pairing_matrix(self, K: int) -> np.ndarray:
        """Rows: real coordinates of each phi over mode_basis(K, d)."""
        basis = mode_basis(K, self.d)
        return np.array([basis.to_real(phi) for phi in self.phis]).reshape(len(self.phis), basis.size)


def eval_on_particle(obs: Observable, zeta: GridField) -> float:
    """F evaluated through the lattice pairings <pr_n phi, zeta>_n."""
    if obs.kind == "quadratic":
        hat = extend(zeta)
        return obs.form(hat, hat)
    pairings = [inner_product_discrete(project(phi, zeta.n), zeta) for phi in obs.phis]
    if obs.kind == "linear":
        return pairings[0]
    return float(obs.f(*pairings))


def eval_on_gaussian_sample(obs: Observable, zeta: SpectralField) -> float:
    """F evaluated through the continuous pairings <phi, zeta>."""
    if obs.kind == "quadratic":
        return obs.form(zeta, zeta)
    pairings = [inner_product_continuous(phi, zeta) for phi in obs.phis]
    if obs.kind == "linear":
        return pairings[0]
    return float(obs.f(*pairings))


def eval_on_coordinates(obs: Observable, coords: np.ndarray, K: int) -> np.ndarray:
    """Vectorized F over rows of real coordinates on mode_basis(K, d)."""
    coords = np.atleast_2d(coords)
    if obs.kind == "quadratic":
        small, big = min(K, obs.form.K), max(K, obs.form.K)
        idx = mode_basis(big, obs.d).restriction_indices(small)
        if K >= obs.form.K:
            z = coords[:, idx]
            A = obs.form.entries
        else:
            z = coords
            A = obs.form.entries[np.ix_(idx, idx)]
        return np.einsum("ir,rs,is->i", z, A, z)
    Y = coords @ obs.pairing_matrix(K).T
    if obs.kind == "linear":
        return Y[:, 0]
    if obs.f.arity == 0:
        return np.full(coords.shape[0], obs.f())
    return np.asarray(obs.f(*Y.T), dtype=float)


def sobolev_norm_minus_I(zeta: Union[GridField, SpectralField], I: float) -> float:
    """Truncated H_{-I} norm of ex_n zeta (or of a spectral field directly)."""
    g = extend(zeta) if isinstance(zeta, GridField) else zeta
    if I <= g.d / 2.0:
        raise ValueError(f"need I > d/2 = {g.d / 2.0} for a summable tail, got I={I}")
    return sobolev_norm(g, -I)


# ------------------------------------------------------------------ #
#  Gaussian expectations                                              #
# ------------------------------------------------------------------ #

def _isserlis(indices: tuple[int, ...], mean: np.ndarray, cov: np.ndarray) -> float:
    """E prod_i Y_{indices[i]} for Y ~ N(mean, cov), by recursion on the first factor."""
    if not indices:
        return 1.0
    a, rest = indices[0], indices[1:]
    total = mean[a] * _isserlis(rest, mean, cov)
    for pos, b in enumerate(rest):
        total += cov[a, b] * _isserlis(rest[:pos] + rest[pos + 1:], mean, cov)
    return total


def gaussian_expectation_closed_form(obs: Observable, law: GaussianLaw) -> float:
    """Exact E F(zeta) under the law, for F polynomial of degree <= 4 in the field."""
    if obs.kind == "quadratic":
        if obs.form.K <= law.K:
            sub = law.restricted(obs.form.K)
            A = obs.form.entries
        else:
            idx = obs.form.basis.restriction_indices(law.K)
            sub, A = law, obs.form.entries[np.ix_(idx, idx)]
        return float(np.sum(A * sub.cov) + sub.mean @ A @ sub.mean)

    P = obs.pairing_matrix(law.K)
    mean = P @ law.mean
    cov = P @ law.cov @ P.T
    if obs.kind == "linear":
        return float(mean[0])
    if obs.f.polynomial is None:
        raise NotPolynomialError(f"observable {obs.name!r} has no closed-form Gaussian expectation")
    if obs.f.degree > 4:
        raise NotPolynomialError(f"observable {obs.name!r} has degree {obs.f.degree} > 4")
    total = 0.0
    for exponents, c in obs.f.polynomial.items():
        indices = tuple(i for i, e in enumerate(exponents) for _ in range(e))
        total += c * _isserlis(indices, mean, cov)
    return float(total)


def gaussian_expectation_1d(obs: Observable, law: GaussianLaw, order: int = HERMITE_ORDER) -> float:
    """E f(<phi, zeta>) for a single pairing by Gauss-Hermite quadrature."""
    if obs.kind != "smooth" or obs.f.arity != 1:
        raise ValueError("Gauss-Hermite route needs a smooth observable of one pairing")
    P = obs.pairing_matrix(law.K)
    mu = float((P @ law.mean)[0])
    var = float((P @ law.cov @ P.T)[0, 0])
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    x = mu + math.sqrt(2.0 * max(var, 0.0)) * nodes
    return float(weights @ obs.f(x) / math.sqrt(math.pi))


def quadratic_coefficients(obs: Observable, K: int) -> tuple[np.ndarray, np.ndarray, float]:
    """(A, b, c) with F(z) = z.A.z + b.z + c on real coordinates over mode_basis(K, d)."""
    size = mode_basis(K, obs.d).size
    if obs.kind == "quadratic":
        A = np.zeros((size, size))
        small, big = min(K, obs.form.K), max(K, obs.form.K)
        idx = mode_basis(big, obs.d).restriction_indices(small)
        if K >= obs.form.K:
            A[np.ix_(idx, idx)] = obs.form.entries
        else:
            A = obs.form.entries[np.ix_(idx, idx)].copy()
        return A, np.zeros(size), 0.0
    P = obs.pairing_matrix(K)
    if obs.kind == "linear":
        return np.zeros((size, size)), P[0].copy(), 0.0
    if obs.f.polynomial is None or obs.f.degree > 2:
        raise NotPolynomialError(f"observable {obs.name!r} is not of degree <= 2 in the field")
    A, b, c = np.zeros((size, size)), np.zeros(size), 0.0
    for exponents, coef in obs.f.polynomial.items():
        idx = [i for i, e in enumerate(exponents) for _ in range(e)]
        if not idx:
            c += coef
        elif len(idx) == 1:
            b += coef * P[idx[0]]
        else:
            outer = np.outer(P[idx[0]], P[idx[1]])
            A += coef * 0.5 * (outer + outer.T)
    return A, b, c


# ------------------------------------------------------------------ #
#  Catalog                                                            #
# ------------------------------------------------------------------ #

CATALOG = (
    "constant",
    "linear",
    "pairing_square",
    "pairing_cube",
    "pairing_quartic",
    "pairing_poly",
    "pairing_cos",
    "pairing_exp_clip",
    "pairing_product",
    "quadratic_form",
    "sobolev_square",
)


def default_phi(d: int) -> list:
    """sqrt(2) cos(x_1) as a config triple."""
    k = 1 if d == 1 else [1] + [0] * (d - 1)
    return [[k, math.sqrt(2.0), 0.0]]


def _phi(params: dict, key: str, d: int) -> SpectralField:
    return spectral_from_triples(d, params.get(key, default_phi(d)))


def observable_from_config(name: str, params: Optional[dict], d: int, K: Optional[int] = None) -> Observable:
    """Build a catalog observable; unknown names or parameters raise ValueError."""
    params = dict(params or {})
    if name not in CATALOG:
        raise ValueError(f"unknown observable {name!r}; catalog: {', '.join(CATALOG)}")

    if name == "constant":
        return Observable(name, "smooth", (), constant_function(params.get("value", 1.0)),
                          params={**params, "d": d})
    if name == "linear":
        return Observable(name, "linear", (_phi(params, "phi", d),), params=params)
    if name == "pairing_product":
        phis = (_phi(params, "phi", d), _phi(params, "psi", d))
        return Observable(name, "smooth", phis, product_function(), params=params)
    if name == "quadratic_form":
        form = form_from_product(_phi(params, "phi", d), _phi(params, "psi", d))
        return Observable(name, "quadratic", form=form, params=params)
    if name == "sobolev_square":
        I = float(params.get("I", 1.0))
        K_form = int(params.get("K", K if K is not None else 4))
        basis = mode_basis(K_form, d)
        form = BilinearForm(K_form, d, np.diag(basis.sobolev_weights(-I)))
        return Observable(name, "quadratic", form=form, params=params)

    phi = _phi(params, "phi", d)
    if name == "pairing_square":
        f = _power("square", 2)
    elif name == "pairing_cube":
        f = _power("cube", 3)
    elif name == "pairing_quartic":
        f = _power("quartic", 4)
    elif name == "pairing_poly":
        f = poly_function(params.get("coefficients", [0.0, 0.0, 1.0]))
    elif name == "pairing_cos":
        f = cos_function(params.get("omega", 1.0))
    else:
        f = exp_clip_function(params.get("clip", 4.0))
    return Observable(name, "smooth", (phi,), f, params=params)


def smoothness_report(obs: Observable) -> dict:
    """Metadata: truncation, outer-shell coefficient size of each phi, f derivative bounds."""
    shells = []
    for phi in obs.phis:
        c = np.abs(phi.coeffs)
        inner = c[(slice(1, -1),) * phi.d] if phi.K > 0 else np.zeros(0)
        shells.append(float(c.max() if phi.K == 0 else (c.sum() - inner.sum())))
    return {
        "observable": obs.name,
        "kind": obs.kind,
        "K": obs.K,
        "outer_shell_coefficients": shells,
        # unbounded derivatives (polynomials) are reported as null
        "derivative_bounds": [float(b) if math.isfinite(b) else None for b in obs.f.derivative_bounds] if obs.f else None,
        "polynomial": obs.is_polynomial,
    }

