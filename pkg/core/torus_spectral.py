"""
ssep-lab Torus Spectral Calculus
Discrete and continuous Fourier calculus on the lattice torus T_n^d and on T^d.

Conventions
-----------
* The lattice has N = 2n+1 sites per axis. Storage index p in {0..2n} is the
  point x = 2*pi*p/N, which on the torus is the same point as
  2*pi*(p - N)/N for p > n, so the stored set is exactly {2*pi*k/N : |k| <= n}.
* Continuous fields are truncated Fourier series over e^{ik.x}, orthonormal for
  the normalized measure (2*pi)^{-d} dx. Coefficients live in a centered array of
  shape (2K+1,)*d: array index i along an axis is the mode k = i - K.
* The real orthonormal basis is {1, sqrt(2)cos(k.x), sqrt(2)sin(k.x)} over the
  half-space of Z^d \\ {0} whose first nonzero component is positive, ordered by
  (|k|^2, k lexicographic), cos before sin. See ModeBasis.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
HEAT_RATE = 2.0 * np.pi ** 2  # generator 2*pi^2*Delta

ModeIndex = tuple[int, ...]


# ------------------------------------------------------------------ #
#  Field types                                                        #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class GridField:
    """Real values on the (2n+1)^d sites of T_n^d."""

    n: int
    d: int
    values: np.ndarray

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"lattice parameter n must be >= 1, got {self.n}")
        if self.d < 1:
            raise ValueError(f"dimension d must be >= 1, got {self.d}")
        values = np.array(self.values, dtype=float)
        expected = (2 * self.n + 1,) * self.d
        if values.shape != expected:
            raise ValueError(f"grid field needs shape {expected}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return 2 * self.n + 1

    @property
    def size(self) -> int:
        return self.N ** self.d

    @classmethod
    def constant(cls, n: int, d: int, value: float) -> "GridField":
        return cls(n, d, np.full((2 * n + 1,) * d, float(value)))

    @classmethod
    def from_function(cls, func: Callable[..., np.ndarray], n: int, d: int) -> "GridField":
        """Sample ``func(x_1, ..., x_d)`` at the lattice sites."""
        coords = lattice_axes(n, d)
        return cls(n, d, np.broadcast_to(func(*coords), (2 * n + 1,) * d))


@dataclass(frozen=True)
class SpectralField:
    """Truncated complex Fourier coefficients of a real field on T^d."""

    K: int
    d: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.K < 0:
            raise ValueError(f"truncation K must be >= 0, got {self.K}")
        coeffs = np.array(self.coeffs, dtype=complex)
        expected = (2 * self.K + 1,) * self.d
        if coeffs.shape != expected:
            raise ValueError(f"spectral field needs shape {expected}, got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("spectral coefficients must be finite")
        mirror = np.conj(coeffs[(slice(None, None, -1),) * self.d])
        scale = 1.0 + float(np.max(np.abs(coeffs), initial=0.0))
        if np.max(np.abs(coeffs - mirror), initial=0.0) > 1e-9 * scale:
            raise ValueError("spectral field is not Hermitian: coeff(-k) != conj(coeff(k))")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    def coeff(self, k: Sequence[int]) -> complex:
        k = tuple(int(c) for c in k)
        if len(k) != self.d:
            raise ValueError(f"mode {k} has wrong dimension for d={self.d}")
        if any(abs(c) > self.K for c in k):
            return 0j
        return complex(self.coeffs[tuple(c + self.K for c in k)])

    @classmethod
    def zeros(cls, K: int, d: int) -> "SpectralField":
        return cls(K, d, np.zeros((2 * K + 1,) * d, dtype=complex))

    @classmethod
    def single_mode(cls, k: Sequence[int], K: Optional[int] = None, amplitude: complex = 1.0) -> "SpectralField":
        """amplitude*e^{ik.x} + conj(amplitude)*e^{-ik.x} (or the constant when k = 0)."""
        k = tuple(int(c) for c in k)
        K = max(abs(c) for c in k) if K is None else K
        coeffs = np.zeros((2 * K + 1,) * len(k), dtype=complex)
        if all(c == 0 for c in k):
            coeffs[(K,) * len(k)] = complex(amplitude).real
        else:
            coeffs[tuple(c + K for c in k)] += amplitude
            coeffs[tuple(-c + K for c in k)] += np.conj(amplitude)
        return cls(K, len(k), coeffs)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        K = max(self.K, other.K)
        return SpectralField(K, self.d, resize(self, K).coeffs + resize(other, K).coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return self + other.scaled(-1.0)

    def scaled(self, factor: float) -> "SpectralField":
        return SpectralField(self.K, self.d, self.coeffs * float(factor))


# ------------------------------------------------------------------ #
#  Index bookkeeping                                                  #
# ------------------------------------------------------------------ #

def lattice_axes(n: int, d: int) -> list[np.ndarray]:
    """Broadcastable per-axis coordinates of T_n^d, in storage order."""
    N = 2 * n + 1
    p = np.arange(N)
    x = TWO_PI * np.where(p <= n, p, p - N) / N
    axes = []
    for j in range(d):
        shape = [1] * d
        shape[j] = N
        axes.append(x.reshape(shape))
    return axes


@lru_cache(maxsize=64)
def mode_indices(K: int, d: int) -> np.ndarray:
    """Modes of the (2K+1)^d box in the C order of a centered coefficient array."""
    grid = np.indices((2 * K + 1,) * d).reshape(d, -1).T - K
    grid.setflags(write=False)
    return grid


def flat_mode_index(k: np.ndarray, K: int) -> np.ndarray:
    """Flat position of mode(s) ``k`` (shape (..., d)) in a centered box of radius K."""
    k = np.asarray(k)
    d = k.shape[-1]
    strides = (2 * K + 1) ** np.arange(d - 1, -1, -1)
    return ((k + K) * strides).sum(axis=-1)


def _check_mode(k: Sequence[int], n: int) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=int))
    if np.any(np.abs(k) > n):
        raise ValueError(f"mode {tuple(k.tolist())} is not resolvable on T_{n}: need |k_j| <= {n}")
    return k


class ModeBasis:
    """Real orthonormal basis {1, sqrt2 cos(k.x), sqrt2 sin(k.x)} for |k_j| <= K."""

    def __init__(self, K: int, d: int):
        self.K = K
        self.d = d
        modes = mode_indices(K, d)
        half = []
        for k in modes:
            nz = k[k != 0]
            if nz.size and nz[0] > 0:
                half.append(tuple(int(c) for c in k))
        half.sort(key=lambda k: (sum(c * c for c in k), k))

        k_vectors = [(0,) * d]
        kinds = ["const"]
        for k in half:
            k_vectors += [k, k]
            kinds += ["cos", "sin"]
        self.k_vectors = np.array(k_vectors, dtype=int).reshape(-1, d)
        self.kinds = tuple(kinds)
        self.k_squared = (self.k_vectors ** 2).sum(axis=1).astype(float)
        self.labels = tuple(_label(kind, k) for kind, k in zip(kinds, k_vectors))
        self.size = len(kinds)

        # e_r = sum_k U[r, k] e^{ik.x}
        U = np.zeros((self.size, modes.shape[0]), dtype=complex)
        U[0, flat_mode_index(np.zeros(d, dtype=int), K)] = 1.0
        root = np.sqrt(0.5)
        for r in range(1, self.size, 2):
            k = self.k_vectors[r]
            plus, minus = flat_mode_index(k, K), flat_mode_index(-k, K)
            U[r, plus] = U[r, minus] = root
            U[r + 1, plus] = -1j * root
            U[r + 1, minus] = 1j * root
        U.setflags(write=False)
        self.U = U
        self._index = {label: i for i, label in enumerate(self.labels)}

    def to_real(self, g: "SpectralField") -> np.ndarray:
        """Real coordinates <g, e_r>, truncating or zero-padding g to this basis."""
        if g.d != self.d:
            raise ValueError(f"field dimension {g.d} does not match basis dimension {self.d}")
        c = resize(g, self.K).coeffs.ravel()
        return (np.conj(self.U) @ c).real

    def from_real(self, coords: np.ndarray) -> "SpectralField":
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.size,):
            raise ValueError(f"expected {self.size} real coordinates, got shape {coords.shape}")
        c = self.U.T @ coords
        return SpectralField(self.K, self.d, c.reshape((2 * self.K + 1,) * self.d))

    def restriction_indices(self, K_small: int) -> np.ndarray:
        """Positions in this basis of the elements of mode_basis(K_small, d)."""
        if K_small > self.K:
            raise ValueError(f"cannot restrict basis K={self.K} to larger K={K_small}")
        small = mode_basis(K_small, self.d)
        return np.array([self._index[label] for label in small.labels], dtype=int)

    def sobolev_weights(self, J: float) -> np.ndarray:
        return (1.0 + self.k_squared) ** J

    def lattice_samples(self, n: int) -> np.ndarray:
        """e_r(x) at every site of T_n^d, shape (size, (2n+1)^d), sites in C order."""
        if self.K > n:
            raise ValueError(f"basis K={self.K} is not resolvable on T_{n}")
        points = np.stack([np.broadcast_to(a, (2 * n + 1,) * self.d).ravel()
                           for a in lattice_axes(n, self.d)], axis=1)
        waves = np.exp(1j * points @ mode_indices(self.K, self.d).T)
        return (self.U @ waves.T).real


def _label(kind: str, k: Sequence[int]) -> str:
    if kind == "const":
        return "1"
    return f"{kind}({','.join(str(int(c)) for c in k)})"


@lru_cache(maxsize=64)
def mode_basis(K: int, d: int) -> ModeBasis:
    return ModeBasis(K, d)


# ------------------------------------------------------------------ #
#  Construction helpers                                               #
# ------------------------------------------------------------------ #

def resize(g: SpectralField, K: int) -> SpectralField:
    """Truncate (pr_K) or zero-pad g to truncation radius K."""
    if K == g.K:
        return g
    if K < g.K:
        cut = slice(g.K - K, g.K + K + 1)
        return SpectralField(K, g.d, g.coeffs[(cut,) * g.d])
    out = np.zeros((2 * K + 1,) * g.d, dtype=complex)
    pad = slice(K - g.K, K + g.K + 1)
    out[(pad,) * g.d] = g.coeffs
    return SpectralField(K, g.d, out)


def spectral_from_function(
    func: Callable[..., np.ndarray], d: int, K: int, quad_points: Optional[int] = None
) -> SpectralField:
    """Fourier coefficients <func, e^{ik.x}> for |k_j| <= K by FFT quadrature."""
    M = quad_points or max(8 * (2 * K + 1) + 1, 257)
    if M < 2 * K + 1:
        raise ValueError(f"quadrature needs at least {2 * K + 1} points per axis, got {M}")
    x = TWO_PI * np.arange(M) / M
    axes = []
    for j in range(d):
        shape = [1] * d
        shape[j] = M
        axes.append(x.reshape(shape))
    samples = np.broadcast_to(func(*axes), (M,) * d).astype(float)
    spectrum = np.fft.fftn(samples) / M ** d
    # pick k in {-K..K} out of FFT ordering
    idx = np.arange(-K, K + 1) % M
    coeffs = spectrum[np.ix_(*([idx] * d))]
    return SpectralField(K, d, _hermitize(coeffs, d))


def spectral_from_triples(d: int, triples: Sequence[Sequence]) -> SpectralField:
    """Field sum_i amplitude_i * cos(k_i.x + phase_i) from [k, amplitude, phase] triples."""
    parsed = []
    for triple in triples:
        if len(triple) != 3:
            raise ValueError(f"mode triple must be [k, amplitude, phase], got {triple!r}")
        k, amplitude, phase = triple
        k = tuple(int(c) for c in np.atleast_1d(k))
        if len(k) != d:
            raise ValueError(f"mode {k} has wrong dimension for d={d}")
        parsed.append((k, float(amplitude), float(phase)))
    K = max((max(abs(c) for c in k) for k, _, _ in parsed), default=0)
    field = SpectralField.zeros(K, d)
    for k, amplitude, phase in parsed:
        if all(c == 0 for c in k):
            field = field + SpectralField.single_mode(k, K, amplitude * np.cos(phase))
        else:
            field = field + SpectralField.single_mode(k, K, 0.5 * amplitude * np.exp(1j * phase))
    return field


def _hermitize(coeffs: np.ndarray, d: int) -> np.ndarray:
    mirror = np.conj(coeffs[(slice(None, None, -1),) * d])
    return 0.5 * (coeffs + mirror)


def evaluate(g: SpectralField, points: np.ndarray) -> np.ndarray:
    """Evaluate g at arbitrary points (shape (P, d))."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    modes = mode_indices(g.K, g.d)
    return (np.exp(1j * points @ modes.T) @ g.coeffs.ravel()).real


def evaluate_on_grid(g: SpectralField, M: int) -> np.ndarray:
    """Values of g at x_p = 2*pi*p/M, p in {0..M-1}^d, via zero-padded inverse FFT."""
    if M < 2 * g.K + 1:
        raise ValueError(f"grid of {M} points aliases modes up to K={g.K}")
    spectrum = np.zeros((M,) * g.d, dtype=complex)
    modes = mode_indices(g.K, g.d) % M
    np.add.at(spectrum, tuple(modes.T), g.coeffs.ravel())
    return (np.fft.ifftn(spectrum) * M ** g.d).real


def multiply(f: SpectralField, g: SpectralField) -> SpectralField:
    """Exact spectral product of two trigonometric polynomials."""
    K = f.K + g.K
    M = 2 * K + 1
    values = evaluate_on_grid(f, M) * evaluate_on_grid(g, M)
    spectrum = np.fft.fftn(values) / M ** f.d
    return SpectralField(K, f.d, _hermitize(np.fft.fftshift(spectrum), f.d))


# ------------------------------------------------------------------ #
#  Inner products, ex_n and pr_n                                      #
# ------------------------------------------------------------------ #

def _check_same_lattice(f: GridField, g: GridField):
    if (f.n, f.d) != (g.n, g.d):
        raise ValueError(f"lattice mismatch: (n={f.n}, d={f.d}) vs (n={g.n}, d={g.d})")


def inner_product_discrete(f: GridField, g: GridField) -> float:
    """<f, g>_n = (2n+1)^{-d} sum_x f(x) g(x)."""
    _check_same_lattice(f, g)
    return float(np.mean(f.values * g.values))


def inner_product_continuous(f: SpectralField, g: SpectralField) -> float:
    """Normalized L2 pairing of two real fields (Parseval over the common modes)."""
    if f.d != g.d:
        raise ValueError(f"dimension mismatch: {f.d} vs {g.d}")
    K = min(f.K, g.K)
    a, b = resize(f, K).coeffs, resize(g, K).coeffs
    return float(np.sum(a * np.conj(b)).real)


def extend(f: GridField) -> SpectralField:
    """ex_n: trigonometric interpolation of a lattice field (K = n)."""
    spectrum = np.fft.fftn(f.values) / f.size
    return SpectralField(f.n, f.d, _hermitize(np.fft.fftshift(spectrum), f.d))


def project(
    g: Union[SpectralField, Callable[..., np.ndarray]], n: int, d: Optional[int] = None
) -> GridField:
    """pr_n: keep the modes |k_j| <= n of g and evaluate on T_n^d."""
    if not isinstance(g, SpectralField):
        if d is None:
            raise ValueError("projecting a continuous function needs the dimension d")
        g = spectral_from_function(g, d, n)
    c = resize(g, n).coeffs
    N = 2 * n + 1
    values = np.fft.ifftn(np.fft.ifftshift(c)) * N ** g.d
    return GridField(n, g.d, values.real)


# ------------------------------------------------------------------ #
#  Discrete operators and eigenvalues                                 #
# ------------------------------------------------------------------ #

def _check_axis(j: int, d: int):
    if not 0 <= j < d:
        raise ValueError(f"axis {j} out of range for d={d}")


def shift(f: GridField, j: int, steps: int = 1) -> GridField:
    """tau_j^n: (tau f)(x) = f(x + steps*e_j), periodic."""
    _check_axis(j, f.d)
    return GridField(f.n, f.d, np.roll(f.values, -steps, axis=j))


def discrete_derivative(f: GridField, j: int) -> GridField:
    """Forward difference d_{n,j} f = (2n+1)/(2 pi) (f(x+e_j) - f(x))."""
    _check_axis(j, f.d)
    v = f.values
    return GridField(f.n, f.d, f.N / TWO_PI * (np.roll(v, -1, axis=j) - v))


def discrete_laplacian(f: GridField) -> GridField:
    v = f.values
    acc = np.zeros_like(v)
    for j in range(f.d):
        acc += np.roll(v, -1, axis=j) + np.roll(v, 1, axis=j) - 2.0 * v
    return GridField(f.n, f.d, f.N ** 2 / (4.0 * np.pi ** 2) * acc)


def discrete_gradient_max_norm(f: GridField) -> float:
    """||nabla_n f||_{n,C} = max_x |(d_{n,j} f(x))_j|."""
    sq = sum(discrete_derivative(f, j).values ** 2 for j in range(f.d))
    return float(np.sqrt(np.max(sq)))


def eigenvalue_lambda(k: Sequence[int], n: int) -> float:
    """lambda_k^n with Delta_n e^{ik.x} = -lambda_k^n e^{ik.x}."""
    k = _check_mode(k, n)
    N = 2 * n + 1
    return float(N ** 2 / (2.0 * np.pi ** 2) * np.sum(1.0 - np.cos(TWO_PI * k / N)))


def eigenvalue_mu(k: Sequence[int], j: int, n: int) -> complex:
    """mu_{k,j}^n with d_{n,j} e^{ik.x} = mu e^{ik.x}."""
    k = _check_mode(k, n)
    _check_axis(j, k.size)
    N = 2 * n + 1
    return complex(N / TWO_PI * (np.exp(1j * TWO_PI * k[j] / N) - 1.0))


@lru_cache(maxsize=64)
def lambda_grid(n: int, d: int) -> np.ndarray:
    """All lambda_k^n on the centered box |k_j| <= n."""
    N = 2 * n + 1
    modes = mode_indices(n, d)
    lam = N ** 2 / (2.0 * np.pi ** 2) * np.sum(1.0 - np.cos(TWO_PI * modes / N), axis=1)
    lam = lam.reshape((N,) * d)
    lam.setflags(write=False)
    return lam


def k_squared_grid(K: int, d: int) -> np.ndarray:
    return (mode_indices(K, d) ** 2).sum(axis=1).reshape((2 * K + 1,) * d).astype(float)


# ------------------------------------------------------------------ #
#  Heat flows                                                         #
# ------------------------------------------------------------------ #

def _check_time(t: float):
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")


def heat_propagate_discrete(f: GridField, t: float) -> GridField:
    """Exact solution at time t of d/dt f = 2 pi^2 Delta_n f."""
    _check_time(t)
    if t == 0:
        return f
    g = extend(f)
    damped = g.coeffs * np.exp(-HEAT_RATE * lambda_grid(f.n, f.d) * t)
    return project(SpectralField(g.K, g.d, damped), f.n)


def heat_propagate_continuous(g: SpectralField, t: float) -> SpectralField:
    """P_t: multiply mode k by exp(-2 pi^2 |k|^2 t)."""
    _check_time(t)
    if t == 0:
        return g
    return SpectralField(g.K, g.d, g.coeffs * np.exp(-HEAT_RATE * k_squared_grid(g.K, g.d) * t))


def continuous_laplacian(g: SpectralField) -> SpectralField:
    return SpectralField(g.K, g.d, -k_squared_grid(g.K, g.d) * g.coeffs)


# ------------------------------------------------------------------ #
#  Sobolev norms                                                      #
# ------------------------------------------------------------------ #

def sobolev_norm(g: SpectralField, J: float) -> float:
    """Truncated H_J norm sqrt(sum_k (1+|k|^2)^J |g_k|^2)."""
    weights = (1.0 + k_squared_grid(g.K, g.d)) ** J
    value = float(np.sqrt(np.sum(weights * np.abs(g.coeffs) ** 2)))
    log.debug("H_%s norm over K=%d: %.6g", J, g.K, value)
    return value


def projection_tail_norm(g: SpectralField, n: int, J: float) -> float:
    """||g - pr_n g||_{H_J} over the modes carried by g."""
    modes = mode_indices(g.K, g.d)
    outside = (np.abs(modes) > n).any(axis=1).reshape(g.coeffs.shape)
    weights = (1.0 + k_squared_grid(g.K, g.d)) ** J
    return float(np.sqrt(np.sum(np.where(outside, weights * np.abs(g.coeffs) ** 2, 0.0))))


def sobolev_tail_constant(I: float, K: int, d: int) -> float:
    """C_I = sum_{|k_j| <= K} (1+|k|^2)^{-I}."""
    return float(np.sum((1.0 + k_squared_grid(K, d)) ** (-I)))


# ------------------------------------------------------------------ #
#  Bilinear forms                                                     #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class BilinearForm:
    """Symmetric bilinear form stored in the real basis of mode_basis(K, d)."""

    K: int
    d: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        size = mode_basis(self.K, self.d).size
        if entries.shape != (size, size):
            raise ValueError(f"form needs shape {(size, size)}, got {entries.shape}")
        scale = 1.0 + float(np.max(np.abs(entries), initial=0.0))
        if np.max(np.abs(entries - entries.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("bilinear form must be symmetric")
        entries = 0.5 * (entries + entries.T)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def basis(self) -> ModeBasis:
        return mode_basis(self.K, self.d)

    def __call__(self, f: SpectralField, g: SpectralField) -> float:
        return float(self.basis.to_real(f) @ self.entries @ self.basis.to_real(g))

    def complex_entries(self) -> np.ndarray:
        """A[e^{ik.x}, e^{il.x}] over the flattened centered box."""
        Ubar = np.conj(self.basis.U)
        return Ubar.T @ self.entries @ Ubar


def hilbert_schmidt_norm(A: BilinearForm, J: float) -> float:
    """sqrt(sum (1+|k|^2)^{-J} (1+|l|^2)^{-J} A[k,l]^2)."""
    w = A.basis.sobolev_weights(-J)
    return float(np.sqrt(np.sum(np.outer(w, w) * A.entries ** 2)))


def form_from_product(phi: SpectralField, psi: Optional[SpectralField] = None, K: Optional[int] = None) -> BilinearForm:
    """Symmetrized rank-one form (phi (x) psi + psi (x) phi) / 2."""
    psi = phi if psi is None else psi
    K = max(phi.K, psi.K) if K is None else K
    basis = mode_basis(K, phi.d)
    a, b = basis.to_real(phi), basis.to_real(psi)
    return BilinearForm(K, phi.d, 0.5 * (np.outer(a, b) + np.outer(b, a)))


def form_from_kernel(
    kernel: Callable[..., np.ndarray], d: int, K: int, quad_points: Optional[int] = None
) -> BilinearForm:
    """K_a[phi, psi] = int int a(x, y) phi(x) psi(y) dx dy for a kernel a(x_1..x_d, y_1..y_d)."""
    M = quad_points or max(4 * (2 * K + 1) + 1, 33)
    x = TWO_PI * np.arange(M) / M
    axes = []
    for j in range(2 * d):
        shape = [1] * (2 * d)
        shape[j] = M
        axes.append(x.reshape(shape))
    samples = np.broadcast_to(kernel(*axes), (M,) * (2 * d)).astype(float)
    spectrum = np.fft.fftn(samples) / M ** (2 * d)
    idx = np.arange(-K, K + 1) % M
    Mc = (2 * K + 1) ** d
    C = spectrum[np.ix_(*([idx] * (2 * d)))].reshape(Mc, Mc)
    Ubar = np.conj(mode_basis(K, d).U)
    return BilinearForm(K, d, (Ubar @ C @ Ubar.T).real)


def trace_of_form(A: BilinearForm) -> SpectralField:
    """Tr A(x) = A[delta_x, delta_x] as a field with modes up to 2K."""
    K, d = A.K, A.d
    Ac = A.complex_entries()
    modes = mode_indices(K, d)
    K2 = 2 * K
    out = np.zeros((2 * K2 + 1) ** d, dtype=complex)
    # coefficient at m collects A[e_{-k}, e_{l}] with l = k - m, i.e. m = k - l
    for k in modes:
        minus_k = flat_mode_index(-k, K)
        m = k - modes
        np.add.at(out, flat_mode_index(m, K2), Ac[minus_k, :])
    return SpectralField(K2, d, _hermitize(out.reshape((2 * K2 + 1,) * d), d))


# ------------------------------------------------------------------ #
#  Approximation errors of ex_n / Delta_n                             #
# ------------------------------------------------------------------ #

def interpolation_error(func: Callable[..., np.ndarray], n: int, d: int = 1, quad_points: int = 4096) -> float:
    """||ex_n f - f||_{L2} against an M-point-per-axis quadrature."""
    interpolant = evaluate_on_grid(extend(GridField.from_function(func, n, d)), quad_points)
    x = TWO_PI * np.arange(quad_points) / quad_points
    axes = []
    for j in range(d):
        shape = [1] * d
        shape[j] = quad_points
        axes.append(x.reshape(shape))
    exact = np.broadcast_to(func(*axes), (quad_points,) * d)
    return float(np.sqrt(np.mean((interpolant - exact) ** 2)))


def laplacian_consistency_error(g: SpectralField, n: int) -> float:
    """||ex_n Delta_n pr_n g - pr_n Delta g||_{L2}."""
    discrete = extend(discrete_laplacian(project(g, n)))
    continuous = resize(continuous_laplacian(g), n)
    return sobolev_norm(discrete - continuous, 0.0)


def square_exchange_error(f: GridField) -> float:
    """||ex_n(f^2) - (ex_n f)^2||_{L2}."""
    squared_first = extend(GridField(f.n, f.d, f.values ** 2))
    hat = extend(f)
    return sobolev_norm(squared_first - multiply(hat, hat), 0.0)
