"""
ssep-lab SSEP Simulator
Continuous-time simulation of the symmetric simple exclusion process on T_n^d,
its mean field and fluctuation field, and the exact small-lattice oracles
(master equation, two-point correlation ODE, brute-force generator).
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp
from numba import njit
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from core.errors import StateSpaceTooLargeError
from core.torus_spectral import (
    BilinearForm,
    GridField,
    SpectralField,
    discrete_laplacian,
    extend,
    heat_propagate_discrete,
    inner_product_discrete,
    lambda_grid,
    lattice_axes,
    mode_basis,
    project,
    resize,
    HEAT_RATE,
    TWO_PI,
)

log = logging.getLogger(__name__)

MASTER_SITE_CAP = 16
TWO_POINT_CAP = 100_000
_EVENT_CHUNK = 65_536


# ------------------------------------------------------------------ #
#  State                                                              #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class Configuration:
    """SSEP state: one packed occupancy bit per site, sites in C order."""

    n: int
    d: int
    bits: np.ndarray

    @classmethod
    def from_occupancy(cls, n: int, d: int, occupancy: np.ndarray) -> "Configuration":
        occ = np.asarray(occupancy)
        N = 2 * n + 1
        if occ.size != N ** d:
            raise ValueError(f"occupancy needs {N ** d} sites, got {occ.size}")
        if not np.all((occ == 0) | (occ == 1)):
            raise ValueError("occupancy values must be 0 or 1")
        bits = np.packbits(occ.astype(np.uint8).ravel())
        bits.setflags(write=False)
        return cls(n, d, bits)

    @property
    def N(self) -> int:
        return 2 * self.n + 1

    @property
    def size(self) -> int:
        return self.N ** self.d

    @property
    def occupancy(self) -> np.ndarray:
        occ = np.unpackbits(self.bits, count=self.size)
        return occ.reshape((self.N,) * self.d)

    @property
    def particle_count(self) -> int:
        return int(self.occupancy.sum())

    def as_field(self) -> GridField:
        return GridField(self.n, self.d, self.occupancy.astype(float))


@dataclass
class SimClock:
    """Simulation time, event counter and the RNG stream driving them."""

    rng: np.random.Generator
    t: float = 0.0
    events: int = 0

    def advance_to(self, t: float):
        if t < self.t:
            raise ValueError(f"clock cannot run backwards: {t} < {self.t}")
        self.t = t


def _check_profile(rho: GridField):
    if np.any(rho.values < 0.0) or np.any(rho.values > 1.0):
        raise ValueError(
            f"density profile must lie in [0, 1], got range "
            f"[{rho.values.min():.6g}, {rho.values.max():.6g}]"
        )


def sample_initial(rho0: GridField, rng: np.random.Generator) -> Configuration:
    """Draw eta from the product Bernoulli measure nu_rho."""
    _check_profile(rho0)
    occ = rng.random(rho0.values.shape) < rho0.values
    return Configuration.from_occupancy(rho0.n, rho0.d, occ)


# ------------------------------------------------------------------ #
#  Event loop                                                         #
# ------------------------------------------------------------------ #

def neighbor_table(n: int, d: int) -> np.ndarray:
    """neighbor_table[j, s] is the flat index of site s + e_j."""
    N = 2 * n + 1
    idx = np.arange(N ** d).reshape((N,) * d)
    return np.stack([np.roll(idx, -1, axis=j).ravel() for j in range(d)]).astype(np.int64)


@njit(cache=True)
def _apply_swaps(occ, neighbors, edges, n_sites):
    for e in edges:
        axis = e // n_sites
        site = e % n_sites
        other = neighbors[axis, site]
        tmp = occ[site]
        occ[site] = occ[other]
        occ[other] = tmp


def total_rate(n: int, d: int) -> float:
    N = 2 * n + 1
    return d * N ** d * N ** 2 / 2.0


def simulate(
    cfg: Configuration,
    t_end: float,
    rng: np.random.Generator,
    clock: Optional[SimClock] = None,
) -> Configuration:
    """Run the SSEP for time t_end from cfg.

    Every nearest-neighbour edge rings at rate (2n+1)^2/2; the next event is
    Exp(R) away with R the total rate, and the ringing edge is uniform.
    Swaps between equal occupancies are legal and counted.
    """
    if t_end < 0:
        raise ValueError(f"t_end must be non-negative, got {t_end}")
    clock = clock or SimClock(rng)
    start = clock.t
    occ = cfg.occupancy.ravel().copy()
    neighbors = neighbor_table(cfg.n, cfg.d)
    n_sites = cfg.size
    n_edges = cfg.d * n_sites
    rate = total_rate(cfg.n, cfg.d)

    elapsed = 0.0
    while True:
        expected = rate * (t_end - elapsed)
        size = int(min(_EVENT_CHUNK, expected + 6.0 * np.sqrt(expected) + 16))
        gaps = rng.exponential(1.0 / rate, size=size)
        times = elapsed + np.cumsum(gaps)
        accepted = int(np.searchsorted(times, t_end, side="right"))
        edges = rng.integers(0, n_edges, size=accepted)
        _apply_swaps(occ, neighbors, edges, n_sites)
        clock.events += accepted
        if accepted < size:
            break
        elapsed = float(times[-1])

    clock.advance_to(start + t_end)
    log.debug("simulated t=%.4g on T_%d^%d: %d events", t_end, cfg.n, cfg.d, clock.events)
    return Configuration.from_occupancy(cfg.n, cfg.d, occ)


def simulate_path(
    cfg: Configuration, times: Sequence[float], rng: np.random.Generator
) -> list[Configuration]:
    """Snapshots at an increasing time grid, restarting from each snapshot."""
    times = [float(t) for t in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError(f"snapshot times must be non-negative and sorted, got {times}")
    clock = SimClock(rng)
    snapshots = []
    current = cfg
    for t in times:
        current = simulate(current, t - clock.t, rng, clock)
        snapshots.append(current)
    return snapshots


# ------------------------------------------------------------------ #
#  Mean field and fluctuations                                        #
# ------------------------------------------------------------------ #

def mean_field(rho0: GridField, t: float) -> GridField:
    """rho_t^n = E eta_t^n, the discrete heat flow with generator 2 pi^2 Delta_n."""
    _check_profile(rho0)
    rho_t = heat_propagate_discrete(rho0, t)
    return GridField(rho_t.n, rho_t.d, np.clip(rho_t.values, 0.0, 1.0))


def fluctuation_field(eta: Configuration, rho_t: GridField) -> GridField:
    """zeta = (2n+1)^{d/2} (eta - rho_t)."""
    if (eta.n, eta.d) != (rho_t.n, rho_t.d):
        raise ValueError(
            f"lattice mismatch: configuration (n={eta.n}, d={eta.d}) vs "
            f"profile (n={rho_t.n}, d={rho_t.d})"
        )
    scale = eta.N ** (eta.d / 2.0)
    return GridField(eta.n, eta.d, scale * (eta.occupancy - rho_t.values))


# ------------------------------------------------------------------ #
#  Master equation                                                    #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class MasterDistribution:
    """Exact law of eta_t over all 2^S configurations; bit s of a state is site s."""

    n: int
    d: int
    t: float
    probabilities: np.ndarray

    @property
    def n_sites(self) -> int:
        return (2 * self.n + 1) ** self.d

    def occupancy_matrix(self) -> np.ndarray:
        return _state_bits(self.n_sites)

    def site_means(self) -> GridField:
        means = self.probabilities @ self.occupancy_matrix()
        return GridField(self.n, self.d, means.reshape((2 * self.n + 1,) * self.d))

    def pair_moments(self) -> np.ndarray:
        """E[eta(x) eta(y)] for all site pairs."""
        bits = self.occupancy_matrix().astype(float)
        return bits.T @ (bits * self.probabilities[:, None])

    def expectation(self, func: Callable[[np.ndarray], np.ndarray]) -> float:
        """E func(eta) with func vectorized over rows of the occupancy matrix."""
        return float(self.probabilities @ func(self.occupancy_matrix()))


def _state_bits(n_sites: int) -> np.ndarray:
    states = np.arange(2 ** n_sites, dtype=np.int64)
    return ((states[:, None] >> np.arange(n_sites)) & 1).astype(np.uint8)


def master_generator(n: int, d: int) -> sp.csr_matrix:
    """Q with dp/dt = Q p over the 2^S configurations."""
    neighbors = neighbor_table(n, d)
    S = neighbors.shape[1]
    rate = (2 * n + 1) ** 2 / 2.0
    states = np.arange(2 ** S, dtype=np.int64)
    rows, cols, vals = [], [], []
    for j in range(d):
        for s in range(S):
            t = neighbors[j, s]
            differ = ((states >> s) ^ (states >> t)) & 1 == 1
            src = states[differ]
            dst = src ^ ((1 << s) | (1 << int(t)))
            rows += [dst, src]
            cols += [src, src]
            vals += [np.full(src.size, rate), np.full(src.size, -rate)]
    Q = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 ** S, 2 ** S),
    )
    return Q.tocsr()


def product_law(rho0: GridField) -> np.ndarray:
    _check_profile(rho0)
    bits = _state_bits(rho0.size).astype(bool)
    rho = rho0.values.ravel()
    return np.prod(np.where(bits, rho, 1.0 - rho), axis=1)


def exact_master_distribution(rho0: GridField, t: float) -> MasterDistribution:
    """Solve the Kolmogorov forward equation from the product law nu_rho0."""
    if rho0.size > MASTER_SITE_CAP:
        raise StateSpaceTooLargeError(
            f"master equation needs (2n+1)^d <= {MASTER_SITE_CAP} sites, got {rho0.size}"
        )
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    p = product_law(rho0)
    if t > 0:
        p = expm_multiply(master_generator(rho0.n, rho0.d) * t, p)
        p = np.clip(p, 0.0, None)
    total = float(p.sum())
    if abs(total - 1.0) > 1e-10:
        log.warning("master distribution mass drifted to %.12f", total)
    log.debug("master equation over %d states at t=%.4g", p.size, t)
    return MasterDistribution(rho0.n, rho0.d, t, p)


# ------------------------------------------------------------------ #
#  Two-point correlations                                             #
# ------------------------------------------------------------------ #

@dataclass(frozen=True)
class TwoPointTable:
    """V(t,x,y) = E[eta_t(x) eta_t(y)] - rho_t(x) rho_t(y) for x != y.

    Stored WITHOUT the (2n+1)^{-d} prefactor; the diagonal is 0.
    """

    n: int
    d: int
    t: float
    V: np.ndarray

    def neighbor_correlation(self, j: int) -> np.ndarray:
        """V(t, x, x + e_j) for every site x."""
        neighbors = neighbor_table(self.n, self.d)
        sites = np.arange(self.V.shape[0])
        return self.V[sites, neighbors[j]]


def two_point_generator(n: int, d: int) -> sp.csr_matrix:
    """Two-particle exclusion generator on ordered pairs x != y; diagonal pairs pinned."""
    forward = neighbor_table(n, d)
    S = forward.shape[1]
    backward = np.empty_like(forward)
    for j in range(d):
        backward[j, forward[j]] = np.arange(S)
    moves = list(forward) + list(backward)
    rate = (2 * n + 1) ** 2 / 2.0

    X, Y = np.divmod(np.arange(S * S), S)
    off = X != Y
    X, Y = X[off], Y[off]
    here = X * S + Y
    rows, cols, vals = [], [], []
    for m in moves:
        Z = m[X]
        ok = Z != Y
        rows += [here[ok], here[ok]]
        cols += [Z[ok] * S + Y[ok], here[ok]]
        vals += [np.full(ok.sum(), rate), np.full(ok.sum(), -rate)]
        W = m[Y]
        ok = W != X
        rows += [here[ok], here[ok]]
        cols += [X[ok] * S + W[ok], here[ok]]
        vals += [np.full(ok.sum(), rate), np.full(ok.sum(), -rate)]
    L = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(S * S, S * S),
    )
    return L.tocsr()


def exact_two_point(
    rho0: GridField,
    t: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "DOP853",
    cap: int = TWO_POINT_CAP,
) -> TwoPointTable:
    """Integrate dV/dt = L V - ((2n+1)^2/2)(rho_t(x) - rho_t(y))^2 1{x ~ y}, V(0) = 0."""
    _check_profile(rho0)
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    S = rho0.size
    if S * S > cap:
        raise StateSpaceTooLargeError(
            f"two-point ODE dimension {S * S} exceeds cap {cap}"
        )
    if t == 0:
        return TwoPointTable(rho0.n, rho0.d, 0.0, np.zeros((S, S)))

    L = two_point_generator(rho0.n, rho0.d)
    rate = rho0.N ** 2 / 2.0
    forward = neighbor_table(rho0.n, rho0.d)
    src_x = np.concatenate([np.arange(S)] * rho0.d + list(forward))
    src_y = np.concatenate(list(forward) + [np.arange(S)] * rho0.d)
    src_idx = src_x * S + src_y

    spectrum = np.fft.fftn(rho0.values)
    decay_rates = HEAT_RATE * np.fft.ifftshift(lambda_grid(rho0.n, rho0.d))

    def rho_at(s: float) -> np.ndarray:
        return np.fft.ifftn(spectrum * np.exp(-decay_rates * s)).real.ravel()

    def rhs(s, v):
        rho = rho_at(s)
        out = L @ v
        out[src_idx] -= rate * (rho[src_x] - rho[src_y]) ** 2
        return out

    sol = solve_ivp(rhs, (0.0, t), np.zeros(S * S), method=method, rtol=rtol, atol=atol, t_eval=[t])
    if not sol.success:
        raise RuntimeError(f"two-point ODE failed: {sol.message}")
    log.debug("two-point ODE on %d unknowns: %d rhs evaluations", S * S, sol.nfev)
    V = sol.y[:, -1].reshape(S, S)
    V = 0.5 * (V + V.T)
    np.fill_diagonal(V, 0.0)
    return TwoPointTable(rho0.n, rho0.d, t, V)


def site_covariance(table: TwoPointTable, rho_t: GridField) -> np.ndarray:
    """Cov(eta_t(x), eta_t(y)) over all site pairs."""
    C = table.V.copy()
    r = rho_t.values.ravel()
    C[np.diag_indices_from(C)] = r * (1.0 - r)
    return C


def exact_second_moment(table: TwoPointTable, rho_t: GridField, phi: GridField, psi: GridField) -> float:
    """E <zeta_t, phi>_n <zeta_t, psi>_n from the two-point table."""
    if (phi.n, phi.d) != (table.n, table.d) or (psi.n, psi.d) != (table.n, table.d):
        raise ValueError("test functions must live on the table's lattice")
    C = site_covariance(table, rho_t)
    return float(phi.values.ravel() @ C @ psi.values.ravel()) / table.V.shape[0]


# ------------------------------------------------------------------ #
#  Generator                                                          #
# ------------------------------------------------------------------ #

def generator_apply_bruteforce(
    F: Callable[[SpectralField], float], rho: GridField, eta: Configuration
) -> float:
    """(2n+1)^2/2 * sum over edges of [G(eta^{x<->x+e_j}) - G(eta)], G = F(ex_n zeta)."""
    def G(occupancy: np.ndarray) -> float:
        zeta = GridField(eta.n, eta.d, eta.N ** (eta.d / 2.0) * (occupancy - rho.values))
        return float(F(extend(zeta)))

    occ = eta.occupancy
    base = G(occ)
    neighbors = neighbor_table(eta.n, eta.d)
    flat = occ.ravel()
    total = 0.0
    for j in range(eta.d):
        for s in range(eta.size):
            t = neighbors[j, s]
            if flat[s] == flat[t]:
                continue
            swapped = flat.copy()
            swapped[s], swapped[t] = flat[t], flat[s]
            total += G(swapped.reshape(occ.shape)) - base
    return eta.N ** 2 / 2.0 * total


def generator_expansion(
    rho: GridField,
    eta: Configuration,
    linear: Optional[SpectralField] = None,
    form: Optional[BilinearForm] = None,
) -> tuple[float, float]:
    """Leading terms of the generator on F(z) = <b, z> + A[z, z], z = ex_n zeta.

    Returns (2 pi^2 (2n+1)^{d/2} <Delta_n g, eta>_n,
             (8 pi^4/(2n+1)^2) sum_j <Q_j, (d_{n,j} eta)^2>_n)
    with g = pr_n DF(z) and Q_j(x) = A[d_j delta_x, d_j delta_x]. Both are exact
    for F of degree <= 2.
    """
    n, d, N = eta.n, eta.d, eta.N
    zeta = fluctuation_field(eta, rho)
    hat = extend(zeta)
    gradient = SpectralField.zeros(n, d)
    if linear is not None:
        gradient = gradient + resize(linear, n)
    A = None
    if form is not None:
        K = min(form.K, n)
        idx = form.basis.restriction_indices(K)
        A = form.entries[np.ix_(idx, idx)]
        basis = mode_basis(K, d)
        z = basis.to_real(hat)
        gradient = gradient + resize(basis.from_real(2.0 * A @ z), n)

    g = project(gradient, n)
    first = HEAT_RATE * N ** (d / 2.0) * inner_product_discrete(discrete_laplacian(g), eta.as_field())

    second = 0.0
    if A is not None:
        samples = basis.lattice_samples(n).reshape((-1,) + (N,) * d)
        occ = eta.occupancy.astype(float)
        for j in range(d):
            d_samples = N / TWO_PI * (np.roll(samples, -1, axis=j + 1) - samples)
            flat = d_samples.reshape(d_samples.shape[0], -1)
            Q = np.einsum("rx,rs,sx->x", flat, A, flat)
            d_eta = (N / TWO_PI * (np.roll(occ, -1, axis=j) - occ)).ravel()
            second += float(np.mean(Q * d_eta ** 2))
        second *= 8.0 * np.pi ** 4 / N ** 2
    return first, second


# ------------------------------------------------------------------ #
#  Debug exports                                                      #
# ------------------------------------------------------------------ #

def snapshot_frame(cfg: Configuration, t: float, rho_t: Optional[GridField] = None) -> pd.DataFrame:
    """Site-major table of one snapshot: site, coordinates, occupancy (and rho, zeta)."""
    axes = lattice_axes(cfg.n, cfg.d)
    data = {"time": np.full(cfg.size, float(t)), "site": np.arange(cfg.size)}
    for j, a in enumerate(axes):
        data[f"x{j + 1}"] = np.broadcast_to(a, (cfg.N,) * cfg.d).ravel()
    data["occupancy"] = cfg.occupancy.ravel().astype(int)
    if rho_t is not None:
        data["rho"] = rho_t.values.ravel()
        data["zeta"] = fluctuation_field(cfg, rho_t).values.ravel()
    return pd.DataFrame(data)


def snapshot_to_csv(cfg: Configuration, path: str, t: float = 0.0):
    snapshot_frame(cfg, t).to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def snapshot_to_bytes(cfg: Configuration) -> bytes:
    """Packed occupancy bits, site-major, MSB first."""
    return cfg.bits.tobytes()
