"""Resolvents and the heat semigroup of the fractional Schrodinger
operator, with the quantitative identities linking them: the eigenpair
series expansion of the resolvent, the distance-to-spectrum norm bound,
and the time-integral (Laplace transform) identity."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import domain

__all__ = [
    "Resolvent",
    "Semigroup",
    "SpectrumError",
    "QuadratureSpec",
    "resolvent_norm_check",
    "semigroup",
    "laplace_check",
]


class SpectrumError(ValueError):
    """Spectral parameter too close to an eigenvalue."""


class Resolvent:
    """Inverse of (operator - mu) with a cached LU factorization.

    ``mu`` may be real or complex but must keep a relative distance of at
    least 1e-10 (times the spectral radius) from every eigenvalue; closer
    values raise SpectrumError naming the offending eigenvalue.
    """

    def __init__(self, op, mu):
        self.op = op
        self.mu = mu
        self.spectrum = op.eig()
        ev = self.spectrum.eigenvalues
        gaps = np.abs(ev - mu)
        k = int(np.argmin(gaps))
        radius = max(np.abs(ev).max(), 1e-300)
        if gaps[k] <= 1e-10 * radius:
            raise SpectrumError(
                f"spectral parameter {mu} is within {gaps[k]:.3e} of eigenvalue "
                f"#{k + 1} = {ev[k]:.12g}; the resolvent is (numerically) singular")
        self.dist_to_spectrum = float(gaps[k])
        n = op.manifold.n_interior
        shifted = op.matrix.astype(complex if np.iscomplexobj(mu) else float)
        shifted[np.diag_indices(n)] -= mu
        self._lu = lu_factor(shifted)
        self._matrix = None

    @property
    def manifold(self):
        return self.op.manifold

    def apply(self, f):
        """Solve (operator - mu) u = f by the cached factorization."""
        f = np.asarray(f)
        if f.shape[0] != self.manifold.n_interior:
            raise ValueError("right-hand side length does not match the manifold")
        return lu_solve(self._lu, f)

    def series(self, f):
        """Eigenpair series: sum_k (mu_k - mu)^{-1} (f | v_k) v_k.

        Independent of the direct solve; the two agree to roundoff and are
        used as mutual oracles.
        """
        c = self.spectrum.project_coeffs(f)
        return self.spectrum.eigenvectors @ (c / (self.spectrum.eigenvalues - self.mu))

    @property
    def matrix(self):
        """Dense resolvent matrix (solved once, cached)."""
        if self._matrix is None:
            self._matrix = self.apply(np.eye(self.manifold.n_interior))
            self._matrix.setflags(write=False)
        return self._matrix

    def weighted_norm(self):
        """Operator norm in the mass inner product (largest singular value
        of W^{1/2} R W^{-1/2})."""
        ws = np.sqrt(self.manifold.mass)
        sym = (ws[:, None] * self.matrix) / ws[None, :]
        return float(np.linalg.svd(sym, compute_uv=False)[0])


@dataclass(frozen=True)
class NormCheckReport:
    mu: float
    norm_computed: float
    norm_bound: float
    equality_gap: float
    passed: bool


def resolvent_norm_check(res, tol=1e-8):
    """Check the resolvent norm against 1/dist(mu, spectrum).

    The bound holds with equality for a self-adjoint operator, so both the
    inequality (with ``tol`` slack) and the equality gap are reported.
    """
    computed = res.weighted_norm()
    bound = 1.0 / res.dist_to_spectrum
    gap = abs(computed - bound) / bound
    passed = computed <= bound * (1 + tol)
    return NormCheckReport(mu=res.mu, norm_computed=computed, norm_bound=bound,
                           equality_gap=float(gap), passed=bool(passed))


class Semigroup:
    """Heat semigroup of the operator at time t >= 0, assembled in the
    eigenbasis: sum_k exp(-mu_k t) v_k (v_k | .)."""

    def __init__(self, op, t):
        if t < 0:
            raise ValueError(f"time must be nonnegative, got {t}")
        self.op = op
        self.t = float(t)
        dec = op.eig()
        decay = np.exp(-dec.eigenvalues * self.t)
        self.matrix = (dec.eigenvectors * decay) @ (dec.eigenvectors.T * op.manifold.mass)
        self.matrix.setflags(write=False)

    @property
    def manifold(self):
        return self.op.manifold

    def apply(self, f):
        return self.matrix @ np.asarray(f, dtype=float)

    def weighted_norm(self):
        ws = np.sqrt(self.manifold.mass)
        sym = (ws[:, None] * self.matrix) / ws[None, :]
        return float(np.linalg.svd(sym, compute_uv=False)[0])


def semigroup(op, t):
    """Semigroup member at time t (matrix exponential via the eigenbasis)."""
    return Semigroup(op, t)


@dataclass(frozen=True)
class QuadratureSpec:
    """Time-quadrature parameters for the semigroup integral."""

    target_tol: float = 1e-6
    points_per_panel: int = 64
    t_max: float | None = None   # horizon; derived from the tail bound if None


@dataclass(frozen=True)
class LaplaceReport:
    mu: float
    t_max: float
    tail_bound: float
    max_abs_deviation: float
    passed: bool


def laplace_check(op, mu, quad=QuadratureSpec()):
    """Quadrature the damped semigroup over [0, T] and compare with the
    resolvent at -mu, entrywise.

    The integral of exp(-mu t) S(t) over (T, inf) is bounded in operator
    norm by exp(-(mu + mu_1) T) / (mu + mu_1); T is chosen to push that
    bound below a tenth of the target tolerance. Panels grow geometrically
    from min(1, 20/(mu + mu_max)) up to unit length so Gauss-Legendre stays
    at machine precision for stiff spectra.
    """
    if not mu > 0:
        raise ValueError(f"spectral parameter must be positive, got {mu}")
    dec = op.eig()
    mu1 = dec.eigenvalues[0]
    mu_max = dec.eigenvalues[-1]
    if quad.t_max is None:
        # exp(-(mu+mu1) T)/(mu+mu1) < 0.1 * tol, with margin for rounding
        t_max = max(1.0, np.log(20.0 / (quad.target_tol * (mu + mu1))) / (mu + mu1))
    else:
        t_max = float(quad.t_max)
    tail = np.exp(-(mu + mu1) * t_max) / (mu + mu1)
    if tail > 0.1 * quad.target_tol:
        raise ValueError(
            f"quadrature horizon {t_max} leaves tail bound {tail:.3e} above "
            f"a tenth of the target tolerance {quad.target_tol:.1e}")

    # graded panels
    edges = [0.0]
    width = min(1.0, 20.0 / (mu + mu_max))
    while edges[-1] < t_max:
        edges.append(min(edges[-1] + width, t_max))
        width = min(1.0, 2 * width)
    x, gl_w = np.polynomial.legendre.leggauss(quad.points_per_panel)

    n = op.manifold.n_interior
    V = dec.eigenvectors
    VW = dec.eigenvectors.T * op.manifold.mass
    # quadrature of exp(-mu t) S(t), factored through the eigenbasis: the
    # damped semigroup at each node is V diag(exp(-(mu+mu_k) t)) V^T W
    acc = np.zeros(n)
    for a, b in zip(edges[:-1], edges[1:]):
        ts = 0.5 * (b - a) * x + 0.5 * (a + b)
        decay = np.exp(-np.outer(ts, dec.eigenvalues + mu))
        acc += 0.5 * (b - a) * (gl_w[:, None] * decay).sum(axis=0)
    integral = (V * acc) @ VW

    reference = Resolvent(op, -mu).matrix
    deviation = float(np.abs(integral - reference).max())
    return LaplaceReport(mu=float(mu), t_max=float(t_max), tail_bound=float(tail),
                         max_abs_deviation=deviation,
                         passed=bool(deviation <= quad.target_tol))
