"""Discrete manifolds: mass-weighted node sets with a stiffness matrix.

A manifold here is a finite set of interior nodes carrying positive mass
weights (the discrete volume measure) and a symmetric positive-definite
stiffness matrix K. The Laplace-type base operator acts as W^{-1} K, which
is self-adjoint in the mass inner product sum_i w_i u_i v_i. Grid functions
are plain 1-D numpy arrays of length n_interior.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "DiscreteManifold",
    "RegionConfig",
    "build_interval",
    "build_rect",
    "build_graph",
    "inner",
    "norm",
    "validate_regions",
]


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteManifold:
    """Interior nodes with lumped mass and Dirichlet-eliminated stiffness.

    Attributes
    ----------
    mass : (n,) array
        Strictly positive weight per interior node (discrete volume).
    stiffness : (n, n) array
        Symmetric positive-definite bilinear-form matrix K. The operator
        matrix (maps node values to node values) is ``laplacian``.
    coords : (n, d) array or None
        Node positions, kept for reporting.
    boundary_nodes : tuple of int
        Eliminated node indices in the builder's full numbering
        (reporting only).
    dim : int
        Geometric dimension used e.g. for spectral-distance weights.
    """

    mass: np.ndarray
    stiffness: np.ndarray
    coords: np.ndarray | None = None
    boundary_nodes: tuple = ()
    dim: int = 1

    def __post_init__(self):
        w = _freeze(self.mass)
        K = _freeze(self.stiffness)
        object.__setattr__(self, "mass", w)
        object.__setattr__(self, "stiffness", K)
        if self.coords is not None:
            object.__setattr__(self, "coords", _freeze(self.coords))
        if w.ndim != 1 or np.any(w <= 0):
            raise ValueError("mass weights must be a 1-D strictly positive vector")
        n = w.size
        if K.shape != (n, n):
            raise ValueError(f"stiffness must be {n}x{n}, got {K.shape}")
        scale = np.abs(K).max()
        if scale == 0 or np.abs(K - K.T).max() > 1e-12 * scale:
            raise ValueError("stiffness must be symmetric to 1e-12 relative tolerance")
        try:
            np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            raise ValueError("stiffness must be positive definite") from None

    @property
    def n_interior(self):
        return self.mass.size

    @property
    def laplacian(self):
        """Operator matrix W^{-1} K of the base operator (dense)."""
        return self.stiffness / self.mass[:, None]


@dataclass(frozen=True)
class RegionConfig:
    """Index sets of interior nodes: two observation regions and the
    support region allowed for potential differences."""

    omega0: tuple
    omega1: tuple
    omega_prime: tuple
    omega: tuple = field(init=False)

    def __post_init__(self):
        for name in ("omega0", "omega1", "omega_prime"):
            vals = tuple(sorted(set(int(i) for i in getattr(self, name))))
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "omega", tuple(sorted(set(self.omega0) | set(self.omega1))))


def build_interval(n, length):
    """1-D interval mesh with homogeneous Dirichlet ends.

    ``n`` interior nodes, spacing h = length/(n+1); mass weights h and
    stiffness tridiag(-1, 2, -1)/h, so the operator W^{-1}K is the standard
    second difference /h^2 with eigenvalues 4/h^2 sin^2(k pi h / (2 length))
    converging to (k pi / length)^2.
    """
    n = int(n)
    if n < 3:
        raise ValueError(f"need at least 3 interior nodes, got {n}")
    if not length > 0:
        raise ValueError(f"length must be positive, got {length}")
    h = length / (n + 1)
    K = (np.diag(np.full(n, 2.0)) + np.diag(np.full(n - 1, -1.0), 1)
         + np.diag(np.full(n - 1, -1.0), -1)) / h
    coords = (h * np.arange(1, n + 1))[:, None]
    return DiscreteManifold(mass=np.full(n, h), stiffness=K, coords=coords,
                            boundary_nodes=(0, n + 1), dim=1)


def build_rect(nx, ny, lx, ly):
    """Rectangle mesh (5-point Dirichlet stencil), x index fastest.

    Interior node (i, j) sits at ((i+1)hx, (j+1)hy) with flat index
    j*nx + i. Mass weights hx*hy; the operator eigenvalues approximate
    pi^2 (p^2/lx^2 + q^2/ly^2).
    """
    nx, ny = int(nx), int(ny)
    if nx < 3 or ny < 3:
        raise ValueError(f"need at least 3 interior nodes per direction, got {nx}x{ny}")
    if not (lx > 0 and ly > 0):
        raise ValueError("side lengths must be positive")
    hx, hy = lx / (nx + 1), ly / (ny + 1)

    def second_diff(m):
        return (np.diag(np.full(m, 2.0)) + np.diag(np.full(m - 1, -1.0), 1)
                + np.diag(np.full(m - 1, -1.0), -1))

    # K = W * (Tx/hx^2 (+) Ty/hy^2) as a Kronecker sum, W = hx*hy
    K = (hy / hx) * np.kron(np.eye(ny), second_diff(nx)) \
        + (hx / hy) * np.kron(second_diff(ny), np.eye(nx))
    xs = hx * np.arange(1, nx + 1)
    ys = hy * np.arange(1, ny + 1)
    coords = np.column_stack([np.tile(xs, ny), np.repeat(ys, nx)])
    # full-grid boundary ring, (nx+2)x(ny+2) numbering
    full = np.arange((nx + 2) * (ny + 2)).reshape(ny + 2, nx + 2)
    ring = sorted(set(full[0]) | set(full[-1]) | set(full[:, 0]) | set(full[:, -1]))
    return DiscreteManifold(mass=np.full(nx * ny, hx * hy), stiffness=K,
                            coords=coords, boundary_nodes=tuple(ring), dim=2)


def build_graph(weights, mass, grounded, dim=2):
    """Weighted-graph mesh: grounded graph Laplacian as stiffness.

    Parameters
    ----------
    weights : (N, N) array
        Symmetric nonnegative edge weights over all N nodes; diagonal is
        ignored. The graph must be connected.
    mass : (N,) array
        Positive node weights; only the non-grounded part is kept.
    grounded : iterable of int
        Nonempty set of nodes eliminated as Dirichlet boundary; grounding a
        connected graph makes the restricted Laplacian positive definite.
    dim : int
        Dimension to report for spectral-distance weights (graphs carry no
        geometric dimension of their own).
    """
    Wt = np.asarray(weights, dtype=float)
    N = Wt.shape[0]
    if Wt.shape != (N, N):
        raise ValueError("weights must be square")
    scale = np.abs(Wt).max()
    if scale > 0 and np.abs(Wt - Wt.T).max() > 1e-12 * scale:
        raise ValueError("weights must be symmetric")
    if np.any(Wt < 0):
        raise ValueError("weights must be nonnegative")
    grounded = sorted(set(int(g) for g in grounded))
    if not grounded:
        raise ValueError("grounded set must be nonempty (operator would be singular)")
    if any(g < 0 or g >= N for g in grounded):
        raise ValueError("grounded indices out of range")
    mass = np.asarray(mass, dtype=float)
    if mass.shape != (N,):
        raise ValueError(f"mass must have length {N}")
    if np.any(mass <= 0):
        raise ValueError("mass weights must be strictly positive")
    adj = Wt.copy()
    np.fill_diagonal(adj, 0.0)
    ncomp, _ = connected_components(csr_matrix(adj != 0), directed=False)
    if ncomp != 1:
        raise ValueError("weight graph must be connected")
    L = np.diag(adj.sum(axis=1)) - adj
    keep = np.array([i for i in range(N) if i not in set(grounded)], dtype=int)
    if keep.size == 0:
        raise ValueError("all nodes grounded, nothing to solve for")
    return DiscreteManifold(mass=mass[keep], stiffness=L[np.ix_(keep, keep)],
                            coords=None, boundary_nodes=tuple(grounded), dim=int(dim))


def inner(manifold, u, v):
    """Mass-weighted inner product sum_i w_i u_i v_i.

    Evaluated as w . (u * v) so that symmetry in (u, v) is exact in
    floating point, not just up to rounding.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = manifold.n_interior
    if u.shape != (n,) or v.shape != (n,):
        raise ValueError(f"grid functions must have length {n}")
    return float(np.dot(manifold.mass, u * v))


def norm(manifold, u, where=None):
    """Mass-weighted 2-norm, optionally restricted to an index set."""
    u = np.asarray(u, dtype=float)
    if where is None:
        return float(np.sqrt(np.dot(manifold.mass * u, u)))
    idx = np.asarray(list(where), dtype=int)
    return float(np.sqrt(np.dot(manifold.mass[idx] * u[idx], u[idx])))


def validate_regions(manifold, regions):
    """Check a region configuration against a manifold.

    Rejects empty regions, out-of-range indices, and configurations where
    omega0 or omega1 is contained in omega_prime (each observation region
    must keep at least one node outside the perturbation support).
    Returns the validated config (with the union region populated).
    """
    n = manifold.n_interior
    for name in ("omega0", "omega1", "omega_prime"):
        idx = getattr(regions, name)
        if len(idx) == 0:
            raise ValueError(f"{name} must be nonempty")
        if idx[0] < 0 or idx[-1] >= n:
            raise ValueError(f"{name} has indices outside 0..{n - 1}")
    for name in ("omega0", "omega1"):
        if set(getattr(regions, name)) <= set(regions.omega_prime):
            raise ValueError(
                f"{name} \\ omega_prime must be nonempty: the observation region "
                "may not be swallowed by the perturbation support")
    return regions
