"""Internal spectral data: eigenvalues plus eigenvectors restricted to an
observation set, with deterministic gauge fixing, gauge-invariant
comparison through restricted spectral projectors, and recovery of rates
and projectors from time samples of the semigroup (matrix-pencil
inversion of a finite exponential sum)."""

from dataclasses import dataclass

import numpy as np

from .spectral import SpectralDecomposition

__all__ = [
    "InternalSpectralData",
    "ComparisonReport",
    "ExpFitResult",
    "ExpFitError",
    "GaugeAlignmentError",
    "cluster_eigenvalues",
    "extract",
    "align_gauges",
    "compare",
    "semigroup_samples",
    "recover_rates",
]

VANISH_TOL = 1e-12


class GaugeAlignmentError(ValueError):
    """Eigenvector gauges of the two decompositions are inconsistent."""


class ExpFitError(RuntimeError):
    """Exponential-sum recovery rejected (residual above threshold)."""


def cluster_eigenvalues(values, rel_tol=1e-8):
    """Group an ascending eigenvalue list into maximal near-degenerate runs.

    Two consecutive values belong to the same cluster when their gap is
    below ``rel_tol`` times the larger magnitude (floored at ``rel_tol``
    absolute for values near zero). Returns a list of (start, stop) ranges.
    """
    values = np.asarray(values, dtype=float)
    clusters = []
    start = 0
    for k in range(1, values.size):
        scale = max(abs(values[k]), abs(values[k - 1]), 1.0)
        if values[k] - values[k - 1] >= rel_tol * scale:
            clusters.append((start, k))
            start = k
    if values.size:
        clusters.append((start, values.size))
    return clusters


@dataclass(frozen=True, eq=False)
class GaugeRecord:
    """Sign/rotation choices applied during extraction, for reproducibility."""

    signs: tuple
    flagged: tuple           # modes vanishing identically on the window
    rule: str = "largest-entry-positive"


@dataclass(frozen=True, eq=False)
class InternalSpectralData:
    """Eigenvalues with eigenvectors restricted to an observation set.

    ``vectors[:, k]`` holds the k-th eigenvector's values on ``omega``.
    ``clusters`` partitions the modes into near-degenerate runs at
    ``cluster_tol``; within a cluster the basis carries an orthogonal
    gauge freedom, so comparisons go through projector kernels.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    omega: tuple
    mass_omega: np.ndarray
    clusters: tuple
    cluster_tol: float
    gauge: GaugeRecord

    def __post_init__(self):
        for name in ("eigenvalues", "vectors", "mass_omega"):
            a = np.ascontiguousarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_modes(self):
        return self.eigenvalues.size

    def projector(self, block):
        """Restricted projector kernel of a mode block: sum of outer
        products of the block's restricted eigenvectors (gauge invariant)."""
        start, stop = block
        V = self.vectors[:, start:stop]
        return V @ V.T

    def rotated(self, rotations):
        """Copy with orthogonal matrices applied inside clusters (a pure
        gauge change; used by invariance tests)."""
        V = self.vectors.copy()
        for (start, stop), Q in rotations:
            V[:, start:stop] = V[:, start:stop] @ Q
        return InternalSpectralData(
            eigenvalues=self.eigenvalues, vectors=V, omega=self.omega,
            mass_omega=self.mass_omega, clusters=self.clusters,
            cluster_tol=self.cluster_tol, gauge=self.gauge)


def extract(dec, omega, cluster_tol=1e-8):
    """Restrict a decomposition to an observation window with a
    deterministic gauge.

    For each numerically simple mode the sign is fixed so the
    largest-magnitude entry on the window is positive (ties resolved by
    lowest index). Near-degenerate clusters are stored unrotated and
    marked. A mode vanishing identically on the window (max entry below
    1e-12) keeps a global first-nonzero sign rule and is flagged.
    """
    omega_idx = np.asarray(sorted(set(int(i) for i in omega)), dtype=int)
    if omega_idx.size == 0:
        raise ValueError("observation set must be nonempty")
    n = dec.manifold.n_interior
    if omega_idx[0] < 0 or omega_idx[-1] >= n:
        raise ValueError(f"observation indices outside 0..{n - 1}")
    clusters = cluster_eigenvalues(dec.eigenvalues, cluster_tol)
    V = dec.eigenvectors[omega_idx, :].copy()
    signs = np.ones(dec.n)
    flagged = []
    for start, stop in clusters:
        if stop - start > 1:
            continue
        k = start
        col = V[:, k]
        j = int(np.argmax(np.abs(col)))
        if np.abs(col[j]) <= VANISH_TOL:
            flagged.append(k)
            full = dec.eigenvectors[:, k]
            nz = np.nonzero(np.abs(full) > VANISH_TOL)[0]
            if nz.size and full[nz[0]] < 0:
                signs[k] = -1.0
        elif col[j] < 0:
            signs[k] = -1.0
    V = V * signs
    return InternalSpectralData(
        eigenvalues=dec.eigenvalues.copy(), vectors=V, omega=tuple(omega_idx),
        mass_omega=dec.manifold.mass[omega_idx], clusters=tuple(clusters),
        cluster_tol=float(cluster_tol),
        gauge=GaugeRecord(signs=tuple(signs), flagged=tuple(flagged)))


def align_gauges(dec_ref, dec, cluster_tol=1e-8):
    """Rotate eigenvectors of ``dec`` within its near-degenerate clusters
    (and flip signs of simple modes) to best match ``dec_ref``.

    The rotation is the mass-weighted orthogonal Procrustes solution per
    cluster, an allowed gauge change: inside a degenerate eigenspace any
    orthogonal remix is again an eigenbasis. Returns a new decomposition.
    """
    if dec.n != dec_ref.n:
        raise ValueError("decompositions have different sizes")
    w = dec.manifold.mass
    V = dec.eigenvectors.copy()
    for start, stop in cluster_eigenvalues(dec.eigenvalues, cluster_tol):
        block = V[:, start:stop]
        ref = dec_ref.eigenvectors[:, start:stop]
        G = block.T @ (w[:, None] * ref)
        if stop - start == 1:
            if G[0, 0] < 0:
                V[:, start] = -block[:, 0]
            continue
        U, _, Vt = np.linalg.svd(G)
        V[:, start:stop] = block @ (U @ Vt)
    return SpectralDecomposition(manifold=dec.manifold, eigenvalues=dec.eigenvalues,
                                 eigenvectors=V, residual=dec.residual)


def check_alignment(dec_ref, dec, cluster_tol=1e-8, tol=1e-8):
    """Gram diagnostics: raise GaugeAlignmentError when ``dec`` is not
    Procrustes-aligned to ``dec_ref`` (per cluster, the cross-Gram matrix
    must be symmetric with nonnegative spectrum)."""
    w = dec.manifold.mass
    for start, stop in cluster_eigenvalues(dec.eigenvalues, cluster_tol):
        block = dec.eigenvectors[:, start:stop]
        ref = dec_ref.eigenvectors[:, start:stop]
        G = block.T @ (w[:, None] * ref)
        asym = np.abs(G - G.T).max()
        eigmin = np.linalg.eigvalsh(0.5 * (G + G.T)).min()
        if asym > tol or eigmin < -tol:
            raise GaugeAlignmentError(
                f"eigenvector gauges disagree on modes {start}..{stop - 1} "
                f"(Gram asymmetry {asym:.2e}, min symmetric eigenvalue {eigmin:.2e}); "
                "align with specdata.align_gauges before comparing")


@dataclass(frozen=True, eq=False)
class ComparisonReport:
    max_eigenvalue_dev: float
    max_projector_dev: float
    max_projector_dev_rel: float
    multiplicity_match: bool
    alignment_residual: float
    blocks: tuple     # (start, stop, eig_dev, proj_dev) per common block

    @property
    def data_equal(self):
        return (self.multiplicity_match
                and self.max_eigenvalue_dev <= 1e-10
                and self.max_projector_dev <= 1e-10)


def compare(d1, d2):
    """Gauge-invariant comparison of two internal data sets on the same
    observation window.

    Eigenvalues are compared directly; eigenspaces through restricted
    projector kernels summed over common cluster blocks, which are
    invariant under in-cluster orthogonal remixing and sign flips. A
    mismatch of cluster multiplicities is reported as a definitive
    inequality. For matched blocks the report also carries the residual
    of the best orthogonal alignment realizing the data equality.
    """
    if d1.omega != d2.omega:
        raise ValueError("internal data sets live on different observation windows")
    if d1.n_modes != d2.n_modes:
        raise ValueError("internal data sets have different mode counts")
    # common coarsening: cut only where both sides have a spectral gap
    bounds1 = set(b for _, b in d1.clusters)
    bounds2 = set(b for _, b in d2.clusters)
    common = sorted(bounds1 & bounds2)
    blocks = []
    start = 0
    for stop in common:
        blocks.append((start, stop))
        start = stop
    rows = []
    max_proj = 0.0
    max_rel = 0.0
    align_res = 0.0
    for start, stop in blocks:
        ev_dev = float(np.abs(d1.eigenvalues[start:stop] - d2.eigenvalues[start:stop]).max())
        P1 = d1.projector((start, stop))
        P2 = d2.projector((start, stop))
        dev = float(np.linalg.norm(P1 - P2))
        scale = max(np.linalg.norm(P1), np.linalg.norm(P2), 1e-300)
        max_proj = max(max_proj, dev)
        max_rel = max(max_rel, dev / scale)
        V1 = d1.vectors[:, start:stop]
        V2 = d2.vectors[:, start:stop]
        G = V2.T @ (d1.mass_omega[:, None] * V1)
        U, _, Vt = np.linalg.svd(G)
        align_res = max(align_res, float(np.linalg.norm(V2 @ (U @ Vt) - V1)))
        rows.append((start, stop, ev_dev, dev))
    return ComparisonReport(
        max_eigenvalue_dev=float(np.abs(d1.eigenvalues - d2.eigenvalues).max()),
        max_projector_dev=max_proj,
        max_projector_dev_rel=max_rel,
        multiplicity_match=d1.clusters == d2.clusters,
        alignment_residual=align_res,
        blocks=tuple(rows))


def semigroup_samples(op, regions, times):
    """Sample the semigroup restricted between the source and observation
    regions: a (len(times), |omega1|, |omega0|) tensor whose (t, i, j)
    entry is the semigroup at time t applied to the j-th source indicator,
    read at the i-th observation node."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a nonempty 1-D grid")
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly ascending")
    dec = op.eig()
    om0 = np.asarray(regions.omega0, dtype=int)
    om1 = np.asarray(regions.omega1, dtype=int)
    B1 = dec.eigenvectors[om1, :]
    B0 = (dec.eigenvectors * op.manifold.mass[:, None])[om0, :]
    decay = np.exp(-np.outer(times, dec.eigenvalues))
    return np.einsum("tk,ik,jk->tij", decay, B1, B0)


@dataclass(frozen=True, eq=False)
class ExpFitResult:
    """Rates and amplitude matrices recovered from semigroup samples.

    ``amplitudes[k]`` approximates the restricted projector of the k-th
    recovered rate, scaled columnwise by the source-node masses.
    """

    rates: np.ndarray
    amplitudes: np.ndarray
    residual: float
    detected_rank: int
    warnings: tuple = ()

    def __post_init__(self):
        if np.any(self.rates <= 0):
            raise ValueError("recovered rates must be positive")
        if np.any(np.diff(self.rates) < 0):
            raise ValueError("recovered rates must be ascending")


def _pencil_rank(sv, threshold):
    """Rank cut at the largest multiplicative gap among singular values
    lying at or below threshold * sv[0]."""
    if sv.size == 0:
        return 0
    below = sv <= threshold * sv[0]
    if not below.any():
        return sv.size
    floor = np.maximum(sv, 1e-300)
    candidates = [m for m in range(sv.size - 1) if below[m + 1]]
    best = max(candidates, key=lambda m: floor[m] / floor[m + 1])
    return best + 1


def recover_rates(samples, times, k_max, rank_threshold=1e-8,
                  residual_threshold=1e-6):
    """Recover decay rates and amplitude matrices from uniform samples of
    an exponential sum (matrix pencil on stacked per-channel Hankels).

    Parameters
    ----------
    samples : (nt, p, q) array
        Semigroup samples, e.g. from ``semigroup_samples``.
    times : (nt,) array
        Uniform, ascending, nonnegative.
    k_max : int
        Number of smallest rates to return; at most (nt - 1) / 2.
    rank_threshold : float
        Scale at which the singular-value gap is sought.
    residual_threshold : float
        Reject fits whose relative residual exceeds this (the samples are
        then not a clean exponential sum).

    Returns
    -------
    ExpFitResult with the k_max smallest recovered rates (fewer, with a
    warning, when the pencil is numerically rank deficient).
    """
    samples = np.asarray(samples, dtype=float)
    times = np.asarray(times, dtype=float)
    if samples.ndim != 3 or samples.shape[0] != times.size:
        raise ValueError("samples must be (nt, p, q) matching the time grid")
    nt = times.size
    if nt < 4:
        raise ValueError("need at least 4 samples")
    dt = times[1] - times[0]
    if np.any(np.diff(times) <= 0) or not np.allclose(np.diff(times), dt, rtol=1e-9):
        raise ValueError("time grid must be uniform and ascending")
    if np.any(times < 0):
        raise ValueError("times must be nonnegative")
    k_max = int(k_max)
    if not 1 <= k_max <= (nt - 1) // 2:
        raise ValueError(f"k_max must lie in 1..{(nt - 1) // 2}")

    Y = samples.reshape(nt, -1)
    pencil = nt // 2
    hankel = np.concatenate(
        [np.lib.stride_tricks.sliding_window_view(Y[:, c], pencil + 1)
         for c in range(Y.shape[1])], axis=0)
    _, sv_all, Vt = np.linalg.svd(hankel, full_matrices=False)
    rank = _pencil_rank(sv_all, rank_threshold)
    warnings = []
    W0 = Vt[:rank, :pencil]
    W1 = Vt[:rank, 1:pencil + 1]
    z = np.linalg.eigvals(np.linalg.pinv(W0.T) @ W1.T)
    real = (np.abs(z.imag) <= 1e-6 * np.abs(z)) & (z.real > 0) & (z.real < 1)
    if np.count_nonzero(real) < rank:
        warnings.append(
            f"pencil returned {rank - np.count_nonzero(real)} non-decaying or "
            "complex modes; dropped")
    zr = np.sort(np.unique(z[real].real))[::-1]
    if zr.size == 0:
        raise ExpFitError("no decaying modes recovered from the samples")
    rates = -np.log(zr) / dt

    # amplitudes for the complete recovered model, then keep the slowest k_max
    V = np.exp(-np.outer(times - times[0], rates))
    coef, *_ = np.linalg.lstsq(V, Y, rcond=None)
    fit = V @ coef
    residual = float(np.linalg.norm(fit - Y) / max(np.linalg.norm(Y), 1e-300))
    if residual > residual_threshold:
        raise ExpFitError(
            f"exponential fit residual {residual:.3e} exceeds "
            f"{residual_threshold:.1e}; samples are not a clean exponential sum")
    amplitudes = coef.reshape(rates.size, samples.shape[1], samples.shape[2])
    amplitudes = amplitudes * np.exp(rates * times[0])[:, None, None]
    if rates.size < k_max:
        warnings.append(
            f"pencil rank {rank} supports only {rates.size} rates; "
            f"{k_max} requested")
    keep = min(k_max, rates.size)
    return ExpFitResult(rates=rates[:keep], amplitudes=amplitudes[:keep],
                        residual=residual, detected_rank=rank,
                        warnings=tuple(warnings))
