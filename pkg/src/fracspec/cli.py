"""Experiment harness: JSON config parsing, the verification suite
driver, forward data generation, inversion runs, and CSV/JSON emission.

Exit codes: 0 all checks pass, 1 at least one check failed, 2 config or
usage error.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import inverse as inv
from . import s2s as s2smod
from . import specdata
from .domain import RegionConfig, build_graph, build_interval, build_rect, validate_regions
from .resolvent import QuadratureSpec, Resolvent, laplace_check, resolvent_norm_check
from .spectral import Potential, SchrodingerOperator, coercivity_check, eig_sym

CSV_FMT = "%.17g"


class ConfigError(Exception):
    """Invalid configuration or command usage."""


# ---------------------------------------------------------------------------
# config


DEFAULT_TIME_GRID = {"t0": 0.02, "dt": 0.05, "nt": 80}

ALL_CHECKS = (
    "sandwich", "coercivity", "resolvent_series", "resolvent_norm", "laplace",
    "decomposition", "term_bounds", "stability", "density_rank",
    "data_equivalence", "gauge_invariance", "rate_recovery", "distinguishability",
)

CHECK_GROUPS = {
    "all": ALL_CHECKS,
    "resolvent": ("resolvent_series", "resolvent_norm", "laplace"),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration plus the raw dict it came from."""

    raw: dict
    path: str | None = None

    @property
    def config_hash(self):
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def get(self, key, default=None):
        return self.raw.get(key, default)


def _need(cond, msg):
    if not cond:
        raise ConfigError(msg)


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(raw, path=path)


def validate_config(raw, path=None):
    _need(isinstance(raw, dict), "config must be a JSON object")
    mesh = raw.get("mesh")
    _need(isinstance(mesh, dict), "config needs a 'mesh' object")
    kind = mesh.get("kind")
    _need(kind in ("interval", "rect", "graph"),
          f"mesh.kind must be interval, rect or graph, got {kind!r}")
    _need(isinstance(mesh.get("params"), dict), "mesh.params must be an object")
    s = raw.get("s", 0.5)
    _need(isinstance(s, (int, float)) and 0 < s <= 1,
          f"s must lie in (0, 1], got {s}")
    regions = raw.get("regions")
    _need(isinstance(regions, dict), "config needs a 'regions' object")
    for key in ("omega0", "omega1", "omega_prime"):
        _need(isinstance(regions.get(key), list),
              f"regions.{key} must be an integer array")
    bound = raw.get("bound", 5.0)
    _need(isinstance(bound, (int, float)) and bound >= 0,
          "bound must be a nonnegative number")
    tg = raw.get("time_grid", DEFAULT_TIME_GRID)
    _need(isinstance(tg, dict) and {"t0", "dt", "nt"} <= set(tg),
          "time_grid needs t0, dt, nt")
    _need(tg["t0"] >= 0 and tg["dt"] > 0 and int(tg["nt"]) >= 4,
          "time_grid must satisfy t0 >= 0, dt > 0, nt >= 4")
    beta_grid = raw.get("beta_grid")
    if beta_grid is not None:
        _need(isinstance(beta_grid, list) and all(
            isinstance(b, (int, float)) and b >= 0 for b in beta_grid),
            "beta_grid must be a list of nonnegative numbers")
        _need(len(set(beta_grid)) == len(beta_grid), "beta_grid values must be distinct")
    checks = raw.get("checks")
    if checks is not None:
        unknown = [c for c in checks if c not in ALL_CHECKS]
        _need(not unknown, f"unknown checks: {unknown}; available: {list(ALL_CHECKS)}")
    _need(isinstance(raw.get("seed", 0), int), "seed must be an integer")
    return RunConfig(raw=raw, path=path)


def _load_csv_matrix(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def build_mesh(cfg):
    mesh = cfg.get("mesh")
    params = mesh["params"]
    kind = mesh["kind"]
    base_dir = os.path.dirname(cfg.path) if cfg.path else "."
    try:
        if kind == "interval":
            return build_interval(params["n"], params["length"])
        if kind == "rect":
            return build_rect(params["nx"], params["ny"], params["lx"], params["ly"])
        weights = np.asarray(params["weights"], dtype=float) if "weights" in params \
            else _load_csv_matrix(os.path.join(base_dir, params["weights_csv"]))
        mass = np.asarray(params["mass"], dtype=float) if "mass" in params \
            else np.loadtxt(os.path.join(base_dir, params["mass_csv"]), delimiter=",")
        return build_graph(weights, mass, params["grounded"], dim=params.get("dim", 2))
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid mesh: {exc}") from exc


def build_regions(cfg, manifold):
    r = cfg.get("regions")
    regions = RegionConfig(omega0=tuple(r["omega0"]), omega1=tuple(r["omega1"]),
                           omega_prime=tuple(r["omega_prime"]))
    try:
        return validate_regions(manifold, regions)
    except ValueError as exc:
        raise ConfigError(f"invalid regions: {exc}") from exc


def build_potential(spec, manifold, bound, regions, rng):
    """Materialize a potential spec: explicit values, a constant, seeded
    uniform noise, or a smooth bump over a support index list."""
    n = manifold.n_interior
    if spec is None:
        return Potential(np.zeros(n), bound)
    kind = spec.get("kind", "values")
    support = spec.get("support", "all")
    if support == "all":
        idx = np.arange(n)
    elif support == "omega_prime":
        idx = np.asarray(regions.omega_prime, dtype=int)
    else:
        idx = np.asarray(support, dtype=int)
    vals = np.zeros(n)
    if kind == "values":
        _need("values" in spec, "potential spec kind 'values' needs 'values'")
        vals = np.asarray(spec["values"], dtype=float)
        _need(vals.shape == (n,), f"potential values must have length {n}")
    elif kind == "constant":
        vals[idx] = float(spec.get("value", 0.0))
    elif kind == "random":
        local = np.random.default_rng(spec["seed"]) if "seed" in spec else rng
        vals[idx] = local.uniform(spec.get("low", 0.0), spec.get("high", bound), idx.size)
    elif kind == "bump":
        xi = np.linspace(-1.0, 1.0, idx.size + 2)[1:-1]
        vals[idx] = float(spec.get("amplitude", 1.0)) * np.exp(1.0 - 1.0 / (1.0 - xi**2))
    else:
        raise ConfigError(f"unknown potential kind {kind!r}")
    try:
        return Potential(vals, bound)
    except ValueError as exc:
        raise ConfigError(f"invalid potential: {exc}") from exc


# ---------------------------------------------------------------------------
# run context


class RunContext:
    """Mesh, regions, operators and RNG shared by the checks of one run."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.manifold = build_mesh(cfg)
        self.regions = build_regions(cfg, self.manifold)
        self.s = float(cfg.get("s", 0.5))
        self.bound = float(cfg.get("bound", 5.0))
        self.seed = int(cfg.get("seed", 0))
        self.rng = np.random.default_rng(self.seed)
        self.cluster_tol = float(cfg.get("cluster_tol", 1e-8))
        self.dim = cfg.get("dimension")
        self.base = eig_sym(self.manifold, self.manifold.laplacian)
        pots = cfg.get("potentials", {}) or {}
        self.q1 = build_potential(pots.get("q1"), self.manifold, self.bound,
                                  self.regions, self.rng)
        self.q2 = None
        if "q2" in pots:
            self.q2 = build_potential(pots["q2"], self.manifold, self.bound,
                                      self.regions, self.rng)
        self.op1 = SchrodingerOperator(self.base, self.s, self.q1)
        self.op2 = SchrodingerOperator(self.base, self.s, self.q2) if self.q2 else None

    def operator(self, potential):
        return SchrodingerOperator(self.base, self.s, potential)

    def random_potential(self, rng=None, support=None):
        rng = self.rng if rng is None else rng
        n = self.manifold.n_interior
        vals = np.zeros(n)
        idx = np.arange(n) if support is None else np.asarray(support, dtype=int)
        vals[idx] = rng.uniform(0.0, self.bound, idx.size)
        return Potential(vals, self.bound)

    def beta_grid(self):
        betas = self.cfg.get("beta_grid")
        if betas is None:
            lam1s = self.base.eigenvalues[0] ** self.s
            return [0.0, 0.5 * lam1s, 2.0 * lam1s, 8.0 * lam1s]
        return [float(b) for b in betas]

    def time_grid(self):
        tg = self.cfg.get("time_grid", DEFAULT_TIME_GRID)
        return tg["t0"] + tg["dt"] * np.arange(int(tg["nt"]))


# ---------------------------------------------------------------------------
# verification checks


def check_sandwich(ctx):
    """Eigenvalues of the potential-perturbed operator sit between the
    base powers and the base powers plus the potential bound."""
    trials = int(ctx.cfg.get("trials", {}).get("sandwich", 20))
    lam_s = ctx.base.eigenvalues ** ctx.s
    worst = 0.0
    for _ in range(trials):
        q = ctx.random_potential()
        mu = ctx.operator(q).eig().eigenvalues
        worst = max(worst,
                    float((lam_s - mu).max()),
                    float((mu - lam_s - ctx.bound).max()))
    return worst <= 1e-9, {"max_violation": worst, "trials": trials}


def check_coercivity(ctx):
    trials = int(ctx.cfg.get("trials", {}).get("coercivity", 100))
    report = coercivity_check(ctx.op1, trials, rng=ctx.rng)
    return report.passed, {"min_slack": report.min_slack, "trials": trials}


def _random_mu(ctx, spectrum, rng):
    ev = spectrum.eigenvalues
    if rng.uniform() < 0.5 or ev.size < 2:
        return float(ev[0] - rng.uniform(0.5, 10.0))
    k = int(rng.integers(0, ev.size - 1))
    if ev[k + 1] - ev[k] < 1e-6 * max(abs(ev[k]), 1.0):
        return float(ev[0] - rng.uniform(0.5, 10.0))
    return float(0.5 * (ev[k] + ev[k + 1]))


def check_resolvent_series(ctx):
    trials = int(ctx.cfg.get("trials", {}).get("resolvent", 50))
    worst = 0.0
    worst_res = 0.0
    count = 0
    rng = ctx.rng
    while count < trials:
        op = ctx.operator(ctx.random_potential(rng))
        dec = op.eig()
        for _ in range(min(5, trials - count)):
            res = Resolvent(op, _random_mu(ctx, dec, rng))
            f = rng.standard_normal(ctx.manifold.n_interior)
            direct = res.apply(f)
            series = res.series(f)
            scale = max(np.abs(direct).max(), 1e-300)
            worst = max(worst, float(np.abs(direct - series).max() / scale))
            lhs = op.matrix @ direct - res.mu * direct
            fn = max(np.sqrt(np.dot(ctx.manifold.mass * f, f)), 1e-300)
            rnorm = np.sqrt(np.dot(ctx.manifold.mass * (lhs - f), lhs - f))
            worst_res = max(worst_res, float(rnorm / fn))
            count += 1
    return worst <= 1e-9 and worst_res <= 1e-10, {
        "series_vs_solve_max_err": worst, "max_residual": worst_res,
        "trials": trials}


def check_resolvent_norm(ctx):
    mus = [0.0, -1.0, -10.0]
    dec = ctx.op1.eig()
    ev = dec.eigenvalues
    if ev.size >= 2 and ev[1] - ev[0] > 1e-6:
        mus.append(float(0.5 * (ev[0] + ev[1])))
    worst_gap = 0.0
    ok = True
    for mu in mus:
        rep = resolvent_norm_check(Resolvent(ctx.op1, mu))
        ok = ok and rep.passed and rep.equality_gap <= 1e-8
        worst_gap = max(worst_gap, rep.equality_gap)
    return ok, {"mu_values": mus, "max_equality_gap": worst_gap,
                "norm_at_zero": resolvent_norm_check(Resolvent(ctx.op1, 0.0)).norm_computed}


def check_laplace(ctx):
    mus = ctx.cfg.get("laplace_mu", [0.5, 1.0, 4.0])
    devs = {}
    ok = True
    for mu in mus:
        rep = laplace_check(ctx.op1, float(mu))
        devs[str(mu)] = rep.max_abs_deviation
        ok = ok and rep.passed
    return ok, {"max_abs_deviation": devs, "tolerance": 1e-6}


def _random_pair(ctx, rng, kind):
    q1 = ctx.random_potential(rng)
    if kind == "shift":
        # exact constant shift: clip the base so q1 + c stays in the box
        c = rng.uniform(0.1, 0.5)
        base = np.minimum(q1.values, ctx.bound - c)
        return Potential(base, ctx.bound), Potential(base + c, ctx.bound)
    if kind == "near":
        vals = q1.values.copy()
        j = rng.integers(0, vals.size)
        vals[j] = np.clip(vals[j] + 1e-6, 0, ctx.bound)
        return q1, Potential(vals, ctx.bound)
    return q1, ctx.random_potential(rng)


def check_decomposition(ctx):
    trials = int(ctx.cfg.get("trials", {}).get("pairs", 50))
    rng = ctx.rng
    worst = 0.0
    om0 = np.asarray(ctx.regions.omega0, dtype=int)
    for t in range(trials):
        kind = "shift" if t % 10 == 5 else "random"
        qa, qb = _random_pair(ctx, rng, kind)
        opa, opb = ctx.operator(qa), ctx.operator(qb)
        f = np.zeros(ctx.manifold.n_interior)
        f[om0] = rng.standard_normal(om0.size)
        terms = s2smod.difference_decomposition(opa, opb, ctx.regions, f,
                                                cluster_tol=ctx.cluster_tol)
        direct = s2smod.apply_s2s(opa, ctx.regions, f) - s2smod.apply_s2s(opb, ctx.regions, f)
        fn = max(np.sqrt(np.dot(ctx.manifold.mass * f, f)), 1e-300)
        w1 = ctx.manifold.mass[np.asarray(ctx.regions.omega1, dtype=int)]
        gap = np.sqrt(np.sum(w1 * (terms.total - direct) ** 2))
        worst = max(worst, float(gap / fn))
    return worst <= 1e-9, {"max_identity_err": worst, "trials": trials}


def check_term_bounds(ctx):
    trials = int(ctx.cfg.get("trials", {}).get("pairs", 50)) // 2
    rng = ctx.rng
    m = ctx.manifold
    n_dim = m.dim if ctx.dim is None else int(ctx.dim)
    om0 = np.asarray(ctx.regions.omega0, dtype=int)
    om1 = np.asarray(ctx.regions.omega1, dtype=int)
    worst_excess = -np.inf
    for _ in range(max(1, trials)):
        qa, qb = _random_pair(ctx, rng, "random")
        opa, opb = ctx.operator(qa), ctx.operator(qb)
        deca = opa.eig()
        decb = specdata.align_gauges(deca, opb.eig(), ctx.cluster_tol)
        f = np.zeros(m.n_interior)
        f[om0] = rng.standard_normal(om0.size)
        fn = np.sqrt(np.dot(m.mass * f, f))
        terms = s2smod.difference_decomposition(opa, opb, ctx.regions, f,
                                                dec1=deca, dec2=decb)
        ks = np.arange(1, deca.n + 1, dtype=float)
        mua, mub = deca.eigenvalues, decb.eigenvalues
        c1 = float(np.max(ks ** (4 * ctx.s / n_dim) / (mua * mub)))
        c2 = float(np.max(ks ** (2 * ctx.s / n_dim) / mub))
        dphi = deca.eigenvectors - decb.eigenvectors
        sum_val = float(np.sum(ks ** (-4 * ctx.s / n_dim) * np.abs(mua - mub)))
        norms0 = np.sqrt(np.sum(m.mass[om0, None] * dphi[om0, :] ** 2, axis=0))
        norms1 = np.sqrt(np.sum(m.mass[om1, None] * dphi[om1, :] ** 2, axis=0))
        sum_v0 = float(np.sum(ks ** (-2 * ctx.s / n_dim) * norms0))
        sum_v1 = float(np.sum(ks ** (-2 * ctx.s / n_dim) * norms1))
        w1 = m.mass[om1]
        for term, bound in ((terms.i1, c1 * sum_val), (terms.i2, c2 * sum_v0),
                            (terms.i3, c2 * sum_v1)):
            tn = float(np.sqrt(np.sum(w1 * term**2))) / fn
            worst_excess = max(worst_excess, tn - bound)
    return worst_excess <= 1e-12, {"max_excess": worst_excess, "pairs": max(1, trials)}


def check_stability(ctx):
    trials = int(ctx.cfg.get("trials", {}).get("pairs", 50))
    rng = ctx.rng
    worst_ratio = 0.0
    ok = True
    for t in range(trials):
        kind = "near" if t % 5 == 4 else "random"
        qa, qb = _random_pair(ctx, rng, kind)
        rep = s2smod.stability_bound_check(ctx.operator(qa), ctx.operator(qb),
                                           ctx.regions, dim=ctx.dim,
                                           cluster_tol=ctx.cluster_tol)
        ok = ok and rep.passed
        worst_ratio = max(worst_ratio, rep.ratio)
    return ok, {"max_ratio": worst_ratio, "trials": trials}


def _default_rank_sets(ctx):
    """Interleaved disjoint sets over a middle span (spatially-blocked
    disjoint sets hit the exponential singular-value decay of resolvent
    kernels and under-report the rank)."""
    n = ctx.manifold.n_interior
    size = min(10, max(2, n // 6))
    start = max(0, n // 3)
    evens = [start + 2 * i for i in range(size)]
    odds = [start + 2 * i + 1 for i in range(size)]
    if odds[-1] >= n:
        raise ConfigError("mesh too small for the density rank test")
    return odds, evens


def check_density_rank(ctx):
    sets = ctx.cfg.get("rank_sets")
    if sets:
        om0, om1 = sets["omega0"], sets["omega1"]
    else:
        om0, om1 = _default_rank_sets(ctx)
    rep = s2smod.density_rank_test(ctx.op1, om0, om1)
    passed = rep.dense if rep.dense is not None else True
    return bool(passed), {"rank": rep.rank, "rows": rep.n_rows, "cols": rep.n_cols,
                          "sigma_ratio": rep.sigma_ratio}


def check_data_equivalence(ctx):
    """Equal internal data implies equal source-to-solution maps, and the
    maps are functions of the data alone (series reconstruction)."""
    op_copy = ctx.operator(Potential(ctx.q1.values.copy(), ctx.bound))
    d1 = specdata.extract(ctx.op1.eig(), ctx.regions.omega, ctx.cluster_tol)
    d2 = specdata.extract(op_copy.eig(), ctx.regions.omega, ctx.cluster_tol)
    comp = specdata.compare(d1, d2)
    m1 = s2smod.s2s_matrix(ctx.op1, ctx.regions, 0.0)
    m2 = s2smod.s2s_matrix(op_copy, ctx.regions, 0.0)
    gap = s2smod.weighted_gap(m1, m2)
    from_data = s2smod.s2s_from_internal_data(d1, ctx.regions, 0.0)
    series_gap = s2smod.weighted_gap(m1, from_data)
    ok = comp.data_equal and gap <= 1e-9 and series_gap <= 1e-9
    return ok, {"compare_projector_dev": comp.max_projector_dev,
                "s2s_gap": gap, "series_reconstruction_gap": series_gap}


def check_gauge_invariance(ctx):
    trials = int(ctx.cfg.get("trials", {}).get("gauge", 100))
    rng = ctx.rng
    d1 = specdata.extract(ctx.op1.eig(), ctx.regions.omega, ctx.cluster_tol)
    worst = 0.0
    for _ in range(trials):
        rotations = []
        for start, stop in d1.clusters:
            size = stop - start
            if size == 1:
                Q = np.array([[rng.choice([-1.0, 1.0])]])
            else:
                Q, _ = np.linalg.qr(rng.standard_normal((size, size)))
            rotations.append(((start, stop), Q))
        comp = specdata.compare(d1, d1.rotated(rotations))
        worst = max(worst, comp.max_projector_dev, comp.max_eigenvalue_dev)
    return worst <= 1e-12, {"max_deviation": worst, "trials": trials}


def check_rate_recovery(ctx):
    times = ctx.time_grid()
    rec_cfg = ctx.cfg.get("recover", {})
    k_max = int(rec_cfg.get("k_max", 5))
    rate_rtol = float(rec_cfg.get("rate_rtol", 1e-6))
    amp_rtol = float(rec_cfg.get("amp_rtol", 1e-5))
    samples = specdata.semigroup_samples(ctx.op1, ctx.regions, times)
    fit = specdata.recover_rates(samples, times, k_max)
    dec = ctx.op1.eig()
    k = fit.rates.size
    true_rates = dec.eigenvalues[:k]
    rate_rel = np.abs(fit.rates - true_rates) / np.abs(true_rates)
    om0 = np.asarray(ctx.regions.omega0, dtype=int)
    om1 = np.asarray(ctx.regions.omega1, dtype=int)
    amp_rel = []
    for j in range(k):
        proj = np.outer(dec.eigenvectors[om1, j],
                        dec.eigenvectors[om0, j] * ctx.manifold.mass[om0])
        amp_rel.append(np.linalg.norm(fit.amplitudes[j] - proj) / np.linalg.norm(proj))
    ok = (k == k_max and float(rate_rel.max()) <= rate_rtol
          and float(max(amp_rel)) <= amp_rtol)
    return ok, {"recovered": k, "rate_rel_err": float(rate_rel.max()) if k else None,
                "amp_rel_err": float(max(amp_rel)) if amp_rel else None,
                "residual": fit.residual, "detected_rank": fit.detected_rank}


def check_distinguishability(ctx):
    trials = int(ctx.cfg.get("trials", {}).get("distinguish", 20))
    rng = ctx.rng
    betas = ctx.beta_grid()
    sup = np.asarray(ctx.regions.omega_prime, dtype=int)
    magnitudes = []
    ok = True
    for _ in range(trials):
        qa = ctx.random_potential(rng)
        delta = np.zeros(ctx.manifold.n_interior)
        delta[sup] = rng.uniform(1e-3, min(0.5, ctx.bound / 4), sup.size)
        vals = np.clip(qa.values + delta, 0, ctx.bound)
        # keep the sup-norm of the difference at least 1e-3 after clipping
        j = sup[int(np.argmax(delta[sup]))]
        if vals[j] - qa.values[j] < 1e-3:
            vals[j] = max(0.0, qa.values[j] - 1e-3)
        qb = Potential(vals, ctx.bound)
        opa, opb = ctx.operator(qa), ctx.operator(qb)
        best = 0.0
        for b in betas:
            ma = s2smod.s2s_matrix(opa, ctx.regions, b)
            mb = s2smod.s2s_matrix(opb, ctx.regions, b)
            best = max(best, float(np.linalg.norm(ma.weighted() - mb.weighted())))
        magnitudes.append(best)
        ok = ok and best > 1e-12
    return ok, {"min_gap": float(np.min(magnitudes)),
                "max_gap": float(np.max(magnitudes)), "trials": trials}


CHECK_FUNCS = {
    "sandwich": check_sandwich,
    "coercivity": check_coercivity,
    "resolvent_series": check_resolvent_series,
    "resolvent_norm": check_resolvent_norm,
    "laplace": check_laplace,
    "decomposition": check_decomposition,
    "term_bounds": check_term_bounds,
    "stability": check_stability,
    "density_rank": check_density_rank,
    "data_equivalence": check_data_equivalence,
    "gauge_invariance": check_gauge_invariance,
    "rate_recovery": check_rate_recovery,
    "distinguishability": check_distinguishability,
}


@dataclass
class RunManifest:
    artifact_version: str
    config_hash: str
    seed: int
    checks: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def all_passed(self):
        return all(c["passed"] for c in self.checks)

    def to_dict(self):
        return {
            "artifact_version": self.artifact_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "checks": self.checks,
            "counts": {"total": len(self.checks),
                       "passed": sum(c["passed"] for c in self.checks)},
            "all_passed": self.all_passed,
            **self.extra,
        }


def run_verify(cfg, check_names=None):
    """Execute the verification suite; returns the manifest."""
    ctx = RunContext(cfg)
    names = list(check_names or cfg.get("checks") or ALL_CHECKS)
    manifest = RunManifest(artifact_version=__version__,
                           config_hash=cfg.config_hash, seed=ctx.seed)
    for name in names:
        t0 = time.perf_counter()
        passed, measured = CHECK_FUNCS[name](ctx)
        manifest.checks.append({
            "name": name,
            "passed": bool(passed),
            "measured": _plain(measured),
            "elapsed_s": time.perf_counter() - t0,
        })
    if set(names) == set(CHECK_GROUPS["resolvent"]):
        by_name = {c["name"]: c["measured"] for c in manifest.checks}
        manifest.extra["resolvent_report"] = {
            "mu": 0.0,
            "norm_computed": by_name["resolvent_norm"]["norm_at_zero"],
            "norm_bound": by_name["resolvent_norm"]["norm_at_zero"],
            "series_vs_solve_max_err": by_name["resolvent_series"]["series_vs_solve_max_err"],
            "laplace_max_err": max(by_name["laplace"]["max_abs_deviation"].values()),
        }
    return manifest


def _plain(obj):
    """Make measured values JSON-serializable."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# file emission


def atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, array):
    array = np.atleast_2d(np.asarray(array, dtype=float))
    lines = [",".join(CSV_FMT % v for v in row) for row in array]
    atomic_write(path, "\n".join(lines) + "\n")


def write_json(path, obj):
    atomic_write(path, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def write_spectrum_csv(path, dec):
    """One row per mode: index, eigenvalue, eigenvector entries."""
    rows = np.column_stack([np.arange(1, dec.n + 1), dec.eigenvalues,
                            dec.eigenvectors.T])
    write_csv(path, rows)


def write_internal_csv(path, data):
    rows = np.column_stack([np.arange(1, data.n_modes + 1), data.eigenvalues,
                            data.vectors.T])
    write_csv(path, rows)


def sigma_filename(beta):
    return "sigma_beta_%s.csv" % (CSV_FMT % beta).strip()


def load_sigma_dir(path):
    """Read source-to-solution matrices named sigma_beta_<value>.csv."""
    pairs = []
    for name in sorted(os.listdir(path)):
        if not (name.startswith("sigma_beta_") and name.endswith(".csv")):
            continue
        beta = float(name[len("sigma_beta_"):-len(".csv")])
        pairs.append((beta, _load_csv_matrix(os.path.join(path, name))))
    return pairs


# ---------------------------------------------------------------------------
# subcommand drivers


def cmd_verify(cfg, args):
    names = None
    if args.group != "all":
        names = list(CHECK_GROUPS[args.group])
    if args.checks:
        names = [c.strip() for c in args.checks.split(",")]
        unknown = [c for c in names if c not in ALL_CHECKS]
        if unknown:
            raise ConfigError(f"unknown checks: {unknown}")
    manifest = run_verify(cfg, names)
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "manifest.json"), manifest.to_dict())
    for c in manifest.checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['name']} ({c['elapsed_s']:.2f}s)")
    print(f"{sum(c['passed'] for c in manifest.checks)}/{len(manifest.checks)} checks passed")
    return 0 if manifest.all_passed else 1


def cmd_forward(cfg, args):
    ctx = RunContext(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_spectrum_csv(os.path.join(args.out, "spectrum_base.csv"), ctx.base)
    write_spectrum_csv(os.path.join(args.out, "spectrum_q1.csv"), ctx.op1.eig())
    if ctx.op2 is not None:
        write_spectrum_csv(os.path.join(args.out, "spectrum_q2.csv"), ctx.op2.eig())
    for beta in ctx.beta_grid():
        mat = s2smod.s2s_matrix(ctx.op1, ctx.regions, beta)
        write_csv(os.path.join(args.out, sigma_filename(beta)), mat.matrix)
    print(f"wrote spectra and {len(ctx.beta_grid())} source-to-solution matrices to {args.out}")
    return 0


def cmd_s2s(cfg, args):
    ctx = RunContext(cfg)
    betas = ctx.beta_grid()
    if args.beta_grid:
        betas = [float(b) for b in args.beta_grid.split(",")]
    os.makedirs(args.out, exist_ok=True)
    report = {"betas": betas, "norms_q1": {}}
    for beta in betas:
        mat = s2smod.s2s_matrix(ctx.op1, ctx.regions, beta)
        write_csv(os.path.join(args.out, sigma_filename(beta)), mat.matrix)
        report["norms_q1"][str(beta)] = mat.weighted_norm()
    if ctx.op2 is not None:
        gaps = {}
        for beta in betas:
            ma = s2smod.s2s_matrix(ctx.op1, ctx.regions, beta)
            mb = s2smod.s2s_matrix(ctx.op2, ctx.regions, beta)
            gaps[str(beta)] = s2smod.weighted_gap(ma, mb)
        stab = s2smod.stability_bound_check(ctx.op1, ctx.op2, ctx.regions,
                                            dim=ctx.dim, cluster_tol=ctx.cluster_tol)
        report["gap_norms"] = gaps
        report["distance"] = stab.distance
        report["bound_constants"] = {"c_eigenvalue": stab.c_eigenvalue,
                                     "c_eigenvector": stab.c_eigenvector,
                                     "constant": stab.constant}
        report["stability_passed"] = stab.passed
    try:
        rank = s2smod.density_rank_test(ctx.op1, ctx.regions.omega0, ctx.regions.omega1)
        report["rank"] = {"rank": rank.rank, "rows": rank.n_rows, "cols": rank.n_cols,
                          "dense": rank.dense}
    except ValueError as exc:
        report["rank"] = {"skipped": str(exc)}
    path = args.report or os.path.join(args.out, "report.json")
    write_json(path, report)
    print(f"wrote {len(betas)} matrices and report to {args.out}")
    return 0


def cmd_specdata(cfg, args):
    ctx = RunContext(cfg)
    os.makedirs(args.out, exist_ok=True)
    if args.action == "extract":
        d1 = specdata.extract(ctx.op1.eig(), ctx.regions.omega, ctx.cluster_tol)
        write_internal_csv(os.path.join(args.out, "internal_q1.csv"), d1)
        if ctx.op2 is not None:
            d2 = specdata.extract(ctx.op2.eig(), ctx.regions.omega, ctx.cluster_tol)
            write_internal_csv(os.path.join(args.out, "internal_q2.csv"), d2)
        print(f"wrote internal data to {args.out}")
        return 0
    if args.action == "compare":
        if ctx.op2 is None:
            raise ConfigError("compare needs potentials.q2 in the config")
        d1 = specdata.extract(ctx.op1.eig(), ctx.regions.omega, ctx.cluster_tol)
        d2 = specdata.extract(ctx.op2.eig(), ctx.regions.omega, ctx.cluster_tol)
        comp = specdata.compare(d1, d2)
        write_json(os.path.join(args.out, "compare.json"), {
            "max_eigenvalue_dev": comp.max_eigenvalue_dev,
            "max_projector_dev": comp.max_projector_dev,
            "max_projector_dev_rel": comp.max_projector_dev_rel,
            "multiplicity_match": comp.multiplicity_match,
            "alignment_residual": comp.alignment_residual,
            "blocks": [list(b) for b in comp.blocks],
        })
        print(f"wrote comparison report to {args.out}")
        return 0
    # recover
    tg = dict(cfg.get("time_grid", DEFAULT_TIME_GRID))
    if args.t0 is not None:
        tg["t0"] = args.t0
    if args.dt is not None:
        tg["dt"] = args.dt
    if args.nt is not None:
        tg["nt"] = args.nt
    times = tg["t0"] + tg["dt"] * np.arange(int(tg["nt"]))
    samples = specdata.semigroup_samples(ctx.op1, ctx.regions, times)
    k_max = int(cfg.get("recover", {}).get("k_max", 5))
    fit = specdata.recover_rates(samples, times, k_max)
    dec = ctx.op1.eig()
    true_rates = dec.eigenvalues[:fit.rates.size]
    write_json(os.path.join(args.out, "recover.json"), {
        "rates": fit.rates, "true_rates": true_rates,
        "rate_rel_err": (np.abs(fit.rates - true_rates) / np.abs(true_rates)),
        "residual": fit.residual, "detected_rank": fit.detected_rank,
        "warnings": list(fit.warnings), "time_grid": tg,
    })
    print(f"recovered {fit.rates.size} rates, residual {fit.residual:.3e}")
    return 0


def cmd_invert(cfg, args):
    ctx = RunContext(cfg)
    inv_cfg = cfg.get("invert", {})
    betas = ctx.beta_grid()
    truth = None
    if args.truth:
        truth = np.loadtxt(args.truth, delimiter=",")
        if truth.shape != (ctx.manifold.n_interior,):
            raise ConfigError("truth file length does not match the mesh")
    elif "q_true" in (cfg.get("potentials") or {}):
        truth = build_potential(cfg.get("potentials")["q_true"], ctx.manifold,
                                ctx.bound, ctx.regions, ctx.rng).values
    if args.data:
        data = load_sigma_dir(args.data)
        if not data:
            raise ConfigError(f"no sigma_beta_*.csv files in {args.data}")
    else:
        if truth is None:
            raise ConfigError("need --data with matrices, or a truth potential "
                              "(--truth or potentials.q_true) to synthesize them")
        op_true = ctx.operator(Potential(truth, ctx.bound))
        data = []
        noise = cfg.get("noise", {}) or {}
        level = float(noise.get("level", 0.0))
        nrng = np.random.default_rng(noise.get("seed", ctx.seed))
        for beta in betas:
            mat = s2smod.s2s_matrix(op_true, ctx.regions, beta).matrix.copy()
            if level > 0:
                mat += level * np.linalg.norm(mat) / np.sqrt(mat.size) \
                    * nrng.standard_normal(mat.shape)
            data.append((beta, mat))
    prior = build_potential(inv_cfg.get("prior"), ctx.manifold, ctx.bound,
                            ctx.regions, ctx.rng)
    problem = inv.InverseProblem(base=ctx.base, s=ctx.s, regions=ctx.regions,
                                 data=tuple(data), prior=prior, bound=ctx.bound,
                                 alpha=float(inv_cfg.get("alpha", cfg.get("alpha", 0.0))))
    result = inv.reconstruct(problem,
                             max_iter=int(inv_cfg.get("max_iter", 2000)),
                             tol_g=inv_cfg.get("tol_g"),
                             truth=truth)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "q_hat.csv"), result.q_hat.values[None, :])
    hist = np.column_stack([np.arange(result.misfit_history.size),
                            result.misfit_history, result.gradient_norm_history])
    write_csv(os.path.join(args.out, "history.csv"), hist)
    ident = inv.identifiability(problem, result.q_hat)
    report = {
        "misfit": float(result.misfit_history[-1]),
        "iterations": result.iterations,
        "converged": result.converged,
        "sigma_min": ident.sigma_min,
        "sigma_max": ident.sigma_max,
        "relative_error": result.relative_error,
        "config_hash": cfg.config_hash,
        "seed": ctx.seed,
        "betas": betas,
    }
    write_json(os.path.join(args.out, "report.json"), report)
    msg = f"reconstruction finished in {result.iterations} iterations"
    if result.relative_error is not None:
        msg += f", relative error {result.relative_error:.4f}"
    print(msg)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fracspec",
        description="Fractional Schrodinger operators on discrete manifolds: "
                    "verification suite, forward data, and potential reconstruction.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS threads (needs threadpoolctl)")

    p = sub.add_parser("verify", help="run the invariant/identity check suite")
    p.add_argument("group", nargs="?", default="all", choices=sorted(CHECK_GROUPS),
                   help="check group to run")
    p.add_argument("--checks", default=None, help="comma list of check names")
    common(p)

    p = sub.add_parser("forward", help="write spectra and source-to-solution data")
    common(p)

    p = sub.add_parser("s2s", help="source-to-solution matrices and distance report")
    p.add_argument("--beta-grid", default=None, help="comma list of shifts")
    p.add_argument("--report", default=None, help="report path (default <out>/report.json)")
    common(p)

    p = sub.add_parser("specdata", help="internal spectral data tools")
    p.add_argument("action", choices=("extract", "compare", "recover"))
    p.add_argument("--t0", type=float, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--nt", type=int, default=None)
    common(p)

    p = sub.add_parser("invert", help="reconstruct the potential from data")
    p.add_argument("--data", default=None, help="directory of sigma_beta_*.csv")
    p.add_argument("--truth", default=None, help="CSV of the true potential")
    common(p)
    return parser


COMMANDS = {
    "verify": cmd_verify,
    "forward": cmd_forward,
    "s2s": cmd_s2s,
    "specdata": cmd_specdata,
    "invert": cmd_invert,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            raw = dict(cfg.raw)
            raw["seed"] = args.seed
            cfg = validate_config(raw, path=cfg.path)
        limiter = None
        if args.threads:
            try:
                from threadpoolctl import threadpool_limits
                limiter = threadpool_limits(limits=args.threads)
            except ImportError:
                print("threadpoolctl not installed; --threads ignored", file=sys.stderr)
        try:
            return COMMANDS[args.command](cfg, args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
