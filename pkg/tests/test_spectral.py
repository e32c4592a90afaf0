import numpy as np
import pytest

from fracspec import build_interval, build_rect, frac_power, inner
from fracspec.domain import DiscreteManifold
from fracspec.spectral import (EigenSolveError, Potential, SchrodingerOperator,
                               coercivity_check, eig_sym)


def unit_mass_manifold(matrix):
    return DiscreteManifold(mass=np.ones(len(matrix)), stiffness=np.asarray(matrix, float))


class TestEigSym:
    def test_two_by_two_hand_computed(self):
        m = unit_mass_manifold([[2.0, -1.0], [-1.0, 2.0]])
        dec = eig_sym(m, m.laplacian)
        assert np.allclose(dec.eigenvalues, [1.0, 3.0], rtol=1e-12)

    def test_interval_against_sine_formula(self, interval30):
        m = build_interval(50, 2.0)
        dec = eig_sym(m, m.laplacian)
        h = 2.0 / 51
        k = np.arange(1, 51)
        oracle = 4.0 / h**2 * np.sin(k * np.pi * h / (2 * 2.0)) ** 2
        assert np.allclose(dec.eigenvalues, oracle, rtol=1e-9)

    def test_identity_operator(self):
        m = build_interval(10, 1.0)
        dec = eig_sym(m, np.eye(10))
        assert np.allclose(dec.eigenvalues, 1.0)
        assert dec.gram_defect() <= 1e-10

    def test_rejects_asymmetric_operator(self):
        m = build_interval(5, 1.0)
        op = m.laplacian.copy()
        op[0, 3] += 1.0
        with pytest.raises(EigenSolveError, match="symmetric"):
            eig_sym(m, op)

    def test_reconstruction_and_residual(self, graph20):
        m, dec = graph20
        recon = (dec.eigenvectors * dec.eigenvalues) @ (dec.eigenvectors.T * m.mass)
        scale = np.abs(m.laplacian).max()
        assert np.abs(recon - m.laplacian).max() <= 1e-10 * scale
        assert dec.residual <= 1e-10 * dec.eigenvalues[-1]
        assert dec.gram_defect() <= 1e-10

    def test_nonuniform_mass_orthonormality(self, graph20):
        m, dec = graph20
        G = dec.eigenvectors.T @ (m.mass[:, None] * dec.eigenvectors)
        assert np.abs(G - np.eye(m.n_interior)).max() <= 1e-10


class TestFracPower:
    def test_s_one_recovers_operator(self, interval30):
        m, dec = interval30
        assert np.abs(frac_power(dec, 1.0) - m.laplacian).max() \
            <= 1e-10 * np.abs(m.laplacian).max()

    def test_half_power_squares_to_operator(self, interval30):
        m, dec = interval30
        half = frac_power(dec, 0.5)
        assert np.abs(half @ half - m.laplacian).max() <= 1e-9 * np.abs(m.laplacian).max()

    def test_diagonal_scalar_powers(self):
        m = unit_mass_manifold(np.diag([4.0, 9.0]))
        dec = eig_sym(m, m.laplacian)
        assert np.allclose(frac_power(dec, 0.5), np.diag([2.0, 3.0]), atol=1e-12)

    @pytest.mark.parametrize("s", [0.0, -0.3, 1.5])
    def test_rejects_bad_power(self, interval30, s):
        with pytest.raises(ValueError):
            frac_power(interval30[1], s)

    @pytest.mark.parametrize("s,t", [(0.3, 0.45), (0.25, 0.75), (0.5, 0.5)])
    def test_power_additivity(self, interval30, s, t):
        m, dec = interval30
        lhs = frac_power(dec, s) @ frac_power(dec, t)
        rhs = frac_power(dec, s + t)
        assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()


class TestPotential:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            Potential(np.array([0.5, -0.1]), 1.0)

    def test_rejects_above_bound(self):
        with pytest.raises(ValueError):
            Potential(np.array([0.5, 1.2]), 1.0)

    def test_support_normalized(self):
        p = Potential(np.array([0.0, 0.5]), 1.0, support=[1, 1, 0])
        assert p.support == (0, 1)


class TestSchrodingerOperator:
    def test_zero_potential_is_pure_power(self, interval30):
        m, dec = interval30
        op = SchrodingerOperator(dec, 0.5, Potential.zero(m))
        assert np.array_equal(op.matrix, op.frac_matrix)
        mu = op.eig()
        assert np.allclose(mu.eigenvalues, dec.eigenvalues**0.5, rtol=1e-10)

    def test_constant_shift_spectrum(self, interval30, make_op):
        m, dec = interval30
        c = 0.7
        op = make_op(dec, 0.5, np.full(30, c), bound=1.0)
        mu = op.eig().eigenvalues
        assert np.allclose(mu, dec.eigenvalues**0.5 + c, rtol=1e-9)

    def test_random_potential_symmetric_bounded_below(self, graph20, make_op):
        m, dec = graph20
        rng = np.random.default_rng(11)
        op = make_op(dec, 0.75, rng.uniform(0, 3, m.n_interior), bound=3.0)
        S = np.sqrt(m.mass)[:, None] * op.matrix / np.sqrt(m.mass)[None, :]
        assert np.abs(S - S.T).max() <= 1e-10 * np.abs(S).max()
        assert op.eig().eigenvalues[0] >= dec.eigenvalues[0] ** 0.75 - 1e-9

    def test_rank_one_perturbation_first_order(self, interval30, make_op):
        # Rayleigh: the lowest eigenvalue moves by q_j w_j psi_1(j)^2 + O(q^2)
        m, dec = interval30
        j, eps = 14, 1e-3
        q = np.zeros(30)
        q[j] = eps
        op = make_op(dec, 0.5, q, bound=1.0)
        shift = op.eig().eigenvalues[0] - dec.eigenvalues[0] ** 0.5
        predicted = eps * m.mass[j] * dec.eigenvectors[j, 0] ** 2
        assert abs(shift - predicted) <= 0.1 * predicted

    def test_sandwich_property(self, interval30, make_op):
        m, dec = interval30
        rng = np.random.default_rng(5)
        bound = 5.0
        for s in (0.25, 0.5, 1.0):
            lam_s = dec.eigenvalues**s
            for _ in range(5):
                op = make_op(dec, s, rng.uniform(0, bound, 30), bound)
                mu = op.eig().eigenvalues
                assert np.all(mu >= lam_s - 1e-9)
                assert np.all(mu <= lam_s + bound + 1e-9)

    def test_monotonicity_in_potential(self, interval30, make_op):
        m, dec = interval30
        rng = np.random.default_rng(8)
        for _ in range(5):
            qa = rng.uniform(0, 2, 30)
            qb = qa + rng.uniform(0, 2, 30)
            mua = make_op(dec, 0.5, qa, 4.0).eig().eigenvalues
            mub = make_op(dec, 0.5, qb, 4.0).eig().eigenvalues
            assert np.all(mua <= mub + 1e-12)


class TestWeylConsistency:
    def test_interval_quadratic_growth(self):
        m = build_interval(64, np.pi)
        dec = eig_sym(m, m.laplacian)
        k = np.arange(1, 64 // 4 + 1)
        ratios = dec.eigenvalues[:k.size] / k**2
        assert np.all(ratios >= 0.4 * (np.pi / np.pi) ** 2)
        assert np.all(ratios <= 1.1)

    def test_rectangle_linear_growth(self):
        m = build_rect(8, 8, np.pi, np.pi)
        dec = eig_sym(m, m.laplacian)
        k = np.arange(1, 64 // 4 + 1)
        ratios = dec.eigenvalues[:k.size] / k
        assert ratios.max() / ratios.min() <= 3.0


class TestCoercivity:
    def test_zero_potential_slack_zero(self, interval30):
        m, dec = interval30
        op = SchrodingerOperator(dec, 0.5, Potential.zero(m))
        report = coercivity_check(op, trials=20, rng=1)
        assert report.passed
        assert abs(report.min_slack) <= 1e-12

    def test_random_nonnegative_potential(self, graph20, make_op):
        m, dec = graph20
        rng = np.random.default_rng(9)
        op = make_op(dec, 0.5, rng.uniform(0, 2, m.n_interior), 2.0)
        report = coercivity_check(op, trials=100, rng=2)
        assert report.passed
        assert report.min_slack >= -1e-12

    def test_negative_entry_witnessed(self, interval30):
        # bypass the Potential invariant to plant a single negative entry
        m, dec = interval30
        q = np.zeros(30)
        pot = Potential(q, 1.0)
        tampered = q.copy()
        tampered[12] = -0.5
        tampered.setflags(write=False)
        object.__setattr__(pot, "values", tampered)
        op = SchrodingerOperator(dec, 0.5, pot)
        report = coercivity_check(op, trials=10, rng=3)
        assert not report.passed
        assert report.min_slack < -1e-3
        # the witness is (essentially) the indicator of the tampered node
        assert abs(report.witness[12]) == np.abs(report.witness).max()

    def test_form_matches_direct_evaluation(self, interval30, make_op):
        m, dec = interval30
        rng = np.random.default_rng(4)
        q = rng.uniform(0, 1, 30)
        op = make_op(dec, 0.5, q, 1.0)
        u = rng.standard_normal(30)
        v = rng.standard_normal(30)
        direct = inner(m, op.half_matrix @ u, op.half_matrix @ v) + inner(m, q * u, v)
        assert np.isclose(op.form(u, v), direct, rtol=1e-12)
