import numpy as np
import pytest

from fracspec import Potential, SchrodingerOperator, build_graph, build_interval, eig_sym


@pytest.fixture(scope="session")
def interval30():
    m = build_interval(30, np.pi)
    return m, eig_sym(m, m.laplacian)


@pytest.fixture(scope="session")
def interval64():
    m = build_interval(64, np.pi)
    return m, eig_sym(m, m.laplacian)


@pytest.fixture(scope="session")
def graph20():
    """Connected random graph with nonuniform mass (catches mass-weight
    bugs that uniform meshes hide)."""
    rng = np.random.default_rng(2024)
    n = 20
    W = rng.uniform(0.0, 1.0, (n, n))
    W = 0.5 * (W + W.T)
    W[W < 0.4] = 0.0
    np.fill_diagonal(W, 0.0)
    W[np.arange(n - 1), np.arange(1, n)] = 1.0   # ensure connectivity
    W[np.arange(1, n), np.arange(n - 1)] = 1.0
    mass = rng.uniform(0.3, 2.5, n)
    m = build_graph(W, mass, grounded=[0, n - 1])
    return m, eig_sym(m, m.laplacian)


def make_operator(base, s, q_values, bound):
    return SchrodingerOperator(base, s, Potential(np.asarray(q_values, dtype=float), bound))


@pytest.fixture
def make_op():
    return make_operator
