import numpy as np
import pytest
import sympy as sp

from rayflow.grid import make_grid, partial_data
from rayflow.riemann import (DegenerateMetricError, MetricField, christoffel3,
                             cov_deriv_field, cov_deriv_sym2, cov_deriv_vector,
                             curvature3, grad_scalar, hessian_scalar, inner,
                             lie_metric, norm)


def flat_metric(grid):
    data = np.zeros((3, 3) + grid.shape)
    for i in range(3):
        data[i, i] = 1.0
    return MetricField(grid, data)


def sphere3_grid(n=33):
    # chart of the unit 3-sphere avoiding the coordinate axes
    return make_grid(("s", "a", "b"), (0.35, 0.0, 0.0), (np.pi / 2 - 0.35, 2 * np.pi, 2 * np.pi),
                     (n, 8, 8), (False, True, True))


def sphere3_metric(grid):
    s, _, _ = grid.meshes()
    data = np.zeros((3, 3) + grid.shape)
    data[0, 0] = 1.0
    data[1, 1] = np.cos(s) ** 2
    data[2, 2] = np.sin(s) ** 2
    return MetricField(grid, data)


def test_metric_rejects_indefinite():
    g = make_grid(("x1", "x2", "x3"), (0, 0, 0), (1, 1, 1), (5, 5, 5))
    data = np.zeros((3, 3) + g.shape)
    data[0, 0] = 1.0
    data[1, 1] = -1.0
    data[2, 2] = 1.0
    with pytest.raises(DegenerateMetricError):
        MetricField(g, data)


def test_flat_metric_has_no_connection_or_curvature():
    g = make_grid(("x1", "x2", "x3"), (0, 0, 0), (1, 1, 1), (7, 7, 7))
    m = flat_metric(g)
    gamma = christoffel3(m)
    assert np.max(np.abs(gamma.data)) < 1e-13
    curv = curvature3(m, gamma)
    assert np.max(np.abs(curv.riemann)) < 1e-12
    assert np.max(np.abs(curv.ricci)) < 1e-12


def test_sphere3_christoffels_match_closed_forms():
    grid = sphere3_grid()
    m = sphere3_metric(grid)
    gamma = christoffel3(m).data
    s, _, _ = grid.meshes()
    tol = 2e-8
    assert np.allclose(gamma[0, 1, 1], np.cos(s) * np.sin(s), atol=tol)
    assert np.allclose(gamma[0, 2, 2], -np.sin(s) * np.cos(s), atol=tol)
    assert np.allclose(gamma[1, 0, 1], -np.tan(s), atol=tol)
    assert np.allclose(gamma[2, 0, 2], 1 / np.tan(s), atol=tol)
    # everything not forced by the diagonal trig metric vanishes
    assert np.max(np.abs(gamma[0, 0, :])) < tol
    assert np.max(np.abs(gamma[1, 2, 2])) < tol


def test_sphere3_is_einstein_with_ricci_2g():
    errs = []
    for n in (17, 33):
        grid = sphere3_grid(n)
        m = sphere3_metric(grid)
        curv = curvature3(m)
        errs.append(np.max(np.abs(curv.ricci - 2 * m.data)))
    assert errs[-1] < 5e-3
    # boundary closures keep the constant big but the order is intact
    assert np.log2(errs[0] / errs[1]) > 3.0
    # interior points are much tighter
    grid = sphere3_grid(33)
    m = sphere3_metric(grid)
    curv = curvature3(m)
    gap = np.abs(curv.ricci - 2 * m.data)[:, :, 8:-8]
    assert np.max(gap) < 2e-4


def _random_poly_metric(seed):
    """Symbolic random near-flat polynomial metric and its numeric sampler."""
    rng = np.random.default_rng(seed)
    x1, x2, x3 = sp.symbols("x1 x2 x3")
    xs = (x1, x2, x3)
    basis = [sp.Integer(1), x1, x2, x3, x1 * x2, x1 * x3, x2 * x3, x1**2, x2**2, x3**2]
    entries = {}
    for i in range(3):
        for j in range(i, 3):
            coeffs = rng.uniform(-1, 1, size=len(basis))
            pert = sum(float(c) * b for c, b in zip(coeffs, basis))
            entries[(i, j)] = (sp.Integer(1) if i == j else sp.Integer(0)) + sp.Rational(1, 8) * pert
    gmat = sp.Matrix(3, 3, lambda i, j: entries[(min(i, j), max(i, j))])
    return xs, gmat


def _sympy_christoffel(xs, gmat):
    # adjugate/det inverse keeps expressions rational without simplify() cost
    det = gmat.det()
    ginv = gmat.adjugate() / det
    gamma = [[[sum(ginv[k, l] * (sp.diff(gmat[j, l], xs[i])
                                 + sp.diff(gmat[i, l], xs[j])
                                 - sp.diff(gmat[i, j], xs[l])) / 2
                   for l in range(3))
               for j in range(3)] for i in range(3)] for k in range(3)]
    return gamma


def _sympy_ricci(xs, gmat, gamma):
    def riem(d, a, b, c):
        expr = sp.diff(gamma[d][b][c], xs[a]) - sp.diff(gamma[d][a][c], xs[b])
        expr += sum(gamma[e][b][c] * gamma[d][a][e] - gamma[e][a][c] * gamma[d][b][e]
                    for e in range(3))
        return expr
    return [[sum(riem(a, a, b, c) for a in range(3)) for c in range(3)]
            for b in range(3)]


@pytest.mark.parametrize("seed", [0])
def test_christoffel_and_ricci_against_symbolic_oracle(seed):
    xs, gmat = _random_poly_metric(seed)
    gamma_sym = _sympy_christoffel(xs, gmat)
    ricci_sym = _sympy_ricci(xs, gmat, gamma_sym)
    g_fns = [[sp.lambdify(xs, gmat[i, j], "numpy") for j in range(3)] for i in range(3)]
    gamma_fns = [[[sp.lambdify(xs, gamma_sym[k][i][j], "numpy") for j in range(3)]
                  for i in range(3)] for k in range(3)]
    ricci_fns = [[sp.lambdify(xs, ricci_sym[b][c], "numpy") for c in range(3)]
                 for b in range(3)]

    errs_gamma, errs_ricci = [], []
    for n in (9, 17):
        grid = make_grid(("x1", "x2", "x3"), (0, 0, 0), (1, 1, 1), (n, n, n))
        mesh = grid.meshes()
        gdata = np.zeros((3, 3) + grid.shape)
        for i in range(3):
            for j in range(3):
                gdata[i, j] = g_fns[i][j](*mesh)
        m = MetricField(grid, gdata)
        gamma = christoffel3(m)
        curv = curvature3(m, gamma)

        eg = max(np.max(np.abs(gamma.data[k, i, j] - gamma_fns[k][i][j](*mesh)))
                 for k in range(3) for i in range(3) for j in range(3))
        errs_gamma.append(eg)
        er = max(np.max(np.abs(curv.ricci[b, c]
                               - np.broadcast_to(np.asarray(ricci_fns[b][c](*mesh),
                                                            dtype=float), grid.shape)))
                 for b in range(3) for c in range(3))
        errs_ricci.append(er)

    # quadratic metric entries are differentiated exactly by 5-point stencils,
    # so the connection comes out at round-off; curvature picks up truncation
    # only through derivative-of-inverse products
    assert errs_gamma[1] < 1e-12
    assert errs_ricci[1] < 5e-4
    assert np.log2(errs_ricci[0] / errs_ricci[1]) > 3.0


def test_metric_compatibility():
    grid = sphere3_grid()
    m = sphere3_metric(grid)
    gamma = christoffel3(m)
    nabla_g = cov_deriv_sym2(m.data, gamma, grid)
    assert np.max(np.abs(nabla_g)) < 5e-8


def test_riemann_first_pair_antisymmetry_and_pair_symmetry():
    xs, gmat = _random_poly_metric(5)
    grid = make_grid(("x1", "x2", "x3"), (0, 0, 0), (1, 1, 1), (17, 17, 17))
    mesh = grid.meshes()
    gdata = np.zeros((3, 3) + grid.shape)
    for i in range(3):
        for j in range(3):
            gdata[i, j] = sp.lambdify(xs, gmat[i, j], "numpy")(*mesh)
    m = MetricField(grid, gdata)
    curv = curvature3(m)
    lowered = np.einsum("de...,eabc...->dabc...", m.data, curv.riemann)
    swap_ab = lowered.transpose(0, 2, 1, 3, *range(4, lowered.ndim))
    # antisymmetry in the derivative pair is exact discretely
    assert np.max(np.abs(lowered + swap_ab)) < 1e-12
    # pair interchange symmetry holds to truncation error for Levi-Civita curvature
    pair = lowered.transpose(2, 3, 0, 1, *range(4, lowered.ndim))
    assert np.max(np.abs(lowered - pair)) < 2e-3


def test_lie_metric_rotation_is_killing_for_flat():
    grid = make_grid(("x1", "x2", "x3"), (-1, -1, -1), (1, 1, 1), (9, 9, 9))
    m = flat_metric(grid)
    x1, x2, _ = grid.meshes()
    u = np.stack([-x2, x1, np.zeros_like(x1)])
    lie = lie_metric(m, u)
    assert np.max(np.abs(lie)) < 1e-12


def test_lie_metric_agrees_with_covariant_route():
    xs, gmat = _random_poly_metric(9)
    grid = make_grid(("x1", "x2", "x3"), (0, 0, 0), (1, 1, 1), (17, 17, 17))
    mesh = grid.meshes()
    gdata = np.zeros((3, 3) + grid.shape)
    for i in range(3):
        for j in range(3):
            gdata[i, j] = sp.lambdify(xs, gmat[i, j], "numpy")(*mesh)
    m = MetricField(grid, gdata)
    rng = np.random.default_rng(2)
    coeff = rng.uniform(-1, 1, size=(3, 3))
    u = np.stack([coeff[k, 0] * mesh[0] + coeff[k, 1] * mesh[1] ** 2 + coeff[k, 2]
                  for k in range(3)])
    lie = lie_metric(m, u)
    gamma = christoffel3(m)
    du = cov_deriv_field(u, gamma, grid)  # [a, k]
    cov_route = np.einsum("kj...,ik...->ij...", m.data, du) \
        + np.einsum("ik...,jk...->ij...", m.data, du)
    assert np.allclose(lie, cov_route, atol=1e-6)


def test_grad_and_hessian_flat_polynomials():
    grid = make_grid(("x1", "x2", "x3"), (-1, -1, -1), (1, 1, 1), (9, 9, 9))
    m = flat_metric(grid)
    x1, x2, x3 = grid.meshes()
    f = x1**2 * x2 + x3**3
    grad = grad_scalar(m, f)
    assert np.allclose(grad[0], 2 * x1 * x2, atol=1e-10)
    assert np.allclose(grad[1], x1**2, atol=1e-10)
    assert np.allclose(grad[2], 3 * x3**2, atol=1e-9)
    hess = hessian_scalar(f, christoffel3(m), grid)
    assert np.allclose(hess[0, 0], 2 * x2, atol=1e-9)
    assert np.allclose(hess[0, 1], 2 * x1, atol=1e-9)
    assert np.allclose(hess[2, 2], 6 * x3, atol=1e-9)
    assert np.allclose(hess, np.swapaxes(hess, 0, 1), atol=1e-12)


def test_cov_deriv_vector_directional_consistency():
    grid = sphere3_grid()
    m = sphere3_metric(grid)
    gamma = christoffel3(m)
    # fields vary only along the well-resolved s axis; all components nonzero
    # so every connection slot participates in the contraction
    s, _, _ = grid.meshes()
    v = np.stack([np.cos(s), np.sin(s), 0.2 * np.ones_like(s)])
    w = np.stack([0.7 * np.ones_like(s), np.cos(s), np.sin(s)])
    direct = cov_deriv_vector(v, w, gamma, grid)
    full = cov_deriv_field(w, gamma, grid)
    contracted = np.einsum("a...,ak...->k...", v, full)
    assert np.allclose(direct, contracted, atol=1e-12)
    # compatibility: d/ds g(w, w) along v equals 2 g(nabla_v w, w)
    gww = inner(m, w, w)
    dgww = np.einsum("a...,a...->...",
                     v, np.stack([partial_data(gww, grid, i) for i in range(3)]))
    assert np.allclose(dgww, 2 * inner(m, direct, w), atol=1e-4)


def test_norm_positive():
    grid = sphere3_grid(9)
    m = sphere3_metric(grid)
    u = np.stack([np.ones(grid.shape), np.zeros(grid.shape), np.zeros(grid.shape)])
    assert np.allclose(norm(m, u), 1.0, atol=1e-14)
