import numpy as np
import pytest

from rayflow.grid import make_grid, partial_data
from rayflow.riemann import MetricField, christoffel3, curvature3, inner
from rayflow.spacetime import (Lapse, Slice, christoffel4, christoffel4_oracle,
                               curvature4, curvature4_oracle, dt_christoffel,
                               geodesic_defect, mixed_time_ricci, null_norm,
                               ray_derivs, transverse_curvature)


def cube(n):
    return make_grid(("x1", "x2", "x3"), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (n, n, n))


def flat_metric(grid):
    data = np.zeros((3, 3) + grid.shape)
    for i in range(3):
        data[i, i] = 1.0
    return MetricField(grid, data)


class WavyGeometry:
    """Analytic time-dependent geometry: identity metric plus small travelling
    sine modes in each component, and a lapse of the same kind.

    Every time derivative is available in closed form, which is what the
    brute-force comparisons below need.
    """

    PAIRS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]

    def __init__(self, seed, amp=0.04):
        rng = np.random.default_rng(seed)
        self.k = rng.uniform(0.8, 1.7, size=(7, 3))
        self.phase = rng.uniform(0.0, 2 * np.pi, size=7)
        self.omega = rng.uniform(0.6, 1.4, size=7)
        self.tphase = rng.uniform(0.0, 2 * np.pi, size=7)
        self.amp = amp * rng.uniform(0.4, 1.0, size=7)

    def _mode(self, m, grid, t, dt_order):
        x1, x2, x3 = grid.meshes()
        spatial = np.sin(self.k[m, 0] * x1 + self.k[m, 1] * x2
                         + self.k[m, 2] * x3 + self.phase[m])
        w = self.omega[m]
        arg = w * t + self.tphase[m]
        tfac = [np.sin(arg), w * np.cos(arg), -w * w * np.sin(arg)][dt_order]
        return self.amp[m] * tfac * spatial

    def metric_data(self, grid, t, dt_order=0):
        out = np.zeros((3, 3) + grid.shape)
        for m, (i, j) in enumerate(self.PAIRS):
            e = self._mode(m, grid, t, dt_order)
            out[i, j] += e
            if i != j:
                out[j, i] += e
        if dt_order == 0:
            for i in range(3):
                out[i, i] += 1.0
        return out

    def lapse_data(self, grid, t, dt_order=0):
        e = self._mode(6, grid, t, dt_order)
        return 1.0 + e if dt_order == 0 else e

    def slice_at(self, grid, t, direction=(0.6, -0.3, 0.74)):
        g = MetricField(grid, self.metric_data(grid, t))
        raw = np.zeros((3,) + grid.shape)
        for i in range(3):
            raw[i] = direction[i]
        u = raw / np.sqrt(inner(g, raw, raw))
        return Slice(t, g, u, self.lapse_data(grid, t),
                     self.lapse_data(grid, t, 1))


def test_lapse_validation_and_unit_fields():
    with pytest.raises(ValueError):
        Lapse(value_fn=lambda t, x1, x2, x3: 1.0 + 0.1 * t)
    grid = cube(5)
    f, df = Lapse.unit().fields(grid, 0.3)
    assert np.all(f == 1.0) and np.all(df == 0.0)
    lap = Lapse(lambda t, x1, x2, x3: 1.0 + 0.5 * t * x1,
                lambda t, x1, x2, x3: 0.5 * x1)
    f, df = lap.fields(grid, 2.0)
    x1 = grid.meshes()[0]
    assert np.allclose(f, 1.0 + x1) and np.allclose(df, 0.5 * x1)


def test_slice_validate_rejects_bad_data():
    grid = cube(5)
    g = flat_metric(grid)
    u = np.zeros((3,) + grid.shape)
    u[0] = 1.2
    slc = Slice(0.0, g, u, np.ones(grid.shape), np.zeros(grid.shape))
    assert slc.unit_norm_defect() == pytest.approx(0.44)
    with pytest.raises(ValueError):
        slc.validate()
    u[0] = 1.0
    bad_lapse = Slice(0.0, g, u, np.zeros(grid.shape), np.zeros(grid.shape))
    with pytest.raises(ValueError):
        bad_lapse.validate()
    Slice(0.0, g, u, np.ones(grid.shape), np.zeros(grid.shape)).validate()


def test_christoffel4_flat_static_vanishes():
    grid = cube(7)
    g = flat_metric(grid)
    u = np.zeros((3,) + grid.shape)
    u[2] = 1.0
    slc = Slice(0.0, g, u, np.ones(grid.shape), np.zeros(grid.shape))
    table = christoffel4(slc, np.zeros((3, 3) + grid.shape)).as_array()
    assert np.max(np.abs(table)) < 1e-13


def test_christoffel4_time_only_lapse():
    # flat static slice metric, lapse depending on t alone: the only
    # surviving symbol is the dt-dt-dt one, equal to d_t(log f)
    grid = cube(7)
    g = flat_metric(grid)
    u = np.zeros((3,) + grid.shape)
    u[0] = 1.0
    f_val, f_dot = 1.0 + 0.3 * np.sin(0.7), 0.3 * np.cos(0.7)
    slc = Slice(0.7, g, u, np.full(grid.shape, f_val), np.full(grid.shape, f_dot))
    gam = christoffel4(slc, np.zeros((3, 3) + grid.shape))
    assert np.allclose(gam.c000, f_dot / f_val, atol=1e-14)
    for block in (gam.c00i, gam.ci00, gam.ck0i, gam.c0ij, gam.ckij):
        assert np.max(np.abs(block)) < 1e-14


def test_christoffel4_matches_bruteforce_table():
    geo = WavyGeometry(3)
    grid = cube(21)
    t0 = 0.4
    slc = geo.slice_at(grid, t0)
    table = christoffel4(slc, geo.metric_data(grid, t0, 1)).as_array()
    oracle = christoffel4_oracle(grid, lambda t: geo.metric_data(grid, t),
                                 lambda t: geo.lapse_data(grid, t), t0, 1e-3)
    assert np.max(np.abs(table - oracle)) < 5e-7


def test_dt_christoffel_matches_finite_difference():
    geo = WavyGeometry(23)
    grid = cube(21)
    t0, eps = 0.4, 1e-4
    slc = geo.slice_at(grid, t0)
    direct = dt_christoffel(slc.metric, slc.christoffel(),
                            geo.metric_data(grid, t0, 1))
    plus = christoffel3(MetricField(grid, geo.metric_data(grid, t0 + eps)))
    minus = christoffel3(MetricField(grid, geo.metric_data(grid, t0 - eps)))
    fd = (plus.data - minus.data) / (2 * eps)
    assert np.max(np.abs(direct - fd)) < 5e-9


def test_curvature4_structural_symmetries():
    geo = WavyGeometry(5)
    grid = cube(13)
    slc = geo.slice_at(grid, 0.2)
    curv = curvature4(slc, geo.metric_data(grid, 0.2, 1),
                      geo.metric_data(grid, 0.2, 2))
    swap = np.swapaxes(curv.r0ijk, 0, 1)
    assert np.max(np.abs(curv.r0ijk + swap)) < 1e-14
    assert np.max(np.abs(curv.r0i0j - np.swapaxes(curv.r0i0j, 0, 1))) < 1e-14


@pytest.mark.parametrize("seed", [7, 19])
def test_curvature4_converges_to_bruteforce(seed):
    geo = WavyGeometry(seed)
    gaps = []
    for n, dt in ((13, 0.06), (25, 0.03)):
        grid = cube(n)
        slc = geo.slice_at(grid, 0.4)
        closed = curvature4(slc, geo.metric_data(grid, 0.4, 1),
                            geo.metric_data(grid, 0.4, 2))
        oracle = curvature4_oracle(grid, lambda t: geo.metric_data(grid, t),
                                   lambda t: geo.lapse_data(grid, t), 0.4, dt)
        gaps.append((np.max(np.abs(closed.r0i0j - oracle.r0i0j)),
                     np.max(np.abs(closed.r0ijk - oracle.r0ijk)),
                     np.max(np.abs(closed.rlijk - oracle.rlijk))))
    for coarse, fine in zip(gaps[0], gaps[1]):
        assert np.log2(coarse / fine) > 1.9
    assert gaps[1][0] < 3e-5
    assert gaps[1][1] < 2e-5
    assert gaps[1][2] < 5e-7


def test_curvature4_static_metric_spatial_lapse():
    # frozen curved metric with a space-only lapse: the time-time family
    # reduces to -f Hess f, the mixed family dies, the spatial family is
    # untouched 3-D curvature
    grid = cube(17)
    x1, x2, x3 = grid.meshes()
    gd = np.zeros((3, 3) + grid.shape)
    gd[0, 0] = 1.0 + 0.1 * x2**2
    gd[1, 1] = 1.0 + 0.08 * x1 * x3
    gd[2, 2] = 1.0 + 0.12 * x1**2
    gd[0, 1] = gd[1, 0] = 0.05 * x3**2
    g = MetricField(grid, gd)
    f = 1.0 + 0.2 * x1 + 0.1 * x1 * x2 - 0.05 * x3**2
    u = np.zeros((3,) + grid.shape)
    u[0] = 1.0 / np.sqrt(gd[0, 0])
    slc = Slice(0.0, g, u, f, np.zeros(grid.shape))
    zero = np.zeros((3, 3) + grid.shape)
    curv = curvature4(slc, zero, zero)
    assert np.max(np.abs(curv.r0ijk)) == 0.0
    assert np.max(np.abs(curv.rlijk - curvature3(g).riemann)) < 1e-15
    oracle = curvature4_oracle(grid, lambda t: gd, lambda t: f, 0.0, 0.01)
    assert np.max(np.abs(curv.r0i0j - oracle.r0i0j)) < 2e-6
    assert np.max(np.abs(curv.rlijk - oracle.rlijk)) < 1e-12


def test_ray_derivs_flat_static_are_zero():
    grid = cube(9)
    g = flat_metric(grid)
    u = np.zeros((3,) + grid.shape)
    u[1] = 1.0
    slc = Slice(0.0, g, u, np.ones(grid.shape), np.zeros(grid.shape))
    zero_v = np.zeros((3,) + grid.shape)
    acc_u, acc_w = ray_derivs(slc, zero_v, np.zeros((3, 3) + grid.shape))
    for vec in (acc_u, acc_w):
        assert np.max(np.abs(vec.time)) < 1e-13
        assert np.max(np.abs(vec.space)) < 1e-13
        assert np.max(np.abs(vec.norm(slc))) < 1e-13


def test_ray_derivs_match_bruteforce_transport():
    geo = WavyGeometry(11)
    grid = cube(21)
    t0 = 0.3
    slc = geo.slice_at(grid, t0)
    dt_u = np.zeros((3,) + grid.shape)
    acc_u, acc_w = ray_derivs(slc, dt_u, geo.metric_data(grid, t0, 1))

    table = christoffel4_oracle(grid, lambda t: geo.metric_data(grid, t),
                                lambda t: geo.lapse_data(grid, t), t0, 1e-3)
    w4 = np.zeros((4,) + grid.shape)
    w4[0] = 1.0
    w4[1:] = slc.lapse * slc.u

    def transport(v4, dt_v4):
        dv = np.stack([partial_data(v4, grid, a) for a in range(3)])
        out = w4[0] * dt_v4 + np.einsum("a...,ad...->d...", w4[1:], dv)
        return out + np.einsum("dab...,a...,b...->d...", table, w4, v4)

    u4 = np.zeros((4,) + grid.shape)
    u4[1:] = slc.u
    ref_u = transport(u4, np.zeros((4,) + grid.shape))
    dw4 = np.zeros((4,) + grid.shape)
    dw4[1:] = slc.lapse_dt * slc.u
    ref_w = transport(w4, dw4)
    assert np.max(np.abs(acc_u.time - ref_u[0])) < 1e-6
    assert np.max(np.abs(acc_u.space - ref_u[1:])) < 1e-6
    assert np.max(np.abs(acc_w.time - ref_w[0])) < 1e-6
    assert np.max(np.abs(acc_w.space - ref_w[1:])) < 1e-6


def test_transverse_curvature_flat_static_is_zero():
    grid = cube(9)
    g = flat_metric(grid)
    u = np.zeros((3,) + grid.shape)
    u[0] = 1.0
    slc = Slice(0.0, g, u, np.ones(grid.shape), np.zeros(grid.shape))
    R = transverse_curvature(slc, np.zeros((3, 3) + grid.shape))
    assert np.max(np.abs(R)) < 1e-12


def test_transverse_curvature_round_sphere():
    # frozen round 3-sphere: the tensor is minus the Ricci form, i.e. -2g
    grid = make_grid(("s", "a", "b"), (0.35, 0.0, 0.0),
                     (np.pi / 2 - 0.35, 2 * np.pi, 2 * np.pi),
                     (33, 8, 8), (False, True, True))
    s, _, _ = grid.meshes()
    gd = np.zeros((3, 3) + grid.shape)
    gd[0, 0] = 1.0
    gd[1, 1] = np.cos(s) ** 2
    gd[2, 2] = np.sin(s) ** 2
    g = MetricField(grid, gd)
    u = np.zeros((3,) + grid.shape)
    u[0] = 1.0
    slc = Slice(0.0, g, u, np.ones(grid.shape), np.zeros(grid.shape))
    R = transverse_curvature(slc, np.zeros((3, 3) + grid.shape))
    err = np.abs(R + 2.0 * gd)
    assert err.max() < 6e-3
    assert err[:, :, 8:-8].max() < 3e-4


def test_transverse_curvature_radial_profile():
    # warped-product slice metric dr^2 + b(t,r)^2 (ds^2 + sin^2 s dth^2)
    # with radial unit rays: every component has a closed form in b
    eps, om, t0 = 0.1, 0.9, 0.5

    def b_of(r, dt=0, dr=0):
        tf = [np.sin(om * t0), om * np.cos(om * t0)][dt]
        rf = [np.sin(2 * r), 2 * np.cos(2 * r), -4 * np.sin(2 * r)][dr]
        base = 0.0
        if dt == 0 and dr == 0:
            base = r
        if dt == 0 and dr == 1:
            base = 1.0
        return base + eps * tf * rf

    n = 33
    grid = make_grid(("r", "s", "th"), (1.0, np.pi / 2 - 0.6, 0.0),
                     (2.0, np.pi / 2 + 0.6, 2 * np.pi),
                     (n, n, 8), (False, False, True))
    r, s, _ = grid.meshes()
    b, bp, bpp = b_of(r), b_of(r, dr=1), b_of(r, dr=2)
    b_dot, b_dot_p = b_of(r, dt=1), b_of(r, dt=1, dr=1)
    gd = np.zeros((3, 3) + grid.shape)
    gd[0, 0] = 1.0
    gd[1, 1] = b**2
    gd[2, 2] = (b * np.sin(s)) ** 2
    g = MetricField(grid, gd)
    m = np.zeros_like(gd)
    m[1, 1] = 2 * b * b_dot
    m[2, 2] = 2 * b * b_dot * np.sin(s) ** 2
    u = np.zeros((3,) + grid.shape)
    u[0] = 1.0
    slc = Slice(t0, g, u, np.ones(grid.shape), np.zeros(grid.shape))
    R = transverse_curvature(slc, m)

    rr_expected = 2 * bpp / b
    ss_expected = -1.0 + bp**2 + b * bpp + b * b_dot_p
    err_rr = np.abs(R[0, 0] - rr_expected)
    err_ss = np.abs(R[1, 1] - ss_expected)
    err_thth = np.abs(R[2, 2] - np.sin(s) ** 2 * ss_expected)
    for err in (err_rr, err_ss, err_thth):
        assert err.max() < 1e-3
        assert err[6:-6, 6:-6, :].max() < 2e-5
    # the cross components vanish identically, including the r-th one
    assert np.max(np.abs(R[0, 1])) < 1e-10
    assert np.max(np.abs(R[0, 2])) < 1e-10
    assert np.max(np.abs(R[1, 2])) < 1e-10


def test_mixed_time_ricci_matches_bruteforce():
    geo = WavyGeometry(23)
    grid = cube(21)
    t0, dt = 0.4, 0.01
    slc = geo.slice_at(grid, t0)
    closed = mixed_time_ricci(slc, curvature4(slc, geo.metric_data(grid, t0, 1),
                                              geo.metric_data(grid, t0, 2)))

    gammas = [christoffel4_oracle(grid, lambda t: geo.metric_data(grid, t),
                                  lambda t: geo.lapse_data(grid, t), t0 + k * dt, dt)
              for k in (-1, 0, 1)]
    dg = np.zeros((4, 4, 4, 4) + grid.shape)
    dg[0] = (gammas[2] - gammas[0]) / (2 * dt)
    for i in range(3):
        dg[1 + i] = partial_data(gammas[1], grid, i)
    G = gammas[1]
    nd = dg.ndim
    riem = dg.transpose(1, 0, 2, 3, *range(4, nd)) \
        - dg.transpose(1, 2, 0, 3, *range(4, nd))
    riem += np.einsum("ebc...,dae...->dabc...", G, G)
    riem -= np.einsum("eac...,dbe...->dabc...", G, G)
    ricci4 = np.einsum("aabc...->bc...", riem)
    ref = np.einsum("c...,c...->...", slc.u, ricci4[0, 1:])
    assert np.max(np.abs(closed - ref)) < 1e-5


def test_geodesic_defect_algebra():
    grid = cube(9)
    g = flat_metric(grid)
    x1, x2, x3 = grid.meshes()
    u = np.zeros((3,) + grid.shape)
    u[0] = 1.0
    ones, zeros = np.ones(grid.shape), np.zeros(grid.shape)

    # no drive anywhere -> refuse rather than guess
    slc = Slice(0.0, g, u, ones, zeros)
    with pytest.raises(ValueError):
        geodesic_defect(slc)

    # unit lapse, zero drive: nothing moves
    assert np.max(np.abs(geodesic_defect(slc, np.zeros((3, 3) + grid.shape)))) < 1e-14

    # rank-one drive u x u acts as the identity on the ray direction
    drive = np.einsum("i...,j...->ij...", u, u)
    assert np.max(np.abs(geodesic_defect(slc, drive) - u)) < 1e-14

    # polynomial lapse with the compensating drive: defect cancels exactly
    f = 1.0 + 0.2 * x1 + 0.1 * x1 * x2 - 0.05 * x3**2
    df = np.stack([0.2 + 0.1 * x2, 0.1 * x1, -0.1 * x3])
    u_f = df[0]
    drive = -0.5 * (np.einsum("i...,j...->ij...", df, u)
                    + np.einsum("i...,j...->ij...", u, df))
    drive += u_f * np.einsum("i...,j...->ij...", u, u)
    slc = Slice(0.0, g, u, f, zeros, drive=drive)
    assert np.max(np.abs(geodesic_defect(slc))) < 1e-13


def test_null_norm_measures_unit_defect():
    geo = WavyGeometry(31)
    grid = cube(9)
    slc = geo.slice_at(grid, 0.1)
    assert np.max(np.abs(null_norm(slc))) < 1e-13
    scaled = Slice(slc.t, slc.metric, 1.3 * slc.u, slc.lapse, slc.lapse_dt)
    expected = slc.lapse**2 * (1.3**2 - 1.0)
    assert np.max(np.abs(null_norm(scaled) - expected)) < 1e-12
