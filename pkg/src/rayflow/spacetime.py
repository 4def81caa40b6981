"""The Lorentzian 4-geometry -f^2 dt^2 + g_t built over an evolving 3-slice.

A :class:`Slice` packages one instant of the evolving triple (g_t, U_t, f).
Closed-form mixed Christoffel symbols and curvature components are provided
alongside brute-force 4-D finite-difference oracles used to validate them.

Index conventions follow riemann.py: R^d_abc with Ricci_bc = R^a_abc.
The mixed curvature families stored are R_{0i0j} (fully lowered),
R^0_{ijk} (raised time index) and R^l_{ijk} (raised spatial index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import ChartGrid, Christoffel3Field, partial_data
from .riemann import (MetricField, christoffel3, cov_deriv_vector, curvature3,
                      grad_scalar, hessian_scalar, inner)

__all__ = [
    "Lapse",
    "Slice",
    "Christoffel4",
    "SpacetimeCurvature",
    "christoffel4",
    "christoffel4_oracle",
    "curvature4",
    "curvature4_oracle",
    "dt_christoffel",
    "ray_derivs",
    "Vector4",
    "transverse_curvature",
    "mixed_time_ricci",
    "geodesic_defect",
    "null_norm",
]


class Lapse:
    """Prescribed lapse f(t, x) with analytic time derivative.

    ``value_fn`` and ``dt_fn`` take ``(t, x1, x2, x3)`` mesh arrays.  The
    default is the unit lapse.
    """

    def __init__(self, value_fn: Callable | None = None, dt_fn: Callable | None = None):
        if value_fn is not None and dt_fn is None:
            raise ValueError("a non-unit lapse needs its analytic time derivative")
        self.value_fn = value_fn
        self.dt_fn = dt_fn

    @classmethod
    def unit(cls) -> "Lapse":
        return cls()

    @property
    def is_unit(self) -> bool:
        return self.value_fn is None

    def fields(self, grid: ChartGrid, t: float) -> tuple[np.ndarray, np.ndarray]:
        if self.is_unit:
            return np.ones(grid.shape), np.zeros(grid.shape)
        x1, x2, x3 = grid.meshes()
        f = np.asarray(self.value_fn(t, x1, x2, x3), dtype=float)
        df = np.asarray(self.dt_fn(t, x1, x2, x3), dtype=float)
        f = np.broadcast_to(f, grid.shape).copy()
        df = np.broadcast_to(df, grid.shape).copy()
        return f, df


@dataclass
class Slice:
    """One instant of the evolving geometry: metric, unit ray field, lapse.

    ``drive`` optionally carries the symmetric tensor steering the metric
    evolution (needed by the geodesic-defect diagnostic).
    """

    t: float
    metric: MetricField
    u: np.ndarray                 # (3, n1, n2, n3) ray direction components
    lapse: np.ndarray             # f values
    lapse_dt: np.ndarray          # analytic time derivative of f
    drive: np.ndarray | None = None
    _gamma: Christoffel3Field | None = field(default=None, repr=False)

    @property
    def grid(self) -> ChartGrid:
        return self.metric.grid

    def christoffel(self) -> Christoffel3Field:
        if self._gamma is None:
            self._gamma = christoffel3(self.metric)
        return self._gamma

    def unit_norm_defect(self) -> float:
        return float(np.max(np.abs(inner(self.metric, self.u, self.u) - 1.0)))

    def validate(self, tol: float = 1e-6) -> None:
        if np.any(self.lapse <= 0):
            raise ValueError("lapse must be positive")
        gap = self.unit_norm_defect()
        if gap > tol:
            raise ValueError(f"ray field is not unit: max|g(U,U)-1| = {gap:.3e}")


@dataclass
class Christoffel4:
    """Closed-form 4-D Christoffel components over the slice grid.

    Component arrays: ``c000`` Gamma^0_00, ``c00i`` Gamma^0_0i,
    ``ci00`` Gamma^i_00, ``ck0i[k,i]`` Gamma^k_0i, ``c0ij`` Gamma^0_ij,
    ``ckij`` Gamma^k_ij (the spatial connection).
    """

    grid: ChartGrid
    c000: np.ndarray
    c00i: np.ndarray
    ci00: np.ndarray
    ck0i: np.ndarray
    c0ij: np.ndarray
    ckij: np.ndarray

    def as_array(self) -> np.ndarray:
        """Full (4, 4, 4, ...) table Gamma^d_ab, symmetric in (a, b)."""
        out = np.zeros((4, 4, 4) + self.grid.shape)
        out[0, 0, 0] = self.c000
        out[0, 0, 1:] = self.c00i
        out[0, 1:, 0] = self.c00i
        out[1:, 0, 0] = self.ci00
        out[1:, 0, 1:] = self.ck0i
        out[1:, 1:, 0] = self.ck0i
        out[0, 1:, 1:] = self.c0ij
        out[1:, 1:, 1:] = self.ckij
        return out

    def contract(self, w0, w, v0, v) -> tuple[np.ndarray, np.ndarray]:
        """Gamma^d_ab W^a V^b for 4-vectors (w0, w); accepts complex components."""
        time = (self.c000 * w0 * v0
                + np.einsum("i...,i...->...", self.c00i, w0 * v + v0 * w)
                + np.einsum("ij...,i...,j...->...", self.c0ij, w, v))
        spat = (self.ci00 * w0 * v0
                + np.einsum("ki...,i...->k...", self.ck0i, w0 * v + v0 * w)
                + np.einsum("kij...,i...,j...->k...", self.ckij, w, v))
        return time, spat


def christoffel4(slc: Slice, dt_g: np.ndarray) -> Christoffel4:
    """Closed-form mixed Christoffel symbols of -f^2 dt^2 + g_t."""
    g = slc.metric
    f = slc.lapse
    grid = slc.grid
    df = np.stack([partial_data(f, grid, a) for a in range(3)])
    return Christoffel4(
        grid=grid,
        c000=slc.lapse_dt / f,
        c00i=df / f,
        ci00=f * g.raise_(df),
        ck0i=0.5 * np.einsum("kj...,ij...->ki...", g.inv, dt_g),
        c0ij=dt_g / (2.0 * f**2),
        ckij=slc.christoffel().data,
    )


def _lorentz_inverse(gdata: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Blockwise inverse of the 4-metric (-f^2, g): (4, 4, ...) array."""
    from .riemann import _inv3x3

    inv3, _ = _inv3x3(gdata)
    out = np.zeros((4, 4) + f.shape)
    out[0, 0] = -1.0 / f**2
    out[1:, 1:] = inv3
    return out


def christoffel4_oracle(grid: ChartGrid, g_fn: Callable[[float], np.ndarray],
                        f_fn: Callable[[float], np.ndarray], t0: float,
                        dt: float) -> np.ndarray:
    """Brute-force Gamma^d_ab table from three sampled time levels.

    ``g_fn(t)`` returns the (3, 3, ...) metric array, ``f_fn(t)`` the lapse
    array.  Time derivatives are 2nd-order central; spatial ones use the
    grid stencils.  Returns the full (4, 4, 4, ...) table at ``t0``.
    """
    levels = [t0 - dt, t0, t0 + dt]
    G = []
    for t in levels:
        gt = np.zeros((4, 4) + grid.shape)
        gt[0, 0] = -np.asarray(f_fn(t)) ** 2
        gt[1:, 1:] = g_fn(t)
        G.append(gt)
    dG = np.zeros((4, 4, 4) + grid.shape)  # dG[a, b, c] = d_a G_bc
    dG[0] = (G[2] - G[0]) / (2 * dt)
    for i in range(3):
        dG[1 + i] = partial_data(G[1], grid, i)
    f0 = np.broadcast_to(np.asarray(f_fn(t0)), grid.shape)
    Ginv = _lorentz_inverse(G[1][1:, 1:], f0)
    # Gamma^d_ab = 1/2 G^dc (d_a G_bc + d_b G_ac - d_c G_ab)
    gamma = 0.5 * np.einsum("dc...,abc...->dab...",
                            Ginv,
                            dG
                            + dG.transpose(1, 0, 2, *range(3, dG.ndim))
                            - dG.transpose(1, 2, 0, *range(3, dG.ndim)))
    return gamma


@dataclass
class SpacetimeCurvature:
    """Mixed curvature families of the 4-metric over the slice grid."""

    grid: ChartGrid
    r0i0j: np.ndarray   # R_{0i0j}, fully lowered, symmetric
    r0ijk: np.ndarray   # R^0_{ijk}, antisymmetric in (i, j)
    rlijk: np.ndarray   # R^l_{ijk}


def dt_christoffel(g: MetricField, gamma: Christoffel3Field, m: np.ndarray) -> np.ndarray:
    """Time derivative of the spatial Christoffel symbols induced by dg/dt = m.

    d_t Gamma^l_ij = -g^{la} m_an Gamma^n_ij
                     + (1/2) g^{lm} (d_i m_jm + d_j m_im - d_m m_ij).
    """
    grid = g.grid
    dm = np.stack([partial_data(m, grid, a) for a in range(3)])  # dm[a,i,j]
    kern = dm.transpose(0, 2, 1, *range(3, dm.ndim)) \
        + dm.transpose(2, 0, 1, *range(3, dm.ndim)) \
        - dm.transpose(1, 2, 0, *range(3, dm.ndim))  # [i, j, m] pattern
    out = 0.5 * np.einsum("lm...,ijm...->lij...", g.inv, kern)
    out -= np.einsum("la...,an...,nij...->lij...", g.inv, m, gamma.data)
    return out


def time_space_curvature(slc: Slice, dt_g: np.ndarray) -> np.ndarray:
    """Curvature family R^0_ijk of -f^2 dt^2 + g_t (time index up, rest spatial).

    This is the only family the transverse curvature tensor and the mixed
    Ricci component need, and it is linear in ``dt_g`` -- the property the
    implicit metric-velocity solve of the integrable flow relies on.
    """
    g = slc.metric
    grid = slc.grid
    f = slc.lapse
    gamma = slc.christoffel()
    dtgam = dt_christoffel(g, gamma, dt_g)
    dlnf = np.stack([partial_data(f, grid, a) for a in range(3)]) / f
    r0 = np.einsum("lj...,lik...->ijk...", g.data, dtgam) \
        - np.einsum("li...,ljk...->ijk...", g.data, dtgam) \
        - np.einsum("i...,jk...->ijk...", dlnf, dt_g) \
        + np.einsum("j...,ik...->ijk...", dlnf, dt_g)
    return r0 / (2.0 * f**2)


def curvature4(slc: Slice, dt_g: np.ndarray, dtt_g: np.ndarray) -> SpacetimeCurvature:
    """Closed-form mixed curvature of -f^2 dt^2 + g_t.

    The raised-index placement in the spatial (Gauss) family is fixed as
    R^l_ijk = (3)R^l_ijk + (1/4 f^2)(m_jk g^{lm} m_im - m_ik g^{lm} m_jm),
    validated against the 4-D finite-difference oracle.
    """
    g = slc.metric
    grid = slc.grid
    f = slc.lapse
    m = dt_g
    gamma = slc.christoffel()

    hess_f = hessian_scalar(f, gamma, grid)
    dt_lnf = slc.lapse_dt / f
    r0i0j = -0.25 * np.einsum("kl...,ik...,jl...->ij...", g.inv, m, m)
    r0i0j += 0.5 * dtt_g - f * hess_f - 0.5 * dt_lnf * m

    r0ijk = time_space_curvature(slc, m)

    curv3 = curvature3(g, gamma)
    m_raised = np.einsum("lm...,im...->il...", g.inv, m)  # m_i^l
    rlijk = curv3.riemann.copy()
    quarter = 1.0 / (4.0 * f**2)
    rlijk += quarter * (np.einsum("jk...,il...->lijk...", m, m_raised)
                        - np.einsum("ik...,jl...->lijk...", m, m_raised))
    return SpacetimeCurvature(grid, r0i0j, r0ijk, rlijk)


def curvature4_oracle(grid: ChartGrid, g_fn: Callable[[float], np.ndarray],
                      f_fn: Callable[[float], np.ndarray], t0: float,
                      dt: float) -> SpacetimeCurvature:
    """Brute-force curvature families from five sampled time levels.

    Builds the full 4-D Christoffel table at three inner levels (each using
    2nd-order time differences of the sampled 4-metric), differences those in
    time, and applies the generic curvature formula.  2nd-order in dt,
    stencil-order in h.
    """
    gammas = [christoffel4_oracle(grid, g_fn, f_fn, t0 + k * dt, dt) for k in (-1, 0, 1)]
    dgamma = np.zeros((4, 4, 4, 4) + grid.shape)  # [a, d, b, c] = d_a Gamma^d_bc
    dgamma[0] = (gammas[2] - gammas[0]) / (2 * dt)
    for i in range(3):
        dgamma[1 + i] = partial_data(gammas[1], grid, i)
    G = gammas[1]
    riem = dgamma.transpose(1, 0, 2, 3, *range(4, dgamma.ndim)) \
        - dgamma.transpose(1, 2, 0, 3, *range(4, dgamma.ndim))
    riem += np.einsum("ebc...,dae...->dabc...", G, G)
    riem -= np.einsum("eac...,dbe...->dabc...", G, G)

    f0 = np.asarray(f_fn(t0))
    f0 = np.broadcast_to(f0, grid.shape)
    r0i0j = -f0**2 * riem[0, 1:, 0, 1:]
    r0ijk = riem[0, 1:, 1:, 1:]
    rlijk = riem[1:, 1:, 1:, 1:]
    return SpacetimeCurvature(grid, r0i0j, r0ijk, rlijk)


@dataclass
class Vector4:
    """A 4-vector field split into its dt-component and spatial components."""

    time: np.ndarray
    space: np.ndarray  # (3, ...)

    def norm(self, slc: Slice) -> np.ndarray:
        """Pointwise Lorentzian magnitude sqrt(|G(V,V)|)."""
        val = -(slc.lapse * self.time) ** 2 + inner(slc.metric, self.space, self.space)
        return np.sqrt(np.abs(val))


def cov_deriv4(gamma4: Christoffel4, grid: ChartGrid,
               w0: np.ndarray, w: np.ndarray,
               v0: np.ndarray, v: np.ndarray,
               dt_v0: np.ndarray, dt_v: np.ndarray) -> Vector4:
    """Covariant derivative of the 4-vector (v0, v) along (w0, w).

    Time derivatives of the argument components are supplied analytically by
    the caller (from the active flow), spatial derivatives use stencils.
    """
    dv0 = np.stack([partial_data(v0, grid, a) for a in range(3)])
    dv = np.stack([partial_data(v, grid, a) for a in range(3)])  # [a, k]
    time = w0 * dt_v0 + np.einsum("a...,a...->...", w, dv0)
    spat = w0 * dt_v + np.einsum("a...,ak...->k...", w, dv)
    gtime, gspat = gamma4.contract(w0, w, v0, v)
    return Vector4(time + gtime, spat + gspat)


def ray_derivs(slc: Slice, dt_u: np.ndarray, dt_g: np.ndarray) -> tuple[Vector4, Vector4]:
    """Covariant derivatives along the null ray W = dt + f U.

    Returns (nabla_W U, nabla_W W); the first vanishes along the coupled
    evolutions, the second vanishing certifies W's integral curves as null
    geodesics.
    """
    gamma4 = christoffel4(slc, dt_g)
    grid = slc.grid
    f = slc.lapse
    zero = np.zeros(grid.shape)
    one = np.ones(grid.shape)
    acc_u = cov_deriv4(gamma4, grid, one, f * slc.u, zero, slc.u, zero, dt_u)
    w_spat = f * slc.u
    dt_w = slc.lapse_dt * slc.u + f * dt_u
    acc_w = cov_deriv4(gamma4, grid, one, w_spat, one, w_spat, zero, dt_w)
    return acc_u, acc_w


def transverse_curvature(slc: Slice, dt_g: np.ndarray,
                         dtt_g: np.ndarray | None = None) -> np.ndarray:
    """The symmetric tensor -f Ricci^g + sym G(R(dt, .)U, .) steering CFGR flows.

    Only the R^0 curvature family enters the mixed term, so the second time
    derivative of g is not needed (accepted for interface uniformity).
    """
    g = slc.metric
    f = slc.lapse
    ricci = curvature3(g, slc.christoffel()).ricci

    r0 = time_space_curvature(slc, dt_g)
    mixed = np.einsum("k...,kji...->ij...", slc.u, r0)
    sym = 0.5 * (mixed + np.swapaxes(mixed, 0, 1))
    return -f * ricci + f**2 * sym


def mixed_time_ricci(slc: Slice, curv: SpacetimeCurvature | np.ndarray) -> np.ndarray:
    """Ricci^G(dt, U) = -f^2 u^i g^{kl} R^0_{ilk}, needed by the rho transport law.

    ``curv`` may be a full :class:`SpacetimeCurvature` or just the R^0_ijk
    family from :func:`time_space_curvature`.
    """
    r0 = curv.r0ijk if isinstance(curv, SpacetimeCurvature) else curv
    contraction = np.einsum("kl...,ilk...->i...", slc.metric.inv, r0)
    return -slc.lapse**2 * np.einsum("i...,i...->...", slc.u, contraction)


def geodesic_defect(slc: Slice, drive: np.ndarray | None = None) -> np.ndarray:
    """T-hat(U) + (1/2) grad_g f - (1/2) U(f) U; zero iff dt + fU is geodesic."""
    T = drive if drive is not None else slc.drive
    if T is None:
        raise ValueError("slice carries no drive tensor; supply one explicitly")
    g = slc.metric
    grid = slc.grid
    t_hat_u = np.einsum("kj...,ji...,i...->k...", g.inv, T, slc.u)
    gradf = grad_scalar(g, slc.lapse)
    df = np.stack([partial_data(slc.lapse, grid, a) for a in range(3)])
    u_f = np.einsum("i...,i...->...", slc.u, df)
    return t_hat_u + 0.5 * gradf - 0.5 * u_f * slc.u


def null_norm(slc: Slice) -> np.ndarray:
    """G(dt + fU, dt + fU) = f^2 (g(U,U) - 1); zero wherever U is unit."""
    return slc.lapse**2 * (inner(slc.metric, slc.u, slc.u) - 1.0)
