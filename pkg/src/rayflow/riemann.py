"""Riemannian geometry of a 3-metric on a chart grid.

Index conventions: curvature R^d_abc = d_a G^d_bc - d_b G^d_ac
+ G^e_bc G^d_ae - G^e_ac G^d_be, Ricci_bc = R^a_abc.  With this sign the
round 3-sphere has Ricci = +2 g.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (ChartGrid, Christoffel3Field, SymTensor2Field,
                   partial_data, partial2_data)

__all__ = [
    "MetricField",
    "christoffel3",
    "curvature3",
    "Curvature3",
    "ricci3",
    "lie_metric",
    "cov_deriv_vector",
    "cov_deriv_field",
    "grad_scalar",
    "hessian_scalar",
    "inner",
    "norm",
    "DegenerateMetricError",
]


class DegenerateMetricError(ValueError):
    """Raised when a metric field fails positive definiteness."""


def _inv3x3(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse and determinant of a field of symmetric 3x3 matrices (3,3,...)."""
    a, b, c = g[0, 0], g[0, 1], g[0, 2]
    d, e, f = g[1, 1], g[1, 2], g[2, 2]
    co00 = d * f - e * e
    co01 = c * e - b * f
    co02 = b * e - c * d
    det = a * co00 + b * co01 + c * co02
    inv = np.empty_like(g)
    inv[0, 0] = co00
    inv[0, 1] = inv[1, 0] = co01
    inv[0, 2] = inv[2, 0] = co02
    inv[1, 1] = a * f - c * c
    inv[1, 2] = inv[2, 1] = b * c - a * e
    inv[2, 2] = a * d - b * b
    return inv / det, det


@dataclass
class MetricField:
    """Positive-definite symmetric 2-tensor with cached inverse and volume factor."""

    grid: ChartGrid
    data: np.ndarray  # (3, 3, n1, n2, n3)

    def __post_init__(self):
        field = SymTensor2Field(self.grid, self.data)  # validates shape and symmetry
        self.data = field.data
        # Sylvester criterion, vectorised; checked before inverting so a
        # degenerate metric raises instead of warning about a zero divide
        m1 = self.data[0, 0]
        m2 = self.data[0, 0] * self.data[1, 1] - self.data[0, 1] ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            self.inv, self.det = _inv3x3(self.data)
        if np.any(m1 <= 0) or np.any(m2 <= 0) or np.any(self.det <= 0):
            raise DegenerateMetricError("metric is not positive definite on the grid")
        self.sqrt_det = np.sqrt(self.det)

    def tensor(self) -> SymTensor2Field:
        return SymTensor2Field(self.grid, self.data)

    def lower(self, v: np.ndarray) -> np.ndarray:
        """Lower the index of a (3, ...) vector array."""
        return np.einsum("ij...,j...->i...", self.data, v)

    def raise_(self, w: np.ndarray) -> np.ndarray:
        """Raise the index of a (3, ...) covector array."""
        return np.einsum("ij...,j...->i...", self.inv, w)


def inner(g: MetricField, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Pointwise g(v, w) for (3, ...) component arrays."""
    return np.einsum("ij...,i...,j...->...", g.data, v, w)


def norm(g: MetricField, v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.abs(inner(g, v, v)))


def christoffel3(g: MetricField) -> Christoffel3Field:
    """Levi-Civita connection coefficients of the 3-metric.

    Returns data indexed ``[k, i, j]``: the upper index first.
    """
    dg = np.stack([partial_data(g.data, g.grid, a) for a in range(3)])  # dg[a,i,j]
    # d_i g_jl + d_j g_il - d_l g_ij
    kern = dg.transpose(0, 2, 1, *range(3, dg.ndim)) + dg.transpose(2, 0, 1, *range(3, dg.ndim)) \
        - dg.transpose(1, 2, 0, *range(3, dg.ndim))
    # kern[i, j, l]
    gamma = 0.5 * np.einsum("kl...,ijl...->kij...", g.inv, kern)
    return Christoffel3Field(g.grid, gamma)


@dataclass
class Curvature3:
    """Riemann tensor R^d_abc together with its Ricci contraction."""

    grid: ChartGrid
    riemann: np.ndarray  # (3, 3, 3, 3, ...) indexed [d, a, b, c]
    ricci: np.ndarray    # (3, 3, ...)


def curvature3(g: MetricField, gamma: Christoffel3Field | None = None) -> Curvature3:
    """Riemann and Ricci curvature of the 3-metric."""
    if gamma is None:
        gamma = christoffel3(g)
    G = gamma.data
    dG = np.stack([partial_data(G, g.grid, a) for a in range(3)])  # dG[a,d,b,c]
    riem = dG.transpose(1, 0, 2, 3, *range(4, dG.ndim)) \
        - dG.transpose(1, 2, 0, 3, *range(4, dG.ndim))
    riem += np.einsum("ebc...,dae...->dabc...", G, G)
    riem -= np.einsum("eac...,dbe...->dabc...", G, G)
    ricci = np.einsum("aabc...->bc...", riem)
    ricci = 0.5 * (ricci + np.swapaxes(ricci, 0, 1))
    return Curvature3(g.grid, riem, ricci)


def ricci3(g: MetricField, gamma: Christoffel3Field | None = None) -> SymTensor2Field:
    return SymTensor2Field(g.grid, curvature3(g, gamma).ricci)


def lie_metric(g: MetricField, u: np.ndarray) -> np.ndarray:
    """Lie derivative of the metric along a (3, ...) vector array.

    (L_u g)_ij = u^k d_k g_ij + g_kj d_i u^k + g_ik d_j u^k.
    """
    du = np.stack([partial_data(u, g.grid, a) for a in range(3)])  # du[a,k]
    dg = np.stack([partial_data(g.data, g.grid, a) for a in range(3)])
    out = np.einsum("k...,kij...->ij...", u, dg)
    out += np.einsum("kj...,ik...->ij...", g.data, du)
    out += np.einsum("ik...,jk...->ij...", g.data, du)
    return out


def cov_deriv_vector(v: np.ndarray, w: np.ndarray, gamma: Christoffel3Field,
                     grid: ChartGrid) -> np.ndarray:
    """Covariant derivative (nabla_v w)^k for component arrays v, w of shape (3, ...)."""
    dw = np.stack([partial_data(w, grid, a) for a in range(3)])  # dw[a,k]
    out = np.einsum("a...,ak...->k...", v, dw)
    out += np.einsum("kij...,i...,j...->k...", gamma.data, v, w)
    return out


def cov_deriv_field(w: np.ndarray, gamma: Christoffel3Field, grid: ChartGrid) -> np.ndarray:
    """Full covariant derivative (nabla_a w)^k, returned as array [a, k, ...]."""
    dw = np.stack([partial_data(w, grid, a) for a in range(3)])
    return dw + np.einsum("kaj...,j...->ak...", gamma.data, w)


def divergence(g: MetricField, v: np.ndarray,
               gamma: Christoffel3Field | None = None) -> np.ndarray:
    """Covariant divergence nabla_a v^a of a (3, ...) vector array."""
    if gamma is None:
        gamma = christoffel3(g)
    out = sum(partial_data(v[a], g.grid, a) for a in range(3))
    trace = np.einsum("aak...->k...", gamma.data)
    return out + np.einsum("k...,k...->...", trace, v)


def cov_deriv_sym2(m: np.ndarray, gamma: Christoffel3Field, grid: ChartGrid) -> np.ndarray:
    """Covariant derivative of a symmetric 2-tensor: (nabla_a m)_ij as [a, i, j, ...]."""
    dm = np.stack([partial_data(m, grid, a) for a in range(3)])
    out = dm - np.einsum("kai...,kj...->aij...", gamma.data, m)
    out -= np.einsum("kaj...,ik...->aij...", gamma.data, m)
    return out


def grad_scalar(g: MetricField, f: np.ndarray) -> np.ndarray:
    """Metric gradient (raised differential) of a scalar array."""
    df = np.stack([partial_data(f, g.grid, a) for a in range(3)])
    return g.raise_(df)


def hessian_scalar(f: np.ndarray, gamma: Christoffel3Field, grid: ChartGrid) -> np.ndarray:
    """Covariant Hessian (nabla df)_ij of a scalar array; symmetric (3, 3, ...)."""
    df = np.stack([partial_data(f, grid, a) for a in range(3)])
    ddf = np.empty((3, 3) + f.shape, dtype=df.dtype)
    for i in range(3):
        ddf[i, i] = partial2_data(f, grid, i)
        for j in range(i + 1, 3):
            ddf[i, j] = ddf[j, i] = partial_data(df[i], grid, j)
    return ddf - np.einsum("kij...,k...->ij...", gamma.data, df)
