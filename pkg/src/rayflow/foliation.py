"""Complementary frames and congruence diagnostics on a 3-slice.

Given a unit ray field U on (M^3, g), a complementary frame is an
orthonormal pair (X, Y) spanning the transverse distribution, combined into
the complex direction Z = X - iY.  All first-order diagnostics of the
congruence live here: the shear (conformality defect), the complex
expansion, the frame rotation coefficient, the ray acceleration and the
transverse mean curvature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ChartGrid, partial_data
from .riemann import (Christoffel3Field, MetricField, christoffel3,
                      cov_deriv_field, inner, lie_metric, norm)

__all__ = [
    "Frame2",
    "complementary_frame",
    "continue_frame",
    "FoliationDiagnostics",
    "diagnostics",
    "bracket_twist",
    "conformality_report",
]

_EPSILON3 = np.zeros((3, 3, 3))
for _p, (_i, _j, _k) in (((1, (0, 1, 2))), (1, (1, 2, 0)), (1, (2, 0, 1)),
                         (-1, (0, 2, 1)), (-1, (2, 1, 0)), (-1, (1, 0, 2))):
    _EPSILON3[_i, _j, _k] = _p


def _metric_cross(g: MetricField, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """The g-compatible cross product (index raised after the volume form)."""
    cov = g.sqrt_det * np.einsum("lmn,m...,n...->l...", _EPSILON3, a, b)
    return g.raise_(cov)


@dataclass
class Frame2:
    """Right-handed orthonormal pair spanning the transverse distribution."""

    grid: ChartGrid
    x: np.ndarray
    y: np.ndarray
    seed: np.ndarray  # the constant reference vector the frame grew from

    @property
    def z(self) -> np.ndarray:
        return self.x - 1j * self.y

    def rotated(self, angle: float) -> "Frame2":
        """Gauge-rotate by a constant angle: Z -> e^{i angle} Z."""
        c, s = np.cos(angle), np.sin(angle)
        return Frame2(self.grid, c * self.x + s * self.y,
                      -s * self.x + c * self.y, self.seed)

    def validate(self, g: MetricField, u: np.ndarray, tol: float = 1e-8) -> None:
        gaps = [
            np.max(np.abs(inner(g, self.x, self.x) - 1.0)),
            np.max(np.abs(inner(g, self.y, self.y) - 1.0)),
            np.max(np.abs(inner(g, self.x, self.y))),
            np.max(np.abs(inner(g, u, self.x))),
            np.max(np.abs(inner(g, u, self.y))),
        ]
        if max(gaps) > tol:
            raise ValueError(f"frame fails orthonormality by {max(gaps):.3e}")


def complementary_frame(g: MetricField, u: np.ndarray,
                        seed: np.ndarray | None = None) -> Frame2:
    """Build a frame transverse to ``u`` from a constant reference vector.

    The requested seed is used if its g-angle with the ray field stays away
    from zero everywhere (|cos| <= 0.9); otherwise the canonical axes are
    tried in order.  A single seed serves the whole chart so the frame is
    smooth — pointwise switching would break the differentiated
    diagnostics.
    """
    candidates = []
    if seed is not None:
        candidates.append(np.asarray(seed, dtype=float))
    candidates.extend(np.eye(3))
    chosen = None
    for cand in candidates:
        sfield = np.zeros((3,) + g.grid.shape)
        for i in range(3):
            sfield[i] = cand[i]
        cos_angle = inner(g, sfield, u) / norm(g, sfield)
        if np.max(np.abs(cos_angle)) <= 0.9:
            chosen = cand
            break
    if chosen is None:
        raise ValueError("every candidate seed vector is nearly parallel to "
                         "the ray field somewhere on the chart")
    x = sfield - inner(g, sfield, u) * u
    x = x / norm(g, x)
    y = _metric_cross(g, u, x)
    return Frame2(g.grid, x, y, chosen)


def continue_frame(g: MetricField, u: np.ndarray, prev: Frame2) -> Frame2:
    """Carry a frame to updated (g, u) with the least rotation.

    The previous X is projected back onto the new transverse distribution
    and renormalized; Y completes the right-handed triple.  Used when
    diagnostics must stay in one gauge along an evolution.
    """
    x = prev.x - inner(g, prev.x, u) * u
    scale = norm(g, x)
    if np.min(scale) < 1e-8:
        raise ValueError("frame continuation degenerated: previous X fell "
                         "into the ray direction")
    x = x / scale
    y = _metric_cross(g, u, x)
    return Frame2(g.grid, x, y, prev.seed)


@dataclass
class FoliationDiagnostics:
    """First-order congruence data in a fixed transverse frame.

    ``shear`` and ``shear_lie`` are the covariant-derivative and
    Lie-derivative routes to the same quantity; their gap measures pure
    stencil noise.  ``twist`` is the imaginary part of the complex
    expansion — zero exactly when the transverse distribution is
    integrable.
    """

    shear: np.ndarray            # g(nabla_Z U, Z), complex
    shear_lie: np.ndarray        # (1/2)(L_U g)(Z, Z), complex
    expansion: np.ndarray        # g(nabla_Zbar U, Z), complex
    rotation_coeff: np.ndarray   # g(nabla_U Z, Zbar), complex
    acceleration: np.ndarray     # nabla_U U, real (3, ...)
    mean_curvature: np.ndarray   # g(U, nabla_X X + nabla_Y Y), real
    twist: np.ndarray            # Im(expansion), real
    maxima: dict

    @property
    def abs_shear(self) -> np.ndarray:
        return np.abs(self.shear)


def diagnostics(g: MetricField, u: np.ndarray, frame: Frame2,
                gamma: Christoffel3Field | None = None) -> FoliationDiagnostics:
    grid = g.grid
    if gamma is None:
        gamma = christoffel3(g)
    du = cov_deriv_field(u, gamma, grid)          # [a, k] = nabla_a u^k
    z = frame.z
    z_low = np.einsum("ij...,j...->i...", g.data, z)
    shear = np.einsum("a...,ak...,k...->...", z, du, z_low)
    expansion = np.einsum("a...,ak...,k...->...", np.conj(z), du, z_low)
    acceleration = np.einsum("a...,ak...->k...", u, du)

    dz = cov_deriv_field(z, gamma, grid)
    rotation_coeff = np.einsum("a...,ak...,k...->...", u, dz, np.conj(z_low))

    dx = cov_deriv_field(frame.x, gamma, grid)
    dy = cov_deriv_field(frame.y, gamma, grid)
    tangent_drift = np.einsum("a...,ak...->k...", frame.x, dx) \
        + np.einsum("a...,ak...->k...", frame.y, dy)
    mean_curvature = inner(g, u, tangent_drift)

    shear_lie = 0.5 * np.einsum("ab...,a...,b...->...", lie_metric(g, u), z, z)
    twist = expansion.imag

    maxima = {
        "shear": float(np.max(np.abs(shear))),
        "shear_route_gap": float(np.max(np.abs(shear - shear_lie))),
        "twist": float(np.max(np.abs(twist))),
        "acceleration": float(np.max(norm(g, acceleration))),
        "unit_defect": float(np.max(np.abs(inner(g, u, u) - 1.0))),
    }
    return FoliationDiagnostics(shear, shear_lie, expansion, rotation_coeff,
                                acceleration, mean_curvature, twist, maxima)


def bracket_twist(g: MetricField, u: np.ndarray, frame: Frame2) -> np.ndarray:
    """g(U, [X, Y]) from coordinate brackets; equals Im(expansion) in the
    continuum, so the gap between the two is a discretization monitor."""
    grid = g.grid
    dx = np.stack([partial_data(frame.x, grid, a) for a in range(3)])
    dy = np.stack([partial_data(frame.y, grid, a) for a in range(3)])
    bracket = np.einsum("a...,ak...->k...", frame.x, dy) \
        - np.einsum("a...,ak...->k...", frame.y, dx)
    return inner(g, u, bracket)


def conformality_report(diag: FoliationDiagnostics, tol: float = 1e-6) -> dict:
    """Flag conformality of the foliation and integrability of its
    complement from precomputed diagnostics."""
    max_shear = diag.maxima["shear"]
    max_twist = diag.maxima["twist"]
    return {
        "max_shear": max_shear,
        "max_twist": max_twist,
        "is_conformal": bool(max_shear < tol),
        "integrable_complement": bool(max_twist < tol),
        "tol": float(tol),
    }
