"""Uniform tensor-product chart grids and 4th-order stencil calculus.

Everything downstream (curvature, flows, diagnostics) reduces to three
primitives defined here: partial derivatives of gridded fields, local
tricubic interpolation, and integral-curve tracing.  Fields store their
components in leading axes and the three chart axes last, so a single
derivative routine serves scalars, vectors and tensors alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, ClassVar, Sequence

import numpy as np

__all__ = [
    "ChartGrid",
    "make_grid",
    "ScalarField",
    "VectorField",
    "CovectorField",
    "SymTensor2Field",
    "Christoffel3Field",
    "partial",
    "partial2",
    "derivative_matrix",
    "derivative_matrix_1d",
    "interpolate",
    "trace_curve",
    "CurveResult",
    "fornberg_weights",
]


def fornberg_weights(nodes: np.ndarray, x0: float, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at ``x0``.

    Classic Fornberg recursion; returns ``w`` with shape ``(m+1, len(nodes))``
    where ``w[k]`` reproduces the k-th derivative.  Used at import time to
    build all interior and one-sided closures, so every stencil in the
    package comes from one audited routine.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    w = np.zeros((m + 1, n))
    w[0, 0] = 1.0
    c1 = 1.0
    c4 = nodes[0] - x0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            for k in range(mn, 0, -1):
                w[k, i] = c1 * (k * w[k - 1, i - 1] - c5 * w[k, i - 1]) / c2
            w[0, i] = -c1 * c5 * w[0, i - 1] / c2
            for k in range(mn, 0, -1):
                w[k, j] = ((c4 * w[k, j]) - k * w[k - 1, j]) / c3
            w[0, j] = c4 * w[0, j] / c3
        c1 = c2
    return w


# 4th-order interior stencils (unit spacing); one-sided closures for the two
# layers adjacent to each boundary.  d2 one-sided closures need six nodes.
_D1_CENTRAL = fornberg_weights(np.arange(-2.0, 3.0), 0.0, 1)[1]
_D1_EDGE = [fornberg_weights(np.arange(0.0, 5.0), float(i), 1)[1] for i in (0, 1)]
_D2_CENTRAL = fornberg_weights(np.arange(-2.0, 3.0), 0.0, 2)[2]
_D2_EDGE = [fornberg_weights(np.arange(0.0, 6.0), float(i), 2)[2] for i in (0, 1)]


@dataclass(frozen=True)
class ChartGrid:
    """Uniform rectilinear grid on a coordinate chart.

    Parameters
    ----------
    names : tuple of str
        Coordinate names, e.g. ``("x1", "x2", "x3")``.
    mins, maxs : tuple of float
        Chart extents.  For periodic axes ``maxs[i]`` is the identified
        (excluded) endpoint.
    npts : tuple of int
        Points per axis, at least 5.
    periodic : tuple of bool
        Periodicity flag per axis.
    """

    names: tuple[str, ...]
    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    npts: tuple[int, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.mins) == len(self.maxs)
                == len(self.npts) == len(self.periodic) == 3):
            raise ValueError("grid requires exactly three axes")
        for i in range(3):
            if self.npts[i] < 5:
                raise ValueError(f"axis {self.names[i]}: need at least 5 points")
            if not self.maxs[i] > self.mins[i]:
                raise ValueError(f"axis {self.names[i]}: max must exceed min")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.npts

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(
            (self.maxs[i] - self.mins[i]) / (self.npts[i] - (0 if self.periodic[i] else 1))
            for i in range(3)
        )

    def axis(self, i: int) -> np.ndarray:
        """Grid coordinates along axis ``i`` (periodic axes omit the endpoint)."""
        h = self.spacing[i]
        return self.mins[i] + h * np.arange(self.npts[i])

    def meshes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcast coordinate arrays of shape ``npts`` (ij indexing)."""
        return tuple(np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij"))

    def contains(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Boolean mask: which of the (3, N) points lie in the chart domain."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] != 3:
            pts = pts.T
        ok = np.ones(pts.shape[1], dtype=bool)
        for i in range(3):
            if not self.periodic[i]:
                pad = tol * (self.maxs[i] - self.mins[i])
                ok &= (pts[i] >= self.mins[i] - pad) & (pts[i] <= self.maxs[i] + pad)
        return ok


def make_grid(names: Sequence[str], mins: Sequence[float], maxs: Sequence[float],
              npts: Sequence[int], periodic: Sequence[bool] = (False, False, False)) -> ChartGrid:
    """Build a :class:`ChartGrid`, normalising the argument containers."""
    return ChartGrid(tuple(names), tuple(float(m) for m in mins),
                     tuple(float(m) for m in maxs), tuple(int(n) for n in npts),
                     tuple(bool(p) for p in periodic))


@dataclass
class GridField:
    """Array of values over a chart grid; component axes lead, chart axes trail."""

    grid: ChartGrid
    data: np.ndarray

    comp_shape: ClassVar[tuple[int, ...]] = ()

    def __post_init__(self):
        self.data = np.asarray(self.data)
        want = self.comp_shape + self.grid.shape
        if self.data.shape != want:
            raise ValueError(f"{type(self).__name__}: expected shape {want}, got {self.data.shape}")

    @property
    def is_complex(self) -> bool:
        return np.issubdtype(self.data.dtype, np.complexfloating)

    def copy(self):
        return type(self)(self.grid, self.data.copy())


class ScalarField(GridField):
    comp_shape = ()


class VectorField(GridField):
    comp_shape = (3,)


class CovectorField(GridField):
    comp_shape = (3,)


class SymTensor2Field(GridField):
    comp_shape = (3, 3)

    def __post_init__(self):
        super().__post_init__()
        sym_gap = np.max(np.abs(self.data - np.swapaxes(self.data, 0, 1)))
        scale = max(1.0, float(np.max(np.abs(self.data))))
        if sym_gap > 1e-12 * scale:
            raise ValueError(f"symmetric tensor field has asymmetry {sym_gap:.3e}")


class Christoffel3Field(GridField):
    """Connection coefficients; index layout ``data[k, i, j]`` for the k-th
    component of the (i, j) slot, symmetric in (i, j)."""

    comp_shape = (3, 3, 3)


def _apply_stencil_1d(arr: np.ndarray, axis: int, h: float, periodic: bool,
                      central: np.ndarray, edge: list[np.ndarray], order: int) -> np.ndarray:
    """Apply a 1-D derivative stencil along ``axis`` of ``arr``."""
    a = np.moveaxis(arr, axis, -1)
    n = a.shape[-1]
    out = np.empty_like(a)
    scale = h ** order
    if periodic:
        acc = np.zeros_like(a)
        half = len(central) // 2
        for k, c in enumerate(central):
            if c != 0.0:
                acc += c * np.roll(a, half - k, axis=-1)
        out[...] = acc / scale
    else:
        m = len(central) // 2
        conv = sum(c * a[..., k:n - (len(central) - 1 - k)]
                   for k, c in enumerate(central) if c != 0.0)
        out[..., m:n - m] = conv / scale
        for i, w in enumerate(edge):
            if len(w) > n:  # short axis: use all available nodes at full width
                w = fornberg_weights(np.arange(float(n)), float(i), order)[order]
            npts = len(w)
            out[..., i] = a[..., :npts] @ w / scale
            out[..., n - 1 - i] = a[..., n - npts:] @ w[::-1] / ((-1) ** order * scale)
    return np.moveaxis(out, -1, axis)


def _diff(data: np.ndarray, grid: ChartGrid, chart_axis: int, order: int) -> np.ndarray:
    arr_axis = data.ndim - 3 + chart_axis
    h = grid.spacing[chart_axis]
    per = grid.periodic[chart_axis]
    if order == 1:
        return _apply_stencil_1d(data, arr_axis, h, per, _D1_CENTRAL, _D1_EDGE, 1)
    if order == 2:
        return _apply_stencil_1d(data, arr_axis, h, per, _D2_CENTRAL, _D2_EDGE, 2)
    raise ValueError("only first and second derivatives are provided")


def partial(f: GridField, axis: int) -> GridField:
    """4th-order partial derivative of any field along chart axis ``axis``.

    Interior points use the 5-point central stencil; the two layers at each
    non-periodic boundary use one-sided 5-point closures of the same order.
    Periodic axes wrap.
    """
    out = type(f)(f.grid, _diff(f.data, f.grid, axis, 1))
    return out


def partial2(f: GridField, axis: int) -> GridField:
    """4th-order second partial derivative along a single chart axis."""
    return type(f)(f.grid, _diff(f.data, f.grid, axis, 2))


def partial_data(data: np.ndarray, grid: ChartGrid, axis: int) -> np.ndarray:
    """Derivative of a bare array whose trailing three axes are the chart axes."""
    return _diff(data, grid, axis, 1)


def partial2_data(data: np.ndarray, grid: ChartGrid, axis: int) -> np.ndarray:
    return _diff(data, grid, axis, 2)


def derivative_matrix(grid: ChartGrid, axis: int) -> np.ndarray:
    """Dense 1-D matrix realising :func:`partial` along one chart axis.

    Row k holds the stencil weights that produce the derivative at node k,
    so applying this matrix along the axis reproduces ``partial`` exactly
    (same central stencils, same one-sided closures, same wrap-around on
    periodic axes).  Materialising it lets one-dimensional boundary-value
    problems be solved directly as dense linear systems with the very same
    discretisation the grid operators use.
    """
    return derivative_matrix_1d(grid.npts[axis], grid.spacing[axis],
                                grid.periodic[axis])


def derivative_matrix_1d(npts: int, spacing: float,
                         periodic: bool = False) -> np.ndarray:
    """Dense derivative matrix on ``npts`` uniform nodes ``spacing`` apart."""
    basis = np.eye(npts)
    cols = _apply_stencil_1d(basis, -1, spacing, periodic,
                             _D1_CENTRAL, _D1_EDGE, 1)
    return np.ascontiguousarray(cols.T)


def _cubic_weights(t: np.ndarray) -> np.ndarray:
    """Lagrange cubic weights at nodes {0,1,2,3} for evaluation points ``t``; (4, N)."""
    w = np.empty((4,) + t.shape)
    w[0] = -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0
    w[1] = t * (t - 2.0) * (t - 3.0) / 2.0
    w[2] = -t * (t - 1.0) * (t - 3.0) / 2.0
    w[3] = t * (t - 1.0) * (t - 2.0) / 6.0
    return w


def _interp_setup(grid: ChartGrid, points: np.ndarray):
    """Window indices and cubic weights per axis for a (3, N) point batch."""
    idx, wts = [], []
    for i in range(3):
        h = grid.spacing[i]
        n = grid.npts[i]
        rel = (points[i] - grid.mins[i]) / h
        if grid.periodic[i]:
            base = np.floor(rel).astype(int) - 1
            cols = (base[None, :] + np.arange(4)[:, None]) % n
            t = rel - np.floor(rel) + 1.0
        else:
            if np.any(rel < -1e-9 * n) or np.any(rel > (n - 1) * (1 + 1e-12) + 1e-9 * n):
                bad = points[i][(rel < -1e-9 * n) | (rel > (n - 1) * (1 + 1e-12) + 1e-9 * n)]
                raise ValueError(
                    f"interpolation point outside chart on axis {grid.names[i]}: {bad[:3]}")
            base = np.clip(np.floor(rel).astype(int) - 1, 0, n - 4)
            cols = base[None, :] + np.arange(4)[:, None]
            t = rel - base
        idx.append(cols)
        wts.append(_cubic_weights(t))
    return idx, wts


def interpolate(f: GridField, points: np.ndarray) -> np.ndarray:
    """Tricubic (local 4x4x4 Lagrange) interpolation of ``f`` at points.

    Parameters
    ----------
    f : GridField
    points : ndarray, shape (3, N) or (3,)

    Returns
    -------
    ndarray with the field's component shape leading and N trailing
    (a scalar field yields shape (N,)).  Exact on tricubic polynomials.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[:, None]
    idx, wts = _interp_setup(f.grid, pts)
    cube = f.data[..., idx[0][:, None, None, :], idx[1][None, :, None, :], idx[2][None, None, :, :]]
    out = np.einsum("...abcn,an,bn,cn->...n", cube, wts[0], wts[1], wts[2])
    return out[..., 0] if single else out


@dataclass
class CurveResult:
    """Integral-curve trace: arc parameters, points, and exit bookkeeping."""

    s: np.ndarray            # (M,) parameter values, s[0] = 0
    points: np.ndarray       # (3, M) positions
    exited: bool             # left a non-periodic chart face before n_steps
    n_taken: int             # completed whole steps


def _rk4_step(vel: Callable[[np.ndarray], np.ndarray], p: np.ndarray, ds: float) -> np.ndarray:
    k1 = vel(p)
    k2 = vel(p + 0.5 * ds * k1)
    k3 = vel(p + 0.5 * ds * k2)
    k4 = vel(p + ds * k3)
    return p + (ds / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def trace_curve(field: VectorField | Callable[[np.ndarray], np.ndarray],
                start: Sequence[float], ds: float, n_steps: int,
                grid: ChartGrid | None = None) -> CurveResult:
    """Trace an integral curve of a vector field with classical RK4.

    ``field`` may be a gridded field (interpolated tricubically) or a
    callable ``p -> velocity`` on (3,) arrays.  Tracing stops early when a
    stage or endpoint would leave a non-periodic chart face; the partial
    step is then shrunk by bisection so the final point lies inside.
    """
    if isinstance(field, VectorField):
        grid = field.grid

        def vel(p):
            return interpolate(field, p)
    else:
        vel = field
        if grid is None:
            raise ValueError("tracing a callable velocity requires an explicit grid")

    p = np.asarray(start, dtype=float).copy()
    if not grid.contains(p[:, None])[0]:
        raise ValueError(f"start point {p} outside chart domain")
    pts = [p.copy()]
    svals = [0.0]
    exited = False
    n_taken = 0
    for _ in range(n_steps):
        try:
            q = _rk4_step(vel, p, ds)
            ok = grid.contains(q[:, None])[0]
        except ValueError:
            ok = False
        if not ok:
            lo, hi = 0.0, 1.0
            q_keep = None
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                try:
                    trial = _rk4_step(vel, p, mid * ds)
                    inside = grid.contains(trial[:, None])[0]
                except ValueError:
                    inside = False
                if inside:
                    lo, q_keep = mid, trial
                else:
                    hi = mid
            if q_keep is not None and lo > 1e-12:
                pts.append(q_keep)
                svals.append(svals[-1] + lo * ds)
            exited = True
            break
        p = q
        pts.append(p.copy())
        svals.append(svals[-1] + ds)
        n_taken += 1
    return CurveResult(np.array(svals), np.stack(pts, axis=1), exited, n_taken)
