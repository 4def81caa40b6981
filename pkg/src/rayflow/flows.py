"""Coupled evolution of a spatial metric and its unit ray field.

The state is a pair (g_t, U_t) on a fixed chart, advanced by

    dU/dt = -f grad-along-U + grad f,
    dg/dt = -2 theta (.) df + 2 T,

where theta = g(U, .), f is the prescribed lapse and T is a symmetric
drive tensor that selects the flavour of the flow:

* ``SFR``            -- T chosen so the ray congruence of dt + fU stays
                        shear-free in the Lorentzian metric -f^2 dt^2 + g_t;
* ``ConstCurvCFGR``  -- T = 0, f = 1: the metric is frozen and only the ray
                        field relaxes (right for constant-curvature slices);
* ``IntegrableCFGR`` -- f = 1 and T solves an implicit linear equation built
                        from the transverse curvature tensor, preserving
                        conformality together with integrability of the
                        screen distribution;
* ``Custom``         -- caller-supplied T, reported on but not certified.

Besides the integrator the module carries the per-step invariant monitors,
the transport-identity residuals measured along traced ray characteristics,
the pointwise quadratic constraint, and the fixed-point report.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .foliation import Frame2, complementary_frame, continue_frame, diagnostics
from .grid import ChartGrid, ScalarField, VectorField, interpolate, partial_data
from .riemann import (DegenerateMetricError, MetricField, curvature3,
                      cov_deriv_field, divergence, hessian_scalar, inner,
                      lie_metric, norm)
from .spacetime import (Lapse, Slice, christoffel4, cov_deriv4, geodesic_defect,
                        mixed_time_ricci, ray_derivs, time_space_curvature,
                        transverse_curvature)

VARIANTS = ("SFR", "ConstCurvCFGR", "IntegrableCFGR", "Custom")

_SYM_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

#: Monitors that halt a run when no explicit tolerance is configured.
_DEFAULT_TOLERANCES = {"unit_norm": 1e-5}


class DegenerateNuError(RuntimeError):
    """The horizontal mean curvature lost its margin away from zero."""


def _sym_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Symmetrised outer product (a (.) b)_ij = (a_i b_j + b_i a_j) / 2."""
    outer = np.einsum("i...,j...->ij...", a, b)
    return 0.5 * (outer + np.swapaxes(outer, 0, 1))


def _point_coords(grid: ChartGrid, flat_index: int) -> tuple[float, float, float]:
    idx = np.unravel_index(flat_index, grid.shape)
    return tuple(float(grid.axis(a)[idx[a]]) for a in range(3))


@dataclass
class FlowSpec:
    """Everything a run needs besides its initial slice.

    ``monitor_tolerances`` maps monitor names to halting thresholds; a name
    missing from the map falls back to the module default (only the
    unit-norm defect halts by default), and an explicit ``None`` turns a
    default off.  ``frame_seed`` picks the screen frame used by shear-type
    monitors; ``nu_floor`` is the degeneracy margin of the integrable flow,
    whose implicit solves run restarted GMRES for at most
    ``solver_maxiter`` hundred-step restart cycles.
    """

    variant: str
    dt: float
    total_time: float
    lapse: Lapse = field(default_factory=Lapse.unit)
    monitor_tolerances: dict = field(default_factory=dict)
    frame_seed: tuple | None = None
    nu_floor: float = 1e-6
    custom_drive: Callable[[Slice], np.ndarray] | None = None
    solver_rtol: float = 1e-9
    solver_maxiter: int = 8
    store_every: int = 1

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))

    def tolerance(self, name: str) -> float | None:
        if name in self.monitor_tolerances:
            return self.monitor_tolerances[name]
        return _DEFAULT_TOLERANCES.get(name)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; pick one of {VARIANTS}")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not self.total_time > 0:
            raise ValueError("total time must be positive")
        if abs(self.n_steps * self.dt - self.total_time) > 1e-9 * self.total_time:
            raise ValueError("total_time must be an integer number of steps")
        if self.variant == "IntegrableCFGR" and not self.lapse.is_unit:
            raise ValueError("the integrable-complement flow requires the unit lapse")
        if self.variant == "Custom" and self.custom_drive is None:
            raise ValueError("Custom variant needs a custom_drive callable")
        if self.store_every < 1:
            raise ValueError("store_every must be at least 1")


@dataclass
class Trajectory:
    """Result of a run: stored slices, per-step monitor records, halt info.

    ``halt`` is None for a run that reached its final time; otherwise a dict
    naming the breached condition, the step, the time and the worst point.
    """

    spec: FlowSpec
    slices: list[Slice]
    records: list[dict]
    halt: dict | None = None

    @property
    def ts(self) -> np.ndarray:
        return np.array([s.t for s in self.slices])

    def __len__(self) -> int:
        return len(self.slices)

    @property
    def completed(self) -> bool:
        return self.halt is None


def horizontal_mean_curvature(slc: Slice) -> np.ndarray:
    """nu = -div U, the mean curvature of the screen distribution.

    Equals minus the real part of the complex expansion invariant, but needs
    no frame.
    """
    return -divergence(slc.metric, slc.u, slc.christoffel())


# ---------------------------------------------------------------------------
# drive tensors


def _pack_sym(s: np.ndarray) -> np.ndarray:
    return np.concatenate([np.ravel(s[i, j]) for i, j in _SYM_PAIRS])


def _unpack_sym(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    n = int(np.prod(shape))
    out = np.empty((3, 3) + shape)
    for c, (i, j) in enumerate(_SYM_PAIRS):
        block = x[c * n:(c + 1) * n].reshape(shape)
        out[i, j] = block
        if i != j:
            out[j, i] = block
    return out


def _perp_project(s: np.ndarray, u: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Compress a symmetric bilinear form onto the complement of the ray field."""
    su = np.einsum("ij...,j...->i...", s, u)
    suu = np.einsum("i...,i...->...", su, u)
    return s - 2.0 * _sym_outer(su, theta) + suu * np.einsum("i...,j...->ij...", theta, theta)


def _inflow_mask(grid: ChartGrid, u: np.ndarray) -> np.ndarray:
    """Boundary points where the ray field enters the chart."""
    mask = np.zeros(grid.shape, dtype=bool)
    for a in range(3):
        if grid.periodic[a]:
            continue
        lo = [slice(None)] * 3
        lo[a] = 0
        mask[tuple(lo)] |= u[a][tuple(lo)] > 0.0
        hi = [slice(None)] * 3
        hi[a] = -1
        mask[tuple(hi)] |= u[a][tuple(hi)] < 0.0
    return mask


def _tangent_faces(grid: ChartGrid, u: np.ndarray) -> list[tuple[int, int]]:
    """Chart faces the ray field never crosses, as (axis, side) pairs.

    Side 0 is the low end of the axis.  A face counts as tangent only when
    the normal component of the unit ray field vanishes over the whole
    face, so a mixed face keeps its ordinary treatment.
    """
    faces = []
    for a in range(3):
        if grid.periodic[a]:
            continue
        lo = [slice(None)] * 3
        lo[a] = 0
        if np.max(np.abs(u[a][tuple(lo)])) < 1e-8:
            faces.append((a, 0))
        hi = [slice(None)] * 3
        hi[a] = -1
        if np.max(np.abs(u[a][tuple(hi)])) < 1e-8:
            faces.append((a, 1))
    return faces


def _extrapolation_rows(out: np.ndarray, m: np.ndarray,
                        faces: list[tuple[int, int]]) -> np.ndarray:
    """Overwrite tangent-face layers of ``out`` with extrapolation residuals.

    On the two outermost layers along each tangent face the equation row
    becomes "value minus cubic extrapolation from the next four interior
    layers"; zero residual forces the solution smooth across the face.
    """
    def layer(j: int, a: int) -> tuple:
        return tuple([slice(None)] * 2
                     + [j if ax == a else slice(None) for ax in range(3)])

    for a, side in faces:
        n = m.shape[2 + a]
        js = (1, 0) if side == 0 else (n - 2, n - 1)
        step = 1 if side == 0 else -1
        for j in js:
            out[layer(j, a)] = m[layer(j, a)] - (
                4.0 * m[layer(j + step, a)]
                - 6.0 * m[layer(j + 2 * step, a)]
                + 4.0 * m[layer(j + 3 * step, a)]
                - m[layer(j + 4 * step, a)])
    return out


def _zero_face_layers(arr: np.ndarray,
                      faces: list[tuple[int, int]]) -> np.ndarray:
    for a, side in faces:
        sl = [slice(None)] * 5
        sl[2 + a] = slice(0, 2) if side == 0 else slice(-2, None)
        arr[tuple(sl)] = 0.0
    return arr


def _integrable_dtg(slc: Slice, nu_floor: float, rtol: float,
                    maxiter: int) -> np.ndarray:
    """Metric velocity of the integrable flow.

    The defining relation dg/dt = -(4/nu) P R P is implicit: the transverse
    curvature tensor R contains the time derivative of the spatial
    connection, which is linear in dg/dt.  Moving that part to the left
    leaves a linear system whose principal part transports the unknown
    along the ray field, so on a chart whose boundary the rays cross the
    system only determines dg/dt once inflow data is chosen (on the
    warped-product profile the leftover freedom is exactly the boundary
    value of the profile velocity).  We close it the same way the profile
    solver does: the velocity is pinned to zero on ray-inflow boundary
    layers, which makes the discrete operator square and nonsingular.

    Faces the rays never cross are characteristic, so no data belongs
    there; leaving the one-sided curvature rows in place on such a face
    feeds a regenerative boundary-layer error loop (each solve's face
    imprint is differenced into the next right-hand side and re-amplified
    by the 4/nu factor, which wrecks an evolution within a few steps).
    Their two outer layers instead carry cubic-extrapolation rows that
    force the solution smooth across the face, the standard closure for a
    transport problem at a tangential boundary.

    Restarted GMRES with a long restart window converges in well under
    one window; short-cycle methods thrash on this operator, and a warm
    start from a neighbouring state does not pay, so every solve starts
    cold.
    """
    g = slc.metric
    grid = slc.grid
    u = slc.u
    shape = grid.shape
    gamma = slc.christoffel()

    nu = horizontal_mean_curvature(slc)
    worst = float(np.min(np.abs(nu)))
    if worst < nu_floor:
        where = _point_coords(grid, int(np.argmin(np.abs(nu))))
        raise DegenerateNuError(
            f"screen mean curvature too close to zero: min|nu| = {worst:.3e} "
            f"at point {where}")

    theta = g.lower(u)
    scale = 4.0 / nu
    ricci = curvature3(g, gamma).ricci
    mask = _inflow_mask(grid, u)
    faces = _tangent_faces(grid, u)
    for a, _ in faces:
        if grid.npts[a] < 6:
            raise ValueError(
                f"axis {grid.names[a]!r} has a ray-tangent face but only "
                f"{grid.npts[a]} points; the face closure needs at least 6")
    rhs_field = np.where(mask, 0.0, scale * _perp_project(ricci, u, theta))
    rhs = _pack_sym(_zero_face_layers(rhs_field, faces))

    def mixed_sym(m: np.ndarray) -> np.ndarray:
        r0 = time_space_curvature(slc, m)
        mix = np.einsum("k...,kji...->ij...", u, r0)
        return 0.5 * (mix + np.swapaxes(mix, 0, 1))

    def matvec(x: np.ndarray) -> np.ndarray:
        m = _unpack_sym(x, shape)
        out = m + scale * _perp_project(mixed_sym(m), u, theta)
        out = np.where(mask, m, out)
        return _pack_sym(_extrapolation_rows(out, m, faces))

    nflat = 6 * int(np.prod(shape))
    op = LinearOperator((nflat, nflat), matvec=matvec)
    atol = rtol * float(np.linalg.norm(rhs))
    sol, info = gmres(op, rhs, rtol=rtol, atol=atol, restart=100,
                      maxiter=maxiter)
    if info != 0:
        raise RuntimeError(
            f"implicit metric-velocity solve did not converge (gmres info={info})")
    return _unpack_sym(sol, shape)


def build_T(slc: Slice, variant: str, *, custom_drive: Callable | None = None,
            nu_floor: float = 1e-6, solver_rtol: float = 1e-9,
            solver_maxiter: int = 8) -> np.ndarray:
    """Drive tensor of the chosen evolution system, as a (3, 3, ...) array.

    The shear-free drive is the closed-form combination

        T = -df (.) theta + U(f) theta^2 + f theta (.) mu_flat - (f/2) L_U g,

    which vanishes exactly when f = 1 and the ray field is tangent to a
    Riemannian foliation.  The integrable drive is half the implicitly
    solved metric velocity; the constant-curvature drive is zero.
    """
    g = slc.metric
    grid = slc.grid
    if variant == "ConstCurvCFGR":
        return np.zeros((3, 3) + grid.shape)
    if variant == "Custom":
        if custom_drive is None:
            raise ValueError("Custom variant needs a custom_drive callable")
        T = np.asarray(custom_drive(slc), dtype=float)
        if T.shape != (3, 3) + grid.shape:
            raise ValueError(f"custom drive has shape {T.shape}, "
                             f"expected {(3, 3) + grid.shape}")
        gap = float(np.max(np.abs(T - np.swapaxes(T, 0, 1))))
        if gap > 1e-10 * max(1.0, float(np.max(np.abs(T)))):
            raise ValueError(f"custom drive is not symmetric (gap {gap:.3e})")
        return T
    if variant == "IntegrableCFGR":
        return 0.5 * _integrable_dtg(slc, nu_floor, solver_rtol,
                                     solver_maxiter)
    if variant == "SFR":
        f = slc.lapse
        u = slc.u
        gamma = slc.christoffel()
        theta = g.lower(u)
        df = np.stack([partial_data(f, grid, a) for a in range(3)])
        u_f = np.einsum("i...,i...->...", u, df)
        du = cov_deriv_field(u, gamma, grid)
        mu_flat = g.lower(np.einsum("a...,ak...->k...", u, du))
        return (-_sym_outer(df, theta)
                + u_f * np.einsum("i...,j...->ij...", theta, theta)
                + f * _sym_outer(theta, mu_flat)
                - 0.5 * f * lie_metric(g, u))
    raise ValueError(f"unknown variant {variant!r}; pick one of {VARIANTS}")


def _rhs_from_drive(slc: Slice, T: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(dU/dt, dg/dt) for a given drive tensor."""
    g = slc.metric
    grid = slc.grid
    f = slc.lapse
    gamma = slc.christoffel()
    df = np.stack([partial_data(f, grid, a) for a in range(3)])
    theta = g.lower(slc.u)
    dt_g = -2.0 * _sym_outer(theta, df) + 2.0 * T
    du = cov_deriv_field(slc.u, gamma, grid)
    acc = np.einsum("a...,ak...->k...", slc.u, du)
    dt_u = -f * acc + g.raise_(df)
    return dt_u, dt_g


def flow_rhs(slc: Slice, variant: str, *, custom_drive: Callable | None = None,
             nu_floor: float = 1e-6, solver_rtol: float = 1e-9,
             solver_maxiter: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side (dU/dt, dg/dt) of the coupled system."""
    T = build_T(slc, variant, custom_drive=custom_drive, nu_floor=nu_floor,
                solver_rtol=solver_rtol, solver_maxiter=solver_maxiter)
    return _rhs_from_drive(slc, T)


# ---------------------------------------------------------------------------
# monitors


def _null_shear(slc: Slice, dt_g: np.ndarray, frame: Frame2) -> np.ndarray:
    """(L_W G)(Z, Z) for the null ray W = dt + fU, via 2 G(nabla_Z W, Z).

    Computed with the closed-form 4-D connection; vanishing to stencil
    accuracy is the defining property of a shear-free ray congruence.
    """
    grid = slc.grid
    f = slc.lapse
    gamma4 = christoffel4(slc, dt_g)
    z = frame.z
    zero = np.zeros(grid.shape)
    ones = np.ones(grid.shape)
    w = f * slc.u
    acc = cov_deriv4(gamma4, grid, zero, z, ones, w, zero, np.zeros_like(w))
    return 2.0 * np.einsum("ij...,i...,j...->...", slc.metric.data, acc.space, z)


def _slice_frame(slc: Slice, spec: FlowSpec) -> Frame2:
    seed = None if spec.frame_seed is None else np.asarray(spec.frame_seed, float)
    return complementary_frame(slc.metric, slc.u, seed)


def _monitor_fields(slc: Slice, spec: FlowSpec, dt_u: np.ndarray,
                    dt_g: np.ndarray, T: np.ndarray) -> tuple[dict, dict]:
    """One step's monitor record plus the scalar fields behind each entry."""
    g = slc.metric
    f = slc.lapse
    fields: dict[str, np.ndarray] = {}
    fields["unit_norm"] = np.abs(inner(g, slc.u, slc.u) - 1.0)
    parallel, _ = ray_derivs(slc, dt_u, dt_g)
    fields["ray_parallel"] = parallel.norm(slc)
    fields["geodesic"] = norm(g, geodesic_defect(slc, T))
    frame = _slice_frame(slc, spec)
    diag = diagnostics(g, slc.u, frame, slc.christoffel())
    fields["shear"] = np.abs(diag.shear)
    fields["twist"] = np.abs(diag.twist)
    if spec.variant == "SFR":
        t_zz = np.einsum("ij...,i...,j...->...", T, frame.z, frame.z)
        fields["sfr_identity"] = np.abs(f * diag.shear_lie + t_zz)
        fields["g_shear4"] = np.abs(_null_shear(slc, dt_g, frame))
    record = {"t": float(slc.t)}
    for name, data in fields.items():
        record[name] = float(np.max(data))
    if spec.variant == "IntegrableCFGR":
        nu = np.abs(horizontal_mean_curvature(slc))
        fields["nu_min"] = nu
        record["nu_min"] = float(np.min(nu))
    return record, fields


def _breached(record: dict, spec: FlowSpec) -> tuple[str, str] | None:
    """First monitor outside its tolerance, as (name, reason), else None."""
    for name, value in record.items():
        if name in ("t", "step"):
            continue
        if not np.isfinite(value):
            return name, "non-finite value"
        tol = spec.tolerance(name)
        if tol is None:
            continue
        if name == "nu_min":
            if value < tol:
                return name, f"{value:.3e} below floor {tol:.3e}"
        elif value > tol:
            return name, f"{value:.3e} above tolerance {tol:.3e}"
    return None


def evolve(initial: Slice, spec: FlowSpec) -> Trajectory:
    """Advance a slice by classical RK4 method-of-lines.

    The initial slice's lapse arrays are replaced by ``spec.lapse`` sampled
    at its time, so the run is consistent with the prescribed lapse.  Every
    accepted step is monitored; a breached tolerance, a metric losing
    positive-definiteness, or a degenerate screen curvature halts the run
    with a diagnostic naming step and point (a warning, not an exception --
    the truncated trajectory is still returned for inspection).
    """
    spec.validate()
    grid = initial.grid
    u = np.array(initial.u, dtype=float, copy=True)
    gdata = np.array(initial.metric.data, dtype=float, copy=True)
    t0 = float(initial.t)
    h = spec.dt
    slices: list[Slice] = []
    records: list[dict] = []
    halt: dict | None = None
    step = 0

    def make_slice(tt: float, udata: np.ndarray, gd: np.ndarray) -> Slice:
        try:
            metric = MetricField(grid, gd)
        except DegenerateMetricError as exc:
            dets = np.linalg.det(np.moveaxis(gd, (0, 1), (-2, -1)))
            where = _point_coords(grid, int(np.argmin(dets)))
            raise DegenerateMetricError(f"{exc}; worst point {where}") from exc
        fvals, dfvals = spec.lapse.fields(grid, tt)
        return Slice(tt, metric, udata, fvals, dfvals)

    def rhs_at(slc: Slice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        T = build_T(slc, spec.variant, custom_drive=spec.custom_drive,
                    nu_floor=spec.nu_floor, solver_rtol=spec.solver_rtol,
                    solver_maxiter=spec.solver_maxiter)
        dt_u, dt_g = _rhs_from_drive(slc, T)
        return T, dt_u, dt_g

    initial.validate()
    try:
        while True:
            slc = make_slice(t0 + step * h, u, gdata)
            T, k1u, k1g = rhs_at(slc)
            slc.drive = T
            record, mon_fields = _monitor_fields(slc, spec, k1u, k1g, T)
            record["step"] = step
            records.append(record)
            if step % spec.store_every == 0 or step == spec.n_steps:
                slices.append(slc)
            hit = _breached(record, spec)
            if hit is not None:
                name, reason = hit
                data = mon_fields[name]
                pick = np.argmin if name == "nu_min" else np.argmax
                where = _point_coords(grid, int(pick(data)))
                halt = {"reason": "monitor breach", "monitor": name,
                        "step": step, "t": slc.t, "value": record[name],
                        "point": where,
                        "message": f"monitor {name} breached at step {step}, "
                                   f"t={slc.t:.6g}, point {where}: {reason}"}
                break
            if step >= spec.n_steps:
                break
            s2 = make_slice(slc.t + 0.5 * h, u + 0.5 * h * k1u, gdata + 0.5 * h * k1g)
            _, k2u, k2g = rhs_at(s2)
            s3 = make_slice(slc.t + 0.5 * h, u + 0.5 * h * k2u, gdata + 0.5 * h * k2g)
            _, k3u, k3g = rhs_at(s3)
            s4 = make_slice(slc.t + h, u + h * k3u, gdata + h * k3g)
            _, k4u, k4g = rhs_at(s4)
            u = u + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
            gdata = gdata + (h / 6.0) * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
            step += 1
    except DegenerateMetricError as exc:
        halt = {"reason": "metric degeneration", "step": step,
                "t": t0 + step * h,
                "message": f"metric lost positive-definiteness at step {step}: {exc}"}
    except DegenerateNuError as exc:
        halt = {"reason": "nu degeneration", "step": step, "t": t0 + step * h,
                "message": f"step {step}: {exc}"}
    if halt is not None:
        warnings.warn(f"flow halted early: {halt['message']}")
    return Trajectory(spec, slices, records, halt)


def monitors(traj: Trajectory) -> dict[str, np.ndarray]:
    """Monitor time series of a trajectory, as arrays keyed by name.

    Uses the records written during integration; a hand-built trajectory
    without records is measured afresh from its stored slices.
    """
    if not traj.slices and not traj.records:
        raise ValueError("empty trajectory")
    records = traj.records
    if not records:
        records = []
        for k, slc in enumerate(traj.slices):
            T = slc.drive
            if T is None:
                T = build_T(slc, traj.spec.variant,
                            custom_drive=traj.spec.custom_drive,
                            nu_floor=traj.spec.nu_floor,
                            solver_rtol=traj.spec.solver_rtol,
                            solver_maxiter=traj.spec.solver_maxiter)
            dt_u, dt_g = _rhs_from_drive(slc, T)
            rec, _ = _monitor_fields(slc, traj.spec, dt_u, dt_g, T)
            rec["step"] = k
            records.append(rec)
    keys: list[str] = []
    for rec in records:
        for key in rec:
            if key not in keys:
                keys.append(key)
    return {key: np.array([rec.get(key, np.nan) for rec in records]) for key in keys}


# ---------------------------------------------------------------------------
# transport identities along characteristics


@dataclass
class TransportResidual:
    """Residual time series of one transport identity.

    ``residual[k]`` is the largest gap at interior step ``steps[k]`` between
    the differenced material derivative and the analytic right-hand side,
    over the probes still inside the chart; ``n_lost`` counts probes whose
    characteristic left the chart somewhere along the run.
    """

    quantity: str
    steps: np.ndarray
    t: np.ndarray
    residual: np.ndarray
    n_probes: int
    n_lost: int


_TRANSPORT_QUANTITIES = ("sigma", "abs_sigma_sq", "rho", "im_rho")


def _probe_lattice(grid: ChartGrid, stride: int, margin: int) -> np.ndarray:
    """Interior sample points, thinned by ``stride``; (3, P) array."""
    axes = []
    for a in range(3):
        n = grid.npts[a]
        if grid.periodic[a]:
            sel = np.arange(0, n, stride)
        else:
            sel = np.arange(margin, n - margin, stride)
            if sel.size == 0:
                raise ValueError(f"axis {grid.names[a]} too small for margin {margin}")
        axes.append(grid.axis(a)[sel])
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh])


def _advect(grid: ChartGrid, pos: np.ndarray, alive: np.ndarray,
            v_lo: VectorField, v_hi: VectorField, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """One RK4 step of dx/dt = f u, interpolating the velocity in time.

    Probes whose stage points leave a bounded chart face are frozen where
    they were and flagged dead; frozen positions stay valid interpolation
    targets for the remaining live bookkeeping.
    """
    def vel(points: np.ndarray, w: float) -> tuple[np.ndarray, np.ndarray]:
        ok = grid.contains(points)
        vals = np.zeros_like(points)
        if np.any(ok):
            sub = points[:, ok]
            vals[:, ok] = (1.0 - w) * interpolate(v_lo, sub) + w * interpolate(v_hi, sub)
        return vals, ok

    live = alive.copy()
    k1, ok = vel(pos, 0.0)
    live &= ok
    k2, ok = vel(pos + 0.5 * dt * k1, 0.5)
    live &= ok
    k3, ok = vel(pos + 0.5 * dt * k2, 0.5)
    live &= ok
    k4, ok = vel(pos + dt * k3, 1.0)
    live &= ok
    new = pos + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    live &= grid.contains(new)
    out = np.where(live, new, pos)
    return out, live


def _transport_fields(slc: Slice, frame: Frame2, variant: str,
                      quantity: str, spec: FlowSpec) -> dict[str, np.ndarray]:
    """Per-slice ingredients of one transport identity, on the full grid."""
    g = slc.metric
    grid = slc.grid
    f = slc.lapse
    u = slc.u
    gamma = slc.christoffel()
    diag = diagnostics(g, u, frame, gamma)
    sigma = diag.shear
    rho = diag.expansion
    T = slc.drive
    if T is None:
        T = build_T(slc, variant, custom_drive=spec.custom_drive,
                    nu_floor=spec.nu_floor, solver_rtol=spec.solver_rtol,
                    solver_maxiter=spec.solver_maxiter)
    _, dt_g = _rhs_from_drive(slc, T)
    z = frame.z
    t_zz = np.einsum("ij...,i...,j...->...", T, z, z)
    t_zzbar = np.einsum("ij...,i...,j...->...", T, z, np.conj(z))
    out = {"sigma": sigma, "rho": rho}
    if quantity in ("sigma", "abs_sigma_sq"):
        df = np.stack([partial_data(f, grid, a) for a in range(3)])
        z_f = np.einsum("i...,i...->...", z, df)
        z_lnf = z_f / f
        u_lnf = np.einsum("i...,i...->...", u, df) / f
        t_uz = np.einsum("ij...,i...,j...->...", T, u, z)
        mu_z = np.einsum("ij...,i...,j...->...", g.data, diag.acceleration, z)
        r_zz = np.einsum("ij...,i...,j...->...",
                         transverse_curvature(slc, dt_g), z, z)
        tau = diag.rotation_coeff
        rhs = ((0.5 * t_zzbar + f * tau - 0.5 * f * (rho + np.conj(rho))) * sigma
               - 0.5 * t_zz * (rho - 2.0 * u_lnf)
               + z_lnf * (0.5 * z_f - t_uz)
               - (0.5 * z_f + t_uz) * mu_z
               + r_zz)
        out["rhs"] = rhs
    elif quantity == "rho":
        df = np.stack([partial_data(f, grid, a) for a in range(3)])
        z_lnf = np.einsum("i...,i...->...", z, df) / f
        ricci = curvature3(g, gamma).ricci
        ricci_uu = np.einsum("ij...,i...,j...->...", ricci, u, u)
        mixed = mixed_time_ricci(slc, time_space_curvature(slc, dt_g))
        tau = diag.rotation_coeff
        out["rhs"] = (-0.5 * (f * rho + t_zzbar) * rho
                      - 0.5 * (f * np.conj(sigma) + np.conj(t_zz)) * sigma
                      + z_lnf * np.conj(z_lnf) / f
                      + 0.5 * t_zzbar * tau
                      - mixed - f * ricci_uu)
    elif quantity == "im_rho":
        out["rhs"] = (-0.5 * t_zzbar * (rho - np.conj(rho))
                      - 0.5 * np.conj(t_zz) * sigma
                      + 0.5 * t_zz * np.conj(sigma))
    return out


def transport_check(traj: Trajectory, quantity: str, *, probe_stride: int = 4,
                    margin: int = 4) -> TransportResidual:
    """Residuals of a transport identity along traced ray characteristics.

    Characteristics of dt + fU are traced through the stored steps from a
    thinned lattice of interior probes; the material derivative of the
    chosen quantity is formed by five-point differencing of its values
    along each trace and compared against the analytic right-hand side
    evaluated at the traced points.  The screen frame is continued through
    time by minimal rotation, so the raw ``sigma`` residual carries the
    frame's own time gauge; ``abs_sigma_sq`` and ``im_rho`` are insensitive
    to it.
    """
    if quantity not in _TRANSPORT_QUANTITIES:
        raise ValueError(f"unknown quantity {quantity!r}; pick one of "
                         f"{_TRANSPORT_QUANTITIES}")
    if len(traj.slices) < 5:
        raise ValueError("transport check needs at least five stored steps")
    ts = traj.ts
    gaps = np.diff(ts)
    dt = float(gaps[0])
    if np.max(np.abs(gaps - dt)) > 1e-9 * dt:
        raise ValueError("stored steps are not uniformly spaced in time")
    grid = traj.slices[0].grid
    spec = traj.spec

    frames = []
    fr = _slice_frame(traj.slices[0], spec)
    frames.append(fr)
    for slc in traj.slices[1:]:
        fr = continue_frame(slc.metric, slc.u, fr)
        frames.append(fr)

    per_slice = [_transport_fields(slc, f2, spec.variant, quantity, spec)
                 for slc, f2 in zip(traj.slices, frames)]

    probes = _probe_lattice(grid, probe_stride, margin)
    n_probes = probes.shape[1]
    n_steps = len(traj.slices)
    pos = np.empty((n_steps, 3, n_probes))
    alive = np.ones((n_steps, n_probes), dtype=bool)
    pos[0] = probes
    for k in range(n_steps - 1):
        v_lo = VectorField(grid, traj.slices[k].lapse * traj.slices[k].u)
        v_hi = VectorField(grid, traj.slices[k + 1].lapse * traj.slices[k + 1].u)
        pos[k + 1], alive[k + 1] = _advect(grid, pos[k], alive[k], v_lo, v_hi, dt)

    def sample(k: int, name: str) -> np.ndarray:
        data = per_slice[k][name]
        return interpolate(ScalarField(grid, data), pos[k])

    traced = np.empty((n_steps, n_probes), dtype=complex)
    for k in range(n_steps):
        if quantity == "sigma":
            traced[k] = sample(k, "sigma")
        elif quantity == "abs_sigma_sq":
            traced[k] = np.abs(sample(k, "sigma")) ** 2
        elif quantity == "rho":
            traced[k] = sample(k, "rho")
        else:
            vals = sample(k, "rho")
            traced[k] = vals - np.conj(vals)

    stencil = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * dt)
    interior = np.arange(2, n_steps - 2)
    residuals = np.full(interior.size, np.nan)
    for j, n in enumerate(interior):
        lhs = sum(stencil[i] * traced[n - 2 + i] for i in range(5))
        rhs = sample(n, "rhs")
        if quantity == "abs_sigma_sq":
            sig = sample(n, "sigma")
            rhs = 2.0 * np.real(np.conj(sig) * rhs)
        mask = alive[n + 2]
        if np.any(mask):
            residuals[j] = float(np.max(np.abs(lhs - rhs)[mask]))
    n_lost = int(np.sum(~alive[-1]))
    if n_lost:
        warnings.warn(f"{n_lost} of {n_probes} characteristics left the chart "
                      "and were masked")
    return TransportResidual(quantity, interior, ts[interior], residuals,
                             n_probes, n_lost)


# ---------------------------------------------------------------------------
# pointwise constraint and fixed points


def quad_residual(slc: Slice, T: np.ndarray,
                  frame: Frame2 | None = None) -> np.ndarray:
    """Pointwise residual of the conformality-preservation constraint.

    -T(Z,Z)(rho - 2 U(ln f))/2 + Z(ln f)^2 / f + R(Z,Z); its modulus is
    frame-invariant.  The integrable drive makes it vanish identically --
    which is what fixes that drive's overall sign.
    """
    g = slc.metric
    grid = slc.grid
    f = slc.lapse
    if frame is None:
        frame = complementary_frame(g, slc.u)
    z = frame.z
    diag = diagnostics(g, slc.u, frame, slc.christoffel())
    df = np.stack([partial_data(f, grid, a) for a in range(3)])
    z_lnf = np.einsum("i...,i...->...", z, df) / f
    u_lnf = np.einsum("i...,i...->...", slc.u, df) / f
    t_zz = np.einsum("ij...,i...,j...->...", T, z, z)
    _, dt_g = _rhs_from_drive(slc, T)
    r_zz = np.einsum("ij...,i...,j...->...", transverse_curvature(slc, dt_g), z, z)
    return -0.5 * t_zz * (diag.expansion - 2.0 * u_lnf) + z_lnf**2 / f + r_zz


def stationarity_report(slc: Slice, frame: Frame2 | None = None, *,
                        tol: float = 1e-6) -> dict:
    """Residual fields of the fixed-point conditions for a prescribed lapse.

    The first pair -- grad ln f matching the ray acceleration, and f constant
    along rays -- makes the coupled system stationary (with the matching
    stationary drive).  The second pair -- Ricci(Z,Z) = Z(ln f)^2 and the
    Hessian condition (grad d ln f)(Z,Z) = 2 Z(ln f)^2 -- is the extra
    curvature compatibility that the conformality-preservation analysis
    demands when the drive also keeps the rays geodesic; a datum can be a
    genuine fixed point while failing it (the unit circle field with
    f = c/|(x1, x2)| is one), so the two pairs are reported separately.
    ``tol`` is the verdict threshold; match it to the finite-difference
    error of the chart when judging an analytically stationary datum.
    """
    g = slc.metric
    grid = slc.grid
    gamma = slc.christoffel()
    if frame is None:
        frame = complementary_frame(g, slc.u)
    z = frame.z
    lnf = np.log(slc.lapse)
    dlnf = np.stack([partial_data(lnf, grid, a) for a in range(3)])
    du = cov_deriv_field(slc.u, gamma, grid)
    acc = np.einsum("a...,ak...->k...", slc.u, du)
    grad_gap = g.raise_(dlnf) - acc
    u_f = slc.lapse * np.einsum("i...,i...->...", slc.u, dlnf)
    z_lnf = np.einsum("i...,i...->...", z, dlnf)
    ricci = curvature3(g, gamma).ricci
    ricci_gap = np.einsum("ij...,i...,j...->...", ricci, z, z) - z_lnf**2
    hess = hessian_scalar(lnf, gamma, grid)
    hess_gap = np.einsum("ij...,i...,j...->...", hess, z, z) - 2.0 * z_lnf**2
    fields = {"gradient_gap": grad_gap, "ray_lapse_rate": u_f,
              "ricci_gap": ricci_gap, "hessian_gap": hess_gap}
    maxima = {"gradient_gap": float(np.max(norm(g, grad_gap))),
              "ray_lapse_rate": float(np.max(np.abs(u_f))),
              "ricci_gap": float(np.max(np.abs(ricci_gap))),
              "hessian_gap": float(np.max(np.abs(hess_gap)))}
    fixed = max(maxima["gradient_gap"], maxima["ray_lapse_rate"])
    compat = max(maxima["ricci_gap"], maxima["hessian_gap"])
    return {"fields": fields, "maxima": maxima,
            "fixed_point": fixed < tol,
            "curvature_compatible": compat < tol}


def second_time_derivative(slc: Slice, spec: FlowSpec,
                           delta: float | None = None) -> np.ndarray:
    """d^2 g / dt^2 along the flow, by staggered virtual steps.

    Evaluates the metric velocity at states advanced and rewound by Euler
    pushes of size +-delta and +-delta/2 and Richardson-combines the two
    centred differences, so the estimate needs nothing beyond extra
    right-hand-side evaluations.
    """
    if delta is None:
        delta = 0.5 * spec.dt
    grid = slc.grid

    def rhs(s: Slice) -> tuple[np.ndarray, np.ndarray]:
        return flow_rhs(s, spec.variant, custom_drive=spec.custom_drive,
                        nu_floor=spec.nu_floor, solver_rtol=spec.solver_rtol,
                        solver_maxiter=spec.solver_maxiter)

    k_u, k_g = rhs(slc)

    def dtg_at(eps: float) -> np.ndarray:
        tt = slc.t + eps
        fvals, dfvals = spec.lapse.fields(grid, tt)
        pushed = Slice(tt, MetricField(grid, slc.metric.data + eps * k_g),
                       slc.u + eps * k_u, fvals, dfvals)
        return rhs(pushed)[1]

    def centred(eps: float) -> np.ndarray:
        return (dtg_at(eps) - dtg_at(-eps)) / (2.0 * eps)

    return (4.0 * centred(0.5 * delta) - centred(delta)) / 3.0
