"""Crank-Nicolson time stepping for the damped nonlocal wave equation.

The second-order equation

    u_tt + L u_t + L u + q u = h      on the interior nodes,
    u = control                        on the exterior nodes,
    u(0) = u0,  u_t(0) = v0,

with L the assembled fractional Laplacian, is integrated as a first-order
system (u, v = u_t) with the trapezoidal rule.  Exterior nodes are pinned
strongly to the control samples and their time derivatives; interior updates
solve a dense symmetric system per step (factored once when the potential is
time-independent).  Nonlinear runs replace q u by f(x, u) and solve each step
with a Newton iteration on the same Jacobian structure.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import nonlinearity as nl
from .operator import norm_l2, seminorm_hs


class SolverError(RuntimeError):
    pass


class StepFailureError(SolverError):
    def __init__(self, step, message):
        super().__init__(f"time step {step}: {message}")
        self.step = step


class NewtonDivergenceError(SolverError):
    def __init__(self, step, residual, iterations):
        super().__init__(f"Newton failed to converge at step {step}: "
                         f"residual {residual:.3e} after {iterations} iterations")
        self.step = step
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Trajectory:
    """Full-grid displacement and velocity histories on the time-node grid."""

    u: np.ndarray = field(repr=False)
    v: np.ndarray = field(repr=False)
    dt: float
    scheme: str = "crank-nicolson"
    newton_iters: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_steps(self):
        return self.u.shape[0] - 1

    @property
    def t_final(self):
        return self.n_steps * self.dt

    @property
    def t(self):
        return self.dt * np.arange(self.u.shape[0])


def n_steps_for(dt, t_final):
    nt = int(round(t_final / dt))
    if nt < 2 or abs(nt * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise SolverError(f"dt={dt} does not divide t_final={t_final}")
    return nt


def _expand_potential(q, nt, n_omega):
    """Normalize q to (nt+1, n_omega) samples plus a static flag."""
    if q is None:
        return np.zeros((1, n_omega)), True
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        return np.full((1, n_omega), float(q)), True
    if q.ndim == 1:
        if q.shape[0] != n_omega:
            raise SolverError(f"static potential has {q.shape[0]} entries, omega has {n_omega}")
        return q[None, :], True
    if q.shape != (nt + 1, n_omega):
        raise SolverError(f"potential shape {q.shape} != {(nt + 1, n_omega)}")
    static = bool(np.all(q == q[0]))
    return (q[:1].copy(), True) if static else (q, False)


def _expand_field(g, nt, grid, name):
    """Normalize an interior field (source / initial data) to omega columns."""
    if g is None:
        return None
    g = np.asarray(g, dtype=float)
    nom = grid.omega.size
    if g.ndim == 1:
        if g.shape[0] == grid.n_nodes:
            ext = np.delete(g, grid.omega)
            if ext.size and np.max(np.abs(ext)) != 0.0:
                raise SolverError(f"{name} has support outside omega")
            return g[grid.omega]
        if g.shape[0] == nom:
            return g
        raise SolverError(f"{name} length {g.shape[0]} matches neither grid nor omega")
    if g.shape == (nt + 1, grid.n_nodes):
        return g[:, grid.omega]
    if g.shape == (nt + 1, nom):
        return g
    raise SolverError(f"{name} shape {g.shape} not understood")


def _check_control(control, grid, dt, nt):
    if control is None:
        z = np.zeros((nt + 1, grid.n_nodes))
        return z, z
    if control.values.shape != (nt + 1, grid.n_nodes):
        raise SolverError(f"control sampled on {control.values.shape[0] - 1} steps, "
                          f"solver wants {nt}")
    if abs(control.dt - dt) > 1e-12 * max(1.0, dt):
        raise SolverError(f"control dt={control.dt} != solver dt={dt}")
    return control.values, control.dvalues


def solve_linear(op, q, control, dt, t_final, source=None, u0=None, v0=None):
    """Integrate the linear equation with potential q and exterior control.

    q may be None, a scalar, a static omega vector, or (n_time_nodes, n_omega)
    samples.  source/u0/v0 are interior fields (omega or full-grid layout).
    Returns a :class:`Trajectory` whose exterior nodes carry the control
    samples exactly.
    """
    grid = op.grid
    nt = n_steps_for(dt, t_final)
    om = grid.omega
    ext = grid.exterior
    qs, q_static = _expand_potential(q, nt, om.size)
    h_src = _expand_field(source, nt, grid, "source")
    phi, dphi = _check_control(control, grid, dt, nt)

    n = grid.n_nodes
    u = np.zeros((nt + 1, n))
    v = np.zeros((nt + 1, n))
    u0om = _expand_field(u0, nt, grid, "u0")
    v0om = _expand_field(v0, nt, grid, "v0")
    if u0om is not None:
        u[0, om] = u0om
    if v0om is not None:
        v[0, om] = v0om
    u[0, ext] = phi[0, ext]
    v[0, ext] = dphi[0, ext]

    L = op.matrix
    Lom = op.omega_block
    eye = np.eye(om.size)
    base_mat = eye + (0.5 * dt + 0.25 * dt * dt) * Lom

    factor = None
    if q_static:
        try:
            factor = lu_factor(base_mat + 0.25 * dt * dt * np.diag(qs[0]))
        except Exception as exc:  # pragma: no cover - singular static system
            raise StepFailureError(0, f"factorization failed: {exc}")

    for k in range(nt):
        qk = qs[0] if q_static else qs[k]
        qk1 = qs[0] if q_static else qs[k + 1]
        u_base = np.zeros(n)
        u_base[om] = u[k, om] + 0.5 * dt * v[k, om]
        u_base[ext] = phi[k + 1, ext]
        v_base = np.zeros(n)
        v_base[ext] = dphi[k + 1, ext]

        rhs = (v[k, om]
               - 0.5 * dt * ((u[k] + v[k] + u_base + v_base) @ L)[om]
               - 0.5 * dt * (qk * u[k, om] + qk1 * u_base[om]))
        if h_src is not None:
            rhs = rhs + 0.5 * dt * (h_src[k] + h_src[k + 1])

        if q_static:
            w = lu_solve(factor, rhs)
        else:
            try:
                w = np.linalg.solve(base_mat + 0.25 * dt * dt * np.diag(qk1), rhs)
            except np.linalg.LinAlgError as exc:
                raise StepFailureError(k + 1, f"linear solve failed: {exc}")
        if not np.all(np.isfinite(w)):
            raise StepFailureError(k + 1, "non-finite interior update")

        v[k + 1, om] = w
        v[k + 1, ext] = dphi[k + 1, ext]
        u[k + 1, om] = u_base[om] + 0.5 * dt * w
        u[k + 1, ext] = phi[k + 1, ext]

    for arr in (u, v):
        arr.setflags(write=False)
    return Trajectory(u=u, v=v, dt=dt)


def solve_nonlinear(op, f, control, dt, t_final, source=None, u0=None, v0=None,
                    newton_tol=1e-10, newton_maxit=25):
    """Integrate with interior term f(x, u) via per-step Newton iterations."""
    grid = op.grid
    nt = n_steps_for(dt, t_final)
    om = grid.omega
    ext = grid.exterior
    h_src = _expand_field(source, nt, grid, "source")
    phi, dphi = _check_control(control, grid, dt, nt)

    n = grid.n_nodes
    u = np.zeros((nt + 1, n))
    v = np.zeros((nt + 1, n))
    u0om = _expand_field(u0, nt, grid, "u0")
    v0om = _expand_field(v0, nt, grid, "v0")
    if u0om is not None:
        u[0, om] = u0om
    if v0om is not None:
        v[0, om] = v0om
    u[0, ext] = phi[0, ext]
    v[0, ext] = dphi[0, ext]

    L = op.matrix
    Lom = op.omega_block
    eye = np.eye(om.size)
    base_mat = eye + (0.5 * dt + 0.25 * dt * dt) * Lom
    iters = np.zeros(nt, dtype=int)

    for k in range(nt):
        fk = nl.apply(f, u[k, om], nodes=om)
        u_base = np.zeros(n)
        u_base[om] = u[k, om] + 0.5 * dt * v[k, om]
        u_base[ext] = phi[k + 1, ext]
        v_base = np.zeros(n)
        v_base[ext] = dphi[k + 1, ext]

        fixed = (v[k, om]
                 - 0.5 * dt * ((u[k] + v[k] + u_base + v_base) @ L)[om]
                 - 0.5 * dt * fk)
        if h_src is not None:
            fixed = fixed + 0.5 * dt * (h_src[k] + h_src[k + 1])

        w = v[k, om].copy()
        converged = False
        res_norm = np.inf
        for it in range(newton_maxit):
            u_new = u_base[om] + 0.5 * dt * w
            g = (w + (0.5 * dt + 0.25 * dt * dt) * (Lom @ w)
                 + 0.5 * dt * nl.apply(f, u_new, nodes=om) - fixed)
            res_norm = np.max(np.abs(g))
            if not np.isfinite(res_norm):
                raise NewtonDivergenceError(k + 1, res_norm, it)
            if res_norm <= newton_tol:
                iters[k] = it
                converged = True
                break
            jac = base_mat + 0.25 * dt * dt * np.diag(nl.apply_derivative(f, u_new, nodes=om))
            try:
                w = w - np.linalg.solve(jac, g)
            except np.linalg.LinAlgError as exc:
                raise StepFailureError(k + 1, f"Newton linear solve failed: {exc}")
        if not converged:
            raise NewtonDivergenceError(k + 1, res_norm, newton_maxit)

        v[k + 1, om] = w
        v[k + 1, ext] = dphi[k + 1, ext]
        u[k + 1, om] = u_base[om] + 0.5 * dt * w
        u[k + 1, ext] = phi[k + 1, ext]

    for arr in (u, v):
        arr.setflags(write=False)
    return Trajectory(u=u, v=v, dt=dt, newton_iters=iters)


def solve_linearized(op, f, base, control, dt, t_final):
    """Differential of the nonlinear solution map at a base trajectory.

    Solves the linear equation whose potential is d_tau f frozen along the
    base: exactly the derivative of the discrete nonlinear flow, so finite
    differences of solutions converge to it at first order in the step size.
    """
    grid = op.grid
    nt = n_steps_for(dt, t_final)
    if base.u.shape != (nt + 1, grid.n_nodes):
        raise SolverError("base trajectory does not match the requested time grid")
    if abs(base.dt - dt) > 1e-12:
        raise SolverError(f"base trajectory dt={base.dt} != requested dt={dt}")
    q_t = nl.apply_derivative(f, base.u[:, grid.omega], nodes=grid.omega)
    return solve_linear(op, q_t, control, dt, t_final)


def trapezoid_weights(nt):
    w = np.ones(nt + 1)
    w[0] = w[-1] = 0.5
    return w


@dataclass(frozen=True)
class EnergyLedger:
    """Pointwise-in-time bookkeeping of the dissipation identity."""

    t: np.ndarray = field(repr=False)
    stored: np.ndarray = field(repr=False)       # ||v||^2 + |u|_Hs^2 at each time node
    dissipated: np.ndarray = field(repr=False)   # 2 int_0^t |v|_Hs^2
    work: np.ndarray = field(repr=False)         # 2 int_0^t (<h, v> - <q u, v>)
    residual: np.ndarray = field(repr=False)

    @property
    def max_relative_residual(self):
        scale = max(np.max(self.stored + self.dissipated), 1e-300)
        return float(np.max(np.abs(self.residual)) / scale)


def energy_ledger(op, traj, q=None, source=None):
    """Residual series of the energy identity for a homogeneous-exterior run.

    stored(t) + dissipated(t) - stored(0) - work(t) should vanish; with the
    trapezoidal quadrature used here the residual is second order in dt.
    """
    grid = op.grid
    ext = grid.exterior
    if np.max(np.abs(traj.u[:, ext]), initial=0.0) != 0.0 or \
       np.max(np.abs(traj.v[:, ext]), initial=0.0) != 0.0:
        raise SolverError("energy ledger requires zero exterior data")
    nt = traj.n_steps
    om = grid.omega
    qs, _ = _expand_potential(q, nt, om.size) if q is not None else (None, True)
    h_src = _expand_field(source, nt, grid, "source")

    stored = norm_l2(grid, traj.v) ** 2 + seminorm_hs(op, traj.u) ** 2
    diss_rate = 2.0 * seminorm_hs(op, traj.v) ** 2
    work_rate = np.zeros(nt + 1)
    if h_src is not None:
        work_rate += 2.0 * grid.h * np.sum(h_src * traj.v[:, om], axis=-1)
    if q is not None:
        qfull = np.broadcast_to(qs, (nt + 1, om.size)) if qs.shape[0] == 1 else qs
        work_rate -= 2.0 * grid.h * np.sum(qfull * traj.u[:, om] * traj.v[:, om], axis=-1)

    dissipated = _cumtrapz(diss_rate, traj.dt)
    work = _cumtrapz(work_rate, traj.dt)
    residual = stored + dissipated - stored[0] - work
    return EnergyLedger(t=traj.t, stored=stored, dissipated=dissipated,
                        work=work, residual=residual)


def _cumtrapz(y, dt):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]))
    return out


def trajectory_to_csv(traj, grid, path):
    """One row per (time node, grid node) pair: t,node,x,u,v."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "node", "x", "u", "v"])
        for k, tk in enumerate(traj.t):
            for i in range(grid.n_nodes):
                writer.writerow([repr(float(tk)), i, repr(float(grid.x[i])),
                                 repr(float(traj.u[k, i])),
                                 repr(float(traj.v[k, i]))])


def trajectory_from_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(float(r[0]), int(r[1]), float(r[3]), float(r[4]))
                for r in reader]
    n = max(r[1] for r in rows) + 1
    nt = len(rows) // n
    t = np.asarray([rows[k * n][0] for k in range(nt)])
    u = np.asarray([r[2] for r in rows]).reshape(nt, n)
    v = np.asarray([r[3] for r in rows]).reshape(nt, n)
    return Trajectory(u=u, v=v, dt=float(t[1] - t[0]))
