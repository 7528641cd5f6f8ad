"""Exterior measurement pairings on windows and the discrete transposition identities.

The measurement of a solution u against a window test function psi is

    <M u, psi> = int_0^T [ <(-Dx)^{s/2} u, (-Dx)^{s/2} psi>
                         + <(-Dx)^{s/2} u_t, (-Dx)^{s/2} psi> ] dt,

realized discretely as a trapezoidal time sum of h * psi·L(u + v).  Identities
verified here: the adjoint relation under time reversal of the potential, the
potential-difference integral identity, and its nonlinear counterpart.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nonlinearity as nl
from .controls import ControlBasis, ControlSpec, ExteriorControl, make_control, materialize
from .solver import Trajectory, n_steps_for, solve_linear, solve_nonlinear, trapezoid_weights


class DNMapError(ValueError):
    pass


def time_reverse(obj):
    """Time reversal t -> T - t.

    Arrays (time on the first axis) are flipped; a Trajectory flips u and
    negates the flipped v; an ExteriorControl flips values and negates the
    flipped dvalues.  Applying it twice returns the input.
    """
    if isinstance(obj, Trajectory):
        return Trajectory(u=obj.u[::-1].copy(), v=-obj.v[::-1].copy(),
                          dt=obj.dt, scheme=obj.scheme,
                          newton_iters=None if obj.newton_iters is None
                          else obj.newton_iters[::-1].copy())
    if isinstance(obj, ExteriorControl):
        spec = None
        if obj.spec is not None:
            spec = obj.spec.time_reversed(obj.t_final)
        return ExteriorControl(values=obj.values[::-1].copy(),
                               dvalues=-obj.dvalues[::-1].copy(),
                               window=obj.window, dt=obj.dt, spec=spec)
    arr = np.asarray(obj)
    if arr.ndim == 0:
        raise DNMapError("cannot time-reverse a scalar; pass an array, "
                         "Trajectory, or ExteriorControl")
    return arr[::-1].copy()


def reverse_potential(q):
    """Reversal of potential samples; static potentials are fixed points."""
    if q is None:
        return None
    q = np.asarray(q, dtype=float)
    if q.ndim <= 1:
        return q
    return q[::-1].copy()


def dn_pairing(op, traj, probe):
    """Trapezoidal pairing of a trajectory against a window probe.

    The probe must be an exterior control (either window); its values enter,
    its time derivative does not.
    """
    if not isinstance(probe, ExteriorControl):
        raise DNMapError("probe must be an ExteriorControl")
    if probe.values.shape != traj.u.shape:
        raise DNMapError(f"probe sampled as {probe.values.shape}, "
                         f"trajectory is {traj.u.shape}")
    grid = op.grid
    w = trapezoid_weights(traj.n_steps)
    flux = (traj.u + traj.v) @ op.matrix
    series = grid.h * np.sum(probe.values * flux, axis=-1)
    return float(traj.dt * np.dot(w, series))


def _pair_against_basis(op, traj, probe_basis, time_mat):
    """Pairings of one trajectory against every element of a separable probe basis."""
    grid = op.grid
    w = trapezoid_weights(traj.n_steps)
    flux = (traj.u + traj.v) @ op.matrix          # (nt+1, n)
    g = grid.h * flux[:, probe_basis.nodes]       # (nt+1, n_nodes_w)
    tw = time_mat * w[None, :]                     # (n_tspl, nt+1)
    block = traj.dt * (tw @ g)                     # (n_tspl, n_nodes_w)
    # element order in ControlBasis is node-major, spline-minor
    return block.T.reshape(-1)


@dataclass(frozen=True)
class DNRecord:
    """Measurement matrix of a model over a control basis and a probe basis."""

    s: float
    dt: float
    t_final: float
    controls: list
    probes: list
    pairings: np.ndarray = field(repr=False)
    tag: str = ""

    def to_dict(self):
        return {"s": self.s, "dt": self.dt, "t_final": self.t_final,
                "tag": self.tag,
                "controls": [c.to_dict() for c in self.controls],
                "probes": [p.to_dict() for p in self.probes],
                "pairings": self.pairings.tolist()}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @staticmethod
    def load(path):
        with open(path) as fh:
            d = json.load(fh)
        return DNRecord(s=float(d["s"]), dt=float(d["dt"]),
                        t_final=float(d["t_final"]), tag=d.get("tag", ""),
                        controls=[ControlSpec.from_dict(c) for c in d["controls"]],
                        probes=[ControlSpec.from_dict(p) for p in d["probes"]],
                        pairings=np.asarray(d["pairings"], dtype=float))


def _basis_lists(control_basis, probe_basis):
    if control_basis.window != "w1":
        raise DNMapError("control basis must live on window w1")
    if probe_basis.window != "w2":
        raise DNMapError("probe basis must live on window w2")


def dn_matrix_linear(op, q, control_basis, probe_basis, dt, t_final, tag="",
                     solver_kwargs=None):
    """Measurement matrix of the linear model: controls on w1, probes on w2."""
    _basis_lists(control_basis, probe_basis)
    nt = n_steps_for(dt, t_final)
    time_mat = probe_basis.time_matrix(dt, nt)
    rows = []
    for spec in control_basis.specs:
        ctrl = materialize(spec, op.grid, dt, nt)
        traj = solve_linear(op, q, ctrl, dt, t_final, **(solver_kwargs or {}))
        rows.append(_pair_against_basis(op, traj, probe_basis, time_mat))
    return DNRecord(s=op.s, dt=dt, t_final=t_final, tag=tag,
                    controls=list(control_basis.specs),
                    probes=list(probe_basis.specs),
                    pairings=np.asarray(rows))


def dn_matrix_nonlinear(op, f, control_basis, probe_basis, dt, t_final, tag="",
                        solver_kwargs=None):
    """Measurement matrix of the nonlinear model."""
    _basis_lists(control_basis, probe_basis)
    nt = n_steps_for(dt, t_final)
    time_mat = probe_basis.time_matrix(dt, nt)
    rows = []
    for spec in control_basis.specs:
        ctrl = materialize(spec, op.grid, dt, nt)
        traj = solve_nonlinear(op, f, ctrl, dt, t_final, **(solver_kwargs or {}))
        rows.append(_pair_against_basis(op, traj, probe_basis, time_mat))
    return DNRecord(s=op.s, dt=dt, t_final=t_final, tag=tag,
                    controls=list(control_basis.specs),
                    probes=list(probe_basis.specs),
                    pairings=np.asarray(rows))


def _check_windows(phi1, phi2):
    if phi1.window != "w1":
        raise DNMapError(f"phi1 must be supported on w1, got {phi1.window}")
    if phi2.window != "w2":
        raise DNMapError(f"phi2 must be supported on w2, got {phi2.window}")


def self_adjointness_residual(op, q, phi1, phi2, dt, t_final):
    """|<M_q phi1, phi2*> - <M_{q*} phi2, phi1*>|, which vanishes in the limit.

    Two forward solves: the q-model driven from w1 and the reversed-potential
    model driven from w2, each paired against the other control reversed.
    """
    _check_windows(phi1, phi2)
    lhs = dn_pairing(op, solve_linear(op, q, phi1, dt, t_final),
                     time_reverse(phi2))
    rhs = dn_pairing(op, solve_linear(op, reverse_potential(q), phi2, dt, t_final),
                     time_reverse(phi1))
    return abs(lhs - rhs), lhs, rhs


def _interior_weighted_sum(grid, dt, weight, f1, f2):
    """Trapezoidal space-time sum over omega of weight * f1 * f2_reversed."""
    nt = f1.shape[0] - 1
    w = trapezoid_weights(nt)
    prod = weight * f1 * f2[::-1]
    return float(dt * grid.h * np.dot(w, prod.sum(axis=-1)))


def alessandrini_residual(op, q1, q2, phi1, phi2, dt, t_final):
    """Residual of the potential-difference integral identity.

    lhs = <(M_{q1} - M_{q2*}) phi1, phi2*> where q2* is the time-reversed
    second potential; rhs = space-time sum of (q1 - q2*) u1 u2* with u1 the
    q1-solution driven by phi1 and u2 the q2-solution driven by phi2.  Both
    sides coincide up to discretization error.  For time-independent q2 the
    lhs is the plain measurement difference of the two models.

    Returns (lhs, rhs, |lhs - rhs|).
    """
    _check_windows(phi1, phi2)
    nt = n_steps_for(dt, t_final)
    om = op.grid.omega
    q1s, _ = _expand_q(q1, nt, om.size)
    q2s, _ = _expand_q(q2, nt, om.size)

    u1 = solve_linear(op, q1, phi1, dt, t_final)
    u2 = solve_linear(op, q2, phi2, dt, t_final)
    phi2_rev = time_reverse(phi2)
    lhs = (dn_pairing(op, u1, phi2_rev)
           - dn_pairing(op, solve_linear(op, reverse_potential(q2), phi1, dt, t_final),
                        phi2_rev))
    diff = q1s - q2s[::-1]
    rhs = _interior_weighted_sum(op.grid, dt, diff,
                                 u1.u[:, om] - phi1.values[:, om],
                                 u2.u[:, om] - phi2.values[:, om])
    return lhs, rhs, abs(lhs - rhs)


def _expand_q(q, nt, n_omega):
    if q is None:
        return np.zeros((nt + 1, n_omega)), True
    q = np.asarray(q, dtype=float)
    if q.ndim == 0:
        return np.full((nt + 1, n_omega), float(q)), True
    if q.ndim == 1:
        return np.broadcast_to(q, (nt + 1, n_omega)).copy(), True
    if q.shape != (nt + 1, n_omega):
        raise DNMapError(f"potential shape {q.shape} != {(nt + 1, n_omega)}")
    return q.copy(), False


def nonlinear_integral_identity_residual(op, f1, f2, phi1, phi2, dt, t_final):
    """Residual of the nonlinearity-difference integral identity.

    lhs = <(M_{f1} - M_{f2}) phi1, phi2*>; rhs pairs f1(u^(1)) - f2(u^(2))
    against the reversed linear background response to phi2, where u^(j) is
    the f_j-solution driven by phi1.

    Returns (lhs, rhs, |lhs - rhs|).
    """
    _check_windows(phi1, phi2)
    om = op.grid.omega
    u11 = solve_nonlinear(op, f1, phi1, dt, t_final)
    u12 = solve_nonlinear(op, f2, phi1, dt, t_final)
    phi2_rev = time_reverse(phi2)
    lhs = dn_pairing(op, u11, phi2_rev) - dn_pairing(op, u12, phi2_rev)
    u2 = solve_linear(op, None, phi2, dt, t_final)
    g = (nl.apply(f1, u11.u[:, om], nodes=om)
         - nl.apply(f2, u12.u[:, om], nodes=om))
    rhs = _interior_weighted_sum(op.grid, dt, 1.0, g,
                                 u2.u[:, om] - phi2.values[:, om])
    return lhs, rhs, abs(lhs - rhs)
