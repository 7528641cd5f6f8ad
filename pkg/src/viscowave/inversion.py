"""Recovery of the potential and the nonlinearity from boundary measurements.

The workhorse is approximate controllability: for a target interior state we
synthesize an exterior control, supported on one window, whose solution tracks
the target in the interior energy norm.  Measured pairing differences between
two operators then turn into interior integrals against products of achieved
states, and a small regularized least-squares problem returns the coefficient.
"""

from dataclasses import dataclass, field
import json

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .controls import ControlBasis, ControlError, ExteriorControl, time_bump
from .dnmap import DNRecord
from .solver import n_steps_for, solve_linear, solve_nonlinear, trapezoid_weights


class InversionError(RuntimeError):
    """Inversion-stage failure."""


class IllConditionedError(InversionError):
    """Normal equations too ill-conditioned to factor."""

    def __init__(self, message, cond_estimate):
        super().__init__(f"{message} (condition estimate {cond_estimate:.3e})")
        self.cond_estimate = cond_estimate


class InconclusiveError(InversionError):
    """Measured differences too small to estimate the homogeneity exponent."""


@dataclass(frozen=True)
class RungeProblem:
    """Target interior state to be tracked by a control on one window.

    target has shape (n_steps + 1, n_omega); alpha is the control-cost weight
    and n_segments fixes the time-spline refinement of the control basis.
    """

    target: np.ndarray
    window: str
    alpha: float = 1e-10
    n_segments: int = 16

    @property
    def basis_dim(self):
        from .controls import spline_indices

        return len(spline_indices(self.n_segments))


class BackgroundStates:
    """Interior states reached by each element of a control basis.

    Solves the evolution once per basis element (background potential q, zero
    source) and caches the interior trajectories together with the Gram data
    needed for control synthesis in the L2-in-time energy norm.
    """

    def __init__(self, op, q, basis, dt, t_final):
        self.op = op
        self.basis = basis
        self.dt = float(dt)
        self.t_final = float(t_final)
        self.n_steps = n_steps_for(dt, t_final)
        grid = op.grid
        om = grid.omega
        states = []
        for control in basis.materialize_all(self.dt, self.n_steps):
            traj = solve_linear(op, q, control, self.dt, self.t_final)
            states.append(traj.u[:, om])
        self.states = np.asarray(states)  # (n_basis, n_steps+1, n_omega)
        self.time_weights = self.dt * trapezoid_weights(self.n_steps)
        k_omega = grid.h * op.omega_block
        self._k_states = self.states @ k_omega
        sw = self.states * self.time_weights[None, :, None]
        flat = self._k_states.reshape(len(basis), -1)
        self.gram = sw.reshape(len(basis), -1) @ flat.T
        self.gram = 0.5 * (self.gram + self.gram.T)
        self._sw_flat = sw.reshape(len(basis), -1)
        self.control_gram = self._control_gram()

    def _control_gram(self):
        tm = self.basis.time_matrix(self.dt, self.n_steps)
        gt = (tm * self.time_weights[None, :]) @ tm.T
        g = np.kron(np.eye(len(self.basis.nodes)), self.op.grid.h * gt)
        return 0.5 * (g + g.T)

    def synthesize(self, target, alpha):
        """Coefficients minimizing tracking error plus alpha * control cost.

        alpha is dimensionless: the control-cost Gram is rescaled so its trace
        matches the state Gram before weighting, making alpha the relative
        spectral cutoff of the synthesis.
        """
        target = np.asarray(target, dtype=float)
        if target.shape != (self.n_steps + 1, len(self.op.grid.omega)):
            raise InversionError(
                f"target shape {target.shape} does not match "
                f"({self.n_steps + 1}, {len(self.op.grid.omega)})")
        k_target = target @ (self.op.grid.h * self.op.omega_block)
        b = self._sw_flat @ k_target.reshape(-1)
        scale = np.trace(self.gram) / np.trace(self.control_gram)
        mat = self.gram + alpha * scale * self.control_gram
        try:
            cho = cho_factor(mat)
        except np.linalg.LinAlgError as exc:
            raise IllConditionedError("control normal equations failed",
                                      np.linalg.cond(mat)) from exc
        coeffs = cho_solve(cho, b)
        achieved = np.tensordot(coeffs, self.states, axes=(0, 0))
        diff = achieved - target
        err2 = np.sum(self.time_weights
                      * np.einsum("tj,tj->t", diff, diff @ (self.op.grid.h * self.op.omega_block)))
        return coeffs, achieved, np.sqrt(max(err2, 0.0))

    def control_from_coeffs(self, coeffs):
        """Assemble the synthesized exterior control Sum_m c_m * element_m."""
        nt = self.n_steps
        n = self.op.grid.n_nodes
        values = np.zeros((nt + 1, n))
        dvalues = np.zeros((nt + 1, n))
        tm = self.basis.time_matrix(self.dt, nt)
        dtm = self._time_dmatrix(nt)
        n_spl = len(self.basis.tsplines)
        for a, node in enumerate(self.basis.nodes):
            c_node = coeffs[a * n_spl:(a + 1) * n_spl]
            values[:, node] = c_node @ tm
            dvalues[:, node] = c_node @ dtm
        return ExteriorControl(values=values, dvalues=dvalues,
                               window=self.basis.window, dt=self.dt, spec=None)

    def _time_dmatrix(self, n_steps):
        from .controls import _spline_pair

        t = self.dt * np.arange(n_steps + 1)
        rows = []
        for k in self.basis.tsplines:
            _, dval = _spline_pair(self.t_final, self.basis.n_segments, k)
            rows.append(dval(t))
        return np.asarray(rows)


def synthesize_control(op, q_background, problem, dt, t_final):
    """Control on problem.window whose state tracks problem.target.

    Returns (control, achieved_error) with the error measured in the
    L2-in-time interior energy norm.
    """
    basis = ControlBasis(op.grid, problem.window, t_final, problem.n_segments)
    bg = BackgroundStates(op, q_background, basis, dt, t_final)
    coeffs, _, err = bg.synthesize(problem.target, problem.alpha)
    return bg.control_from_coeffs(coeffs), float(err)


@dataclass(frozen=True)
class LocalizedTarget:
    """Spatial bump at one interior node times a smooth time bump."""

    node: int
    t0: float
    t1: float
    space_width: float

    def materialize(self, grid, dt, n_steps):
        x = grid.x
        om = grid.omega
        prof = np.exp(-((x[om] - x[self.node]) / self.space_width) ** 2)
        t = dt * np.arange(n_steps + 1)
        theta, _ = time_bump(t, self.t0, self.t1)
        return np.outer(theta, prof)


def interior_targets(grid, t_final, nodes=None, space_width=None,
                     time_windows=None):
    """Localized targets: interior nodes crossed with staggered time bumps.

    The default three overlapping time windows give the pairing matrix enough
    temporal diversity to resolve the potential; a single window flattens the
    system onto too small a subspace.
    """
    if nodes is None:
        nodes = grid.omega
    if space_width is None:
        space_width = 2.0 * grid.h
    if time_windows is None:
        time_windows = [(0.10 * t_final, 0.50 * t_final),
                        (0.30 * t_final, 0.70 * t_final),
                        (0.50 * t_final, 0.90 * t_final)]
    return [LocalizedTarget(int(n), float(a), float(b), float(space_width))
            for n in nodes for (a, b) in time_windows]


@dataclass
class Reconstruction:
    """Recovered coefficient with masks and solver diagnostics."""

    values: np.ndarray
    nodes: np.ndarray
    node_coords: np.ndarray
    covered: np.ndarray
    r: float | None = None
    coeff: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "q_est": np.asarray(self.values).tolist(),
            "nodes": np.asarray(self.nodes).tolist(),
            "node_coords": np.asarray(self.node_coords).tolist(),
            "covered": np.asarray(self.covered).astype(bool).tolist(),
            "diagnostics": self.diagnostics,
        }
        out["r_est"] = None if self.r is None else float(self.r)
        if self.coeff is not None:
            out["coeff"] = np.asarray(self.coeff).tolist()
        return out

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def save_csv(self, path, q_true=None):
        """Rows x,q_true,q_est (q_true column empty when unknown)."""
        vals = np.asarray(self.values)
        if vals.ndim > 1:
            vals = vals[:, 0]  # static column of a time-dependent estimate
        with open(path, "w") as fh:
            fh.write("x,q_true,q_est\n")
            for i, xi in enumerate(np.asarray(self.node_coords)):
                true_s = "" if q_true is None else repr(float(q_true[i]))
                fh.write(f"{float(xi)!r},{true_s},{float(vals[i])!r}\n")

    @staticmethod
    def load(path):
        with open(path) as fh:
            raw = json.load(fh)
        return Reconstruction(
            values=np.asarray(raw["q_est"], dtype=float),
            nodes=np.asarray(raw["nodes"], dtype=int),
            node_coords=np.asarray(raw["node_coords"], dtype=float),
            covered=np.asarray(raw["covered"], dtype=bool),
            r=raw.get("r_est"),
            coeff=None if raw.get("coeff") is None else np.asarray(raw["coeff"], dtype=float),
            diagnostics=raw.get("diagnostics", {}),
        )


def _rebuild_bases(op, dn_data, dn_background):
    if dn_data.controls != dn_background.controls or dn_data.probes != dn_background.probes:
        raise InversionError("data and background records use different bases")
    basis1 = ControlBasis.from_specs(op.grid, dn_data.controls)
    basis2 = ControlBasis.from_specs(op.grid, dn_data.probes)
    if basis1.window != "w1" or basis2.window != "w2":
        raise InversionError("expected controls on w1 and probes on w2")
    return basis1, basis2


def _check_record(rec, op, dt, t_final):
    if abs(rec.s - op.s) > 1e-12:
        raise InversionError(f"record order {rec.s} does not match operator {op.s}")
    if abs(rec.dt - dt) > 1e-12 or abs(rec.t_final - t_final) > 1e-12:
        raise InversionError("record time grid does not match requested one")


def _time_hats(n_coarse, dt, n_steps):
    """Piecewise-linear partition of unity on a coarse uniform time grid."""
    t = dt * np.arange(n_steps + 1)
    knots = np.linspace(0.0, dt * n_steps, n_coarse)
    width = knots[1] - knots[0]
    rows = [np.clip(1.0 - np.abs(t - tk) / width, 0.0, None) for tk in knots]
    return np.asarray(rows), knots


def _second_difference(n):
    d2 = np.zeros((max(n - 2, 0), n))
    for i in range(n - 2):
        d2[i, i:i + 3] = (1.0, -2.0, 1.0)
    return d2


def recover_linear_potential(dn_data, dn_background, op, targets, alpha_inv,
                             dt, t_final, synth_alpha=1e-10, q_time_basis=None,
                             frame="direct", q_background=None):
    """Potential increment from measured pairing differences over a background.

    targets is a list of LocalizedTarget; both windows synthesize controls
    towards each of them, and the pairing differences m_ij of data minus
    background are matched to interior integrals of the potential against
    products of the achieved background states (the first-order expansion of
    the measurement map at q_background, so the returned values estimate
    q_data - q_background).  Smoothness-regularized least squares with weight
    alpha_inv picks the estimate.  frame="direct" parameterizes the unknown on
    the forward time axis; frame="reversed" parameterizes its time reversal,
    the natural frame when the unknown is modeled from the receiving side.
    With q_time_basis=None the unknown is static; an integer requests that
    many piecewise-linear time profiles.
    """
    if frame not in ("direct", "reversed"):
        raise InversionError(f"unknown frame {frame!r}")
    if q_background is not None and np.asarray(q_background).ndim > 1:
        raise InversionError("q_background must be static (scalar or one row)")
    _check_record(dn_data, op, dt, t_final)
    _check_record(dn_background, op, dt, t_final)
    basis1, basis2 = _rebuild_bases(op, dn_data, dn_background)
    n_steps = n_steps_for(dt, t_final)
    grid = op.grid
    om = grid.omega

    bg1 = BackgroundStates(op, q_background, basis1, dt, t_final)
    bg2 = BackgroundStates(op, q_background, basis2, dt, t_final)

    coeff1, achieved1, errs1 = [], [], []
    coeff2, achieved2, errs2 = [], [], []
    for tgt in targets:
        field_t = tgt.materialize(grid, dt, n_steps)
        c1, a1, e1 = bg1.synthesize(field_t, synth_alpha)
        c2, a2, e2 = bg2.synthesize(field_t, synth_alpha)
        coeff1.append(c1)
        achieved1.append(a1)
        errs1.append(e1)
        coeff2.append(c2)
        achieved2.append(a2)
        errs2.append(e2)
    coeff1 = np.asarray(coeff1)
    coeff2 = np.asarray(coeff2)
    achieved1 = np.asarray(achieved1)  # (n_targets, nt+1, n_omega)
    achieved2 = np.asarray(achieved2)

    perm = basis2.reversal_permutation()
    pdiff = dn_data.pairings - dn_background.pairings
    m = coeff1 @ pdiff[:, perm] @ coeff2.T  # (n_targets, n_targets)

    wt = dt * trapezoid_weights(n_steps)
    if q_time_basis is None:
        gamma = np.ones((1, n_steps + 1))
    else:
        gamma, _ = _time_hats(int(q_time_basis), dt, n_steps)
    n_gamma = gamma.shape[0]

    if frame == "direct":
        fld1, fld2 = achieved1, achieved2[:, ::-1, :]
    else:
        fld1, fld2 = achieved1[:, ::-1, :], achieved2
    # rows (i, k), columns (node j, time profile m)
    wg = gamma * wt[None, :]
    kern = grid.h * np.einsum("itj,ktj,mt->ikjm", fld1, fld2, wg, optimize=True)
    n_pairs = len(targets) ** 2
    kern = kern.reshape(n_pairs, len(om) * n_gamma)
    rhs = m.reshape(-1)

    col = np.sqrt(np.einsum("pj,pj->j", kern, kern)).reshape(len(om), n_gamma)
    colnorm = np.sqrt(np.sum(col ** 2, axis=1))
    if colnorm.max() == 0.0:
        raise InversionError("probing system is identically zero")
    unresolved = np.flatnonzero(colnorm == 0.0)
    if unresolved.size:
        raise InversionError("probing system leaves omega nodes unresolved: "
                             f"{[int(om[j]) for j in unresolved]}")
    covered = colnorm >= 1e-8 * colnorm.max()

    gram = kern.T @ kern
    d2s = _second_difference(len(om))
    pen = np.kron(d2s.T @ d2s, np.eye(n_gamma))
    if n_gamma >= 3:
        d2t = _second_difference(n_gamma)
        pen = pen + np.kron(np.eye(len(om)), d2t.T @ d2t)
    scale = np.trace(gram) / max(np.trace(pen), 1e-300)
    ridge = 1e-12 * np.trace(gram) / gram.shape[0]
    mat = gram + alpha_inv * scale * pen + ridge * np.eye(gram.shape[0])
    try:
        cho = cho_factor(mat)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("inversion normal equations failed",
                                  np.linalg.cond(mat)) from exc
    qvec = cho_solve(cho, kern.T @ rhs)

    qmat = qvec.reshape(len(om), n_gamma)
    if q_time_basis is None:
        values = qmat[:, 0]
    else:
        values = qmat @ gamma  # (n_omega, nt+1) sampled profile

    residual = float(np.linalg.norm(kern @ qvec - rhs))
    diagnostics = {
        "frame": frame,
        "runge_errors_w1": [float(e) for e in errs1],
        "runge_errors_w2": [float(e) for e in errs2],
        "fit_residual": residual,
        "rhs_norm": float(np.linalg.norm(rhs)),
        "n_pairs": n_pairs,
    }
    return Reconstruction(values=values, nodes=om.copy(),
                          node_coords=grid.x[om].copy(), covered=covered,
                          diagnostics=diagnostics)


def _pair_vector(op, traj, basis, time_mat):
    """Pairings of one trajectory against every element of a probe basis."""
    from .dnmap import _pair_against_basis

    return _pair_against_basis(op, traj, basis, time_mat)


def estimate_homogeneity_exponent(op, f, psi, basis2, eps_list, dt, t_final):
    """Homogeneity degree of the nonlinearity from the scaling of pairings.

    Drives the system with eps * psi, measures the difference between the
    nonlinear and linear responses against the reversed probe elements, and
    reads the exponent off a log-log fit: slope minus one.
    """
    eps_list = sorted(float(e) for e in eps_list)
    if len(eps_list) < 2:
        raise InversionError("need at least two amplitudes")
    n_steps = n_steps_for(dt, t_final)
    lin = solve_linear(op, None, psi, dt, t_final)
    perm = basis2.reversal_permutation()
    time_mat = basis2.time_matrix(dt, n_steps)
    p_lin = _pair_vector(op, lin, basis2, time_mat)[perm]
    sizes = []
    for eps in eps_list:
        scaled = ExteriorControl(values=eps * psi.values, dvalues=eps * psi.dvalues,
                                 window=psi.window, dt=psi.dt, spec=None)
        nl = solve_nonlinear(op, f, scaled, dt, t_final)
        p_nl = _pair_vector(op, nl, basis2, time_mat)[perm]
        sizes.append(np.linalg.norm(p_nl - eps * p_lin))
    sizes = np.asarray(sizes)
    floor = 1e-10 * max(np.linalg.norm(p_lin) * max(eps_list), 1e-300)
    if np.any(sizes < floor):
        raise InconclusiveError(
            f"pairing differences {sizes} at or below noise floor {floor:.3e}")
    slope = np.polyfit(np.log(eps_list), np.log(sizes), 1)[0]
    return float(slope - 1.0), {"eps": eps_list, "differences": sizes.tolist(),
                                "slope": float(slope)}


def recover_nonlinear_coefficient(op, f, r_known, targets, eps0, alpha_inv,
                                  dt, t_final, psi=None, synth_alpha=1e-10,
                                  n_segments=16, coverage_floor=1e-8):
    """Nodal coefficient of a homogeneous nonlinearity from small-amplitude data.

    The leading pairing difference at amplitude eps scales like eps**(r+1) and
    pairs q(x) |v0|^r v0 against reversed achieved probe states, where v0 is
    the linear response to psi.  A two-amplitude Richardson step (eps0 and
    eps0/2, error order r) removes the next correction before the moment
    system is solved for q on the covered nodes.
    """
    grid = op.grid
    om = grid.omega
    n_steps = n_steps_for(dt, t_final)
    if psi is None:
        from .controls import bump_control

        psi = bump_control(grid, "w1", 0.1 * t_final, 0.9 * t_final, dt, n_steps)
    basis2 = ControlBasis(grid, "w2", t_final, n_segments)
    bg2 = BackgroundStates(op, None, basis2, dt, t_final)

    coeff2, achieved2, errs2 = [], [], []
    for tgt in targets:
        c2, a2, e2 = bg2.synthesize(tgt.materialize(grid, dt, n_steps), synth_alpha)
        coeff2.append(c2)
        achieved2.append(a2)
        errs2.append(e2)
    coeff2 = np.asarray(coeff2)
    achieved2 = np.asarray(achieved2)

    lin = solve_linear(op, None, psi, dt, t_final)
    v0 = lin.u[:, om]
    perm = basis2.reversal_permutation()
    time_mat = basis2.time_matrix(dt, n_steps)
    p_lin = _pair_vector(op, lin, basis2, time_mat)

    r = float(r_known)
    moments = []
    for eps in (eps0, 0.5 * eps0):
        scaled = ExteriorControl(values=eps * psi.values, dvalues=eps * psi.dvalues,
                                 window=psi.window, dt=psi.dt, spec=None)
        nl = solve_nonlinear(op, f, scaled, dt, t_final)
        p_nl = _pair_vector(op, nl, basis2, time_mat)
        d = coeff2 @ (p_nl - eps * p_lin)[perm]
        moments.append(d / eps ** (r + 1))
    w1, w2m = moments
    y = (2.0 ** r * w2m - w1) / (2.0 ** r - 1.0)

    wt = dt * trapezoid_weights(n_steps)
    gsrc = np.abs(v0) ** r * v0
    v2_rev = achieved2[:, ::-1, :]
    zeta = grid.h * np.einsum("tj,t,ktj->kj", gsrc, wt, v2_rev)

    colnorm = np.linalg.norm(zeta, axis=0)
    covered = colnorm >= coverage_floor * colnorm.max()
    values = np.full(len(om), np.nan)
    sub = zeta[:, covered]
    gram = sub.T @ sub
    n_cov = gram.shape[0]
    d2 = _second_difference(n_cov)
    pen = d2.T @ d2
    scale = np.trace(gram) / max(np.trace(pen), 1e-300)
    ridge = 1e-12 * np.trace(gram) / max(n_cov, 1)
    mat = gram + alpha_inv * scale * pen + ridge * np.eye(n_cov)
    try:
        cho = cho_factor(mat)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError("moment normal equations failed",
                                  np.linalg.cond(mat)) from exc
    values[covered] = cho_solve(cho, sub.T @ y)

    diagnostics = {
        "r": r,
        "eps": [float(eps0), float(0.5 * eps0)],
        "runge_errors_w2": [float(e) for e in errs2],
        "moment_residual": float(np.linalg.norm(sub @ values[covered] - y)),
        "moment_norm": float(np.linalg.norm(y)),
        "n_covered": int(np.sum(covered)),
    }
    return Reconstruction(values=values, nodes=om.copy(),
                          node_coords=grid.x[om].copy(), covered=covered,
                          r=r, coeff=values.copy(), diagnostics=diagnostics)
