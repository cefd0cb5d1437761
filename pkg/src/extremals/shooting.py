"""Extremal solving by single shooting on the Hamiltonian system.

The flow integrated here is

    xi' = B(xi) u*,    p' = -A(xi, u*)^T p + d_xL(xi, u*),

with the feedback control u* = w(xi, B(xi)^T p) re-solved at every RK4
stage (warm-started, so it is one or two Newton steps in practice). The
shooting unknown is p(0): forward integration only, and the multiplier is
read off as lam = p(T) on convergence.

Everything is batched over seeds. A blown-up or feedback-infeasible batch
element is frozen and marked dead instead of raising, so one wild seed
cannot take down a multi-start sweep; the per-seed Newton uses least-squares
steps because extremal families here are routinely non-isolated (phase
circles), which makes the shooting Jacobian rank-deficient on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import ControlPath, l2_distance
from .dynamics import BLOWUP_GUARD, DEFAULT_SUBSTEPS, Trajectory, _augmented_psi, fine_grid
from .errors import DimensionError, NonConvergenceError
from .lagrangian import Lagrangian, trapezoid

SHOOT_TOL = 1e-8
SHOOT_MAX_ITER = 100
SHOOT_FD_STEP = 1e-6
SHOOT_MAX_HALVINGS = 10
DEDUP_TOL = 1e-5
FEEDBACK_TOL = 1e-10
FEEDBACK_MAX_ITER = 25
STAGE_ONE_TOL = 1e-6
HANDOFF_TOL = 1e-3
POLISH_MAX_ITER = 30
JAC_TRUNCATION = 1e-3


@dataclass(frozen=True)
class CostatePath:
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)  # (M+1, n)
    ill_conditioned: bool = False

    @property
    def final(self):
        return self.values[-1]


@dataclass(frozen=True)
class ExtremalSolution:
    u: ControlPath
    xi: Trajectory
    p: np.ndarray = field(repr=False)       # (M+1, n) on xi.times
    lam: np.ndarray = None
    p0: np.ndarray = None
    phi: float = 0.0
    residuals: dict = None
    converged: bool = False
    iterations: int = 0
    x0: np.ndarray = None
    target: np.ndarray = None
    u_fine: ControlPath = None

    @property
    def T(self):
        return self.u.T

    @property
    def N(self):
        return self.u.N


def _feedback_control(L, F, x, p, u0):
    """Masked fiber-derivative inversion: returns (u, ok) without raising."""
    z = F.momentum(x, p)
    u = u0.copy()
    r = L.grad_u(x, u) - z
    rn = np.linalg.norm(r, axis=-1)
    for _ in range(FEEDBACK_MAX_ITER):
        if np.max(rn, initial=0.0) < FEEDBACK_TOL:
            break
        H = L.hess_u(x, u)
        try:
            step = np.linalg.solve(H, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            return u, rn < FEEDBACK_TOL
        step = np.where(np.isfinite(step), step, 0.0)
        alpha = np.ones(rn.shape)
        for _ in range(20):
            u_try = u - alpha[..., None] * step
            rn_try = np.linalg.norm(L.grad_u(x, u_try) - z, axis=-1)
            ok = (rn_try < rn) | (rn < FEEDBACK_TOL)
            if np.all(ok):
                break
            alpha = np.where(ok, alpha, alpha / 2.0)
        u = u - alpha[..., None] * step
        r = L.grad_u(x, u) - z
        rn = np.linalg.norm(r, axis=-1)
    return u, rn < FEEDBACK_TOL


def _hamiltonian_flow(F, L, x0, p0, T, N, substeps=DEFAULT_SUBSTEPS):
    """Batched feedback flow from stacked initial costates p0 (..., n).

    Returns (times, xs, ps, us, alive): arrays shaped (M+1,) + batch + (dim,);
    alive marks elements that stayed finite and feedback-solvable. Dead
    elements keep their last finite state.
    """
    p0 = np.asarray(p0, dtype=float)
    batch = p0.shape[:-1]
    n, m = F.n, F.m
    times, h = fine_grid(T, N, substeps)
    M = len(times) - 1
    x = np.broadcast_to(np.asarray(x0, dtype=float), batch + (n,)).copy()
    p = p0.copy()
    alive = np.ones(batch, dtype=bool)
    w_guess = np.zeros(batch + (m,))

    xs = np.empty((M + 1,) + batch + (n,))
    ps = np.empty((M + 1,) + batch + (n,))
    us = np.empty((M + 1,) + batch + (m,))

    def rhs(xv, pv):
        nonlocal w_guess, alive
        w, ok = _feedback_control(L, F, xv, pv, w_guess)
        alive = alive & ok
        w_guess = w
        dx = np.einsum("...nm,...m->...n", F.field_matrix(xv), w)
        A = F.a_matrix(xv, w)
        dp = -np.einsum("...jk,...j->...k", A, pv) + L.grad_x(xv, w)
        return dx, dp, w

    dx0, dp0, w0 = rhs(x, p)
    xs[0], ps[0], us[0] = x, p, w0
    kx1, kp1 = dx0, dp0
    for j in range(M):
        if j > 0:
            kx1, kp1, wj = rhs(x, p)
            us[j] = wj
        kx2, kp2, _ = rhs(x + (h / 2) * kx1, p + (h / 2) * kp1)
        kx3, kp3, _ = rhs(x + (h / 2) * kx2, p + (h / 2) * kp2)
        kx4, kp4, _ = rhs(x + h * kx3, p + h * kp3)
        x_new = x + (h / 6) * (kx1 + 2 * kx2 + 2 * kx3 + kx4)
        p_new = p + (h / 6) * (kp1 + 2 * kp2 + 2 * kp3 + kp4)
        bad = ~(np.all(np.isfinite(x_new), axis=-1)
                & np.all(np.isfinite(p_new), axis=-1)
                & (np.max(np.abs(x_new), axis=-1) <= BLOWUP_GUARD)
                & (np.max(np.abs(p_new), axis=-1) <= BLOWUP_GUARD))
        alive = alive & ~bad
        keep = ~alive[..., None]
        x = np.where(keep, x, x_new)
        p = np.where(keep, p, p_new)
        xs[j + 1], ps[j + 1] = x, p
    _, _, w_end = rhs(x, p)
    us[M] = w_end
    return times, xs, ps, us, alive


def _endpoint_of_flow(F, L, x0, p0, T, N, substeps):
    _, xs, _, _, alive = _hamiltonian_flow(F, L, x0, p0, T, N, substeps)
    return xs[-1], alive


def _shoot_batch(F, L, x0, x, T, N, p0, tol, max_iter, substeps):
    """Damped least-squares Newton on the batched shooting residual.

    Returns (p0, resid_norm, converged, iterations, failed) per element.
    """
    p0 = np.asarray(p0, dtype=float).copy()
    batch = p0.shape[:-1]
    n = F.n
    target = np.asarray(x, dtype=float)

    def residual(pts):
        ends, alive = _endpoint_of_flow(F, L, x0, pts, T, N, substeps)
        r = ends - target
        rn = np.linalg.norm(r, axis=-1)
        rn = np.where(alive, rn, np.inf)
        return r, rn

    r, rn = residual(p0)
    failed = ~np.isfinite(rn)
    iterations = np.zeros(batch, dtype=int)
    stall_rn = rn.copy()
    for it in range(max_iter):
        active = (rn >= tol) & ~failed
        if not np.any(active):
            break
        # Central-difference Jacobian, all probes in one batched flow.
        step = SHOOT_FD_STEP * (1.0 + np.linalg.norm(p0, axis=-1))
        probes = np.empty((2 * n,) + batch + (n,))
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            probes[2 * k] = p0 + step[..., None] * e
            probes[2 * k + 1] = p0 - step[..., None] * e
        ends, alive = _endpoint_of_flow(F, L, x0, probes, T, N, substeps)
        jac_ok = np.all(alive, axis=0)
        J = np.empty(batch + (n, n))
        for k in range(n):
            J[..., :, k] = (ends[2 * k] - ends[2 * k + 1]) / (2.0 * step[..., None])

        delta = np.zeros_like(p0)
        flat_J = J.reshape(-1, n, n)
        flat_r = r.reshape(-1, n)
        flat_d = delta.reshape(-1, n)
        flat_on = (active & jac_ok).reshape(-1)
        for i in np.nonzero(flat_on)[0]:
            # Truncated pseudo-inverse: symmetric targets leave an exact
            # null direction whose discretized singular value is O(h^4)
            # noise; a plain lstsq step would divide residual leakage by
            # it and fling the iterate along the symmetry orbit.
            U, sv, Vt = np.linalg.svd(flat_J[i])
            keep = sv > JAC_TRUNCATION * sv[0] if sv[0] > 0 else sv > 0
            coeff = (U[:, keep].T @ flat_r[i]) / sv[keep]
            flat_d[i] = Vt[keep].T @ coeff
        delta = flat_d.reshape(batch + (n,))
        failed = failed | (active & ~jac_ok)

        moving = active & jac_ok
        alpha = np.ones(batch)
        accepted = ~moving
        best = p0.copy()
        best_r = r.copy()
        for _ in range(SHOOT_MAX_HALVINGS):
            cand = p0 - (alpha * moving)[..., None] * delta
            r_try, rn_try = residual(cand)
            better = moving & ~accepted & (rn_try < rn)
            best = np.where(better[..., None], cand, best)
            best_r = np.where(better[..., None], r_try, best_r)
            rn = np.where(better, rn_try, rn)
            accepted = accepted | better
            if np.all(accepted):
                break
            alpha = np.where(accepted, alpha, alpha / 2.0)
        stuck = moving & ~accepted
        failed = failed | stuck
        p0, r = best, best_r
        iterations = iterations + moving.astype(int)
        # Seeds that wander without real progress would otherwise burn the
        # whole iteration budget; anything that cannot even halve its
        # residual over 8 iterations will never cover 8 more decades.
        # Failed elements keep their best finite residual: a later polish
        # on a finer map may still rescue them from that point.
        if (it + 1) % 8 == 0:
            stalled = active & ~failed & (rn > 0.5 * stall_rn) & (rn >= tol)
            failed = failed | stalled
            stall_rn = rn.copy()
    converged = (rn < tol) & ~failed
    return p0, rn, converged, iterations, failed


def _build_solution(F, L, x0, x, T, N, p0, rn, converged, iterations,
                    substeps) -> ExtremalSolution:
    times, xs, ps, us, _ = _hamiltonian_flow(F, L, x0, p0[None], T, N, substeps)
    xi_s = xs[:, 0]
    p_s = ps[:, 0]
    u_s = us[:, 0]
    lam = p_s[-1].copy()

    coarse = ControlPath(T, u_s[::max(1, (len(times) - 1) // N)])
    fine = ControlPath(T, u_s)
    phi = trapezoid(L.value(xi_s, u_s), times)

    stat = float(np.max(np.linalg.norm(
        L.grad_u(xi_s, u_s) - F.momentum(xi_s, p_s), axis=-1)))
    h_vals = np.einsum("jm,jm->j", F.momentum(xi_s, p_s), u_s) - L.value(xi_s, u_s)
    drift = float(np.max(np.abs(h_vals - h_vals[0])) / (1.0 + abs(h_vals[0])))
    residuals = {
        "endpoint_gap": float(rn),
        "stationarity": stat,
        "hamiltonian_drift": drift,
    }
    return ExtremalSolution(
        u=coarse, xi=Trajectory(times=times, states=xi_s), p=p_s, lam=lam,
        p0=np.asarray(p0, dtype=float), phi=float(phi), residuals=residuals,
        converged=bool(converged), iterations=int(iterations),
        x0=np.asarray(x0, dtype=float), target=np.asarray(x, dtype=float),
        u_fine=fine)


def _shoot_two_stage(F, L, x0, x, T, N, seeds, tol, max_iter, substeps):
    """Coarse-substep Newton first, then polish candidates on the fine map.

    The feedback flow with substeps=1 reaches the same basins at a quarter
    of the cost, but its endpoint map carries an O(h^4) defect, and for
    symmetric targets that defect is a hard residual floor no iteration
    can cross. Stage one is therefore only a warm-start generator: every
    iterate that got near some basin is handed to the fine map, and
    convergence is judged there alone.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if substeps <= 1:
        return _shoot_batch(F, L, x0, x, T, N, seeds, tol, max_iter, substeps)
    stage_tol = max(tol, STAGE_ONE_TOL)
    p1, rn1, conv1, it1, _ = _shoot_batch(
        F, L, x0, x, T, N, seeds, stage_tol, max_iter, 1)
    p_out = p1.copy()
    rn_out = rn1.copy()
    conv_out = np.zeros(len(seeds), dtype=bool)
    iters = it1.copy()
    failed = np.ones(len(seeds), dtype=bool)
    idx = np.nonzero(np.isfinite(rn1) & (rn1 < HANDOFF_TOL))[0]
    if idx.size:
        p2, rn2, conv2, it2, failed2 = _shoot_batch(
            F, L, x0, x, T, N, p1[idx], tol, POLISH_MAX_ITER, substeps)
        p_out[idx] = p2
        rn_out[idx] = rn2
        conv_out[idx] = conv2
        iters[idx] += it2
        failed[idx] = failed2 | ~conv2
    return p_out, rn_out, conv_out, iters, failed


def shoot_extremal(F, L: Lagrangian, x0, x, T, p0=None, N=64,
                   tol=SHOOT_TOL, max_iter=SHOOT_MAX_ITER,
                   substeps=DEFAULT_SUBSTEPS) -> ExtremalSolution:
    """Newton on p(0) driving the feedback flow's endpoint to x."""
    x0 = np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    if x0.shape != (F.n,) or x.shape != (F.n,):
        raise DimensionError(f"x0 and x must have shape ({F.n},)")
    p0 = np.zeros(F.n) if p0 is None else np.asarray(p0, dtype=float)
    pf, rn, conv, iters, _ = _shoot_two_stage(
        F, L, x0, x, T, N, p0[None], tol, max_iter, substeps)
    if not conv[0]:
        best = float(rn[0]) if np.isfinite(rn[0]) else float("inf")
        raise NonConvergenceError(
            f"shooting did not reach endpoint tolerance {tol:g} "
            f"(best residual {best:.3e})",
            best_residual=best, best_p0=pf[0])
    return _build_solution(F, L, x0, x, T, N, pf[0], rn[0], True,
                           iters[0], substeps)


def make_seeds(n, count, scale, seed=0):
    """Default seed family: the origin plus Gaussian costates of width scale."""
    rng = np.random.default_rng(seed)
    return np.vstack([np.zeros((1, n)), rng.normal(0.0, scale, size=(count, n))])


def multi_start(F, L: Lagrangian, x0, x, T, seeds, N=64, tol=SHOOT_TOL,
                max_iter=SHOOT_MAX_ITER, substeps=DEFAULT_SUBSTEPS,
                dedup_tol=DEDUP_TOL):
    """Batched shooting from every seed; distinct converged extremals.

    Solutions are deduplicated by exact piecewise-linear L2 distance on the
    controls (tie-break toward smaller |lam|) and sorted by (phi, |lam|).
    Returns a list; empty means no seed converged.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    pf, rn, conv, iters, _ = _shoot_two_stage(
        F, L, np.asarray(x0, float), np.asarray(x, float), T, N, seeds,
        tol, max_iter, substeps)
    sols = []
    for i in np.nonzero(conv)[0]:
        sols.append(_build_solution(F, L, x0, x, T, N, pf[i], rn[i], True,
                                    iters[i], substeps))
    sols.sort(key=lambda s: (s.phi, float(np.linalg.norm(s.lam))))
    kept = []
    for s in sols:
        if all(l2_distance(s.u, k.u) >= dedup_tol for k in kept):
            kept.append(s)
    return kept


def costate_from_lambda(F, L: Lagrangian, u: ControlPath, x0, T=None,
                        lam=None, substeps=DEFAULT_SUBSTEPS) -> CostatePath:
    """Closed-form costate: transport lam back and absorb the d_xL source.

    p(s) = (Psi(s)^-1)^T [ Psi(T)^T lam - int_s^T Psi(r)^T d_xL(xi, u) dr ],
    evaluated with a reversed cumulative trapezoid on the fine grid.
    """
    T = u.T if T is None else float(T)
    lam = np.asarray(lam, dtype=float)
    times, states, psis = _augmented_psi(F, u, np.asarray(x0, float), T, substeps)
    u_nodes = u.at(times)
    gx = L.grad_x(states, u_nodes)
    integrand = np.einsum("jnk,jn->jk", psis, gx)
    dt = np.diff(times)
    cells = dt[:, None] * (integrand[:-1] + integrand[1:]) / 2.0
    tail = np.zeros_like(integrand)
    tail[:-1] = np.cumsum(cells[::-1], axis=0)[::-1]
    rhs = psis[-1].T @ lam - tail
    p = np.linalg.solve(np.transpose(psis, (0, 2, 1)), rhs[..., None])[..., 0]
    conds = np.linalg.cond(psis)
    return CostatePath(times=times, values=p,
                       ill_conditioned=bool(np.max(conds) > 1e12))


def extremality_residual(F, L: Lagrangian, u: ControlPath, x0, x, T=None,
                         lam=None, substeps=DEFAULT_SUBSTEPS):
    """Feasibility and stationarity of (u, lam) as a candidate extremal."""
    from .dynamics import integrate

    T = u.T if T is None else float(T)
    traj = integrate(F, u, np.asarray(x0, float), T, substeps)
    feas = float(np.linalg.norm(traj.endpoint - np.asarray(x, dtype=float)))
    cost = costate_from_lambda(F, L, u, x0, T, lam, substeps)
    u_nodes = u.at(traj.times)
    gap = L.grad_u(traj.states, u_nodes) - F.momentum(traj.states, cost.values)
    return {"feasibility": feas,
            "stationarity": float(np.max(np.linalg.norm(gap, axis=-1)))}
