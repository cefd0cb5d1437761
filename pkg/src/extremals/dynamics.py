"""Integration of the affine system and the endpoint map's differential.

The state equation is xi' = sum_i u_i(s) X_i(xi) = B(xi) u(s). Everything
here runs on a fixed fine grid of M = N * substeps RK4 steps, where N is the
control grid count; sub-stepping separates control resolution from ODE
accuracy, and because the fine grid nests inside the control grid the
integrand stays smooth within every step.

The differential of the endpoint map and its adjoint come from the
variational equation: with Psi the fundamental solution of Psi' = A(s) Psi,
A(s) = sum_i u_i(s) dX_i(xi(s)), and B(s) the matrix of field columns along
the trajectory,

    dE(u) v      = integral of Psi(T) Psi(s)^-1 B(s) v(s) ds,
    adjoint term = B(s)^T (Psi(s)^-1)^T Psi(T)^T lam.

Both use the same trapezoid weights on the same fine grid, so the duality
pairing <adjoint(lam), v> = lam . dE(v) is exact by transposition of the
quadrature sum; that identity is load-bearing for the Gram-based singularity
tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .controls import ControlPath
from .errors import DimensionError, DivergenceError, GridMismatchError

BLOWUP_GUARD = 1e12
DEFAULT_SUBSTEPS = 4
PSI_COND_FLAG = 1e12


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray = field(repr=False)
    states: np.ndarray = field(repr=False)  # (M+1, n)

    @property
    def x0(self):
        return self.states[0]

    @property
    def endpoint(self):
        return self.states[-1]

    @property
    def T(self):
        return float(self.times[-1])


@dataclass(frozen=True)
class FundamentalSolution:
    times: np.ndarray = field(repr=False)
    mats: np.ndarray = field(repr=False)  # (M+1, n, n), mats[0] = I
    max_cond: float
    ill_conditioned: bool


def _interp_rows(values, T, s):
    """Piecewise-linear evaluation of (..., N+1, m) node values at times s."""
    N = values.shape[-2] - 1
    pos = np.clip(np.asarray(s, dtype=float), 0.0, T) * (N / T)
    idx = np.minimum(pos.astype(int), N - 1)
    w = (pos - idx)[:, None]
    lo = values[..., idx, :]
    hi = values[..., idx + 1, :]
    return np.moveaxis(lo + w * (hi - lo), -2, 0)


def _stage_controls(values, T_path, times, h):
    """Control samples at step nodes and midpoints, shapes (M+1,...,m), (M,...,m)."""
    nodes = _interp_rows(values, T_path, times)
    half = _interp_rows(values, T_path, times[:-1] + h / 2.0)
    return nodes, half


def _rk4_states(F, x0, u_nodes, u_half, h, guard=BLOWUP_GUARD):
    """Fixed-step RK4 for xi' = B(xi) u(s); batched over leading axes."""
    M = u_half.shape[0]
    x = np.asarray(x0, dtype=np.result_type(x0, u_nodes))
    x = np.broadcast_to(x, u_nodes.shape[1:-1] + (x.shape[-1],)).copy()
    out = np.empty((M + 1,) + x.shape, dtype=x.dtype)
    out[0] = x

    def rhs(state, uval):
        return np.einsum("...nm,...m->...n", F.field_matrix(state), uval)

    for j in range(M):
        ua, um, ub = u_nodes[j], u_half[j], u_nodes[j + 1]
        k1 = rhs(x, ua)
        k2 = rhs(x + (h / 2.0) * k1, um)
        k3 = rhs(x + (h / 2.0) * k2, um)
        k4 = rhs(x + h * k3, ub)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > guard:
            raise DivergenceError(
                f"trajectory exceeded blow-up guard {guard:g} near s = {(j + 1) * h:.6g}",
                time=(j + 1) * h)
        out[j + 1] = x
    return out


def fine_grid(T, N, substeps=DEFAULT_SUBSTEPS):
    M = N * substeps
    return np.linspace(0.0, T, M + 1), T / M


def integrate(F, u: ControlPath, x0, T=None, substeps=DEFAULT_SUBSTEPS) -> Trajectory:
    """RK4 solution on [0, T] (default T = u.T); M = u.N * substeps steps."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (F.n,):
        raise DimensionError(f"x0 has shape {x0.shape}, expected ({F.n},)")
    if u.m != F.m:
        raise DimensionError(f"control has {u.m} channels, fields expect {F.m}")
    T = u.T if T is None else float(T)
    if not 0.0 < T <= u.T * (1.0 + 1e-12):
        raise GridMismatchError(f"horizon {T} outside the control domain [0, {u.T}]")
    times, h = fine_grid(T, u.N, substeps)
    nodes, half = _stage_controls(u.values, u.T, times, h)
    states = _rk4_states(F, x0, nodes, half, h)
    return Trajectory(times=times, states=states)


def integrate_batch(F, values, x0, T, N=None, substeps=DEFAULT_SUBSTEPS):
    """States (M+1, ..., n) for a batch of node-value arrays (..., N+1, m).

    Accepts complex values: the RK4 recursion is polynomial in the data, so
    complex-step directional derivatives of the endpoint and of running
    costs are exact to machine precision.
    """
    values = np.asarray(values)
    N = values.shape[-2] - 1 if N is None else N
    times, h = fine_grid(T, N, substeps)
    nodes, half = _stage_controls(values, T, times, h)
    return _rk4_states(F, x0, nodes, half, h)


def endpoint(F, u, x0, T=None, substeps=DEFAULT_SUBSTEPS):
    return integrate(F, u, x0, T, substeps).endpoint


def _augmented_psi(F, u: ControlPath, x0, T, substeps):
    """Joint RK4 on (xi, Psi); returns (times, states, psis)."""
    times, h = fine_grid(T, u.N, substeps)
    nodes, half = _stage_controls(u.values, u.T, times, h)
    n = F.n
    M = len(times) - 1
    x = np.asarray(x0, dtype=float).copy()
    psi = np.eye(n)
    states = np.empty((M + 1, n))
    psis = np.empty((M + 1, n, n))
    states[0], psis[0] = x, psi

    def rhs(state, pmat, uval):
        B = F.field_matrix(state)
        A = F.a_matrix(state, uval)
        return B @ uval, A @ pmat

    for j in range(M):
        ua, um, ub = nodes[j], half[j], nodes[j + 1]
        kx1, kp1 = rhs(x, psi, ua)
        kx2, kp2 = rhs(x + (h / 2) * kx1, psi + (h / 2) * kp1, um)
        kx3, kp3 = rhs(x + (h / 2) * kx2, psi + (h / 2) * kp2, um)
        kx4, kp4 = rhs(x + h * kx3, psi + h * kp3, ub)
        x = x + (h / 6) * (kx1 + 2 * kx2 + 2 * kx3 + kx4)
        psi = psi + (h / 6) * (kp1 + 2 * kp2 + 2 * kp3 + kp4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_GUARD:
            raise DivergenceError(
                f"trajectory exceeded blow-up guard near s = {(j + 1) * h:.6g}",
                time=(j + 1) * h)
        states[j + 1], psis[j + 1] = x, psi
    return times, states, psis


def fundamental_solution(F, u: ControlPath, traj: Trajectory,
                         substeps=None) -> FundamentalSolution:
    """Psi(s) solving Psi' = A(s) Psi, Psi(0) = I, on the trajectory's grid.

    The matrix ODE needs A at the RK4 stage midpoints, so the state is
    re-integrated jointly with Psi using the identical stage structure; the
    node states reproduce ``traj`` bit-for-bit.
    """
    M = len(traj.times) - 1
    if substeps is None:
        substeps = max(1, M // u.N)
    _, _, psis = _augmented_psi(F, u, traj.x0, traj.T, substeps)
    conds = np.linalg.cond(psis)
    max_cond = float(np.max(conds))
    return FundamentalSolution(times=traj.times, mats=psis, max_cond=max_cond,
                               ill_conditioned=max_cond > PSI_COND_FLAG)


def trapezoid_weights(times):
    dt = np.diff(times)
    w = np.zeros(len(times))
    w[:-1] += dt / 2.0
    w[1:] += dt / 2.0
    return w


class DifferentialKernel:
    """Precomputed integral kernel of dE at a fixed (u, x0, T).

    Holds K(s) = Psi(T) Psi(s)^-1 B(s) on the fine grid together with the
    trapezoid weights, so forward applications, adjoints, and the Gram
    operator are single einsums. Built once, applied many times (Newton
    loops, basis selection, duality sweeps).
    """

    def __init__(self, F, u, x0, T, times, states, psis, weights, kernels):
        self.F = F
        self.u = u
        self.x0 = np.asarray(x0, dtype=float)
        self.T = T
        self.times = times
        self.states = states
        self.psis = psis
        self.weights = weights
        self.kernels = kernels  # (M+1, n, m)

    @classmethod
    def build(cls, F, u: ControlPath, x0, T=None, substeps=DEFAULT_SUBSTEPS):
        T = u.T if T is None else float(T)
        times, states, psis = _augmented_psi(F, u, x0, T, substeps)
        B = F.field_matrix(states)
        inv_b = np.linalg.solve(psis, B)          # Psi(s)^-1 B(s), batched
        kernels = np.einsum("nk,jkm->jnm", psis[-1], inv_b)
        return cls(F, u, x0, T, times, states, psis, trapezoid_weights(times),
                   kernels)

    @property
    def endpoint(self):
        return self.states[-1]

    def apply_values(self, v_values):
        """dE(u) v from samples of v on the fine grid, shape (M+1, m)."""
        return np.einsum("j,jnm,jm->n", self.weights, self.kernels, v_values)

    def apply(self, v: ControlPath):
        return self.apply_values(v.at(self.times))

    def adjoint_values(self, lam):
        return np.einsum("jnm,n->jm", self.kernels, lam)

    def adjoint(self, lam) -> ControlPath:
        return ControlPath(self.T, self.adjoint_values(lam))

    def gram(self):
        return np.einsum("j,jam,jbm->ab", self.weights, self.kernels,
                         self.kernels)


def _check_probe(u, v, T):
    if v.m != u.m:
        raise GridMismatchError(f"direction has {v.m} channels, control has {u.m}")
    if v.T < T * (1.0 - 1e-12):
        raise GridMismatchError(f"direction horizon {v.T} shorter than {T}")


def apply_dE(F, u, x0, T=None, v=None, substeps=DEFAULT_SUBSTEPS):
    """Directional derivative of the endpoint map at u in direction v."""
    T = u.T if T is None else float(T)
    _check_probe(u, v, T)
    return DifferentialKernel.build(F, u, x0, T, substeps).apply(v)


def adjoint_dE(F, u, x0, T=None, lam=None, substeps=DEFAULT_SUBSTEPS):
    """The path s -> B(s)^T (Psi(s)^-1)^T Psi(T)^T lam on the fine grid."""
    T = u.T if T is None else float(T)
    lam = np.asarray(lam, dtype=float)
    return DifferentialKernel.build(F, u, x0, T, substeps).adjoint(lam)


def gram_matrix(F, u, x0, T=None, substeps=DEFAULT_SUBSTEPS):
    """G_jk = <adjoint_dE(e_j), adjoint_dE(e_k)>_L2; symmetric PSD."""
    T = u.T if T is None else float(T)
    return DifferentialKernel.build(F, u, x0, T, substeps).gram()
