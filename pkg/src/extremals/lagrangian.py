"""Lagrangian evaluation, fiber-derivative inversion, Hamiltonian, cost.

A Lagrangian is one scalar expression over x1..xn, u1..um. Its gradients and
the control Hessian are produced by exact symbolic differentiation and
compiled on first use; evaluation is batched numpy throughout.

The map z -> w(x, z) inverting d_uL(x, .) is computed by a damped Newton
iteration. When that iteration cannot make progress (singular Hessian, or no
step length decreases the residual) the failure is raised as a
diffeomorphism violation rather than patched over, because every downstream
construction assumes the fiber derivative is invertible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .dynamics import DEFAULT_SUBSTEPS, integrate
from .errors import DiffeomorphismViolationError, DimensionError, EvaluationError

LEGENDRE_TOL = 1e-10
LEGENDRE_MAX_ITER = 50
LEGENDRE_MAX_HALVINGS = 30


class Lagrangian:
    """Compiled running cost L(x, u) with lazily built derivatives."""

    def __init__(self, n, m, expression: ex.Expr, source=""):
        self.n = n
        self.m = m
        self.expression = expression
        self.source = source
        self._value = ex.compile_vector([expression], n + m)
        self._grad_x = None
        self._grad_u = None
        self._hess_u = None

    def _pack(self, x, u):
        x = np.asarray(x)
        u = np.asarray(u)
        if x.shape[-1] != self.n or u.shape[-1] != self.m:
            raise DimensionError(
                f"expected x(...,{self.n}) and u(...,{self.m}), "
                f"got {x.shape} and {u.shape}")
        return (tuple(x[..., k] for k in range(self.n))
                + tuple(u[..., k] for k in range(self.m)))

    def value(self, x, u):
        out = self._value(self._pack(x, u))[..., 0]
        if not np.all(np.isfinite(out)):
            raise EvaluationError("Lagrangian evaluated to a non-finite value")
        return out

    def grad_x(self, x, u):
        if self._grad_x is None:
            exprs = [self.expression.diff(k) for k in range(self.n)]
            self._grad_x = ex.compile_vector(exprs, self.n + self.m)
        return self._grad_x(self._pack(x, u))

    def grad_u(self, x, u):
        if self._grad_u is None:
            exprs = [self.expression.diff(self.n + k) for k in range(self.m)]
            self._grad_u = ex.compile_vector(exprs, self.n + self.m)
        return self._grad_u(self._pack(x, u))

    def hess_u(self, x, u):
        if self._hess_u is None:
            exprs = [self.expression.diff(self.n + j).diff(self.n + k)
                     for j in range(self.m) for k in range(self.m)]
            self._hess_u = ex.compile_vector(exprs, self.n + self.m)
        flat = self._hess_u(self._pack(x, u))
        return flat.reshape(flat.shape[:-1] + (self.m, self.m))


def parse_lagrangian(text, n, m) -> Lagrangian:
    """Parse one scalar expression over x1..xn, u1..um.

    ``abs`` is accepted so that non-smooth benchmark costs can be evaluated;
    differentiating such a Lagrangian raises, which keeps the solver paths
    honest about their smoothness requirement.
    """
    names = [f"x{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(m)]
    expression = ex.parse_scalar(text, names, allow_abs=True)
    return Lagrangian(n, m, expression, source=text)


def eval_L(L: Lagrangian, x, u):
    return L.value(x, u)


def d_xL(L: Lagrangian, x, u):
    return L.grad_x(x, u)


def d_uL(L: Lagrangian, x, u):
    return L.grad_u(x, u)


def d2_uL(L: Lagrangian, x, u):
    return L.hess_u(x, u)


def legendre_inverse(L: Lagrangian, x, z, u0=None, tol=LEGENDRE_TOL,
                     max_iter=LEGENDRE_MAX_ITER):
    """Solve d_uL(x, u) = z for u; batched damped Newton from u0.

    Damping halves the step (per batch element) until the residual norm
    decreases; stagnation or a singular control Hessian raises a
    diffeomorphism violation at the offending (x, z).
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    batch = np.broadcast_shapes(x.shape[:-1], z.shape[:-1])
    x = np.broadcast_to(x, batch + (L.n,))
    z = np.broadcast_to(z, batch + (L.m,))
    if u0 is None:
        u = np.zeros(batch + (L.m,))
    else:
        u = np.broadcast_to(np.asarray(u0, dtype=float), batch + (L.m,)).copy()

    def resid(uval):
        return L.grad_u(x, uval) - z

    r = resid(u)
    rn = np.linalg.norm(r, axis=-1)
    for _ in range(max_iter):
        if np.max(rn) < tol:
            return u
        H = L.hess_u(x, u)
        try:
            step = np.linalg.solve(H, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise DiffeomorphismViolationError(
                "singular control Hessian while inverting the fiber derivative",
                residual=float(np.max(rn)))
        if not np.all(np.isfinite(step)):
            raise DiffeomorphismViolationError(
                "non-finite Newton step while inverting the fiber derivative",
                residual=float(np.max(rn)))
        alpha = np.ones(batch)
        for _ in range(LEGENDRE_MAX_HALVINGS):
            u_try = u - alpha[..., None] * step
            rn_try = np.linalg.norm(resid(u_try), axis=-1)
            ok = (rn_try < rn) | (rn < tol)
            if np.all(ok):
                break
            alpha = np.where(ok, alpha, alpha / 2.0)
        else:
            raise DiffeomorphismViolationError(
                "Newton stagnated while inverting the fiber derivative",
                residual=float(np.max(rn)))
        u = u - alpha[..., None] * step
        r = resid(u)
        rn = np.linalg.norm(r, axis=-1)
    if np.max(rn) < tol:
        return u
    raise DiffeomorphismViolationError(
        f"fiber-derivative inversion did not reach tolerance {tol:g} "
        f"in {max_iter} iterations", residual=float(np.max(rn)))


def momentum_map(F, x, p):
    """Z(x, p): pairing of the costate with each field column."""
    return F.momentum(x, p)


def maximizing_control(L: Lagrangian, F, x, p, u0=None):
    """The feedback control w(x, Z(x, p)) staticizing the pre-Hamiltonian."""
    return legendre_inverse(L, x, momentum_map(F, x, p), u0=u0)


def hamiltonian(L: Lagrangian, F, x, p, u0=None):
    """H(x, p) = <Z(x,p), w> - L(x, w) at the staticizing control w."""
    z = momentum_map(F, x, p)
    w = legendre_inverse(L, x, z, u0=u0)
    return np.einsum("...m,...m->...", z, w) - L.value(x, w)


def trapezoid(values, times):
    dt = np.diff(times)
    return float(np.sum(dt * (values[..., :-1] + values[..., 1:]) / 2.0))


def phi_from_samples(L: Lagrangian, times, x_nodes, u_nodes):
    """Trapezoid value of the running cost from explicit node samples."""
    return trapezoid(L.value(x_nodes, u_nodes), times)


def phi_functional(L: Lagrangian, F, u, x0, T=None,
                   substeps=DEFAULT_SUBSTEPS):
    """Phi(u) = integral of L along the trajectory of u from x0."""
    traj = integrate(F, u, x0, T, substeps)
    return phi_from_samples(L, traj.times, traj.states, u.at(traj.times))


@dataclass(frozen=True)
class GrowthProfile:
    """Three comparison functions of a radius r >= 0.

    control_floor bounds the cost from below in |u|, state_slack is the
    allowed drop in |x|, gradient_factor caps |d_xL| against 1 + |u|^2.
    """
    control_floor: object = field(repr=False)
    state_slack: object = field(repr=False)
    gradient_factor: object = field(repr=False)
    source: tuple = ("", "", "")

    def floor(self, r):
        return self.control_floor((np.asarray(r),))[..., 0]

    def slack(self, r):
        return self.state_slack((np.asarray(r),))[..., 0]

    def factor(self, r):
        return self.gradient_factor((np.asarray(r),))[..., 0]


def parse_growth_profile(floor_text, slack_text, factor_text) -> GrowthProfile:
    compiled = [ex.compile_vector([ex.parse_scalar(t, ["r"])], 1)
                for t in (floor_text, slack_text, factor_text)]
    return GrowthProfile(*compiled, source=(floor_text, slack_text, factor_text))


@dataclass(frozen=True)
class GrowthReport:
    lower_margin: float
    gradient_margin: float
    satisfied: bool
    worst_lower: tuple
    worst_gradient: tuple
    samples: int


def growth_spot_check(L: Lagrangian, profile: GrowthProfile, box,
                      samples=1000, seed=0) -> GrowthReport:
    """Sample (x, u) in a box and report the worst growth-bound margins.

    box is (x_radius, u_radius); a scalar is used for both. Margins are
    L - floor(|u|) + slack(|x|) and factor(|x|) (1 + |u|^2) - |d_xL|;
    negative margins mean the profile fails at the recorded sample, which
    is reported, never raised.
    """
    rx, ru = (box, box) if np.isscalar(box) else box
    rng = np.random.default_rng(seed)
    x = rng.uniform(-rx, rx, size=(samples, L.n))
    u = rng.uniform(-ru, ru, size=(samples, L.m))
    xn = np.linalg.norm(x, axis=-1)
    un = np.linalg.norm(u, axis=-1)

    lower = L.value(x, u) - profile.floor(un) + profile.slack(xn)
    i = int(np.argmin(lower))
    grad = (profile.factor(xn) * (1.0 + un ** 2)
            - np.linalg.norm(L.grad_x(x, u), axis=-1))
    j = int(np.argmin(grad))
    return GrowthReport(
        lower_margin=float(lower[i]),
        gradient_margin=float(grad[j]),
        satisfied=bool(lower[i] >= 0.0 and grad[j] >= 0.0),
        worst_lower=(tuple(x[i]), tuple(u[i])),
        worst_gradient=(tuple(x[j]), tuple(u[j])),
        samples=samples)
