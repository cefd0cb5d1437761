"""Vector field families, Lie brackets, and the bracket-generating rank test."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .errors import DimensionError, EvaluationError

LIE_RANK_TOL = 1e-9
BRACKET_NODE_CAP = ex.NODE_CAP


class FieldSet:
    """m symbolic vector fields X_1..X_m on R^n with exact derivatives.

    ``components[i][j]`` is the j-th component of X_i as an expression in
    x1..xn. Instances are immutable by convention; all evaluators are
    compiled once at construction and broadcast over leading batch axes.
    """

    def __init__(self, n, m, components, source=None):
        if m > n:
            raise DimensionError(f"m = {m} fields exceed state dimension n = {n}")
        if len(components) != m or any(len(c) != n for c in components):
            raise DimensionError("components must form an m x n grid")
        self.n = n
        self.m = m
        self.components = tuple(tuple(c) for c in components)
        self.source = source
        self.variables = tuple(f"x{i+1}" for i in range(n))

        # B(x)[j, i] = (X_i)_j, matching xi' = B(xi) u.
        self._b = ex.compile_vector(
            [self.components[i][j] for j in range(n) for i in range(m)], n)
        # dX_i stacked: jac(x)[i, j, k] = d(X_i)_j / dx_k.
        jac_exprs = []
        self._jac_components = []
        for i in range(m):
            rows = []
            for j in range(n):
                row = tuple(self.components[i][j].diff(k) for k in range(n))
                rows.append(row)
                jac_exprs.extend(row)
            self._jac_components.append(tuple(rows))
        self._jac = ex.compile_vector(jac_exprs, n)

    # -- evaluation ------------------------------------------------------

    def _split(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.n:
            raise DimensionError(f"state has dimension {x.shape[-1]}, expected {self.n}")
        return tuple(x[..., i] for i in range(self.n))

    def field_matrix(self, x):
        """B(x) with shape (..., n, m)."""
        out = self._b(self._split(x))
        return out.reshape(out.shape[:-1] + (self.n, self.m))

    def jacobian_stack(self, x):
        """All dX_i(x), shape (..., m, n, n)."""
        out = self._jac(self._split(x))
        return out.reshape(out.shape[:-1] + (self.m, self.n, self.n))

    def a_matrix(self, x, u):
        """A = sum_i u_i dX_i(x), the variational-equation coefficient."""
        return np.einsum("...i,...ijk->...jk", u, self.jacobian_stack(x))

    def momentum(self, x, p):
        """Z(x, p) = (<p, X_i(x)>)_i, shape (..., m)."""
        return np.einsum("...nm,...n->...m", self.field_matrix(x), p)

    def boundedness_spot_check(self, radius=10.0, samples=200, seed=0):
        """Sample |X_i| on a box; returns (max_norm, bounded_looking flag).

        The rank condition does not need boundedness, but configs may want
        the flag recorded. Polynomial fields of positive degree will simply
        report large norms at large radius.
        """
        rng = np.random.default_rng(seed)
        x = rng.uniform(-radius, radius, size=(samples, self.n))
        norms = np.linalg.norm(self.field_matrix(x), axis=-2)
        max_norm = float(norms.max())
        return max_norm, bool(max_norm < 1e3)


def parse_field_set(text, n, m):
    """Parse ``Xi = (...)`` statements into a FieldSet."""
    comps = ex.parse_field_statements(text, n, m)
    return FieldSet(n, m, comps, source=text)


def eval_field(F, i, x):
    """Evaluate the i-th field (0-based) at x; raises on non-finite values."""
    out = F.field_matrix(x)[..., :, i]
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"field X{i+1} evaluated to a non-finite value")
    return out


def jacobian(F, i, x):
    """Evaluate dX_i (0-based i) at x."""
    out = F.jacobian_stack(x)[..., i, :, :]
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"dX{i+1} evaluated to a non-finite value")
    return out


def lie_bracket(X, Y, n):
    """[X, Y] = dY(x) X(x) - dX(x) Y(x), computed symbolically.

    X and Y are sequences of n expressions; the result is again n exact
    expressions. A node cap guards combinatorial growth in deep nestings.
    """
    comps = []
    for k in range(n):
        terms = []
        for j in range(n):
            terms.append(ex.mul(Y[k].diff(j), X[j]))
            terms.append(ex.mul(ex.Const(-1.0), X[k].diff(j), Y[j]))
        comps.append(ex.add(*terms))
    ex.check_node_cap(comps, BRACKET_NODE_CAP)
    return tuple(comps)


@dataclass(frozen=True)
class LieRankResult:
    rank: int
    depth: int
    basis: np.ndarray  # (rank, n) independent evaluated bracket vectors
    satisfied: bool    # rank == n
    max_depth: int

    def summary(self):
        status = "satisfied" if self.satisfied else f"unverified at depth {self.max_depth}"
        return f"rank {self.rank} at depth {self.depth} ({status})"


def _matrix_rank(rows, tol):
    if not rows:
        return 0
    sv = np.linalg.svd(np.asarray(rows), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def lie_rank(F, x, max_depth=10, tol=LIE_RANK_TOL):
    """Recursive bracket-generating span test at the point x.

    Level 1 holds the generators; level d+1 adds brackets of each generator
    with every level-d field. Rank counts singular values above ``tol``
    relative to the largest. Never raises on failure: an unsatisfied result
    simply reports rank < n at max_depth.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    x = np.asarray(x, dtype=float)
    generators = [tuple(F.components[i]) for i in range(F.m)]
    level = list(generators)
    vectors = []   # evaluated rows in discovery order
    basis_rows = []
    rank = 0
    depth_achieved = 1
    depth = 0
    while depth < max_depth:
        depth += 1
        for fld in level:
            vec = np.array([c.eval(tuple(x)) for c in fld], dtype=float)
            vectors.append(vec)
            new_rank = _matrix_rank(basis_rows + [vec], tol)
            if new_rank > rank:
                basis_rows.append(vec)
                rank = new_rank
                depth_achieved = depth
        if rank >= F.n or depth == max_depth:
            break
        level = [lie_bracket(g, w, F.n) for g in generators for w in level]
    basis = np.array(basis_rows) if basis_rows else np.zeros((0, F.n))
    return LieRankResult(rank=rank, depth=depth_achieved, basis=basis,
                         satisfied=rank == F.n, max_depth=max_depth)
