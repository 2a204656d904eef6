"""Fully coupled linear forward-backward solver on a scenario tree.

The backward pass runs a scalar decoupling recursion (P, p) together with a
per-node N x N matrix whose invertibility at every non-leaf node is exactly
solvability of the coupled system; the per-node verdicts form a certificate.
The forward pass then solves one dense N x N system per node for the child
values of X, and Y, Z follow from conditional expectations of the affine
closure P X + p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    AssumptionViolation,
    LeafNodeError,
    NonFiniteInput,
    ShapeMismatch,
    SingularCertificate,
)
from .tree import AdaptedProcess, NodeId, ScenarioTree, _as_depth_index

#: Zero-sum validation tolerance for the structural coupling conditions.
ZERO_SUM_TOL = 1e-12

#: A per-node matrix counts as singular when its smallest singular value is
#: at most this fraction of its largest (scale-free test).
SINGULAR_RATIO = 1e-10


def _scalar_levels(tree, value, times, name):
    if value is None:
        return [np.zeros(tree.num_nodes(t)) for t in times]
    if np.isscalar(value):
        return [np.full(tree.num_nodes(t), float(value)) for t in times]
    if len(value) != len(times):
        raise ShapeMismatch(f"{name}: expected {len(times)} levels, got {len(value)}")
    out = []
    for t, lev in zip(times, value):
        arr = np.asarray(lev, dtype=float)
        if arr.ndim == 0:
            arr = np.full(tree.num_nodes(t), float(arr))
        if arr.shape != (tree.num_nodes(t),):
            raise ShapeMismatch(f"{name} level {t}: shape {arr.shape}")
        out.append(arr.copy())
    return out


def _row_levels(tree, value, times, name):
    if value is None:
        return [np.zeros((tree.num_nodes(t), tree.N)) for t in times]
    try:
        arr = np.asarray(value, dtype=float)
    except ValueError:
        arr = None
    if arr is not None and arr.ndim == 1:
        if arr.shape != (tree.N,):
            raise ShapeMismatch(f"{name}: row length {arr.shape[0]} != {tree.N}")
        return [np.tile(arr, (tree.num_nodes(t), 1)) for t in times]
    if len(value) != len(times):
        raise ShapeMismatch(f"{name}: expected {len(times)} levels, got {len(value)}")
    out = []
    for t, lev in zip(times, value):
        lev = np.asarray(lev, dtype=float)
        if lev.ndim == 1:
            lev = np.tile(lev, (tree.num_nodes(t), 1))
        if lev.shape != (tree.num_nodes(t), tree.N):
            raise ShapeMismatch(f"{name} level {t}: shape {lev.shape}")
        out.append(lev.copy())
    return out


def _matrix_levels(tree, value, times, name):
    if value is None:
        return [np.zeros((tree.num_nodes(t), tree.N, tree.N)) for t in times]
    try:
        arr = np.asarray(value, dtype=float)
    except ValueError:
        arr = None
    if arr is not None and arr.ndim == 2:
        if arr.shape != (tree.N, tree.N):
            raise ShapeMismatch(f"{name}: matrix shape {arr.shape}")
        return [np.tile(arr, (tree.num_nodes(t), 1, 1)) for t in times]
    if len(value) != len(times):
        raise ShapeMismatch(f"{name}: expected {len(times)} levels, got {len(value)}")
    out = []
    for t, lev in zip(times, value):
        lev = np.asarray(lev, dtype=float)
        if lev.ndim == 2:
            lev = np.tile(lev, (tree.num_nodes(t), 1, 1))
        if lev.shape != (tree.num_nodes(t), tree.N, tree.N):
            raise ShapeMismatch(f"{name} level {t}: shape {lev.shape}")
        out.append(lev.copy())
    return out


def _leaf_values(tree, value, name):
    if value is None:
        return np.zeros(tree.num_nodes(tree.T))
    if np.isscalar(value):
        return np.full(tree.num_nodes(tree.T), float(value))
    arr = np.asarray(value, dtype=float)
    if arr.shape != (tree.num_nodes(tree.T),):
        raise ShapeMismatch(f"{name}: shape {arr.shape}")
    return arr.copy()


class LinearCoefficients:
    """Coefficient set of the coupled linear system.

    Plain (A, B, C, D) drive the forward drift, barred rows the forward
    increment loading, hatted ones the backward equation, and (G, g) the
    terminal condition Y_T = G X_T + g.  Scalar fields are per-node scalars,
    C and C_hat per-node columns stored as (n, N) arrays, C_bar per-node
    N x N matrices.  Hatted fields live on times 1..T and are stored in
    lists indexed by absolute time with entry 0 unused.

    The structural conditions (columns of C, C_hat and every column of each
    C_bar matrix sum to zero; C_hat vanishes at the horizon) make each
    equation insensitive to the row representative of Z; ``validate``
    enforces them.
    """

    def __init__(self, tree, *, A=None, B=None, C=None, D=None,
                 A_bar=None, B_bar=None, C_bar=None, D_bar=None,
                 A_hat=None, B_hat=None, C_hat=None, D_hat=None,
                 G=None, g=None):
        fwd = range(tree.T)
        bwd = range(1, tree.T + 1)
        self.tree = tree
        self.A = _scalar_levels(tree, A, fwd, "A")
        self.B = _scalar_levels(tree, B, fwd, "B")
        self.D = _scalar_levels(tree, D, fwd, "D")
        self.C = _row_levels(tree, C, fwd, "C")
        self.A_bar = _row_levels(tree, A_bar, fwd, "A_bar")
        self.B_bar = _row_levels(tree, B_bar, fwd, "B_bar")
        self.D_bar = _row_levels(tree, D_bar, fwd, "D_bar")
        self.C_bar = _matrix_levels(tree, C_bar, fwd, "C_bar")
        self.A_hat = [None] + _scalar_levels(tree, A_hat, bwd, "A_hat")
        self.B_hat = [None] + _scalar_levels(tree, B_hat, bwd, "B_hat")
        self.D_hat = [None] + _scalar_levels(tree, D_hat, bwd, "D_hat")
        self.C_hat = [None] + _row_levels(tree, C_hat, bwd, "C_hat")
        self.G = _leaf_values(tree, G, "G")
        self.g = _leaf_values(tree, g, "g")

    @classmethod
    def zeros(cls, tree):
        return cls(tree)

    def validate(self):
        """Check finiteness and the structural zero-sum conditions."""
        tree = self.tree
        for name in ("A", "B", "C", "D", "A_bar", "B_bar", "C_bar", "D_bar"):
            for lev in getattr(self, name):
                if not np.isfinite(lev).all():
                    raise NonFiniteInput(f"coefficient {name} has non-finite entries")
        for name in ("A_hat", "B_hat", "C_hat", "D_hat"):
            for lev in getattr(self, name)[1:]:
                if not np.isfinite(lev).all():
                    raise NonFiniteInput(f"coefficient {name} has non-finite entries")
        for name in ("G", "g"):
            if not np.isfinite(getattr(self, name)).all():
                raise NonFiniteInput(f"coefficient {name} has non-finite entries")
        for t in range(tree.T):
            sums = self.C[t].sum(axis=1)
            bad = np.abs(sums) > ZERO_SUM_TOL
            if bad.any():
                raise AssumptionViolation(
                    "C column must sum to zero", tree.node_id(t, int(np.argmax(bad)))
                )
            col_sums = self.C_bar[t].sum(axis=1)  # sum over rows j of C_bar[j, i]
            bad = np.abs(col_sums).max(axis=1) > ZERO_SUM_TOL
            if bad.any():
                raise AssumptionViolation(
                    "every C_bar column must sum to zero",
                    tree.node_id(t, int(np.argmax(bad))),
                )
        for t in range(1, tree.T + 1):
            sums = self.C_hat[t].sum(axis=1)
            bad = np.abs(sums) > ZERO_SUM_TOL
            if bad.any():
                raise AssumptionViolation(
                    "C_hat column must sum to zero", tree.node_id(t, int(np.argmax(bad)))
                )
        bad = np.abs(self.C_hat[tree.T]).max(axis=1) > ZERO_SUM_TOL
        if bad.any():
            raise AssumptionViolation(
                "C_hat must vanish at the horizon",
                tree.node_id(tree.T, int(np.argmax(bad))),
            )
        return self


@dataclass(frozen=True)
class GammaVerdict:
    """Invertibility verdict for the per-node matrix, with condition ratio."""

    node: NodeId
    ratio: float
    invertible: bool


@dataclass(frozen=True)
class SolvabilityCertificate:
    verdicts: tuple

    @property
    def all_invertible(self):
        return all(v.invertible for v in self.verdicts)

    @property
    def singular_nodes(self):
        return tuple(v.node for v in self.verdicts if not v.invertible)

    @property
    def min_ratio(self):
        return min((v.ratio for v in self.verdicts), default=float("nan"))


@dataclass(frozen=True)
class RiccatiData:
    """Backward-recursion output: P, p levels, per-node matrices, verdicts.

    ``P_levels``/``p_levels`` are indexed by absolute time (entries below the
    first solvable level, and entry 0, are None); ``gamma_levels[t]`` stacks
    the depth-t matrices.  When a level contains a singular matrix the
    recursion stops there, with verdicts recorded for that whole level.
    """

    P_levels: tuple
    p_levels: tuple
    gamma_levels: tuple
    certificate: SolvabilityCertificate

    @property
    def complete(self):
        return self.certificate.all_invertible and self.gamma_levels[0] is not None

    def P(self, tree):
        """P as an adapted process over 1..T (requires a complete recursion)."""
        if not self.complete:
            raise SingularCertificate("recursion halted at a singular level")
        return AdaptedProcess(tree, 1, list(self.P_levels[1:]))

    def p(self, tree):
        if not self.complete:
            raise SingularCertificate("recursion halted at a singular level")
        return AdaptedProcess(tree, 1, list(self.p_levels[1:]))


@dataclass(frozen=True)
class ResidualReport:
    forward: float
    backward: float


@dataclass(frozen=True)
class FbsdeSolution:
    """Node-indexed solution triple with its residual report.

    X and Y live on 0..T, Z on 0..T-1 with canonical rows.
    """

    X: AdaptedProcess
    Y: AdaptedProcess
    Z: AdaptedProcess
    residuals: ResidualReport


@dataclass(frozen=True)
class Unsolvable:
    """Certified failure: the nodes whose matrices are singular."""

    singular_nodes: tuple
    riccati: RiccatiData


def _script_level(tree, coeffs, t):
    """Stacked per-branch coefficient objects for every depth-t node.

    Stacking the N branch equations of the forward step turns the scalar
    coefficient k into a column 1 k + (I - 1 P^T) kbar^T; the Z coupling
    becomes an N x N matrix.  Returns (a, b, c, d) with shapes
    (n, N), (n, N), (n, N, N), (n, N).
    """
    Pt = tree.transition[t]
    A, B, D = coeffs.A[t], coeffs.B[t], coeffs.D[t]
    Abar, Bbar, Dbar = coeffs.A_bar[t], coeffs.B_bar[t], coeffs.D_bar[t]
    C, Cbar = coeffs.C[t], coeffs.C_bar[t]
    scr_a = (1.0 + A)[:, None] + Abar - np.einsum("nj,nj->n", Abar, Pt)[:, None]
    scr_b = B[:, None] + Bbar - np.einsum("nj,nj->n", Bbar, Pt)[:, None]
    scr_d = D[:, None] + Dbar - np.einsum("nj,nj->n", Dbar, Pt)[:, None]
    scr_c = (
        C[:, None, :]
        + np.swapaxes(Cbar, 1, 2)
        - np.einsum("nk,njk->nj", Pt, Cbar)[:, None, :]
    )
    return scr_a, scr_b, scr_c, scr_d


def script_coeffs(tree, coeffs, node):
    """Stacked coefficients at a single non-leaf node: (a, b, c, d) columns/matrix."""
    t, idx = _as_depth_index(tree, node)
    if t >= tree.T:
        raise LeafNodeError(f"node at depth {t} is a leaf")
    scr_a, scr_b, scr_c, scr_d = _script_level(tree, coeffs, t)
    return scr_a[idx], scr_b[idx], scr_c[idx], scr_d[idx]


def _coupling_level(tree, coeffs, t, scr_b, scr_c):
    """(b P^T + c): the matrix through which next-step closures feed back."""
    Pt = tree.transition[t]
    return scr_b[:, :, None] * Pt[:, None, :] + scr_c


def _gamma_level(tree, coupling, p_child):
    """I minus the coupling matrix weighted by the child closure slopes."""
    eye = np.eye(tree.N)[None, :, :]
    return eye - coupling * p_child[:, None, :]


def riccati_backward(tree: ScenarioTree, coeffs: LinearCoefficients) -> RiccatiData:
    """Run the backward decoupling recursion with per-node verdicts.

    The recursion needs the depth-t matrices inverted to continue below t;
    it therefore halts at the first level holding a singular matrix, after
    recording verdicts for every node of that level.  Singularity is a
    certificate outcome, not an error.
    """
    coeffs.validate()
    T, N = tree.T, tree.N
    P_levels = [None] * (T + 1)
    p_levels = [None] * (T + 1)
    gamma_levels = [None] * T
    verdicts = []

    P_levels[T] = -coeffs.A_hat[T] + (1.0 - coeffs.B_hat[T]) * coeffs.G
    p_levels[T] = (1.0 - coeffs.B_hat[T]) * coeffs.g - coeffs.D_hat[T]

    for t in range(T - 1, -1, -1):
        n = tree.num_nodes(t)
        scr_a, scr_b, scr_c, scr_d = _script_level(tree, coeffs, t)
        coupling = _coupling_level(tree, coeffs, t, scr_b, scr_c)
        P_child = P_levels[t + 1].reshape(n, N)
        p_child = p_levels[t + 1].reshape(n, N)
        gamma = _gamma_level(tree, coupling, P_child)
        gamma_levels[t] = gamma

        svals = np.linalg.svd(gamma, compute_uv=False)
        smax, smin = svals[:, 0], svals[:, -1]
        ratios = np.where(smax > 0.0, smin / np.where(smax > 0.0, smax, 1.0), 0.0)
        ok = (smax > 0.0) & (ratios > SINGULAR_RATIO)
        for idx in range(n):
            verdicts.append(
                GammaVerdict(tree.node_id(t, idx), float(ratios[idx]), bool(ok[idx]))
            )
        if not ok.all():
            break
        if t >= 1:
            Pt = tree.transition[t]
            theta = (1.0 - coeffs.B_hat[t])[:, None] * Pt - coeffs.C_hat[t]
            v = np.linalg.solve(gamma, scr_a[:, :, None])[:, :, 0]
            P_levels[t] = -coeffs.A_hat[t] + np.einsum(
                "nj,nj,nj->n", theta, P_child, v
            )
            rhs = np.einsum("nij,nj->ni", coupling, p_child) + scr_d
            w = np.linalg.solve(gamma, rhs[:, :, None])[:, :, 0]
            p_levels[t] = (
                np.einsum("nj,nj,nj->n", theta, P_child, w)
                + np.einsum("nj,nj->n", theta, p_child)
                - coeffs.D_hat[t]
            )

    return RiccatiData(
        tuple(P_levels), tuple(p_levels), tuple(gamma_levels),
        SolvabilityCertificate(tuple(verdicts)),
    )


def solve_linear(tree: ScenarioTree, coeffs: LinearCoefficients, x0: float):
    """Solve the coupled linear system; certify failure instead of guessing.

    Returns an FbsdeSolution when every per-node matrix is invertible,
    otherwise an Unsolvable carrying the singular node list.  On success the
    per-branch residuals of both equations are evaluated exhaustively and
    reported.
    """
    if not np.isfinite(x0):
        raise NonFiniteInput(f"x0 = {x0!r}")
    coeffs.validate()
    ric = riccati_backward(tree, coeffs)
    if not ric.certificate.all_invertible:
        return Unsolvable(ric.certificate.singular_nodes, ric)

    T, N = tree.T, tree.N
    X = [np.array([float(x0)])]
    for t in range(T):
        n = tree.num_nodes(t)
        scr_a, scr_b, scr_c, scr_d = _script_level(tree, coeffs, t)
        coupling = _coupling_level(tree, coeffs, t, scr_b, scr_c)
        p_child = ric.p_levels[t + 1].reshape(n, N)
        rhs = (
            scr_a * X[t][:, None]
            + np.einsum("nij,nj->ni", coupling, p_child)
            + scr_d
        )
        u = np.linalg.solve(ric.gamma_levels[t], rhs[:, :, None])[:, :, 0]
        X.append(u.reshape(-1))

    Y = [None] * (T + 1)
    Z = [None] * T
    Y[T] = coeffs.G * X[T] + coeffs.g
    for t in range(T):
        n = tree.num_nodes(t)
        lam = (ric.P_levels[t + 1] * X[t + 1] + ric.p_levels[t + 1]).reshape(n, N)
        Y[t] = np.einsum("nj,nj->n", tree.transition[t], lam)
        Z[t] = lam - lam[:, -1:]

    report = linear_residuals(tree, coeffs, X, Y, Z)
    return FbsdeSolution(
        AdaptedProcess(tree, 0, X),
        AdaptedProcess(tree, 0, Y),
        AdaptedProcess(tree, 0, Z),
        report,
    )


def linear_residuals(tree, coeffs, X, Y, Z) -> ResidualReport:
    """Exhaustive per-branch residuals of both equations.

    Insensitive to the row representative of Z thanks to the validated
    zero-sum conditions.
    """
    X = [np.asarray(X.level(t) if isinstance(X, AdaptedProcess) else X[t], dtype=float) for t in range(tree.T + 1)]
    Y = [np.asarray(Y.level(t) if isinstance(Y, AdaptedProcess) else Y[t], dtype=float) for t in range(tree.T + 1)]
    Z = [np.asarray(Z.level(t) if isinstance(Z, AdaptedProcess) else Z[t], dtype=float) for t in range(tree.T)]
    N = tree.N
    fwd = 0.0
    bwd = 0.0
    for t in range(tree.T):
        n = tree.num_nodes(t)
        Pt = tree.transition[t]
        if Z[t].shape != (n, N):
            raise ShapeMismatch(f"Z level {t} has shape {Z[t].shape}")
        base = (
            X[t] * (1.0 + coeffs.A[t])
            + coeffs.B[t] * Y[t]
            + np.einsum("nj,nj->n", Z[t], coeffs.C[t])
            + coeffs.D[t]
        )
        row = (
            X[t][:, None] * coeffs.A_bar[t]
            + Y[t][:, None] * coeffs.B_bar[t]
            + np.einsum("nj,njk->nk", Z[t], coeffs.C_bar[t])
            + coeffs.D_bar[t]
        )
        pred = base[:, None] + row - np.einsum("nk,nk->n", row, Pt)[:, None]
        fwd = max(fwd, float(np.abs(X[t + 1].reshape(n, N) - pred).max()))

        hat = (
            coeffs.A_hat[t + 1] * X[t + 1]
            + coeffs.B_hat[t + 1] * Y[t + 1]
            + coeffs.D_hat[t + 1]
        )
        if t + 1 < tree.T:
            hat = hat + np.einsum("nj,nj->n", Z[t + 1], coeffs.C_hat[t + 1])
        zm = Z[t] - np.einsum("nj,nj->n", Z[t], Pt)[:, None]
        pred_y = Y[t][:, None] + hat.reshape(n, N) + zm
        bwd = max(bwd, float(np.abs(Y[t + 1].reshape(n, N) - pred_y).max()))
    return ResidualReport(forward=fwd, backward=bwd)


def _extended_contraction_matrix(N):
    """The N x N matrix sending a row to its canonical form (zero last column).

    Columns 1..N-1 are e_j - e_N, the last column is zero, so every column
    sums to zero and row products with increments are unchanged.
    """
    mat = np.zeros((N, N))
    mat[:N - 1, :N - 1] = np.eye(N - 1)
    mat[N - 1, :N - 1] = -1.0
    return mat


def special_coefficients(tree, D=None, D_bar=None, D_hat=None, g=None) -> LinearCoefficients:
    """Coefficients of the self-coupled inhomogeneous form.

    Forward drift -Y, forward increment loading -Z (through the canonical
    contraction), backward drift -X_{t+1}, terminal Y_T = X_T + g, plus the
    supplied inhomogeneities.  ``D_hat`` is indexed by absolute time with
    entry 0 ignored when given as a list.
    """
    if isinstance(D_hat, (list, tuple)) and len(D_hat) == tree.T + 1:
        D_hat = list(D_hat)[1:]
    return LinearCoefficients(
        tree,
        B=-1.0,
        A_hat=-1.0,
        C_bar=-_extended_contraction_matrix(tree.N),
        G=1.0,
        D=D,
        D_bar=D_bar,
        D_hat=D_hat,
        g=g,
    )


def solve_special(tree, D=None, D_bar=None, D_hat=None, g=None, x0=0.0) -> FbsdeSolution:
    """Solve the self-coupled special form; always uniquely solvable.

    The decoupling recursion for this form is deterministic with P > 1 at
    every level, so the per-node matrices are diagonal with entries 1 + P
    and never singular.
    """
    coeffs = special_coefficients(tree, D=D, D_bar=D_bar, D_hat=D_hat, g=g)
    result = solve_linear(tree, coeffs, x0)
    if isinstance(result, Unsolvable):  # pragma: no cover - P > 1 rules this out
        raise SingularCertificate(
            f"special form reported singular nodes {result.singular_nodes}"
        )
    return result


def decoupling_coefficients(tree, coeffs, riccati):
    """Affine maps (slope, offset) with Y_t = slope_t X_t + offset_t nodewise.

    Requires an all-invertible certificate.  At the horizon the maps are the
    terminal (G, g); below, they come from the solved child closures.
    """
    if not riccati.certificate.all_invertible or not riccati.complete:
        raise SingularCertificate(
            f"singular nodes: {riccati.certificate.singular_nodes}"
        )
    T, N = tree.T, tree.N
    slope = [None] * (T + 1)
    offset = [None] * (T + 1)
    slope[T] = coeffs.G.copy()
    offset[T] = coeffs.g.copy()
    for t in range(T):
        n = tree.num_nodes(t)
        Pt = tree.transition[t]
        scr_a, scr_b, scr_c, scr_d = _script_level(tree, coeffs, t)
        coupling = _coupling_level(tree, coeffs, t, scr_b, scr_c)
        gamma = riccati.gamma_levels[t]
        P_child = riccati.P_levels[t + 1].reshape(n, N)
        p_child = riccati.p_levels[t + 1].reshape(n, N)
        v = np.linalg.solve(gamma, scr_a[:, :, None])[:, :, 0]
        slope[t] = np.einsum("nj,nj,nj->n", Pt, P_child, v)
        rhs = np.einsum("nij,nj->ni", coupling, p_child) + scr_d
        w = np.linalg.solve(gamma, rhs[:, :, None])[:, :, 0]
        offset[t] = np.einsum("nj,nj,nj->n", Pt, P_child, w) + np.einsum(
            "nj,nj->n", Pt, p_child
        )
    return AdaptedProcess(tree, 0, slope), AdaptedProcess(tree, 0, offset)
