"""Nonlinear forward-backward solver by homotopy continuation.

The target system is connected to an exactly solvable self-coupled linear
form through a one-parameter family of blends.  Climbing the parameter in
small steps, each level is solved by Picard iteration: the step-sized part
of the nonlinearity is frozen at the previous iterate and folded into the
inhomogeneities of the level below.  The theory guarantees some step size
works but not which, so the step adapts: on a failed level the ladder is
rebuilt with half the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linear
from .errors import (
    AlphaOutOfRange,
    DepthExceeded,
    NoContraction,
    NonFiniteInput,
    NonFiniteIterate,
    ShapeMismatch,
    StepUnderflow,
)
from .linear import FbsdeSolution, ResidualReport
from .martingale import cond_second_moment, tilde_contract
from .tree import AdaptedProcess

#: Hard floor for the continuation step.
STEP_FLOOR = 2.0**-20

#: A level aborts early once increments blow past this multiple of their
#: starting size; the remaining budget cannot recover from there.
DIVERGENCE_CAP = 1e6

#: Ladders deeper than this are refused: each level nests a full solve of
#: the one below, so hundreds of levels are computationally out of reach
#: anyway, and the recursion must stay within the interpreter's limits.
MAX_LEVELS = 512


@dataclass(frozen=True)
class NonlinearProblem:
    """Coefficient functions of the coupled nonlinear system.

    ``drift(t, node, x, y, z_tilde)`` and ``generator(t, node, x, y,
    z_tilde)`` return scalars, ``diffusion(t, node, x, y, z_tilde)`` a row of
    length N, ``terminal(node, x)`` a scalar.  All consume the contraction
    ``z_tilde`` (length N-1), never a raw row, so equivalent rows are
    indistinguishable by construction.  At the horizon the generator is
    called with ``z_tilde=None`` and must not use it.  ``lipschitz`` and
    ``monotone`` are optional known constants, kept for diagnostics.
    """

    drift: Callable
    diffusion: Callable
    generator: Callable
    terminal: Callable
    lipschitz: Optional[float] = None
    monotone: Optional[float] = None


@dataclass(frozen=True)
class ContinuationOptions:
    """Runtime knobs replacing the nonconstructive step-size constant."""

    delta: float = 0.25
    tolerance: float = 1e-10
    max_iterations: int = 50
    # each halving doubles the ladder and the nested solve count grows with
    # its depth, so the budget is deliberately small
    max_halvings: int = 4
    # hard cap on base solves per ladder attempt; levels whose contraction is
    # marginal would otherwise burn the per-level budget multiplicatively
    max_inner_solves: int = 20000
    mode: str = "continuation"

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")


@dataclass
class LevelRecord:
    """One Picard run at one level: its increment norms and outcome."""

    alpha: float
    norms: list
    converged: bool


@dataclass
class SolveStats:
    """Per-level iteration records plus global counters."""

    records: list = field(default_factory=list)
    halvings: int = 0
    inner_solves: int = 0

    def level_records(self, alpha, tol=1e-12):
        return [r for r in self.records if abs(r.alpha - alpha) <= tol]

    @property
    def iterations(self):
        return sum(len(r.norms) for r in self.records)

    @property
    def levels(self):
        return sorted({round(r.alpha, 12) for r in self.records})


@dataclass
class Inhomogeneity:
    """Per-node additive terms entering each equation of a level solve.

    ``b0``/``sigma0`` are indexed by time 0..T-1, ``f0`` by absolute time
    with entry 0 unused (it enters at times 1..T), ``h0`` by leaf.
    """

    b0: list
    sigma0: list
    f0: list
    h0: np.ndarray

    @classmethod
    def zeros(cls, tree):
        return cls(
            b0=[np.zeros(tree.num_nodes(t)) for t in range(tree.T)],
            sigma0=[np.zeros((tree.num_nodes(t), tree.N)) for t in range(tree.T)],
            f0=[None] + [np.zeros(tree.num_nodes(t)) for t in range(1, tree.T + 1)],
            h0=np.zeros(tree.num_nodes(tree.T)),
        )


def blend(problem: NonlinearProblem, alpha: float) -> NonlinearProblem:
    """Interpolate between the self-coupled linear form (0) and the problem (1).

    At alpha = 0 the coefficients become drift -y, diffusion the row whose
    contraction is -z_tilde with last column zero, generator x, terminal x.
    alpha = 1 returns the problem unchanged.
    """
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha = {alpha!r}")
    if alpha == 1.0:
        return problem
    return _blended(problem, alpha, None, None)


def _blended(problem, alpha, inhom, tree):
    """Blend with optional per-node inhomogeneities folded in."""
    a = float(alpha)

    def b0_at(t, node):
        return inhom.b0[t][node] if inhom is not None else 0.0

    def s0_at(t, node):
        return inhom.sigma0[t][node] if inhom is not None else 0.0

    def f0_at(t, node):
        return inhom.f0[t][node] if inhom is not None else 0.0

    def h0_at(node):
        return inhom.h0[node] if inhom is not None else 0.0

    def drift(t, node, x, y, zt):
        return a * problem.drift(t, node, x, y, zt) + (1.0 - a) * (-y) + b0_at(t, node)

    def diffusion(t, node, x, y, zt):
        linear_part = -np.concatenate([np.asarray(zt, dtype=float), [0.0]])
        return (
            a * np.asarray(problem.diffusion(t, node, x, y, zt), dtype=float)
            + (1.0 - a) * linear_part
            + s0_at(t, node)
        )

    def generator(t, node, x, y, zt):
        return a * problem.generator(t, node, x, y, zt) + (1.0 - a) * x + f0_at(t, node)

    def terminal(node, x):
        return a * problem.terminal(node, x) + (1.0 - a) * x + h0_at(node)

    return NonlinearProblem(
        drift=drift,
        diffusion=diffusion,
        generator=generator,
        terminal=terminal,
        lipschitz=problem.lipschitz,
        monotone=problem.monotone,
    )


@dataclass
class _Iterate:
    """Solution triple as plain level arrays (Z rows canonical)."""

    X: list
    Y: list
    Z: list

    @classmethod
    def zeros(cls, tree):
        return cls(
            X=[np.zeros(tree.num_nodes(t)) for t in range(tree.T + 1)],
            Y=[np.zeros(tree.num_nodes(t)) for t in range(tree.T + 1)],
            Z=[np.zeros((tree.num_nodes(t), tree.N)) for t in range(tree.T)],
        )

    @classmethod
    def from_solution(cls, tree, sol: FbsdeSolution):
        return cls(
            X=[sol.X.level(t) for t in range(tree.T + 1)],
            Y=[sol.Y.level(t) for t in range(tree.T + 1)],
            Z=[sol.Z.level(t) for t in range(tree.T)],
        )

    def finite(self):
        return (
            all(np.isfinite(lev).all() for lev in self.X)
            and all(np.isfinite(lev).all() for lev in self.Y)
            and all(np.isfinite(lev).all() for lev in self.Z)
        )


def _as_iterate(tree, value):
    """Coerce an initial iterate: None, a solution, or (X, Y, Z) level lists."""
    if value is None or isinstance(value, _Iterate):
        return value
    if isinstance(value, FbsdeSolution):
        return _Iterate.from_solution(tree, value)
    X, Y, Z = value
    return _Iterate(
        X=[np.asarray(lev, dtype=float) for lev in X],
        Y=[np.asarray(lev, dtype=float) for lev in Y],
        Z=[np.asarray(lev, dtype=float) for lev in Z],
    )


def increment_norm_sq(tree, prev: _Iterate, cur: _Iterate) -> float:
    """E sum_t (|x| + |y| + |z_tilde|)^2 of the difference over times 0..T-1."""
    total = 0.0
    for t in range(tree.T):
        dx = np.abs(cur.X[t] - prev.X[t])
        dy = np.abs(cur.Y[t] - prev.Y[t])
        dz = np.linalg.norm(tilde_contract(cur.Z[t]) - tilde_contract(prev.Z[t]), axis=-1)
        total += float(np.dot(tree.level_probs(t), (dx + dy + dz) ** 2))
    return total


def _compose(tree, problem, inhom, prev: _Iterate, step):
    """Fold the step-sized nonlinearity, frozen at ``prev``, into new inhomogeneities."""
    b0 = []
    s0 = []
    f0 = [None]
    for t in range(tree.T):
        zt = tilde_contract(prev.Z[t])
        n = tree.num_nodes(t)
        bt = np.empty(n)
        st = np.empty((n, tree.N))
        for node in range(n):
            x, y, z = float(prev.X[t][node]), float(prev.Y[t][node]), zt[node]
            bt[node] = y + problem.drift(t, node, x, y, z)
            st[node] = prev.Z[t][node] + np.asarray(
                problem.diffusion(t, node, x, y, z), dtype=float
            )
        b0.append(inhom.b0[t] + step * bt)
        s0.append(inhom.sigma0[t] + step * st)
    for t in range(1, tree.T + 1):
        n = tree.num_nodes(t)
        ft = np.empty(n)
        for node in range(n):
            x, y = float(prev.X[t][node]), float(prev.Y[t][node])
            if t == tree.T:
                val = problem.generator(t, node, x, y, None)
            else:
                val = problem.generator(t, node, x, y, tilde_contract(prev.Z[t])[node])
            ft[node] = -x + val
        f0.append(inhom.f0[t] + step * ft)
    hT = np.array(
        [-float(x) + problem.terminal(node, float(x)) for node, x in enumerate(prev.X[tree.T])]
    )
    return Inhomogeneity(b0=b0, sigma0=s0, f0=f0, h0=inhom.h0 + step * hT)


class _Ladder:
    """Level solvers from the linear base up to the target, sharing stats.

    Each level's solve closes over the one below it; within a level, solves
    warm-start from that level's previous result (the first call starts from
    zero), which keeps the nested iteration count near-linear instead of
    multiplicative.
    """

    def __init__(self, tree, problem, n_levels, opts, max_depth=None):
        if n_levels > MAX_LEVELS:
            raise StepUnderflow(
                f"a ladder of {n_levels} levels exceeds the {MAX_LEVELS}-level cap"
            )
        self.tree = tree
        self.problem = problem
        self.n_levels = n_levels
        self.alphas = [k / n_levels for k in range(n_levels + 1)]
        self.alphas[-1] = 1.0
        self.step = 1.0 / n_levels
        self.opts = opts
        self.stats = SolveStats()
        self.max_depth = n_levels if max_depth is None else max_depth
        self._warm = {}

    def solve(self, k, inhom, x0, initial=None):
        if k > self.max_depth:
            raise DepthExceeded(f"level {k} exceeds depth budget {self.max_depth}")
        if k == 0:
            if self.stats.inner_solves >= self.opts.max_inner_solves:
                raise NoContraction(
                    f"ladder exhausted its {self.opts.max_inner_solves} inner-solve budget",
                    alpha=0.0,
                    norms=[],
                )
            sol = linear.solve_special(
                self.tree,
                D=inhom.b0,
                D_bar=inhom.sigma0,
                D_hat=[None] + [-f for f in inhom.f0[1:]],
                g=inhom.h0,
                x0=x0,
            )
            self.stats.inner_solves += 1
            return _Iterate.from_solution(self.tree, sol)

        alpha = self.alphas[k]
        tol = self.opts.tolerance
        prev = initial if initial is not None else self._warm.get(k) or _Iterate.zeros(self.tree)
        norms = []
        record = LevelRecord(alpha=alpha, norms=norms, converged=False)
        self.stats.records.append(record)
        cur = prev
        for _ in range(self.opts.max_iterations):
            composed = _compose(self.tree, self.problem, inhom, prev, self.step)
            cur = self.solve(k - 1, composed, x0)
            if not cur.finite():
                raise NonFiniteIterate(f"non-finite iterate at level {alpha:g}", iterate=cur)
            d = increment_norm_sq(self.tree, prev, cur)
            norms.append(d)
            if not math.isfinite(d):
                raise NonFiniteIterate(f"non-finite increment at level {alpha:g}", iterate=cur)
            if d <= tol * tol:
                eff = _blended(self.problem, alpha, inhom, self.tree)
                fwd, bwd = nonlinear_residual(self.tree, eff, (cur.X, cur.Y, cur.Z))
                if max(fwd, bwd) <= tol:
                    record.converged = True
                    self._warm[k] = cur
                    return cur
            if norms and d > DIVERGENCE_CAP * max(norms[0], 1.0):
                break
            prev = cur
        raise NoContraction(
            f"level {alpha:g} did not contract within {self.opts.max_iterations} iterations",
            alpha=alpha,
            norms=norms,
            iterate=cur,
        )


def solve_at_level(tree, problem, alpha, inhom, x0, opts=None, depth=None, initial_iterate=None):
    """Solve one blended level with given inhomogeneities.

    ``alpha`` must be a multiple (within rounding) of the ladder step implied
    by ``opts.delta``.  Returns (solution, stats).
    """
    opts = opts or ContinuationOptions()
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha = {alpha!r}")
    if inhom is None:
        inhom = Inhomogeneity.zeros(tree)
    n_levels = max(1, math.ceil(round(1.0 / opts.delta, 9)))
    k = round(alpha * n_levels)
    if abs(alpha - k / n_levels) > 1e-9:
        raise AlphaOutOfRange(
            f"alpha {alpha!r} is not a multiple of the ladder step {1.0 / n_levels!r}"
        )
    ladder = _Ladder(tree, problem, n_levels, opts, max_depth=depth)
    iterate = ladder.solve(k, inhom, x0, initial=_as_iterate(tree, initial_iterate))
    return _finish(tree, problem if k == n_levels else None, iterate, ladder, alpha, inhom), ladder.stats


def _finish(tree, original, iterate, ladder, alpha, inhom):
    if original is not None and alpha == 1.0 and _is_zero_inhom(inhom):
        eff = original
    else:
        eff = _blended(ladder.problem, alpha, inhom, tree)
    fwd, bwd = nonlinear_residual(tree, eff, (iterate.X, iterate.Y, iterate.Z))
    return FbsdeSolution(
        AdaptedProcess(tree, 0, iterate.X),
        AdaptedProcess(tree, 0, iterate.Y),
        AdaptedProcess(tree, 0, iterate.Z),
        ResidualReport(forward=fwd, backward=bwd),
    )


def _is_zero_inhom(inhom):
    return (
        all(not lev.any() for lev in inhom.b0)
        and all(not lev.any() for lev in inhom.sigma0)
        and all(not lev.any() for lev in inhom.f0[1:])
        and not inhom.h0.any()
    )


def solve_continuation(tree, problem, x0, opts=None, initial_iterate=None):
    """Solve the target system by climbing the blend ladder.

    Starts with step ``opts.delta``; when a level fails to contract the
    ladder is rebuilt with half the step, up to ``max_halvings`` times and
    never below the hard floor.  Returns (solution, stats); the solution's
    residuals are those of the original system.
    """
    opts = opts or ContinuationOptions()
    if not np.isfinite(x0):
        raise NonFiniteInput(f"x0 = {x0!r}")
    delta = opts.delta
    halvings = 0
    best_res = math.inf
    best = None
    while True:
        if delta < STEP_FLOOR:
            raise StepUnderflow(
                f"step fell below {STEP_FLOOR:g} without convergence",
                best_residual=None if best is None else best_res,
                best_solution=best,
            )
        n_levels = max(1, math.ceil(round(1.0 / delta, 9)))
        ladder = _Ladder(tree, problem, n_levels, opts)
        try:
            iterate = ladder.solve(n_levels, Inhomogeneity.zeros(tree), x0,
                                   initial=_as_iterate(tree, initial_iterate))
            ladder.stats.halvings = halvings
            sol = _finish(tree, problem, iterate, ladder, 1.0, Inhomogeneity.zeros(tree))
            return sol, ladder.stats
        except (NoContraction, NonFiniteIterate) as err:
            it = getattr(err, "iterate", None)
            if it is not None and it.finite():
                fwd, bwd = nonlinear_residual(tree, problem, (it.X, it.Y, it.Z))
                if max(fwd, bwd) < best_res:
                    best_res = max(fwd, bwd)
                    best = _finish(tree, problem, it, ladder, 1.0, Inhomogeneity.zeros(tree))
            halvings += 1
            if halvings > opts.max_halvings:
                raise StepUnderflow(
                    f"no contraction after {opts.max_halvings} halvings",
                    best_residual=None if best is None else best_res,
                    best_solution=best,
                ) from err
            delta /= 2.0


def solve_flat_picard(tree, problem, x0, opts=None, initial_iterate=None):
    """One-level iteration with the whole nonlinearity frozen each sweep.

    Equivalent to a single ladder level with step 1.  Fast when it works;
    carries no guarantee, so a failure suggests continuation mode.
    """
    opts = opts or ContinuationOptions()
    if not np.isfinite(x0):
        raise NonFiniteInput(f"x0 = {x0!r}")
    ladder = _Ladder(tree, problem, 1, opts)
    try:
        iterate = ladder.solve(1, Inhomogeneity.zeros(tree), x0,
                               initial=_as_iterate(tree, initial_iterate))
    except NoContraction as err:
        raise NoContraction(
            str(err) + "; consider continuation mode",
            alpha=err.alpha,
            norms=err.norms,
            iterate=err.iterate,
        ) from err
    sol = _finish(tree, problem, iterate, ladder, 1.0, Inhomogeneity.zeros(tree))
    return sol, ladder.stats


def nonlinear_residual(tree, problem, solution):
    """Exhaustive per-branch defects of both equations: (forward, backward).

    ``solution`` is an FbsdeSolution or an (X, Y, Z) triple of level lists.
    """
    if isinstance(solution, FbsdeSolution):
        X = [solution.X.level(t) for t in range(tree.T + 1)]
        Y = [solution.Y.level(t) for t in range(tree.T + 1)]
        Z = [solution.Z.level(t) for t in range(tree.T)]
    else:
        X, Y, Z = solution
    for t in range(tree.T):
        if np.shape(Z[t]) != (tree.num_nodes(t), tree.N):
            raise ShapeMismatch(f"Z level {t} has shape {np.shape(Z[t])}")

    fwd = 0.0
    bwd = 0.0
    eye = np.eye(tree.N)
    zt_levels = [tilde_contract(np.asarray(z, dtype=float)) for z in Z]
    for t in range(tree.T):
        Pt = tree.transition[t]
        zt = zt_levels[t]
        for node in range(tree.num_nodes(t)):
            x, y, z = float(X[t][node]), float(Y[t][node]), zt[node]
            drift = problem.drift(t, node, x, y, z)
            vol = np.asarray(problem.diffusion(t, node, x, y, z), dtype=float)
            zrow = np.asarray(Z[t][node], dtype=float)
            for i in range(tree.N):
                child = node * tree.N + i
                incr = eye[i] - Pt[node]
                fwd = max(fwd, abs(float(X[t + 1][child]) - x - drift - float(vol @ incr)))
                if t + 1 == tree.T:
                    f_val = problem.generator(
                        t + 1, child, float(X[t + 1][child]), float(Y[t + 1][child]), None
                    )
                else:
                    f_val = problem.generator(
                        t + 1, child, float(X[t + 1][child]), float(Y[t + 1][child]),
                        zt_levels[t + 1][child],
                    )
                bwd = max(
                    bwd,
                    abs(
                        float(Y[t + 1][child]) - y + f_val - float(zrow @ incr)
                    ),
                )
    return fwd, bwd


@dataclass(frozen=True)
class ClauseEstimate:
    """Sampled bound for one assumption clause, with its worst witness."""

    value: float
    witness: tuple


@dataclass(frozen=True)
class AssumptionReport:
    """Sampled Lipschitz and one-sided estimates for the coefficient map.

    ``lipschitz`` bounds |A(t, u) - A(t, u')| / |u - u'| over interior
    times for the stacked map A = (-generator, drift, diffusion * second
    moment); the monotone clauses must come out negative (terminal map
    positive) for the verdict to hold.
    """

    lipschitz: Optional[ClauseEstimate]
    lipschitz_terminal: ClauseEstimate
    lipschitz_generator_T: ClauseEstimate
    monotone_interior: Optional[ClauseEstimate]
    monotone_initial: ClauseEstimate
    monotone_generator_T: ClauseEstimate
    monotone_terminal: ClauseEstimate
    satisfied: bool
    violations: tuple


def _stacked_map(problem, tree, t, node, lam, second_moment):
    x, y, zt = lam
    f = problem.generator(t, node, x, y, zt)
    b = problem.drift(t, node, x, y, zt)
    srow = np.asarray(problem.diffusion(t, node, x, y, zt), dtype=float)
    return -f, b, srow @ second_moment


def _lam_norm(dx, dy, dz):
    return abs(dx) + abs(dy) + float(np.linalg.norm(dz))


def check_assumptions(tree, problem, sample_count=200, rng_seed=0):
    """Estimate the Lipschitz and monotonicity clauses on random samples.

    Pairs mix independent draws with single-coordinate probes so sharp
    directional constants are actually seen.  The time-0 clause pairs share
    the x component, matching the pinned initial state.  Returns an
    AssumptionReport; ``satisfied`` means no sampled violation.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    rng = np.random.default_rng(rng_seed)
    N, T = tree.N, tree.T

    def draw():
        return (
            float(rng.uniform(-2, 2)),
            float(rng.uniform(-2, 2)),
            rng.uniform(-2, 2, size=N - 1),
        )

    def pair(k):
        lam = draw()
        if k % 2 == 0:
            return lam, draw()
        # single-coordinate probe, so sharp directional constants are seen
        other = [lam[0], lam[1], lam[2].copy()]
        coord = int(rng.integers(0, N + 1))
        bump = float(rng.uniform(0.1, 1.0))
        if coord == 0:
            other[0] += bump
        elif coord == 1:
            other[1] += bump
        else:
            other[2][coord - 2] += bump
        return lam, (other[0], other[1], other[2])

    lip = ClauseEstimate(-np.inf, ())
    mono_int = ClauseEstimate(-np.inf, ())
    have_interior = T >= 2
    lip_h = ClauseEstimate(-np.inf, ())
    lip_fT = ClauseEstimate(-np.inf, ())
    mono_0 = ClauseEstimate(-np.inf, ())
    mono_fT = ClauseEstimate(-np.inf, ())
    mono_h = ClauseEstimate(np.inf, ())

    second_moments = {}

    def moment(t, node):
        if (t, node) not in second_moments:
            second_moments[(t, node)] = cond_second_moment(tree, (t, node))
        return second_moments[(t, node)]

    for k in range(sample_count):
        lam, lam2 = pair(k)
        dx, dy = lam[0] - lam2[0], lam[1] - lam2[1]
        dz = lam[2] - lam2[2]
        norm = _lam_norm(dx, dy, dz)

        if have_interior:
            t = int(rng.integers(1, T))
            node = int(rng.integers(0, tree.num_nodes(t)))
            a1 = _stacked_map(problem, tree, t, node, lam, moment(t, node))
            a2 = _stacked_map(problem, tree, t, node, lam2, moment(t, node))
            df, db, ds = a1[0] - a2[0], a1[1] - a2[1], a1[2] - a2[2]
            if norm > 0:
                val = (_lam_norm(df, db, ds)) / norm
                if val > lip.value:
                    lip = ClauseEstimate(val, (t, node, lam, lam2))
                # inner product pairs -generator with x, drift with y and the
                # weighted diffusion row with the raw row difference; rows are
                # canonical so the row difference is (dz, 0).
                dz_row = np.concatenate([dz, [0.0]])
                inner = df * dx + db * dy + float(ds @ dz_row)
                val = inner / norm**2
                if val > mono_int.value:
                    mono_int = ClauseEstimate(val, (t, node, lam, lam2))

        # time-0 clause: x is pinned by the initial condition
        lam0 = (lam[0], lam[1], lam[2])
        lam0b = (lam[0], lam2[1], lam2[2])
        m0 = moment(0, 0)
        b1 = problem.drift(0, 0, *lam0)
        b2 = problem.drift(0, 0, *lam0b)
        s1 = np.asarray(problem.diffusion(0, 0, *lam0), dtype=float) @ m0
        s2 = np.asarray(problem.diffusion(0, 0, *lam0b), dtype=float) @ m0
        dz_row = np.concatenate([lam0[2] - lam0b[2], [0.0]])
        denom = (lam0[1] - lam0b[1]) ** 2 + float(np.dot(lam0[2] - lam0b[2], lam0[2] - lam0b[2]))
        if denom > 0:
            val = ((b1 - b2) * (lam0[1] - lam0b[1]) + float((s1 - s2) @ dz_row)) / denom
            if val > mono_0.value:
                mono_0 = ClauseEstimate(val, (0, 0, lam0, lam0b))

        # horizon clauses: generator without a row argument, terminal map
        leaf = int(rng.integers(0, tree.num_nodes(T)))
        f1 = problem.generator(T, leaf, lam[0], lam[1], None)
        f2 = problem.generator(T, leaf, lam2[0], lam2[1], None)
        if abs(dx) + abs(dy) > 0:
            val = abs(f1 - f2) / (abs(dx) + abs(dy))
            if val > lip_fT.value:
                lip_fT = ClauseEstimate(val, (T, leaf, lam, lam2))
        if dx != 0.0:
            val = (-(f1 - f2) * dx) / dx**2
            if val > mono_fT.value:
                mono_fT = ClauseEstimate(val, (T, leaf, lam, lam2))
            h1 = problem.terminal(leaf, lam[0])
            h2 = problem.terminal(leaf, lam2[0])
            val = abs(h1 - h2) / abs(dx)
            if val > lip_h.value:
                lip_h = ClauseEstimate(val, (T, leaf, lam[0], lam2[0]))
            val = ((h1 - h2) * dx) / dx**2
            if val < mono_h.value:
                mono_h = ClauseEstimate(val, (T, leaf, lam[0], lam2[0]))

    violations = []
    if have_interior and mono_int.value >= 0.0:
        violations.append(("interior monotonicity", mono_int))
    if mono_0.value >= 0.0:
        violations.append(("time-0 monotonicity", mono_0))
    if mono_fT.value >= 0.0:
        violations.append(("horizon generator monotonicity", mono_fT))
    if mono_h.value <= 0.0:
        violations.append(("terminal map monotonicity", mono_h))
    return AssumptionReport(
        lipschitz=lip if have_interior else None,
        lipschitz_terminal=lip_h,
        lipschitz_generator_T=lip_fT,
        monotone_interior=mono_int if have_interior else None,
        monotone_initial=mono_0,
        monotone_generator_T=mono_fT,
        monotone_terminal=mono_h,
        satisfied=not violations,
        violations=tuple(violations),
    )


def linear_special_problem(tree) -> NonlinearProblem:
    """The self-coupled linear form as a nonlinear problem (the blend's fixed point)."""

    def drift(t, node, x, y, zt):
        return -y

    def diffusion(t, node, x, y, zt):
        return -np.concatenate([np.asarray(zt, dtype=float), [0.0]])

    def generator(t, node, x, y, zt):
        return x

    def terminal(node, x):
        return x

    return NonlinearProblem(drift, diffusion, generator, terminal, lipschitz=1.0, monotone=1.0)


def demo_monotone_problem(tree, scale=0.1) -> NonlinearProblem:
    """Monotone demo family: small smooth perturbations of the linear form.

    drift -y + scale*tanh(x), diffusion -z (canonical row), generator
    x + scale*tanh(y) at interior times and x at the horizon, terminal x.
    Satisfies the sampled assumption clauses for scale < 1.
    """

    def drift(t, node, x, y, zt):
        return -y + scale * math.tanh(x)

    def diffusion(t, node, x, y, zt):
        return -np.concatenate([np.asarray(zt, dtype=float), [0.0]])

    def generator(t, node, x, y, zt):
        if t == tree.T:
            return x
        return x + scale * math.tanh(y)

    def terminal(node, x):
        return x

    return NonlinearProblem(drift, diffusion, generator, terminal,
                            lipschitz=1.0 + scale, monotone=1.0 - scale)


def as_nonlinear_problem(tree, coeffs) -> NonlinearProblem:
    """Wrap linear coefficients as a nonlinear problem (for cross-validation)."""

    def drift(t, node, x, y, zt):
        z_row = np.concatenate([np.asarray(zt, dtype=float), [0.0]])
        return (
            coeffs.A[t][node] * x
            + coeffs.B[t][node] * y
            + float(z_row @ coeffs.C[t][node])
            + coeffs.D[t][node]
        )

    def diffusion(t, node, x, y, zt):
        z_row = np.concatenate([np.asarray(zt, dtype=float), [0.0]])
        return (
            x * coeffs.A_bar[t][node]
            + y * coeffs.B_bar[t][node]
            + z_row @ coeffs.C_bar[t][node]
            + coeffs.D_bar[t][node]
        )

    def generator(t, node, x, y, zt):
        val = (
            coeffs.A_hat[t][node] * x
            + coeffs.B_hat[t][node] * y
            + coeffs.D_hat[t][node]
        )
        if t < tree.T:
            z_row = np.concatenate([np.asarray(zt, dtype=float), [0.0]])
            val += float(z_row @ coeffs.C_hat[t][node])
        return -val

    def terminal(node, x):
        return coeffs.G[node] * x + coeffs.g[node]

    return NonlinearProblem(drift, diffusion, generator, terminal)
