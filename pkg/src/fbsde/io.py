"""Problem-file schema, binding to solver inputs, and report rendering.

Problem files are UTF-8 JSON.  Coefficients may be constants, per-node
arrays (flat, level by level, lexicographic by path within a level), or
expression strings over t and w (plus the state variables for nonlinear
coefficients), where w is the node's most recent branch index (0 at the
root).  Reports are emitted with sorted keys so identical inputs give
byte-identical output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import linear as linear_mod
from .bsde import BsdeProblem, bsde_residual
from .errors import SchemaError
from .expressions import parse_expression
from .linear import FbsdeSolution, LinearCoefficients, special_coefficients
from .martingale import norm_constants, tilde_contract
from .nonlinear import NonlinearProblem, nonlinear_residual
from .tree import ScenarioTree, build_tree

KINDS = ("bsde", "linear", "special", "nonlinear")


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-10
    delta: float = 0.25
    max_iterations: int = 50
    mode: str = "continuation"
    seed: int = 0


@dataclass(frozen=True)
class LoadedProblem:
    kind: str
    tree: ScenarioTree
    x0: Optional[float]
    data: object
    options: SolverOptions


def _branch_of(tree, t, node):
    """Most recent branch index of a node, 0 at the root."""
    return 0 if t == 0 else node % tree.N + 1


def _require(doc, field, path):
    if field not in doc:
        raise SchemaError(f"{path}.{field}", "missing required field")
    return doc[field]


def _bind_expression(source, allowed, path):
    try:
        expr = parse_expression(source)
    except Exception as err:
        raise SchemaError(path, f"bad expression: {err}") from err
    extra = expr.variables - allowed
    if extra:
        raise SchemaError(path, f"variables {sorted(extra)} not allowed here")
    return expr


def _cell(tree, value, t, node, allowed, path):
    if isinstance(value, str):
        expr = _bind_expression(value, allowed, path)
        return expr.evaluate({"t": float(t), "w": float(_branch_of(tree, t, node))})
    if isinstance(value, (int, float)):
        return float(value)
    raise SchemaError(path, f"expected number or expression, got {type(value).__name__}")


def _scalar_coefficient(tree, value, times, path):
    """Scalar-per-node field: constant, expression, or flat per-node list."""
    allowed = {"t", "w"}
    if isinstance(value, (int, float)):
        return [np.full(tree.num_nodes(t), float(value)) for t in times]
    if isinstance(value, str):
        expr = _bind_expression(value, allowed, path)
        return [
            np.array(
                [
                    expr.evaluate({"t": float(t), "w": float(_branch_of(tree, t, n))})
                    for n in range(tree.num_nodes(t))
                ]
            )
            for t in times
        ]
    if isinstance(value, list):
        total = sum(tree.num_nodes(t) for t in times)
        if len(value) != total:
            raise SchemaError(path, f"expected {total} per-node values, got {len(value)}")
        out = []
        pos = 0
        for t in times:
            n = tree.num_nodes(t)
            out.append(
                np.array([_cell(tree, v, t, i, allowed, path) for i, v in enumerate(value[pos : pos + n])])
            )
            pos += n
        return out
    raise SchemaError(path, f"unsupported value of type {type(value).__name__}")


def _row_coefficient(tree, value, times, path):
    """Row-per-node field: constant row of N entries or flat list of rows."""
    allowed = {"t", "w"}
    if isinstance(value, list) and len(value) == tree.N and not any(
        isinstance(v, list) for v in value
    ):
        return [
            np.array(
                [
                    [_cell(tree, v, t, n, allowed, path) for v in value]
                    for n in range(tree.num_nodes(t))
                ]
            )
            for t in times
        ]
    if isinstance(value, list):
        total = sum(tree.num_nodes(t) for t in times)
        if len(value) != total:
            raise SchemaError(path, f"expected {total} per-node rows, got {len(value)}")
        out = []
        pos = 0
        for t in times:
            n = tree.num_nodes(t)
            rows = []
            for i, row in enumerate(value[pos : pos + n]):
                if not isinstance(row, list) or len(row) != tree.N:
                    raise SchemaError(path, f"row {pos + i} must have {tree.N} entries")
                rows.append([_cell(tree, v, t, i, allowed, path) for v in row])
            out.append(np.array(rows))
            pos += n
        return out
    raise SchemaError(path, f"unsupported value of type {type(value).__name__}")


def _matrix_coefficient(tree, value, times, path):
    """Matrix-per-node field: constant N x N nest or flat list of matrices."""
    allowed = {"t", "w"}
    N = tree.N

    def as_matrix(mat, t, node, where):
        if not isinstance(mat, list) or len(mat) != N or not all(
            isinstance(r, list) and len(r) == N for r in mat
        ):
            raise SchemaError(where, f"expected an {N}x{N} matrix")
        return [[_cell(tree, v, t, node, allowed, where) for v in row] for row in mat]

    if (
        isinstance(value, list)
        and len(value) == N
        and all(isinstance(r, list) and len(r) == N and not any(isinstance(v, list) for v in r) for r in value)
    ):
        return [
            np.array([as_matrix(value, t, n, path) for n in range(tree.num_nodes(t))])
            for t in times
        ]
    if isinstance(value, list):
        total = sum(tree.num_nodes(t) for t in times)
        if len(value) != total:
            raise SchemaError(path, f"expected {total} per-node matrices, got {len(value)}")
        out = []
        pos = 0
        for t in times:
            n = tree.num_nodes(t)
            out.append(
                np.array(
                    [as_matrix(value[pos + i], t, i, path) for i in range(n)]
                )
            )
            pos += n
        return out
    raise SchemaError(path, f"unsupported value of type {type(value).__name__}")


def _leaf_coefficient(tree, value, path):
    got = _scalar_coefficient(tree, value, [tree.T], path)
    return got[0]


def _bind_tree(doc):
    block = _require(doc, "tree", "")
    N = _require(block, "N", "tree")
    T = _require(block, "T", "tree")
    transition = block.get("transition", "uniform")
    try:
        return build_tree(N, T, transition)
    except Exception as err:
        raise SchemaError("tree", str(err)) from err


def _bind_options(doc):
    raw = doc.get("options", {})
    if not isinstance(raw, dict):
        raise SchemaError("options", "must be an object")
    known = {"tolerance", "delta", "max_iter", "max_iterations", "mode", "seed"}
    extra = set(raw) - known
    if extra:
        raise SchemaError("options", f"unknown keys {sorted(extra)}")
    kwargs = {}
    if "tolerance" in raw:
        kwargs["tolerance"] = float(raw["tolerance"])
    if "delta" in raw:
        kwargs["delta"] = float(raw["delta"])
    if "max_iter" in raw:
        kwargs["max_iterations"] = int(raw["max_iter"])
    if "max_iterations" in raw:
        kwargs["max_iterations"] = int(raw["max_iterations"])
    if "mode" in raw:
        if raw["mode"] not in ("continuation", "picard"):
            raise SchemaError("options.mode", f"unknown mode {raw['mode']!r}")
        kwargs["mode"] = raw["mode"]
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    return SolverOptions(**kwargs)


_LINEAR_FIELDS = {
    "A": ("scalar", "fwd"),
    "B": ("scalar", "fwd"),
    "C": ("row", "fwd"),
    "D": ("scalar", "fwd"),
    "A_bar": ("row", "fwd"),
    "B_bar": ("row", "fwd"),
    "C_bar": ("matrix", "fwd"),
    "D_bar": ("row", "fwd"),
    "A_hat": ("scalar", "bwd"),
    "B_hat": ("scalar", "bwd"),
    "C_hat": ("row", "bwd"),
    "D_hat": ("scalar", "bwd"),
    "G": ("leaf", None),
    "g": ("leaf", None),
}


def _bind_linear(tree, doc):
    raw = doc.get("coefficients", {})
    extra = set(raw) - set(_LINEAR_FIELDS)
    if extra:
        raise SchemaError("coefficients", f"unknown fields {sorted(extra)}")
    kwargs = {}
    for name, (shape, rng) in _LINEAR_FIELDS.items():
        if name not in raw:
            continue
        path = f"coefficients.{name}"
        times = range(tree.T) if rng == "fwd" else range(1, tree.T + 1)
        if shape == "scalar":
            kwargs[name] = _scalar_coefficient(tree, raw[name], times, path)
        elif shape == "row":
            kwargs[name] = _row_coefficient(tree, raw[name], times, path)
        elif shape == "matrix":
            kwargs[name] = _matrix_coefficient(tree, raw[name], times, path)
        else:
            kwargs[name] = _leaf_coefficient(tree, raw[name], path)
    coeffs = LinearCoefficients(tree, **kwargs)
    coeffs.validate()
    return coeffs


def _bind_special(tree, doc):
    raw = doc.get("coefficients", {})
    extra = set(raw) - {"D", "D_bar", "D_hat", "g"}
    if extra:
        raise SchemaError("coefficients", f"unknown fields {sorted(extra)}")
    data = {
        "D": _scalar_coefficient(tree, raw["D"], range(tree.T), "coefficients.D")
        if "D" in raw
        else None,
        "D_bar": _row_coefficient(tree, raw["D_bar"], range(tree.T), "coefficients.D_bar")
        if "D_bar" in raw
        else None,
        "D_hat": _scalar_coefficient(
            tree, raw["D_hat"], range(1, tree.T + 1), "coefficients.D_hat"
        )
        if "D_hat" in raw
        else None,
        "g": _leaf_coefficient(tree, raw["g"], "coefficients.g") if "g" in raw else None,
    }
    # validate eagerly so schema errors surface at load time
    special_coefficients(tree, **data).validate()
    return data


_STATE_VARS = {"t", "x", "y", "w"}


def _z_vars(tree):
    return {f"z{i}" for i in range(1, tree.N)}


def _bind_nonlinear(tree, doc):
    raw = _require(doc, "coefficients", "")
    for field in ("b", "sigma", "f", "h"):
        _require(raw, field, "coefficients")
    extra = set(raw) - {"b", "sigma", "f", "h", "f_terminal"}
    if extra:
        raise SchemaError("coefficients", f"unknown fields {sorted(extra)}")
    zv = _z_vars(tree)
    b_expr = _bind_expression(raw["b"], _STATE_VARS | zv, "coefficients.b")
    if not isinstance(raw["sigma"], list) or len(raw["sigma"]) != tree.N:
        raise SchemaError("coefficients.sigma", f"expected {tree.N} expressions")
    s_exprs = [
        _bind_expression(s, _STATE_VARS | zv, f"coefficients.sigma[{i}]")
        for i, s in enumerate(raw["sigma"])
    ]
    f_expr = _bind_expression(raw["f"], _STATE_VARS | zv, "coefficients.f")
    h_expr = _bind_expression(raw["h"], {"t", "x", "w"}, "coefficients.h")
    if "f_terminal" in raw:
        fT_expr = _bind_expression(raw["f_terminal"], _STATE_VARS, "coefficients.f_terminal")
    elif f_expr.variables & zv:
        raise SchemaError(
            "coefficients.f_terminal",
            "required because f uses contraction variables",
        )
    else:
        fT_expr = f_expr

    def env(t, node, x, y, zt):
        e = {"t": float(t), "w": float(_branch_of(tree, t, node)), "x": x, "y": y}
        if zt is not None:
            for i in range(tree.N - 1):
                e[f"z{i + 1}"] = float(zt[i])
        return e

    def drift(t, node, x, y, zt):
        return b_expr.evaluate(env(t, node, x, y, zt))

    def diffusion(t, node, x, y, zt):
        e = env(t, node, x, y, zt)
        return np.array([s.evaluate(e) for s in s_exprs])

    def generator(t, node, x, y, zt):
        if t == tree.T:
            return fT_expr.evaluate(env(t, node, x, y, None))
        return f_expr.evaluate(env(t, node, x, y, zt))

    def terminal(node, x):
        return h_expr.evaluate(
            {"t": float(tree.T), "w": float(_branch_of(tree, tree.T, node)), "x": x}
        )

    return NonlinearProblem(drift, diffusion, generator, terminal)


def _bind_bsde(tree, doc):
    terminal = _require(doc, "terminal", "")
    if not isinstance(terminal, list) or len(terminal) != tree.num_nodes(tree.T):
        raise SchemaError("terminal", f"expected {tree.num_nodes(tree.T)} leaf values")
    eta = np.array([float(v) for v in terminal])
    raw = doc.get("coefficients", {})
    extra = set(raw) - {"f", "f_terminal"}
    if extra:
        raise SchemaError("coefficients", f"unknown fields {sorted(extra)}")
    zv = _z_vars(tree)
    f_expr = (
        _bind_expression(raw["f"], {"t", "y", "w"} | zv, "coefficients.f")
        if "f" in raw
        else None
    )
    if "f_terminal" in raw:
        fT_expr = _bind_expression(
            raw["f_terminal"], {"t", "y", "w"}, "coefficients.f_terminal"
        )
    elif f_expr is not None and f_expr.variables & zv:
        raise SchemaError(
            "coefficients.f_terminal",
            "required because f uses contraction variables",
        )
    else:
        fT_expr = f_expr

    def generator(t, node, y, zt):
        e = {"t": float(t), "w": float(_branch_of(tree, t, node)), "y": y}
        for i in range(tree.N - 1):
            e[f"z{i + 1}"] = float(zt[i])
        return f_expr.evaluate(e)

    def terminal_generator(node, y):
        e = {"t": float(tree.T), "w": float(_branch_of(tree, tree.T, node)), "y": y}
        return fT_expr.evaluate(e)

    return BsdeProblem(
        terminal=eta,
        generator=generator if f_expr is not None else None,
        terminal_generator=terminal_generator if fT_expr is not None else None,
    )


def bind_problem(doc) -> LoadedProblem:
    """Validate a problem document and bind it to solver inputs."""
    if not isinstance(doc, dict):
        raise SchemaError("", "problem document must be a JSON object")
    kind = _require(doc, "kind", "")
    if kind not in KINDS:
        raise SchemaError("kind", f"expected one of {KINDS}, got {kind!r}")
    tree = _bind_tree(doc)
    options = _bind_options(doc)
    x0 = None
    if kind != "bsde":
        x0 = float(_require(doc, "x0", ""))
    if kind == "linear":
        data = _bind_linear(tree, doc)
    elif kind == "special":
        data = _bind_special(tree, doc)
    elif kind == "nonlinear":
        data = _bind_nonlinear(tree, doc)
    else:
        data = _bind_bsde(tree, doc)
    return LoadedProblem(kind=kind, tree=tree, x0=x0, data=data, options=options)


def load_problem(path) -> LoadedProblem:
    """Load, validate, and bind a JSON problem file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise SchemaError(str(path), f"invalid JSON: {err}") from err
    return bind_problem(doc)


# ---------------------------------------------------------------------------
# report payloads


def _levels_list(levels):
    return [np.asarray(lev).tolist() for lev in levels]


def solution_payload(tree, solution) -> dict:
    """Solution block: X (null for backward-only runs), Y, canonical Z rows
    and their contractions, level by level."""
    if isinstance(solution, FbsdeSolution):
        X = [solution.X.level(t) for t in range(tree.T + 1)]
        Y = [solution.Y.level(t) for t in range(tree.T + 1)]
        Z = [solution.Z.level(t) for t in range(tree.T)]
    else:
        Y, Z = solution
        X = None
        Y = [np.asarray(Y.level(t) if hasattr(Y, "level") else Y[t]) for t in range(tree.T + 1)]
        Z = [np.asarray(Z.level(t) if hasattr(Z, "level") else Z[t]) for t in range(tree.T)]
    return {
        "X": None if X is None else _levels_list(X),
        "Y": _levels_list(Y),
        "Z_canonical": _levels_list(Z),
        "Z_tilde": _levels_list([tilde_contract(z) for z in Z]),
    }


def certificate_payload(tree, riccati) -> dict:
    cert = riccati.certificate
    return {
        "all_invertible": bool(cert.all_invertible),
        "singular_nodes": [
            {"t": n.depth, "path": list(n.path)} for n in cert.singular_nodes
        ],
        "min_ratio": None if not cert.verdicts else float(cert.min_ratio),
        "P_levels": [
            None if lev is None else np.asarray(lev).tolist()
            for lev in riccati.P_levels[1:]
        ],
        "p_levels": [
            None if lev is None else np.asarray(lev).tolist()
            for lev in riccati.p_levels[1:]
        ],
    }


def stats_payload(stats) -> dict:
    if stats is None:
        return {"levels": 0, "iterations": 0, "halvings": 0, "inner_solves": 1}
    return {
        "levels": len(stats.levels),
        "iterations": int(stats.iterations),
        "halvings": int(stats.halvings),
        "inner_solves": int(stats.inner_solves),
    }


def constants_payload(tree) -> dict:
    consts = norm_constants(tree)
    return {"L_lower": consts.lower, "L_upper": consts.upper}


def render_json(report) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def render_csv(tree, solution_block) -> str:
    """One row per node: t, path, X, Y, Z_1..Z_N (empty where undefined)."""
    N, T = tree.N, tree.T
    header = ["t", "path", "X", "Y"] + [f"Z_{i + 1}" for i in range(N)]
    lines = [",".join(header)]
    X = solution_block.get("X")
    Y = solution_block["Y"]
    Z = solution_block["Z_canonical"]
    for t in range(T + 1):
        for node in range(tree.num_nodes(t)):
            path = str(tree.node_id(t, node)) if t else ""
            x_val = "" if X is None else repr(X[t][node])
            cells = [str(t), path, x_val, repr(Y[t][node])]
            if t < T:
                cells += [repr(v) for v in Z[t][node]]
            else:
                cells += [""] * N
            lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def verify_report(loaded: LoadedProblem, report: dict) -> dict:
    """Recompute residuals from a report's solution block alone.

    Round-trips exactly: JSON floats reload bit-identically, so the result
    matches the reported residuals.
    """
    tree = loaded.tree
    block = report["solution"]
    Y = [np.array(lev, dtype=float) for lev in block["Y"]]
    Z = [np.array(lev, dtype=float) for lev in block["Z_canonical"]]
    if loaded.kind == "bsde":
        return {"backward": bsde_residual(tree, loaded.data, Y, Z)}
    X = [np.array(lev, dtype=float) for lev in block["X"]]
    if loaded.kind == "nonlinear":
        fwd, bwd = nonlinear_residual(tree, loaded.data, (X, Y, Z))
        return {"forward": fwd, "backward": bwd}
    coeffs = (
        loaded.data
        if loaded.kind == "linear"
        else special_coefficients(tree, **loaded.data)
    )
    rep = linear_mod.linear_residuals(tree, coeffs, X, Y, Z)
    return {"forward": rep.forward, "backward": rep.backward}
