"""Hermitian semidefinite programs with affine trace constraints, solved by
real-symmetric embedding through a pluggable cone-solver backend.

A problem is

    maximize    sum_v Tr(A_v X_v) + c0
    subject to  sum_v Tr(B_iv X_v)  (<= | == | >=)  c_i
                X_v Hermitian PSD

All coefficient matrices must be Hermitian, which keeps every trace real.
The embedding maps a Hermitian X to the real symmetric

    T(X) = [[Re X, -Im X], [Im X, Re X]]

for which Tr(T(A) T(X)) = 2 Tr(A X).  Data are embedded with doubled
right-hand sides, any real-feasible solution S is mapped back through the
structured block average ((S11 + S22)/2, (S21 - S12)/2), and the mapped
point is Hermitian PSD with unchanged objective/constraint values because
T(A) commutes with the symplectic conjugation J S J^T.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import sparse

__all__ = [
    "OPTIMAL",
    "INFEASIBLE",
    "FAILURE",
    "HermitianVariable",
    "TraceConstraint",
    "SdpProblem",
    "RealSdpProblem",
    "SdpSolution",
    "SolutionAccuracy",
    "embed_matrix",
    "extract_hermitian",
    "embed_real",
    "ClarabelBackend",
    "CvxpyBackend",
    "default_backend",
    "solve",
    "dump_problem",
    "load_problem",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
FAILURE = "numerical_failure"

_SENSES = ("<=", ">=", "==")


@dataclass(frozen=True)
class HermitianVariable:
    label: str
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("variable dimension must be >= 1")


@dataclass
class TraceConstraint:
    """sum_v Tr(terms[v] X_v)  sense  rhs."""

    terms: dict[str, np.ndarray]
    sense: str
    rhs: float
    name: str = ""

    def __post_init__(self):
        if self.sense not in _SENSES:
            raise ValueError(f"sense must be one of {_SENSES}")


def hermitian_part(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    asym = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if asym > tol * (1.0 + np.max(np.abs(m))):
        raise ValueError(f"coefficient matrix is not Hermitian (asymmetry {asym:.3e})")
    return (m + m.conj().T) / 2.0


@dataclass
class SdpProblem:
    variables: list[HermitianVariable]
    objective: dict[str, np.ndarray]
    objective_const: float = 0.0
    constraints: list[TraceConstraint] = field(default_factory=list)

    def variable(self, label: str) -> HermitianVariable:
        for v in self.variables:
            if v.label == label:
                return v
        raise KeyError(label)

    def with_constraints(self, extra: list[TraceConstraint]) -> "SdpProblem":
        return SdpProblem(self.variables, self.objective, self.objective_const,
                          list(self.constraints) + list(extra))

    def validated(self) -> "SdpProblem":
        """Return a copy with coefficients checked and exactly hermitized."""
        labels = {v.label: v.dim for v in self.variables}
        if len(labels) != len(self.variables):
            raise ValueError("duplicate variable labels")

        def clean(terms: dict) -> dict:
            out = {}
            for lbl, m in terms.items():
                if lbl not in labels:
                    raise KeyError(f"unknown variable {lbl!r}")
                m = hermitian_part(m)
                if m.shape != (labels[lbl], labels[lbl]):
                    raise ValueError(f"coefficient for {lbl!r} has shape {m.shape}")
                out[lbl] = m
            return out

        return SdpProblem(
            list(self.variables),
            clean(self.objective),
            float(self.objective_const),
            [replace(c, terms=clean(c.terms)) for c in self.constraints],
        )


@dataclass
class RealSdpProblem:
    """The embedded problem: same structure, real symmetric coefficients of
    doubled dimension, right-hand sides doubled.  The embedded objective value
    equals twice the complex one (constant excluded)."""

    variables: list[HermitianVariable]      # dim here is the embedded (doubled) dim
    objective: dict[str, np.ndarray]
    constraints: list[TraceConstraint]


def embed_matrix(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    return np.block([[a.real, -a.imag], [a.imag, a.real]])


def extract_hermitian(s: np.ndarray) -> np.ndarray:
    """Structured block average of a real symmetric 2n x 2n matrix; for any
    feasible embedded point this is Hermitian PSD with the same traces."""
    n = s.shape[0] // 2
    p, r = s[:n, :n], s[n:, n:]
    q = s[:n, n:]
    return (p + r) / 2.0 + 1j * (q.T - q) / 2.0


def embed_real(problem: SdpProblem) -> RealSdpProblem:
    problem = problem.validated()
    variables = [HermitianVariable(v.label, 2 * v.dim) for v in problem.variables]
    objective = {lbl: embed_matrix(m) for lbl, m in problem.objective.items()}
    constraints = [
        TraceConstraint({lbl: embed_matrix(m) for lbl, m in c.terms.items()},
                        c.sense, 2.0 * c.rhs, c.name)
        for c in problem.constraints
    ]
    return RealSdpProblem(variables, objective, constraints)


# --- scaled-triangular (svec) packing used by the Clarabel backend ----------

@lru_cache(maxsize=None)
def _svec_index(n: int):
    rows, cols, scale = [], [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
            scale.append(1.0 if i == j else np.sqrt(2.0))
    return np.array(rows), np.array(cols), np.array(scale)


def _svec(m: np.ndarray) -> np.ndarray:
    rows, cols, scale = _svec_index(m.shape[0])
    return m[rows, cols] * scale


def _smat(x: np.ndarray, n: int) -> np.ndarray:
    rows, cols, scale = _svec_index(n)
    m = np.zeros((n, n))
    vals = x / scale
    m[rows, cols] = vals
    m[cols, rows] = vals
    return m


@dataclass
class BackendResult:
    status: str
    matrices: dict[str, np.ndarray] | None = None   # real symmetric solutions
    objective: float | None = None                  # embedded objective (maximized)
    iterations: int = 0
    detail: str = ""


class ClarabelBackend:
    """Default backend: drives the Clarabel interior-point solver through its
    native cone API.

    The trace-constrained problem is posed in its Lagrangian dual form, which
    has one scalar variable per trace constraint and one LMI per matrix
    variable:

        min  c^T y   s.t.   sum_i y_i B_iv - A_v  PSD  for every v,
                            y_i >= 0 on inequality rows.

    That keeps the interior-point system tiny (the matrix variables never
    enter the KKT system directly); the primal matrices are recovered from
    the LMI cone duals, which coincide with the X_v at optimality.
    """

    name = "clarabel"

    def __init__(self, tol: float = 1e-8, max_iter: int = 200):
        self.tol = tol
        self.max_iter = max_iter

    def solve(self, rp: RealSdpProblem, tighten: bool = False) -> BackendResult:
        import clarabel

        dims = [v.dim for v in rp.variables]
        labels = [v.label for v in rp.variables]

        # normalize senses:  ">=" rows become "<=" with negated data
        rows = []
        for c in rp.constraints:
            sign = -1.0 if c.sense == ">=" else 1.0
            rows.append((
                {lbl: sign * m for lbl, m in c.terms.items()},
                sign * c.rhs,
                c.sense == "==",
            ))
        m_con = len(rows)
        if m_con == 0:
            # max <A, S>, S PSD and unconstrained: zero unless A has positive part
            for lbl in labels:
                a = rp.objective.get(lbl)
                if a is not None and a.size and np.linalg.eigvalsh(a)[-1] > 1e-12:
                    return BackendResult(FAILURE, detail="unbounded (no constraints)")
            return BackendResult(OPTIMAL, {lbl: np.zeros((d, d)) for lbl, d in zip(labels, dims)},
                                 0.0, 0, "trivial")

        ineq_idx = [i for i, r in enumerate(rows) if not r[2]]
        c_vec = np.array([r[1] for r in rows])

        blocks = []
        rhs = []
        cones = []
        if ineq_idx:
            sign_block = np.zeros((len(ineq_idx), m_con))
            for r, i in enumerate(ineq_idx):
                sign_block[r, i] = -1.0
            blocks.append(sign_block)
            rhs.append(np.zeros(len(ineq_idx)))
            cones.append(clarabel.NonnegativeConeT(len(ineq_idx)))
        zero = {d: np.zeros(d * (d + 1) // 2) for d in set(dims)}
        for lbl, d in zip(labels, dims):
            cols = [
                -_svec(terms[lbl]) if lbl in terms else zero[d]
                for terms, _, _ in rows
            ]
            blocks.append(np.column_stack(cols))
            a_v = rp.objective.get(lbl)
            rhs.append(-_svec(a_v) if a_v is not None else zero[d].copy())
            cones.append(clarabel.PSDTriangleConeT(d))

        a = sparse.csc_matrix(np.vstack(blocks))
        b = np.concatenate(rhs)
        p = sparse.csc_matrix((m_con, m_con))

        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.max_iter = self.max_iter * (2 if tighten else 1)
        scale = 0.1 if tighten else 1.0
        settings.tol_gap_abs = self.tol * scale
        settings.tol_gap_rel = self.tol * scale
        settings.tol_feas = self.tol * scale

        solver = clarabel.DefaultSolver(p, c_vec, a, b, cones, settings)
        sol = solver.solve()
        status = str(sol.status)
        if "DualInfeasible" in status:
            # the dual is unbounded, so the trace-constrained problem is infeasible
            return BackendResult(INFEASIBLE, detail=status, iterations=sol.iterations)
        if "PrimalInfeasible" in status:
            return BackendResult(FAILURE, detail=f"unbounded or ill-posed ({status})",
                                 iterations=sol.iterations)
        if not status.endswith("Solved"):
            return BackendResult(FAILURE, detail=status, iterations=sol.iterations)
        z = np.asarray(sol.z)
        offset = len(ineq_idx)
        matrices = {}
        for lbl, d in zip(labels, dims):
            span = d * (d + 1) // 2
            matrices[lbl] = _smat(z[offset:offset + span], d)
            offset += span
        return BackendResult(OPTIMAL, matrices, float(sol.obj_val), sol.iterations, status)


class CvxpyBackend:
    """Reference backend built on cvxpy; slower, used to cross-check the
    native cone mapping."""

    name = "cvxpy"

    def __init__(self, solver: str = "CLARABEL"):
        self.solver = solver

    def solve(self, rp: RealSdpProblem, tighten: bool = False) -> BackendResult:
        import cvxpy as cp

        svars = {v.label: cp.Variable((v.dim, v.dim), PSD=True) for v in rp.variables}
        obj = sum(cp.sum(cp.multiply(m, svars[lbl])) for lbl, m in rp.objective.items())
        cons = []
        for c in rp.constraints:
            expr = sum(cp.sum(cp.multiply(m, svars[lbl])) for lbl, m in c.terms.items())
            if c.sense == "<=":
                cons.append(expr <= c.rhs)
            elif c.sense == ">=":
                cons.append(expr >= c.rhs)
            else:
                cons.append(expr == c.rhs)
        prob = cp.Problem(cp.Maximize(obj), cons)
        try:
            prob.solve(solver=self.solver)
        except cp.error.SolverError as exc:
            return BackendResult(FAILURE, detail=str(exc))
        if prob.status in ("optimal", "optimal_inaccurate"):
            mats = {lbl: np.asarray(v.value) for lbl, v in svars.items()}
            return BackendResult(OPTIMAL, mats, float(prob.value), 0, prob.status)
        if prob.status in ("infeasible", "infeasible_inaccurate"):
            return BackendResult(INFEASIBLE, detail=prob.status)
        return BackendResult(FAILURE, detail=prob.status)


_DEFAULT_BACKEND: ClarabelBackend | None = None


def default_backend() -> ClarabelBackend:
    global _DEFAULT_BACKEND
    if _DEFAULT_BACKEND is None:
        _DEFAULT_BACKEND = ClarabelBackend()
    return _DEFAULT_BACKEND


@dataclass
class SolutionAccuracy:
    max_constraint_violation: float   # normalized by each constraint's scale
    min_eigenvalue: float             # most negative eigenvalue, relative
    hermiticity_error: float
    objective_gap: float              # recomputed vs solver value, relative


@dataclass
class SdpSolution:
    status: str
    matrices: dict[str, np.ndarray] | None
    objective: float | None
    accuracy: SolutionAccuracy | None
    backend: str
    iterations: int = 0
    detail: str = ""


def _constraint_scale(c: TraceConstraint) -> float:
    s = abs(c.rhs)
    for m in c.terms.values():
        if m.size:
            s = max(s, float(np.max(np.abs(m))))
    return s if s > 0 else 1.0


def _rescale(problem: SdpProblem) -> tuple[SdpProblem, float]:
    """Normalize constraint rows and the objective to unit max-magnitude.
    Exact and invertible; the variable space is untouched."""
    obj_scale = 1.0
    for m in problem.objective.values():
        if m.size:
            obj_scale = max(obj_scale, float(np.max(np.abs(m))))
    objective = {lbl: m / obj_scale for lbl, m in problem.objective.items()}
    constraints = []
    for c in problem.constraints:
        s = _constraint_scale(c)
        constraints.append(TraceConstraint(
            {lbl: m / s for lbl, m in c.terms.items()}, c.sense, c.rhs / s, c.name))
    return SdpProblem(problem.variables, objective, 0.0, constraints), obj_scale


def _evaluate(terms: dict, matrices: dict) -> float:
    total = 0.0
    for lbl, m in terms.items():
        total += float(np.sum(m * matrices[lbl].conj()).real)   # Tr(M X) for Hermitian M, X
    return total


def solve(problem: SdpProblem, backend=None, residual_tol: float = 1e-6) -> SdpSolution:
    """Solve through the embedding.  Returns a typed status; never a silent
    wrong answer: an 'optimal' solution has normalized constraint residuals
    <= residual_tol, otherwise the status is demoted to numerical failure.

    A backend numerical failure is retried once with tightened settings.
    """
    problem = problem.validated()
    backend = backend or default_backend()
    scaled, obj_scale = _rescale(problem)
    embedded = embed_real(scaled)

    last: SdpSolution | None = None
    for tighten in (False, True):
        result = backend.solve(embedded, tighten=tighten)
        if result.status == INFEASIBLE:
            return SdpSolution(INFEASIBLE, None, None, None, backend.name,
                               result.iterations, result.detail)
        if result.status == FAILURE:
            last = SdpSolution(FAILURE, None, None, None, backend.name,
                               result.iterations, result.detail)
            continue

        matrices = {}
        herm_err = 0.0
        min_eig = 0.0
        for v in problem.variables:
            x = extract_hermitian(result.matrices[v.label])
            herm_err = max(herm_err, float(np.max(np.abs(x - x.conj().T))) if x.size else 0.0)
            x = (x + x.conj().T) / 2.0
            w = np.linalg.eigvalsh(x)
            min_eig = min(min_eig, float(w[0] / (1.0 + abs(w[-1]))))
            matrices[v.label] = x

        violation = 0.0
        for c in problem.constraints:
            s = _constraint_scale(c)
            lhs = _evaluate(c.terms, matrices)
            if c.sense == "<=":
                err = max(0.0, lhs - c.rhs)
            elif c.sense == ">=":
                err = max(0.0, c.rhs - lhs)
            else:
                err = abs(lhs - c.rhs)
            violation = max(violation, err / s)

        objective = _evaluate(problem.objective, matrices) + problem.objective_const
        solver_value = result.objective * obj_scale / 2.0 + problem.objective_const
        gap = abs(objective - solver_value) / max(1.0, abs(objective))
        accuracy = SolutionAccuracy(violation, min_eig, herm_err, gap)

        if violation <= residual_tol:
            return SdpSolution(OPTIMAL, matrices, objective, accuracy, backend.name,
                               result.iterations, result.detail)
        last = SdpSolution(
            FAILURE, matrices, objective, accuracy, backend.name, result.iterations,
            f"constraint residual {violation:.3e} above {residual_tol:.1e} ({result.detail})")
    return last


# --- problem dump for offline cross-checking --------------------------------

def _coo(m: np.ndarray) -> list:
    out = []
    for (i, j), val in np.ndenumerate(m):
        if val != 0:
            out.append([int(i), int(j), float(val.real), float(val.imag)])
    return out


def _from_coo(entries: list, dim: int) -> np.ndarray:
    m = np.zeros((dim, dim), dtype=complex)
    for i, j, re, im in entries:
        m[i, j] = re + 1j * im
    return m


def dump_problem(problem: SdpProblem, path) -> None:
    """Write the assembled problem as JSON with sparse (i, j, re, im)
    triplets, for cross-checking against external modeling tools."""
    doc = {
        "format": "irsnoma-sdp",
        "version": 1,
        "variables": [{"label": v.label, "dim": v.dim} for v in problem.variables],
        "objective": {lbl: _coo(np.asarray(m, dtype=complex))
                      for lbl, m in problem.objective.items()},
        "objective_const": problem.objective_const,
        "constraints": [
            {
                "terms": {lbl: _coo(np.asarray(m, dtype=complex)) for lbl, m in c.terms.items()},
                "sense": c.sense,
                "rhs": c.rhs,
                "name": c.name,
            }
            for c in problem.constraints
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_problem(path) -> SdpProblem:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "irsnoma-sdp":
        raise ValueError(f"{path} is not a problem dump")
    variables = [HermitianVariable(v["label"], v["dim"]) for v in doc["variables"]]
    dims = {v.label: v.dim for v in variables}
    objective = {lbl: _from_coo(entries, dims[lbl]) for lbl, entries in doc["objective"].items()}
    constraints = [
        TraceConstraint(
            {lbl: _from_coo(entries, dims[lbl]) for lbl, entries in c["terms"].items()},
            c["sense"], c["rhs"], c.get("name", ""))
        for c in doc["constraints"]
    ]
    return SdpProblem(variables, objective, doc.get("objective_const", 0.0), constraints)
