"""Sequential rank-one tightening for PSD variables of an SDP.

Each tracked variable X gets a linear anchor constraint

    u^H X u >= m * Tr(X)

where u is the principal eigenvector of the previous accepted iterate and m
ratchets toward 1.  Solving with m enforced certifies the eigenvalue ratio
lambda_max(X)/Tr(X) >= m.  On an infeasible tightening, the step size backs
off by a fixed divisor and the previous anchor is kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sdp

__all__ = [
    "DegenerateVariable",
    "SrocrConfig",
    "TrackedVariable",
    "SrocrState",
    "rank_ratio",
    "principal_eigpair",
    "srocr_run",
]

# traces below this are treated as the zero matrix (rank 0 <= 1)
DEGENERATE_TRACE = 1e-12


class DegenerateVariable(ValueError):
    """The matrix trace is too small for an eigenvalue ratio to mean anything."""


def rank_ratio(x: np.ndarray) -> float:
    """lambda_max(X) / Tr(X), in [0, 1]; equals 1 iff X is rank one."""
    x = np.asarray(x, dtype=complex)
    tr = float(np.trace(x).real)
    if tr <= 1e-14:
        raise DegenerateVariable(f"trace {tr:.3e} too small for a rank ratio")
    lam = float(np.linalg.eigvalsh(x)[-1])
    return float(np.clip(lam / tr, 0.0, 1.0))


def principal_eigpair(x: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and unit eigenvector, with the phase fixed so the
    largest-magnitude entry is real positive."""
    x = np.asarray(x, dtype=complex)
    w, v = np.linalg.eigh((x + x.conj().T) / 2.0)
    u = v[:, -1]
    k = int(np.argmax(np.abs(u)))
    if np.abs(u[k]) > 0:
        u = u * np.exp(-1j * np.angle(u[k]))
    return float(w[-1]), u


@dataclass(frozen=True)
class SrocrConfig:
    rank_threshold: float = 0.99
    max_iters: int = 50
    backoff_divisor: float = 3.0
    initial_step_cap: float = 0.1
    step_underflow: float = 1e-12

    def __post_init__(self):
        if not 0.9 < self.rank_threshold <= 1.0:
            raise ValueError("rank_threshold must lie in (0.9, 1]")
        if self.backoff_divisor <= 1.0:
            raise ValueError("backoff_divisor must exceed 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class TrackedVariable:
    label: str
    m: float = 0.0
    delta: float = 0.0
    delta0: float = 0.0
    anchor: np.ndarray | None = None
    ratio: float = 0.0
    degenerate: bool = False

    @property
    def satisfied(self) -> bool:
        return self.degenerate or self.ratio >= 1.0


@dataclass
class SrocrState:
    tracked: dict[str, TrackedVariable]
    history: list[dict] = field(default_factory=list)
    iterations: int = 0
    n_solves: int = 0
    rank_not_reached: bool = False

    def ratios(self) -> dict[str, float]:
        return {lbl: t.ratio for lbl, t in self.tracked.items()}


def _refresh(tracked: dict[str, TrackedVariable], matrices: dict) -> None:
    for t in tracked.values():
        x = matrices[t.label]
        tr = float(np.trace(x).real)
        if tr <= DEGENERATE_TRACE:
            t.degenerate = True
            t.ratio = 1.0
            t.anchor = None
            continue
        t.degenerate = False
        lam, u = principal_eigpair(x)
        t.ratio = float(np.clip(lam / tr, 0.0, 1.0))
        t.anchor = u


def _anchor_constraints(tracked: dict[str, TrackedVariable], dims: dict) -> list:
    cons = []
    for t in tracked.values():
        if t.degenerate:
            continue
        coeff = np.outer(t.anchor, t.anchor.conj()) - t.m * np.eye(dims[t.label])
        cons.append(sdp.TraceConstraint({t.label: coeff}, ">=", 0.0, f"anchor:{t.label}"))
    return cons


def srocr_run(base_problem: sdp.SdpProblem, tracked_labels, config: SrocrConfig | None = None,
              backend=None) -> tuple[sdp.SdpSolution, SrocrState]:
    """Run the tightening loop on ``base_problem`` (the relaxation, solved
    first as-is) until every tracked variable reaches the rank threshold.

    Returns the last accepted solution and the loop state; if the threshold
    could not be certified within the iteration/step budget the state carries
    ``rank_not_reached`` and the solution is the most-tightened accepted
    iterate.  A non-optimal relaxation status is returned unchanged for the
    caller to handle.
    """
    config = config or SrocrConfig()
    tracked_labels = list(tracked_labels)
    dims = {v.label: v.dim for v in base_problem.variables}
    for lbl in tracked_labels:
        if lbl not in dims:
            raise KeyError(f"tracked variable {lbl!r} not in problem")

    state = SrocrState(tracked={lbl: TrackedVariable(lbl) for lbl in tracked_labels})
    sol = sdp.solve(base_problem, backend)
    state.n_solves += 1
    if sol.status != sdp.OPTIMAL:
        state.rank_not_reached = True
        return sol, state

    _refresh(state.tracked, sol.matrices)
    thr = config.rank_threshold

    def certified() -> bool:
        return all(t.degenerate or t.ratio >= thr for t in state.tracked.values())

    def m_target(t: TrackedVariable) -> float:
        # aim no higher than the certification threshold: enforcing more than
        # thr buys nothing and risks needless infeasibility backoffs
        m = min(1.0, t.ratio + t.delta)
        if m > thr:
            m = max(thr, t.ratio)
        return m

    for t in state.tracked.values():
        if not t.degenerate:
            t.delta0 = min(config.initial_step_cap, max(1.0 - t.ratio, 0.0))
            t.delta = t.delta0
            t.m = m_target(t)

    if certified():
        state.iterations = 1
        state.history.append({"iteration": 0, "accepted": True,
                              "objective": sol.objective, **_row(state)})
        return sol, state

    for it in range(config.max_iters):
        state.iterations = it + 1
        aug = base_problem.with_constraints(_anchor_constraints(state.tracked, dims))
        attempt = sdp.solve(aug, backend)
        state.n_solves += 1
        if attempt.status == sdp.OPTIMAL:
            sol = attempt
            _refresh(state.tracked, sol.matrices)
            enforced_ok = all(t.degenerate or t.m >= thr for t in state.tracked.values())
            state.history.append({"iteration": it + 1, "accepted": True,
                                  "objective": sol.objective, **_row(state)})
            if enforced_ok or certified():
                return sol, state
            for t in state.tracked.values():
                if not t.degenerate:
                    t.delta = t.delta0
                    t.m = m_target(t)
        else:
            # infeasible (or surfaced failure): shrink the step, keep anchors
            underflow = False
            for t in state.tracked.values():
                if not t.degenerate:
                    t.delta = t.delta / config.backoff_divisor
                    t.m = m_target(t)
                    if t.delta < config.step_underflow:
                        underflow = True
            state.history.append({"iteration": it + 1, "accepted": False,
                                  "objective": None, **_row(state)})
            if underflow:
                break

    state.rank_not_reached = not certified()
    return sol, state


def _row(state: SrocrState) -> dict:
    return {
        "m": {lbl: t.m for lbl, t in state.tracked.items()},
        "delta": {lbl: t.delta for lbl, t in state.tracked.items()},
        "ratio": {lbl: t.ratio for lbl, t in state.tracked.items()},
    }
