"""Joint transmit/reflective beamforming pipeline.

Maximizes the near-user unicast rate subject to the multicast-rate, transmit
power, and illumination constraints via a fractional-programming outer loop:
the ratio objective is replaced by U - q*M, alternating optimization splits
each parametric problem into a transmit-covariance SDP and a lifted
reflection SDP, sequential rank-one tightening certifies eigenvalue ratios,
and eigen-decomposition plus an exact power-reallocation step recovers the
final beamformers.

All solves run on noise-normalized data (channels scaled so the near-user
noise power is 1) for conditioning; the transformation is exact and the
returned beamformers/rates are in the caller's original units.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import sdp
from .model import (
    BeamformingSolution,
    ChannelSet,
    DimensionMismatch,
    FeasibilityReport,
    InvalidConfig,
    RateBreakdown,
    ReflectVector,
    SystemConfig,
    check_feasibility,
    effective_channel,
    rate_breakdown,
)
from .srocr import SrocrConfig, principal_eigpair, rank_ratio, srocr_run

__all__ = [
    "InfeasibleInstance",
    "SolveFailure",
    "DinkelbachConfig",
    "SubproblemMatrices",
    "OuterIteration",
    "SolveReport",
    "AlternatingState",
    "gamma_bar",
    "subproblem_matrices",
    "build_transmit_subproblem",
    "build_reflect_subproblem",
    "recover_rank_one",
    "ao_step",
    "dinkelbach_solve",
]

_INIT_STREAM = 977   # substream id for the reflection-phase initializer


class InfeasibleInstance(RuntimeError):
    """No beamforming configuration satisfies the constraints.

    ``constraint`` names the violated requirement: ``illumination``,
    ``multicast_rate``, or ``joint`` when no single family can be blamed.
    """

    def __init__(self, constraint: str, message: str = ""):
        self.constraint = constraint
        super().__init__(message or f"instance infeasible: {constraint}")


class SolveFailure(RuntimeError):
    """The solver produced no usable iterate (numerical breakdown)."""


@dataclass(frozen=True)
class DinkelbachConfig:
    """Outer-loop and inner-loop controls.

    ``epsilon1`` is the absolute convergence threshold on U - q*M evaluated
    on noise-normalized data; ``lazy_rank`` skips rank tightening inside the
    loop and enforces it only on the final solve.
    """

    epsilon1: float = 1e-4
    max_outer: int = 30
    ao_inner_max: int = 20
    ao_epsilon: float = 1e-4
    srocr: SrocrConfig = field(default_factory=SrocrConfig)
    lazy_rank: bool = False
    init_restarts: int = 3

    def __post_init__(self):
        if self.epsilon1 <= 0:
            raise InvalidConfig("epsilon1 must be positive")
        if self.max_outer < 1:
            raise InvalidConfig("max_outer must be >= 1")


def gamma_bar(r_m: float) -> float:
    """SINR threshold equivalent to the minimum multicast rate."""
    return 2.0 ** r_m - 1.0


# --- subproblem assembly -----------------------------------------------------

@dataclass
class SubproblemMatrices:
    """Constant matrices of the two subproblems at a given operating point.

    Transmit side: effective channels and their outer products.  Reflect
    side: the lifted quadratic-form blocks.  With the lift vector
    u = [conj(v); 1], every received power obeys
    ``|h_i^H w_j|^2 = u^H r_ij u + a_ij`` and the illumination power equals
    ``u^H f u`` (f keeps its corner constant, the r blocks have it split off
    into the a scalars).
    """

    h_eff_nu: np.ndarray
    h_eff_fu: np.ndarray
    big_h_nu: np.ndarray
    big_h_fu: np.ndarray
    h_i_nu: np.ndarray
    h_i_fu: np.ndarray
    f: np.ndarray
    r_nu: np.ndarray
    r_nm: np.ndarray
    r_fu: np.ndarray
    r_fm: np.ndarray
    a_nu: float
    a_nm: float
    a_fu: float
    a_fm: float
    c: float
    d: float
    gamma_bar: float


def _lift_transform(channels: ChannelSet, user: str) -> tuple[np.ndarray, np.ndarray]:
    """H_I = diag(h_irs^H) G and the stacked (K+1) x N map T = [H_I; h_bs^H]
    for which h_eff^H w = u^H (T w)."""
    if user == "nu":
        h_bs, h_irs = channels.h_bs_nu, channels.h_irs_nu
    else:
        h_bs, h_irs = channels.h_bs_fu, channels.h_irs_fu
    h_i = h_irs.conj()[:, None] * channels.g_bs_irs
    t = np.vstack([h_i, h_bs.conj()[None, :]])
    return h_i, t


def _reflect_blocks(channels: ChannelSet, config: SystemConfig,
                    cov_u: np.ndarray, cov_m: np.ndarray) -> dict:
    _, t_n = _lift_transform(channels, "nu")
    _, t_f = _lift_transform(channels, "fu")
    k = channels.n_elements

    def block(t, cov):
        m = t @ cov @ t.conj().T
        m = (m + m.conj().T) / 2.0
        a = float(m[k, k].real)
        r = m.copy()
        r[k, k] = 0.0
        return r, a

    r_nu, a_nu = block(t_n, cov_u)
    r_nm, a_nm = block(t_n, cov_m)
    r_fu, a_fu = block(t_f, cov_u)
    r_fm, a_fm = block(t_f, cov_m)
    f = t_f @ (cov_u + cov_m) @ t_f.conj().T
    f = (f + f.conj().T) / 2.0
    gb = gamma_bar(config.r_m)
    return {
        "r_nu": r_nu, "r_nm": r_nm, "r_fu": r_fu, "r_fm": r_fm,
        "a_nu": a_nu, "a_nm": a_nm, "a_fu": a_fu, "a_fm": a_fm,
        "f": f,
        "c": a_nm - gb * a_nu - gb * config.sigma2_nu,
        "d": a_fm - gb * a_fu - gb * config.sigma2_fu,
        "gamma_bar": gb,
    }


def subproblem_matrices(channels: ChannelSet, config: SystemConfig, reflect: ReflectVector,
                        w_u: np.ndarray, w_m: np.ndarray) -> SubproblemMatrices:
    h_n = effective_channel(channels, reflect, "nu")
    h_f = effective_channel(channels, reflect, "fu")
    h_i_n, _ = _lift_transform(channels, "nu")
    h_i_f, _ = _lift_transform(channels, "fu")
    cov_u = np.outer(w_u, np.conj(w_u))
    cov_m = np.outer(w_m, np.conj(w_m))
    blocks = _reflect_blocks(channels, config, cov_u, cov_m)
    return SubproblemMatrices(
        h_eff_nu=h_n,
        h_eff_fu=h_f,
        big_h_nu=np.outer(h_n, h_n.conj()),
        big_h_fu=np.outer(h_f, h_f.conj()),
        h_i_nu=h_i_n,
        h_i_fu=h_i_f,
        **blocks,
    )


def _assemble_transmit(q: float, h_n: np.ndarray, h_f: np.ndarray,
                       config: SystemConfig) -> sdp.SdpProblem:
    n = h_n.shape[0]
    big_h_n = np.outer(h_n, h_n.conj())
    big_h_f = np.outer(h_f, h_f.conj())
    gb = gamma_bar(config.r_m)
    eye = np.eye(n)
    variables = [sdp.HermitianVariable("w_u", n), sdp.HermitianVariable("w_m", n)]
    objective = {"w_u": big_h_n, "w_m": -q * config.zeta * big_h_n}
    constraints = [
        sdp.TraceConstraint({"w_u": eye, "w_m": eye}, "<=", config.p_max, "power"),
        sdp.TraceConstraint({"w_m": big_h_n, "w_u": -gb * big_h_n}, ">=",
                            gb * config.sigma2_nu, "multicast_sinr_nu"),
        sdp.TraceConstraint({"w_m": big_h_f, "w_u": -gb * big_h_f}, ">=",
                            gb * config.sigma2_fu, "multicast_sinr_fu"),
        sdp.TraceConstraint({"w_u": big_h_f, "w_m": big_h_f}, ">=",
                            config.gamma, "illumination"),
    ]
    return sdp.SdpProblem(variables, objective, -q * config.sigma2_nu, constraints)


def build_transmit_subproblem(q: float, channels: ChannelSet, reflect: ReflectVector,
                              config: SystemConfig) -> sdp.SdpProblem:
    """Covariance SDP in (W_u, W_m) at fixed reflection: maximize
    Tr(H_n W_u) - q (zeta Tr(H_n W_m) + sigma_n^2) under the power, per-user
    multicast-SINR, PSD, and illumination constraints.  Rank-one enforcement
    is left to the tightening loop."""
    h_n = effective_channel(channels, reflect, "nu")
    h_f = effective_channel(channels, reflect, "fu")
    return _assemble_transmit(q, h_n, h_f, config)


def _span_basis(h_n: np.ndarray, h_f: np.ndarray) -> np.ndarray:
    """Orthonormal basis of span{h_n, h_f}.  Every data matrix of the
    transmit subproblem is a combination of the identity and outer products
    of these two vectors (anchors from previous reduced iterates included),
    so restricting the covariances to the span is lossless: the orthogonal
    component enters only on the unhelpful side of each constraint."""
    n = h_n.shape[0]
    stacked = np.column_stack([h_n, h_f])
    norm = np.linalg.norm(stacked)
    if norm == 0.0:
        basis = np.zeros((n, 1), dtype=complex)
        basis[0, 0] = 1.0
        return basis
    q_mat, r = np.linalg.qr(stacked)
    keep = np.abs(np.diag(r)) > 1e-12 * norm
    if not np.any(keep):
        keep[0] = True
    return q_mat[:, keep]


def _solve_transmit(q, channels, reflect, config, dcfg, backend, enforce_rank):
    """Solve the transmit subproblem in span coordinates and lift the
    solution back to full dimension.  Returns (solution, srocr_state or None,
    n_solves); the solution matrices (when optimal) are full N x N."""
    h_n = effective_channel(channels, reflect, "nu")
    h_f = effective_channel(channels, reflect, "fu")
    basis = _span_basis(h_n, h_f)
    problem = _assemble_transmit(q, basis.conj().T @ h_n, basis.conj().T @ h_f, config)
    if enforce_rank:
        sol, srocr_state = srocr_run(problem, ("w_u", "w_m"), dcfg.srocr, backend)
        n_solves = srocr_state.n_solves
    else:
        sol = sdp.solve(problem, backend)
        srocr_state, n_solves = None, 1
    if sol.status == sdp.OPTIMAL:
        sol.matrices = {
            lbl: basis @ m @ basis.conj().T for lbl, m in sol.matrices.items()
        }
    return sol, srocr_state, n_solves


def _assemble_reflect(q: float, blocks: dict, config: SystemConfig, k: int) -> sdp.SdpProblem:
    dim = k + 1
    zeta = config.zeta
    objective = {"v_lift": blocks["r_nu"] - q * zeta * blocks["r_nm"]}
    const = blocks["a_nu"] - q * (zeta * blocks["a_nm"] + config.sigma2_nu)
    gb = blocks["gamma_bar"]
    constraints = [
        sdp.TraceConstraint({"v_lift": blocks["r_nm"] - gb * blocks["r_nu"]}, ">=",
                            -blocks["c"], "multicast_sinr_nu"),
        sdp.TraceConstraint({"v_lift": blocks["r_fm"] - gb * blocks["r_fu"]}, ">=",
                            -blocks["d"], "multicast_sinr_fu"),
        sdp.TraceConstraint({"v_lift": blocks["f"]}, ">=", config.gamma, "illumination"),
    ]
    for i in range(dim):
        e = np.zeros((dim, dim))
        e[i, i] = 1.0
        constraints.append(sdp.TraceConstraint({"v_lift": e}, "==", 1.0, f"diag_{i}"))
    return sdp.SdpProblem([sdp.HermitianVariable("v_lift", dim)], objective, const, constraints)


def build_reflect_subproblem(q: float, channels: ChannelSet, w_u: np.ndarray,
                             w_m: np.ndarray, config: SystemConfig) -> sdp.SdpProblem:
    """Lifted reflection SDP in V = u u^H (dim K+1, unit diagonal) at fixed
    transmit beamformers."""
    if channels.n_elements < 1:
        raise InvalidConfig("reflect subproblem requires at least one surface element")
    cov_u = np.outer(np.asarray(w_u, dtype=complex), np.conj(w_u))
    cov_m = np.outer(np.asarray(w_m, dtype=complex), np.conj(w_m))
    blocks = _reflect_blocks(channels, config, cov_u, cov_m)
    return _assemble_reflect(q, blocks, config, channels.n_elements)


# --- rank-one recovery -------------------------------------------------------

def _recover_beamformer(cov: np.ndarray) -> np.ndarray:
    if float(np.trace(cov).real) <= 1e-14:
        return np.zeros(cov.shape[0], dtype=complex)
    lam, u = principal_eigpair(cov)
    return math.sqrt(max(lam, 0.0)) * u


def _recover_reflect(v_lift: np.ndarray, last_entry_tol: float = 1e-9) -> tuple[np.ndarray, bool]:
    """Reflection coefficients from the lifted matrix: principal eigenvector,
    normalized by its last entry (global-phase fallback when that entry is
    tiny), first K entries projected to unit modulus and conjugated back from
    the lift convention."""
    _, u = principal_eigpair(v_lift)
    fallback = bool(abs(u[-1]) < last_entry_tol)
    z = u[:-1] if fallback else u[:-1] / u[-1]
    mags = np.abs(z)
    coeffs = np.where(mags > 1e-30, z / np.where(mags > 1e-30, mags, 1.0), 1.0)
    return np.conj(coeffs), fallback


def recover_rank_one(x: np.ndarray, kind: str) -> np.ndarray:
    """Vector recovery from a (near) rank-one PSD matrix.

    ``beamformer``: sqrt(lambda_max) times the principal eigenvector.
    ``reflect``: unit-modulus reflection coefficients from the lifted matrix.
    """
    if kind == "beamformer":
        return _recover_beamformer(np.asarray(x, dtype=complex))
    if kind == "reflect":
        return _recover_reflect(np.asarray(x, dtype=complex))[0]
    raise ValueError(f"kind must be 'beamformer' or 'reflect', got {kind!r}")


def _safe_ratio(x: np.ndarray) -> float:
    try:
        return rank_ratio(x)
    except Exception:
        return 1.0   # zero matrix: rank 0, trivially within the rank-one set


# --- alternating optimization --------------------------------------------------

@dataclass
class AlternatingState:
    """Current iterate: transmit covariances, reflection phases, the last
    accepted lifted matrix, and the fractional terms U, M evaluated at them
    (so the parametric objective for any q is ``u_term - q * m_term``)."""

    reflect: ReflectVector
    cov_u: np.ndarray | None = None
    cov_m: np.ndarray | None = None
    v_lift: np.ndarray | None = None
    u_term: float = 0.0
    m_term: float = 1.0
    rank_ratios: dict = field(default_factory=lambda: {"w_u": None, "w_m": None, "v": None})
    v_flagged: bool = False
    flags: set = field(default_factory=set)
    n_solves: int = 0
    n_rejected: int = 0
    inner_rank_misses: int = 0
    stage_seconds: dict = field(default_factory=lambda: {"transmit": 0.0, "reflect": 0.0})

    def objective(self, q: float) -> float:
        return self.u_term - q * self.m_term

    def shallow_copy(self) -> "AlternatingState":
        return replace(self, rank_ratios=dict(self.rank_ratios), flags=set(self.flags),
                       stage_seconds=dict(self.stage_seconds))


def _fractional_terms(config: SystemConfig, channels: ChannelSet, cov_u, cov_m,
                      reflect: ReflectVector) -> tuple[float, float]:
    h_n = effective_channel(channels, reflect, "nu")
    u = float(np.vdot(h_n, cov_u @ h_n).real)
    m = config.zeta * float(np.vdot(h_n, cov_m @ h_n).real) + config.sigma2_nu
    return u, m


def _accepts(state: AlternatingState, q: float, candidate_obj: float) -> bool:
    if state.cov_u is None:
        return True
    floor = state.objective(q)
    return candidate_obj >= floor - 1e-12 * max(1.0, abs(floor))


def _transmit_pass(q, config, channels, state, dcfg, backend) -> AlternatingState:
    t0 = time.perf_counter()
    sol, srocr_state, n_solves = _solve_transmit(
        q, channels, state.reflect, config, dcfg, backend, enforce_rank=not dcfg.lazy_rank)
    state.n_solves += n_solves
    if srocr_state is not None and srocr_state.rank_not_reached:
        state.inner_rank_misses += 1
    state.stage_seconds["transmit"] += time.perf_counter() - t0
    if sol.status != sdp.OPTIMAL:
        state.n_rejected += 1
        state.flags.add("transmit_solve_failed")
        return state
    cov_u, cov_m = sol.matrices["w_u"], sol.matrices["w_m"]
    u, m = _fractional_terms(config, channels, cov_u, cov_m, state.reflect)
    if _accepts(state, q, u - q * m):
        state.cov_u, state.cov_m = cov_u, cov_m
        state.u_term, state.m_term = u, m
        if srocr_state is not None:
            ratios = srocr_state.ratios()
            state.rank_ratios["w_u"] = ratios["w_u"]
            state.rank_ratios["w_m"] = ratios["w_m"]
        else:
            state.rank_ratios["w_u"] = _safe_ratio(cov_u)
            state.rank_ratios["w_m"] = _safe_ratio(cov_m)
    else:
        state.n_rejected += 1
    return state


def _reflect_pass(q, config, channels, state, dcfg, backend) -> AlternatingState:
    t0 = time.perf_counter()
    blocks = _reflect_blocks(channels, config, state.cov_u, state.cov_m)
    problem = _assemble_reflect(q, blocks, config, channels.n_elements)
    if dcfg.lazy_rank:
        sol = sdp.solve(problem, backend)
        state.n_solves += 1
        srocr_state = None
    else:
        sol, srocr_state = srocr_run(problem, ("v_lift",), dcfg.srocr, backend)
        state.n_solves += srocr_state.n_solves
        if srocr_state.rank_not_reached:
            state.inner_rank_misses += 1
    state.stage_seconds["reflect"] += time.perf_counter() - t0
    if sol.status != sdp.OPTIMAL:
        state.n_rejected += 1
        state.flags.add("reflect_solve_failed")
        return state
    v_lift = sol.matrices["v_lift"]
    coeffs, _ = _recover_reflect(v_lift)
    reflect_new = ReflectVector.from_coefficients(coeffs)
    u, m = _fractional_terms(config, channels, state.cov_u, state.cov_m, reflect_new)
    if _accepts(state, q, u - q * m):
        state.reflect = reflect_new
        state.u_term, state.m_term = u, m
        state.v_lift = v_lift
        state.rank_ratios["v"] = (srocr_state.ratios()["v_lift"] if srocr_state is not None
                                  else _safe_ratio(v_lift))
        state.v_flagged = bool(srocr_state.rank_not_reached) if srocr_state is not None else False
    else:
        state.n_rejected += 1
    return state


def ao_step(q: float, config: SystemConfig, channels: ChannelSet, state: AlternatingState,
            dconfig: DinkelbachConfig | None = None, backend=None) -> AlternatingState:
    """One alternating pass: transmit update at fixed reflection, then (when
    the surface is present) reflection update at fixed transmit covariances.
    Updates are accepted only if the parametric objective does not decrease,
    so a pass is monotone even under inexact subproblem solves."""
    dcfg = dconfig or DinkelbachConfig()
    state = state.shallow_copy()
    state = _transmit_pass(q, config, channels, state, dcfg, backend)
    if config.n_elements > 0 and state.cov_u is not None:
        state = _reflect_pass(q, config, channels, state, dcfg, backend)
    return state


def _ao_solve(q, config, channels, state, dcfg, backend) -> AlternatingState:
    prev = state.objective(q) if state.cov_u is not None else -math.inf
    for _ in range(dcfg.ao_inner_max):
        state = ao_step(q, config, channels, state, dcfg, backend)
        if state.cov_u is None:
            raise SolveFailure("transmit subproblem produced no iterate")
        cur = state.objective(q)
        if config.n_elements == 0:
            break
        if cur - prev <= dcfg.ao_epsilon * max(1.0, abs(prev)):
            break
        prev = cur
    return state


# --- recovery ----------------------------------------------------------------

def _power_repair(config: SystemConfig, channels: ChannelSet, reflect: ReflectVector,
                  w_u: np.ndarray, w_m: np.ndarray):
    """Exact feasibility restoration on the recovered directions: reallocate
    the two beamformer powers (a, b) to maximize the unicast SINR subject to
    the original constraints.  The linear-fractional program is solved as an
    LP through the Charnes-Cooper transform; returns None when even the ray
    family is infeasible."""
    from scipy.optimize import linprog

    h_n = effective_channel(channels, reflect, "nu")
    h_f = effective_channel(channels, reflect, "fu")
    pnu = float(abs(np.vdot(h_n, w_u)) ** 2)
    pnm = float(abs(np.vdot(h_n, w_m)) ** 2)
    pfu = float(abs(np.vdot(h_f, w_u)) ** 2)
    pfm = float(abs(np.vdot(h_f, w_m)) ** 2)
    tu = float(np.vdot(w_u, w_u).real)
    tm = float(np.vdot(w_m, w_m).real)
    gb = gamma_bar(config.r_m)
    sn, sf = config.sigma2_nu, config.sigma2_fu

    # variables z = (x, y, t) >= 0 with a = x/t, b = y/t
    c = np.array([-pnu, 0.0, 0.0])
    a_ub = np.array([
        [tu, tm, -config.p_max],
        [gb * pnu, -pnm, gb * sn],
        [gb * pfu, -pfm, gb * sf],
        [-pfu, -pfm, config.gamma],
    ])
    a_eq = np.array([[0.0, config.zeta * pnm, sn]])
    scale_ub = np.maximum(np.max(np.abs(a_ub), axis=1), 1e-300)
    scale_eq = max(np.max(np.abs(a_eq)), 1e-300)
    res = linprog(
        c / max(pnu, 1e-300),
        A_ub=a_ub / scale_ub[:, None], b_ub=np.zeros(4),
        A_eq=a_eq / scale_eq, b_eq=np.array([1.0 / scale_eq]),
        bounds=[(0, None)] * 3, method="highs",
    )
    if not res.success or res.x[2] <= 0:
        return None
    a = max(res.x[0] / res.x[2], 0.0)
    b = max(res.x[1] / res.x[2], 0.0)
    return math.sqrt(a) * w_u, math.sqrt(b) * w_m


def _recover_solution(q, config, channels, state, dcfg, backend):
    """Final transmit solve at the accepted reflection (rank tightening always
    enforced here), eigen-recovery, then the power-reallocation repair."""
    flags = set()
    sol, srocr_state, n_solves = _solve_transmit(
        q, channels, state.reflect, config, dcfg, backend, enforce_rank=True)
    state.n_solves += n_solves
    ratios = dict(state.rank_ratios)
    if sol.status == sdp.OPTIMAL:
        cov_u, cov_m = sol.matrices["w_u"], sol.matrices["w_m"]
        r = srocr_state.ratios()
        ratios["w_u"], ratios["w_m"] = r["w_u"], r["w_m"]
        if srocr_state.rank_not_reached:
            flags.add("rank_not_reached")
    else:
        if state.cov_u is None:
            raise SolveFailure("final transmit solve failed with no fallback iterate")
        cov_u, cov_m = state.cov_u, state.cov_m
        flags.add("final_transmit_failed")
    if state.v_flagged:
        flags.add("rank_not_reached")

    w_u = _recover_beamformer(cov_u)
    w_m = _recover_beamformer(cov_m)
    repaired = _power_repair(config, channels, state.reflect, w_u, w_m)
    if repaired is None:
        flags.add("repair_failed")
    else:
        w_u, w_m = repaired
    return BeamformingSolution(w_u, w_m, state.reflect), ratios, flags


# --- diagnosis of infeasible instances ----------------------------------------

def _diagnose_infeasibility(config, channels, reflect, backend) -> str:
    h_f = effective_channel(channels, reflect, "fu")
    big_h_f = np.outer(h_f, h_f.conj())
    n = channels.n_antennas
    eye = np.eye(n)
    illum_max = sdp.SdpProblem(
        [sdp.HermitianVariable("w", n)],
        {"w": big_h_f}, 0.0,
        [sdp.TraceConstraint({"w": eye}, "<=", config.p_max, "power")],
    )
    sol = sdp.solve(illum_max, backend)
    if sol.status == sdp.OPTIMAL and sol.objective < config.gamma * (1.0 - 1e-9):
        return "illumination"

    h_n = effective_channel(channels, reflect, "nu")
    big_h_n = np.outer(h_n, h_n.conj())
    gb = gamma_bar(config.r_m)
    one = np.eye(1)
    slack_min = sdp.SdpProblem(
        [sdp.HermitianVariable("w_u", n), sdp.HermitianVariable("w_m", n),
         sdp.HermitianVariable("slack", 1)],
        {"slack": -one}, 0.0,
        [
            sdp.TraceConstraint({"w_u": eye, "w_m": eye}, "<=", config.p_max, "power"),
            sdp.TraceConstraint({"w_u": big_h_f, "w_m": big_h_f}, ">=", config.gamma,
                                "illumination"),
            sdp.TraceConstraint({"w_m": big_h_n, "w_u": -gb * big_h_n, "slack": one}, ">=",
                                gb * config.sigma2_nu, "multicast_sinr_nu"),
            sdp.TraceConstraint({"w_m": big_h_f, "w_u": -gb * big_h_f, "slack": one}, ">=",
                                gb * config.sigma2_fu, "multicast_sinr_fu"),
        ],
    )
    sol = sdp.solve(slack_min, backend)
    if sol.status == sdp.OPTIMAL:
        needed = float(np.trace(sol.matrices["slack"]).real)
        if needed > 1e-9 * max(1.0, gb * config.sigma2_nu):
            return "multicast_rate"
    return "joint"


# --- the outer loop ------------------------------------------------------------

@dataclass
class OuterIteration:
    index: int
    q: float
    u_term: float
    m_term: float
    gap: float
    rates: RateBreakdown
    n_solves: int
    seconds: float


@dataclass
class SolveReport:
    q_iterates: list[float]
    iterations: list[OuterIteration]
    termination: str
    rates: RateBreakdown | None
    feasibility: FeasibilityReport | None
    rank_ratios: dict
    flags: list[str]
    timings: dict
    n_sdp_solves: int

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def outer_iterations(self) -> int:
        return len(self.iterations)

    def to_dict(self) -> dict:
        return {
            "q_iterates": [float(q) for q in self.q_iterates],
            "iterations": [
                {
                    "index": it.index,
                    "q": float(it.q),
                    "u_term": float(it.u_term),
                    "m_term": float(it.m_term),
                    "gap": float(it.gap),
                    "r_unicast": float(it.rates.r_unicast),
                    "r_multicast": float(it.rates.r_multicast),
                    "illumination": float(it.rates.illumination),
                    "n_solves": it.n_solves,
                    "seconds": float(it.seconds),
                }
                for it in self.iterations
            ],
            "termination": self.termination,
            "rates": None if self.rates is None else {
                "r_unicast": float(self.rates.r_unicast),
                "r_multicast_nu": float(self.rates.r_multicast_nu),
                "r_multicast_fu": float(self.rates.r_multicast_fu),
                "r_multicast": float(self.rates.r_multicast),
                "illumination": float(self.rates.illumination),
            },
            "feasibility": None if self.feasibility is None else self.feasibility.as_dict(),
            "rank_ratios": {k: (None if v is None else float(v))
                            for k, v in self.rank_ratios.items()},
            "flags": list(self.flags),
            "timings": {k: float(v) for k, v in self.timings.items()},
            "n_sdp_solves": self.n_sdp_solves,
        }


def _noise_normalized(config: SystemConfig, channels: ChannelSet):
    factor = 1.0 / math.sqrt(config.sigma2_nu)
    s_config = replace(
        config,
        sigma2_nu=1.0,
        sigma2_fu=config.sigma2_fu / config.sigma2_nu,
        gamma=config.gamma / config.sigma2_nu,
    )
    return s_config, channels.scale_bs_links(factor)


def _state_rates(config: SystemConfig, channels: ChannelSet, state: AlternatingState,
                 illum_scale: float) -> RateBreakdown:
    h_n = effective_channel(channels, state.reflect, "nu")
    h_f = effective_channel(channels, state.reflect, "fu")

    def quad(h, cov):
        return float(np.vdot(h, cov @ h).real)

    pnu, pnm = quad(h_n, state.cov_u), quad(h_n, state.cov_m)
    pfu, pfm = quad(h_f, state.cov_u), quad(h_f, state.cov_m)
    r_mn = math.log2(1.0 + pnm / (pnu + config.sigma2_nu))
    r_mf = math.log2(1.0 + pfm / (pfu + config.sigma2_fu))
    return RateBreakdown(
        r_unicast=math.log2(1.0 + pnu / (config.zeta * pnm + config.sigma2_nu)),
        r_multicast_nu=r_mn,
        r_multicast_fu=r_mf,
        r_multicast=min(r_mn, r_mf),
        illumination=(pfu + pfm) * illum_scale,
    )


def dinkelbach_solve(config: SystemConfig, channels: ChannelSet,
                     dconfig: DinkelbachConfig | None = None,
                     backend=None) -> tuple[BeamformingSolution, SolveReport]:
    """Full solve of the joint design problem.

    Raises :class:`InfeasibleInstance` when no transmit design satisfies the
    constraints at any of the attempted initial reflections, and
    :class:`SolveFailure` on unrecoverable numerical breakdown.  Otherwise
    returns the recovered beamformers plus a report with the q trace,
    per-iteration records, rank certificates, and the feasibility check of
    the returned solution (evaluated in the caller's units).
    """
    dcfg = dconfig or DinkelbachConfig()
    if channels.n_antennas != config.n_antennas or channels.n_elements != config.n_elements:
        raise DimensionMismatch(
            f"channels are {channels.n_elements}x{channels.n_antennas}, config wants "
            f"{config.n_elements}x{config.n_antennas}")
    t_start = time.perf_counter()
    s_config, s_channels = _noise_normalized(config, channels)
    k = config.n_elements
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((config.seed, _INIT_STREAM))))
    reflect = ReflectVector(rng.uniform(0.0, 2.0 * np.pi, size=k))

    n_init_solves = 0
    feasible_reflect = None
    for _ in range(max(1, dcfg.init_restarts)):
        sol = sdp.solve(build_transmit_subproblem(0.0, s_channels, reflect, s_config), backend)
        n_init_solves += 1
        if sol.status == sdp.OPTIMAL:
            feasible_reflect = reflect
            break
        if k == 0 or sol.status == sdp.FAILURE:
            break
        reflect = ReflectVector(rng.uniform(0.0, 2.0 * np.pi, size=k))
    if feasible_reflect is None:
        if sol.status == sdp.FAILURE:
            raise SolveFailure(f"initial relaxation failed: {sol.detail}")
        raise InfeasibleInstance(_diagnose_infeasibility(s_config, s_channels, reflect, backend))

    state = AlternatingState(reflect=feasible_reflect)
    state.n_solves = n_init_solves
    q = 0.0
    q_iterates = [0.0]
    records: list[OuterIteration] = []
    termination = "max_outer"
    for i in range(dcfg.max_outer):
        it_t0 = time.perf_counter()
        solves_before = state.n_solves
        try:
            state = _ao_solve(q, s_config, s_channels, state, dcfg, backend)
        except SolveFailure:
            if state.cov_u is None:
                raise
            state.flags.add("inner_failure")
            termination = "inner_failure"
            break
        gap = state.objective(q)
        records.append(OuterIteration(
            index=i, q=q, u_term=state.u_term, m_term=state.m_term, gap=gap,
            rates=_state_rates(s_config, s_channels, state, config.sigma2_nu),
            n_solves=state.n_solves - solves_before,
            seconds=time.perf_counter() - it_t0,
        ))
        if gap < dcfg.epsilon1:
            termination = "converged"
            break
        q = state.u_term / state.m_term
        q_iterates.append(q)

    t_rec = time.perf_counter()
    q_rec = state.u_term / state.m_term
    solution, ratios, rec_flags = _recover_solution(q_rec, s_config, s_channels, state,
                                                    dcfg, backend)
    recovery_seconds = time.perf_counter() - t_rec

    rates = rate_breakdown(config, channels, solution.reflect, solution.w_u, solution.w_m)
    feasibility = check_feasibility(config, channels, solution)
    all_flags = sorted(state.flags | rec_flags)
    report = SolveReport(
        q_iterates=q_iterates,
        iterations=records,
        termination=termination,
        rates=rates,
        feasibility=feasibility,
        rank_ratios=ratios,
        flags=all_flags,
        timings={
            "transmit": state.stage_seconds["transmit"],
            "reflect": state.stage_seconds["reflect"],
            "recovery": recovery_seconds,
            "total": time.perf_counter() - t_start,
        },
        n_sdp_solves=state.n_solves,
    )
    return solution, report
