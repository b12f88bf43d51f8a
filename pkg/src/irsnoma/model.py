"""Physical-layer model of the two-user downlink with a passive reflecting
surface: effective channels, achievable rates, transmit covariance, sensing
illumination power, and constraint checking.

Conventions used throughout the package:

* Channels are stored as column vectors ``h``; the conjugated row ``h^H`` is
  formed at the point of use, so the complex amplitude seen by a beamformer
  ``w`` is ``np.vdot(h, w)`` (= h^H w).
* Rates are base-2 logarithms, in bits/s/Hz.  Powers are in watts.
* The reflection coefficient of element k is ``exp(1j * theta_k)`` with
  ``theta_k`` in (0, 2*pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidConfig",
    "DimensionMismatch",
    "SystemConfig",
    "ChannelSet",
    "ReflectVector",
    "BeamformingSolution",
    "RateBreakdown",
    "FeasibilityReport",
    "dbm_to_watt",
    "watt_to_dbm",
    "effective_channel",
    "unicast_rate",
    "multicast_rate_nu",
    "multicast_rate_fu",
    "multicast_rate",
    "illumination_power",
    "illumination_power_trace",
    "transmit_covariance",
    "rate_breakdown",
    "check_feasibility",
]


class InvalidConfig(ValueError):
    """A configuration field violates its documented range."""


class DimensionMismatch(ValueError):
    """Channel/beamformer dimensions are inconsistent."""


def dbm_to_watt(dbm: float) -> float:
    """P[W] = 10 ** ((dBm - 30) / 10)."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    if watt <= 0:
        raise InvalidConfig(f"power must be positive to express in dBm, got {watt}")
    return 10.0 * math.log10(watt) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """Scenario scalars.

    Defaults encode the reference simulation setup: a 20-antenna base
    station, a 14-element surface at (50, 10) m, users on the x-axis at
    100 m / 1000 m, 10 dBm transmit budget, -100 dBm noise floors, and an
    illumination threshold of 1e-2 relative to the noise floor
    (``gamma`` is stored in watts: 1e-2 * 1e-13 W).
    """

    n_antennas: int = 20
    n_elements: int = 14
    p_max: float = 1e-2                 # 10 dBm
    sigma2_nu: float = 1e-13            # -100 dBm
    sigma2_fu: float = 1e-13
    zeta: float = 0.0                   # residual-interference factor, 0 = perfect SIC
    r_m: float = 1.0                    # minimum multicast rate, bits/s/Hz
    gamma: float = 1e-15                # minimum illumination power, W
    d_nu: float = 100.0                 # m
    d_fu: float = 1000.0                # m
    path_loss_ref_db: float = 40.0      # loss at 1 m
    rician_k_db: float = 10.0
    bs_pos: tuple[float, float] = (0.0, 0.0)
    irs_pos: tuple[float, float] = (50.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_antennas < 1:
            raise InvalidConfig("n_antennas must be >= 1")
        if self.n_elements < 0:
            raise InvalidConfig("n_elements must be >= 0")
        if self.p_max <= 0:
            raise InvalidConfig("p_max must be positive")
        if self.sigma2_nu <= 0 or self.sigma2_fu <= 0:
            raise InvalidConfig("noise powers must be positive")
        if not 0.0 <= self.zeta < 1.0:
            raise InvalidConfig("zeta must lie in [0, 1)")
        if self.r_m < 0:
            raise InvalidConfig("r_m must be >= 0")
        if self.gamma < 0:
            raise InvalidConfig("gamma must be >= 0")
        if self.d_nu <= 0 or self.d_fu <= 0:
            raise InvalidConfig("user distances must be positive")

    @property
    def nu_pos(self) -> tuple[float, float]:
        return (self.d_nu, 0.0)

    @property
    def fu_pos(self) -> tuple[float, float]:
        return (self.d_fu, 0.0)


@dataclass
class ChannelSet:
    """The five links: BS-IRS matrix, BS-user and IRS-user vectors.

    Shapes: ``g_bs_irs`` is (K, N); ``h_bs_*`` are (N,); ``h_irs_*`` are (K,).
    K = 0 encodes the surface-free baseline (empty IRS-side arrays).
    """

    g_bs_irs: np.ndarray
    h_bs_nu: np.ndarray
    h_bs_fu: np.ndarray
    h_irs_nu: np.ndarray
    h_irs_fu: np.ndarray

    def __post_init__(self):
        self.g_bs_irs = np.asarray(self.g_bs_irs, dtype=complex)
        self.h_bs_nu = np.asarray(self.h_bs_nu, dtype=complex)
        self.h_bs_fu = np.asarray(self.h_bs_fu, dtype=complex)
        self.h_irs_nu = np.asarray(self.h_irs_nu, dtype=complex)
        self.h_irs_fu = np.asarray(self.h_irs_fu, dtype=complex)
        if self.g_bs_irs.ndim != 2:
            raise DimensionMismatch("g_bs_irs must be a K x N matrix")
        k, n = self.g_bs_irs.shape
        for name in ("h_bs_nu", "h_bs_fu"):
            v = getattr(self, name)
            if v.shape != (n,):
                raise DimensionMismatch(f"{name} must have length {n}, got {v.shape}")
        for name in ("h_irs_nu", "h_irs_fu"):
            v = getattr(self, name)
            if v.shape != (k,):
                raise DimensionMismatch(f"{name} must have length {k}, got {v.shape}")
        for name in ("g_bs_irs", "h_bs_nu", "h_bs_fu", "h_irs_nu", "h_irs_fu"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidConfig(f"{name} contains non-finite entries")

    @property
    def n_antennas(self) -> int:
        return self.g_bs_irs.shape[1]

    @property
    def n_elements(self) -> int:
        return self.g_bs_irs.shape[0]

    def scale_bs_links(self, factor: float) -> "ChannelSet":
        """Scale every BS-departure link (direct vectors and the BS-IRS
        matrix) by ``factor``; every effective channel then scales by the
        same factor.  Used for noise normalization."""
        return ChannelSet(
            g_bs_irs=self.g_bs_irs * factor,
            h_bs_nu=self.h_bs_nu * factor,
            h_bs_fu=self.h_bs_fu * factor,
            h_irs_nu=self.h_irs_nu.copy(),
            h_irs_fu=self.h_irs_fu.copy(),
        )


@dataclass
class ReflectVector:
    """Per-element phase shifts theta in (0, 2*pi]; coefficient k is
    exp(1j * theta_k), unit modulus by construction."""

    phases: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.phases, dtype=float))
        if p.ndim != 1:
            raise DimensionMismatch("phases must be a 1-D real vector")
        p = np.mod(p, 2.0 * np.pi)
        p[p == 0.0] = 2.0 * np.pi
        self.phases = p

    @classmethod
    def from_coefficients(cls, v: np.ndarray, tol: float = 1e-9) -> "ReflectVector":
        v = np.atleast_1d(np.asarray(v, dtype=complex))
        if v.size and np.max(np.abs(np.abs(v) - 1.0)) > tol:
            raise InvalidConfig("coefficients are not unit modulus within tolerance")
        return cls(np.angle(v))

    @property
    def coefficients(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    def __len__(self) -> int:
        return self.phases.size


@dataclass
class BeamformingSolution:
    """Transmit beamformers plus the reflection phases."""

    w_u: np.ndarray
    w_m: np.ndarray
    reflect: ReflectVector

    def __post_init__(self):
        self.w_u = np.atleast_1d(np.asarray(self.w_u, dtype=complex))
        self.w_m = np.atleast_1d(np.asarray(self.w_m, dtype=complex))
        if self.w_u.shape != self.w_m.shape or self.w_u.ndim != 1:
            raise DimensionMismatch("w_u and w_m must be 1-D vectors of equal length")

    @property
    def covariance(self) -> np.ndarray:
        """N x N transmit covariance w_u w_u^H + w_m w_m^H."""
        return transmit_covariance(self.w_u, self.w_m)

    @property
    def transmit_power(self) -> float:
        return float(np.vdot(self.w_u, self.w_u).real + np.vdot(self.w_m, self.w_m).real)


@dataclass
class RateBreakdown:
    r_unicast: float
    r_multicast_nu: float
    r_multicast_fu: float
    r_multicast: float
    illumination: float


def _user_channels(channels: ChannelSet, user: str) -> tuple[np.ndarray, np.ndarray]:
    if user == "nu":
        return channels.h_bs_nu, channels.h_irs_nu
    if user == "fu":
        return channels.h_bs_fu, channels.h_irs_fu
    raise ValueError(f"user must be 'nu' or 'fu', got {user!r}")


def effective_channel(channels: ChannelSet, reflect: ReflectVector, user: str) -> np.ndarray:
    """Column vector h of the combined reflected + direct link, so that the
    amplitude seen by a beamformer w is h^H w = np.vdot(h, w).

    With zero surface elements this is exactly the direct link.
    """
    h_bs, h_irs = _user_channels(channels, user)
    if len(reflect) != channels.n_elements:
        raise DimensionMismatch(
            f"reflect vector has {len(reflect)} phases for {channels.n_elements} elements"
        )
    if channels.n_elements == 0:
        return h_bs.copy()
    v = reflect.coefficients
    return channels.g_bs_irs.conj().T @ (np.conj(v) * h_irs) + h_bs


def _check_beamformer(channels: ChannelSet, w: np.ndarray, name: str) -> np.ndarray:
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    if w.shape != (channels.n_antennas,):
        raise DimensionMismatch(f"{name} must have length {channels.n_antennas}, got {w.shape}")
    return w


def _received_powers(channels, reflect, w_u, w_m, user):
    h = effective_channel(channels, reflect, user)
    w_u = _check_beamformer(channels, w_u, "w_u")
    w_m = _check_beamformer(channels, w_m, "w_m")
    return float(abs(np.vdot(h, w_u)) ** 2), float(abs(np.vdot(h, w_m)) ** 2)


def unicast_rate(channels, reflect, w_u, w_m, zeta: float, sigma2_nu: float) -> float:
    """Near-user unicast rate; the residual multicast power `zeta * |h^H w_m|^2`
    counts as interference."""
    if not 0.0 <= zeta < 1.0:
        raise InvalidConfig("zeta must lie in [0, 1)")
    p_u, p_m = _received_powers(channels, reflect, w_u, w_m, "nu")
    return float(np.log2(1.0 + p_u / (zeta * p_m + sigma2_nu)))


def multicast_rate_nu(channels, reflect, w_u, w_m, sigma2_nu: float) -> float:
    """Multicast rate at the near user; decoded first, so the full unicast
    power is interference."""
    p_u, p_m = _received_powers(channels, reflect, w_u, w_m, "nu")
    return float(np.log2(1.0 + p_m / (p_u + sigma2_nu)))


def multicast_rate_fu(channels, reflect, w_u, w_m, sigma2_fu: float) -> float:
    """Multicast rate at the far user (unicast treated as interference)."""
    p_u, p_m = _received_powers(channels, reflect, w_u, w_m, "fu")
    return float(np.log2(1.0 + p_m / (p_u + sigma2_fu)))


def multicast_rate(r_multicast_nu: float, r_multicast_fu: float) -> float:
    """The multicast stream is limited by the weaker of the two users."""
    return min(r_multicast_nu, r_multicast_fu)


def transmit_covariance(w_u: np.ndarray, w_m: np.ndarray) -> np.ndarray:
    w_u = np.atleast_1d(np.asarray(w_u, dtype=complex))
    w_m = np.atleast_1d(np.asarray(w_m, dtype=complex))
    return np.outer(w_u, w_u.conj()) + np.outer(w_m, w_m.conj())


def illumination_power(channels, reflect, w_u, w_m) -> float:
    """Sensing power delivered along the far-user effective channel,
    |h_f^H w_u|^2 + |h_f^H w_m|^2 (rank-2 expansion of the covariance form)."""
    p_u, p_m = _received_powers(channels, reflect, w_u, w_m, "fu")
    return p_u + p_m


def illumination_power_trace(channels, reflect, w_u, w_m) -> float:
    """Covariance form Tr(R h_f h_f^H); retained as a cross-check of
    :func:`illumination_power`."""
    h = effective_channel(channels, reflect, "fu")
    r = transmit_covariance(
        _check_beamformer(channels, w_u, "w_u"), _check_beamformer(channels, w_m, "w_m")
    )
    return float(np.trace(r @ np.outer(h, h.conj())).real)


def rate_breakdown(config: SystemConfig, channels: ChannelSet, reflect: ReflectVector,
                   w_u: np.ndarray, w_m: np.ndarray) -> RateBreakdown:
    r_mn = multicast_rate_nu(channels, reflect, w_u, w_m, config.sigma2_nu)
    r_mf = multicast_rate_fu(channels, reflect, w_u, w_m, config.sigma2_fu)
    return RateBreakdown(
        r_unicast=unicast_rate(channels, reflect, w_u, w_m, config.zeta, config.sigma2_nu),
        r_multicast_nu=r_mn,
        r_multicast_fu=r_mf,
        r_multicast=multicast_rate(r_mn, r_mf),
        illumination=illumination_power(channels, reflect, w_u, w_m),
    )


@dataclass
class FeasibilityReport:
    """Signed margins of the three design constraints plus the unit-modulus
    deviation.  Margins are in natural units (bits for the rate constraint,
    watts for power and illumination); the ``feasible`` verdict compares each
    margin against a scale-aware threshold so that one tolerance value is
    meaningful across quantities that differ by many orders of magnitude:

    * multicast rate:  margin >= -tol                  (bits)
    * transmit power:  margin >= -tol * max(1, p_max)  (watts)
    * illumination:    margin >= -tol * max(gamma, sigma2_fu)
    * unit modulus:    deviation <= tol
    """

    multicast_margin: float
    power_margin: float
    illumination_margin: float
    unit_modulus_deviation: float
    feasible: bool
    tolerance: float
    rates: RateBreakdown | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {
            "multicast_margin": self.multicast_margin,
            "power_margin": self.power_margin,
            "illumination_margin": self.illumination_margin,
            "unit_modulus_deviation": self.unit_modulus_deviation,
            "feasible": self.feasible,
            "tolerance": self.tolerance,
        }


def check_feasibility(config: SystemConfig, channels: ChannelSet,
                      solution: BeamformingSolution, tolerance: float = 1e-6) -> FeasibilityReport:
    rates = rate_breakdown(config, channels, solution.reflect, solution.w_u, solution.w_m)
    multicast_margin = rates.r_multicast - config.r_m
    power_margin = config.p_max - solution.transmit_power
    illumination_margin = rates.illumination - config.gamma
    coeffs = solution.reflect.coefficients
    unit_dev = float(np.max(np.abs(np.abs(coeffs) - 1.0))) if len(solution.reflect) else 0.0
    feasible = (
        multicast_margin >= -tolerance
        and power_margin >= -tolerance * max(1.0, config.p_max)
        and illumination_margin >= -tolerance * max(config.gamma, config.sigma2_fu)
        and unit_dev <= tolerance
    )
    return FeasibilityReport(
        multicast_margin=multicast_margin,
        power_margin=power_margin,
        illumination_margin=illumination_margin,
        unit_modulus_deviation=unit_dev,
        feasible=feasible,
        tolerance=tolerance,
        rates=rates,
    )
