"""Seeded channel realizations: Rayleigh / Rician / line-of-sight links with
log-distance path loss over the 2-D deployment geometry.

Randomness comes from the Philox counter-based bit generator with one
substream per link, keyed by (seed, link id).  Realizations are therefore
reproducible across platforms, and a given link's draw does not change when
other links are resized (e.g. when the surface is removed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .model import ChannelSet, InvalidConfig, SystemConfig

__all__ = [
    "LinkSpec",
    "ChannelModelSpec",
    "default_model_spec",
    "los_steering",
    "path_loss_db",
    "path_gain",
    "generate_channels",
    "save_channels",
    "load_channels",
]

LINK_IDS = {"bs_irs": 0, "bs_nu": 1, "bs_fu": 2, "irs_nu": 3, "irs_fu": 4}

_KINDS = ("rayleigh", "rician", "los")


@dataclass(frozen=True)
class LinkSpec:
    kind: str = "rician"
    k_factor_db: float = 10.0   # Rician K-factor
    alpha: float = 2.0          # path-loss exponent

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InvalidConfig(f"link kind must be one of {_KINDS}, got {self.kind!r}")
        if self.alpha <= 0:
            raise InvalidConfig("path-loss exponent must be positive")


@dataclass(frozen=True)
class ChannelModelSpec:
    """Per-link fading kind and path-loss exponent.  The direct BS-NU link is
    Rayleigh with exponent 3; the BS-FU link is LoS-dominant Rician with
    exponent 2; all surface-involved links default to Rician with exponent 2.
    """

    bs_nu: LinkSpec = LinkSpec("rayleigh", alpha=3.0)
    bs_fu: LinkSpec = LinkSpec("rician", alpha=2.0)
    bs_irs: LinkSpec = LinkSpec("rician", alpha=2.0)
    irs_nu: LinkSpec = LinkSpec("rician", alpha=2.0)
    irs_fu: LinkSpec = LinkSpec("rician", alpha=2.0)


def default_model_spec(config: SystemConfig) -> ChannelModelSpec:
    k = config.rician_k_db
    return ChannelModelSpec(
        bs_nu=LinkSpec("rayleigh", alpha=3.0),
        bs_fu=LinkSpec("rician", k_factor_db=k, alpha=2.0),
        bs_irs=LinkSpec("rician", k_factor_db=k, alpha=2.0),
        irs_nu=LinkSpec("rician", k_factor_db=k, alpha=2.0),
        irs_fu=LinkSpec("rician", k_factor_db=k, alpha=2.0),
    )


def path_loss_db(ref_db: float, alpha: float, distance: float) -> float:
    """L = L0 + 10 * alpha * log10(d), with L0 the loss at 1 m."""
    if distance <= 0:
        raise InvalidConfig("distance must be positive")
    return ref_db + 10.0 * alpha * math.log10(distance)


def path_gain(ref_db: float, alpha: float, distance: float) -> float:
    """Linear power gain 10 ** (-L/10)."""
    return 10.0 ** (-path_loss_db(ref_db, alpha, distance) / 10.0)


def los_steering(n: int, angle: float) -> np.ndarray:
    """Half-wavelength ULA steering vector: entry i is exp(1j*pi*i*sin(angle))."""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def _angle(src, dst) -> float:
    return math.atan2(dst[1] - src[1], dst[0] - src[0])


def _distance(src, dst) -> float:
    return math.hypot(dst[0] - src[0], dst[1] - src[1])


def _link_rng(seed: int, link: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, LINK_IDS[link]))))


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def _small_scale(rng, spec: LinkSpec, los: np.ndarray) -> np.ndarray:
    if spec.kind == "los":
        return los.astype(complex)
    scatter = _cn(rng, los.shape)
    if spec.kind == "rayleigh":
        return scatter
    kf = 10.0 ** (spec.k_factor_db / 10.0)
    return math.sqrt(kf / (kf + 1.0)) * los + math.sqrt(1.0 / (kf + 1.0)) * scatter


def generate_channels(config: SystemConfig, spec: ChannelModelSpec | None = None,
                      seed: int | None = None) -> ChannelSet:
    """Draw one realization of all five links.

    Deterministic in (config, spec, seed); entries carry the square root of
    the linear path gain so per-entry mean power equals 10**(-L/10).
    """
    if spec is None:
        spec = default_model_spec(config)
    if seed is None:
        seed = config.seed
    n, k = config.n_antennas, config.n_elements
    l0 = config.path_loss_ref_db
    bs, irs, nu, fu = config.bs_pos, config.irs_pos, config.nu_pos, config.fu_pos

    def draw(link: str, link_spec: LinkSpec, dist: float, los: np.ndarray) -> np.ndarray:
        amp = math.sqrt(path_gain(l0, link_spec.alpha, dist))
        return amp * _small_scale(_link_rng(seed, link), link_spec, los)

    h_bs_nu = draw("bs_nu", spec.bs_nu, config.d_nu, los_steering(n, _angle(bs, nu)))
    h_bs_fu = draw("bs_fu", spec.bs_fu, config.d_fu, los_steering(n, _angle(bs, fu)))
    if k > 0:
        g_los = np.outer(los_steering(k, _angle(irs, bs)), np.conj(los_steering(n, _angle(bs, irs))))
        g_bs_irs = draw("bs_irs", spec.bs_irs, _distance(bs, irs), g_los)
        h_irs_nu = draw("irs_nu", spec.irs_nu, _distance(irs, nu), los_steering(k, _angle(irs, nu)))
        h_irs_fu = draw("irs_fu", spec.irs_fu, _distance(irs, fu), los_steering(k, _angle(irs, fu)))
    else:
        g_bs_irs = np.zeros((0, n), dtype=complex)
        h_irs_nu = np.zeros(0, dtype=complex)
        h_irs_fu = np.zeros(0, dtype=complex)
    return ChannelSet(g_bs_irs, h_bs_nu, h_bs_fu, h_irs_nu, h_irs_fu)


def _encode(arr: np.ndarray) -> dict:
    return {"re": np.real(arr).tolist(), "im": np.imag(arr).tolist()}


def _decode(obj: dict) -> np.ndarray:
    return np.asarray(obj["re"], dtype=float) + 1j * np.asarray(obj["im"], dtype=float)


def save_channels(channels: ChannelSet, path) -> None:
    """Write a realization as JSON (complex entries as re/im pairs) so
    experiment runs can be replayed."""
    doc = {
        "format": "irsnoma-channels",
        "version": 1,
        "n_antennas": channels.n_antennas,
        "n_elements": channels.n_elements,
        "g_bs_irs": _encode(channels.g_bs_irs),
        "h_bs_nu": _encode(channels.h_bs_nu),
        "h_bs_fu": _encode(channels.h_bs_fu),
        "h_irs_nu": _encode(channels.h_irs_nu),
        "h_irs_fu": _encode(channels.h_irs_fu),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_channels(path) -> ChannelSet:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "irsnoma-channels":
        raise InvalidConfig(f"{path} is not a channel file")
    k, n = doc["n_elements"], doc["n_antennas"]
    g = _decode(doc["g_bs_irs"]).reshape(k, n)
    return ChannelSet(
        g_bs_irs=g,
        h_bs_nu=_decode(doc["h_bs_nu"]).reshape(n),
        h_bs_fu=_decode(doc["h_bs_fu"]).reshape(n),
        h_irs_nu=_decode(doc["h_irs_nu"]).reshape(k),
        h_irs_fu=_decode(doc["h_irs_fu"]).reshape(k),
    )
