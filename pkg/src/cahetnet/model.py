"""Network parameterization shared by the analytic engine and the simulator.

Everything is SI: metres, hertz, watts, densities per square metre. Bias and
transmit power are stored linear; decibel conversion happens at the file/CLI
boundary (see :mod:`cahetnet.configio`).

Indices are zero-based in the Python API. ``x[i][k]`` is 1 when band ``i`` is
used by tier ``k``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised when an operation receives a configuration that fails validation."""

    def __init__(self, violations: Sequence[str]):
        self.violations = tuple(violations)
        super().__init__("invalid network configuration: " + "; ".join(self.violations))


@dataclass(frozen=True)
class Band:
    bandwidth: float  # Hz
    path_loss_exponent: float
    reference_gain: float  # path loss at 1 m
    name: str = ""

    @classmethod
    def from_wavelength(
        cls, bandwidth: float, path_loss_exponent: float, wavelength: float, name: str = ""
    ) -> "Band":
        """Free-space reference gain ``(wavelength / 4 pi)**2``."""
        return cls(bandwidth, path_loss_exponent, (wavelength / (4 * math.pi)) ** 2, name)


@dataclass(frozen=True)
class Tier:
    bs_density: float  # per m^2
    tx_power: float  # W
    bias: float = 1.0  # linear
    name: str = ""


_SHORTHAND_RE = re.compile(r"^\s*\[(.*)\]\s*$", re.S)


@dataclass(frozen=True)
class DeploymentMatrix:
    """Band-by-tier usage matrix, stored band-major as ``x[i][k]``."""

    x: tuple[tuple[int, ...], ...]

    @classmethod
    def from_array(cls, x) -> "DeploymentMatrix":
        arr = np.asarray(x, dtype=int)
        if arr.ndim != 2:
            raise ValueError("deployment must be a 2-D band-by-tier matrix")
        return cls(tuple(tuple(int(v) for v in row) for row in arr))

    @classmethod
    def parse(cls, text: str) -> "DeploymentMatrix":
        """Parse the bracket shorthand ``[x11,x21;x12,x22]``.

        Each ``;``-separated row lists one tier's usage over the bands, so the
        text is the transpose of the band-major storage.
        """
        m = _SHORTHAND_RE.match(text)
        if not m:
            raise ValueError(f"deployment shorthand must be bracketed: {text!r}")
        rows = []
        for chunk in m.group(1).split(";"):
            entries = [e.strip() for e in chunk.split(",")]
            if not entries or any(e not in ("0", "1") for e in entries):
                raise ValueError(f"deployment entries must be 0 or 1: {text!r}")
            rows.append([int(e) for e in entries])
        if len({len(r) for r in rows}) != 1:
            raise ValueError(f"ragged deployment shorthand: {text!r}")
        return cls.from_array(np.array(rows).T)

    def render(self) -> str:
        per_tier = np.asarray(self.x).T
        return "[" + ";".join(",".join(str(v) for v in row) for row in per_tier) + "]"

    def __str__(self) -> str:
        return self.render()

    @property
    def n_bands(self) -> int:
        return len(self.x)

    @property
    def n_tiers(self) -> int:
        return len(self.x[0]) if self.x else 0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=bool)

    def uses(self, i: int, k: int) -> bool:
        return bool(self.x[i][k])

    def bands_of(self, k: int) -> list[int]:
        return [i for i in range(self.n_bands) if self.x[i][k]]

    def tiers_of(self, i: int) -> list[int]:
        return [k for k in range(self.n_tiers) if self.x[i][k]]


def orthogonal(n: int) -> DeploymentMatrix:
    """Tier ``k`` uses band ``k`` only."""
    return DeploymentMatrix.from_array(np.eye(n, dtype=int))


def universal(n_bands: int, n_tiers: int) -> DeploymentMatrix:
    return DeploymentMatrix.from_array(np.ones((n_bands, n_tiers), dtype=int))


@dataclass(frozen=True)
class NetworkConfig:
    tiers: tuple[Tier, ...]
    bands: tuple[Band, ...]
    deployment: DeploymentMatrix
    ue_density: float
    # b[i][k] in Hz; ``build`` replicates a scalar share
    ue_bandwidth_share: tuple[tuple[float, ...], ...]
    noise_psd: float = 0.0  # W/Hz
    noise_figure: float = 1.0  # linear
    interference_limited: bool = False

    @classmethod
    def build(
        cls,
        tiers: Sequence[Tier],
        bands: Sequence[Band],
        deployment: DeploymentMatrix | str | Sequence[Sequence[int]],
        ue_density: float,
        ue_bandwidth_share,
        noise_psd: float = 0.0,
        noise_figure: float = 1.0,
        interference_limited: bool = False,
    ) -> "NetworkConfig":
        """Convenience constructor accepting shorthand text and a scalar share."""
        if isinstance(deployment, str):
            deployment = DeploymentMatrix.parse(deployment)
        elif not isinstance(deployment, DeploymentMatrix):
            deployment = DeploymentMatrix.from_array(deployment)
        share = np.asarray(ue_bandwidth_share, dtype=float)
        if share.ndim == 0:
            share = np.full((len(bands), len(tiers)), float(share))
        return cls(
            tiers=tuple(tiers),
            bands=tuple(bands),
            deployment=deployment,
            ue_density=float(ue_density),
            ue_bandwidth_share=tuple(tuple(float(v) for v in row) for row in share),
            noise_psd=float(noise_psd),
            noise_figure=float(noise_figure),
            interference_limited=bool(interference_limited),
        )

    def replace(self, **changes) -> "NetworkConfig":
        if "deployment" in changes and isinstance(changes["deployment"], str):
            changes["deployment"] = DeploymentMatrix.parse(changes["deployment"])
        return replace(self, **changes)

    def with_tier(self, k: int, **changes) -> "NetworkConfig":
        tiers = list(self.tiers)
        tiers[k] = replace(tiers[k], **changes)
        return replace(self, tiers=tuple(tiers))

    def with_band(self, i: int, **changes) -> "NetworkConfig":
        bands = list(self.bands)
        bands[i] = replace(bands[i], **changes)
        return replace(self, bands=tuple(bands))

    # array views -----------------------------------------------------------

    @property
    def n_tiers(self) -> int:
        return len(self.tiers)

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    @property
    def densities(self) -> np.ndarray:
        return np.array([t.bs_density for t in self.tiers], dtype=float)

    @property
    def powers(self) -> np.ndarray:
        return np.array([t.tx_power for t in self.tiers], dtype=float)

    @property
    def biases(self) -> np.ndarray:
        return np.array([t.bias for t in self.tiers], dtype=float)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([b.path_loss_exponent for b in self.bands], dtype=float)

    @property
    def bandwidths(self) -> np.ndarray:
        return np.array([b.bandwidth for b in self.bands], dtype=float)

    @property
    def reference_gains(self) -> np.ndarray:
        return np.array([b.reference_gain for b in self.bands], dtype=float)

    @property
    def share(self) -> np.ndarray:
        """``b[i, k]`` as an (M, K) array."""
        return np.array(self.ue_bandwidth_share, dtype=float)

    @property
    def usage(self) -> np.ndarray:
        return self.deployment.as_array()

    def noise_terms(self) -> np.ndarray:
        """Effective noise ``w[i, k] = b[i, k] N0 NF / C_i``; zero on unused pairs."""
        if self.interference_limited:
            return np.zeros((self.n_bands, self.n_tiers))
        w = self.share * self.noise_psd * self.noise_figure / self.reference_gains[:, None]
        return np.where(self.usage, w, 0.0)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return "\n".join(f"- {v}" for v in self.violations)


def _positive_finite(v) -> bool:
    try:
        return math.isfinite(v) and v > 0
    except TypeError:
        return False


def validate(config: NetworkConfig, simulation: bool = False) -> ValidationReport:
    """Check every modelling constraint and collect violations.

    With ``simulation=True`` the checks needed by the Monte Carlo scheduler are
    added: an integral number of subchannels ``B_i / b[i, k]`` per used pair and
    one common share per band.
    """
    out: list[str] = []
    if not config.tiers:
        out.append("at least one tier is required")
    if not config.bands:
        out.append("at least one band is required")

    for i, band in enumerate(config.bands, 1):
        if not _positive_finite(band.bandwidth):
            out.append(f"band {i}: bandwidth must be positive")
        a = band.path_loss_exponent
        if not (isinstance(a, (int, float)) and math.isfinite(a) and a > 2):
            out.append(f"band {i}: path-loss exponent must exceed 2 (got {a})")
        if not _positive_finite(band.reference_gain):
            out.append(f"band {i}: reference gain must be positive")

    for k, tier in enumerate(config.tiers, 1):
        if not _positive_finite(tier.bs_density):
            out.append(f"tier {k}: BS density must be positive")
        if not _positive_finite(tier.tx_power):
            out.append(f"tier {k}: transmit power must be positive")
        if not _positive_finite(tier.bias):
            out.append(f"tier {k}: bias must be positive")

    dep = config.deployment
    dims_ok = dep.n_bands == config.n_bands and dep.n_tiers == config.n_tiers
    if not dims_ok:
        out.append(
            f"deployment is {dep.n_bands}x{dep.n_tiers} (bands x tiers) "
            f"but config has {config.n_bands} bands and {config.n_tiers} tiers"
        )
    else:
        x = dep.as_array()
        for i in np.flatnonzero(~x.any(axis=1)):
            out.append(f"band {i + 1} is used by no tier (each band must be used by at least one tier)")
        for k in np.flatnonzero(~x.any(axis=0)):
            out.append(f"tier {k + 1} uses no band (each tier must use at least one band)")

    if not _positive_finite(config.ue_density):
        out.append("UE density must be positive")
    if not (math.isfinite(config.noise_psd) and config.noise_psd >= 0):
        out.append("noise PSD must be non-negative")
    if not _positive_finite(config.noise_figure):
        out.append("noise figure must be positive")

    share = np.asarray(config.ue_bandwidth_share, dtype=float)
    if share.shape != (config.n_bands, config.n_tiers):
        out.append(f"UE bandwidth share must be {config.n_bands}x{config.n_tiers}, got {share.shape}")
    elif dims_ok:
        for i, k in zip(*np.nonzero(dep.as_array())):
            b, B = share[i, k], config.bands[i].bandwidth
            if not (math.isfinite(b) and 0 < b <= B):
                out.append(f"share b[{i + 1},{k + 1}]={b:g} must satisfy 0 < b <= B_{i + 1}={B:g}")
                continue
            if simulation:
                ratio = B / b
                if abs(ratio - round(ratio)) > 1e-9 * ratio:
                    out.append(f"B_{i + 1}/b[{i + 1},{k + 1}]={ratio:g} is not an integral subchannel count")
        if simulation:
            for i in range(config.n_bands):
                used = share[i, dep.as_array()[i]]
                if used.size and np.ptp(used) > 0:
                    out.append(f"band {i + 1}: simulator needs one common share across tiers")

    return ValidationReport(tuple(out))


def require_valid(config: NetworkConfig, simulation: bool = False) -> None:
    report = validate(config, simulation=simulation)
    if not report.ok:
        raise ConfigError(report.violations)


def k_star(config: NetworkConfig, k: int) -> int:
    """Band with the smallest path-loss exponent among those tier ``k`` uses.

    Ties go to the lowest band index.
    """
    bands = config.deployment.bands_of(k)
    return min(bands, key=lambda i: (config.bands[i].path_loss_exponent, i))


def k_star_exponents(config: NetworkConfig) -> np.ndarray:
    """``alpha_{k*}`` for every tier."""
    return np.array([config.bands[k_star(config, k)].path_loss_exponent for k in range(config.n_tiers)])
