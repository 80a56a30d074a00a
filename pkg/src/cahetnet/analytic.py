"""Coverage, load, admission and UE ergodic rate of a single-flow CA HetNet.

All rates are in nats/s (natural logarithm). ``RateReport.total_bits`` gives
bit/s.

Entry points, from general to special:

* :func:`single_flow_rate`   any valid configuration
* :func:`single_tier_rate`   one tier, any number of bands
* :func:`orthogonal_rate`    tier ``k`` uses band ``k`` only
* :func:`cochannel_rate`     one band shared by every tier
* :func:`deployment_comparison`  fully-loaded 1-band/K-tier vs K-band/1-tier

The special cases are evaluated from their own reduced forms, so they double
as consistency checks on the general pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import NetworkConfig, k_star, k_star_exponents, require_valid
from .quadrature import (
    KERNEL_SETTINGS,
    NESTED_SETTINGS,
    QuadratureError,
    QuadratureSettings,
    _adaptive,
    association_coefficients,
    integrate_power_tail,
    integrate_semi_infinite,
    integrate_semi_infinite_batch,
    link_scale,
    q_alpha,
    rho_unit,
)

# size-biased Voronoi cell: mean users in the tagged single-tier cell is 9/7 lambda_u/lambda
SINGLE_TIER_CELL_FACTOR = 9.0 / 7.0
# multi-tier approximation of the same quantity
MULTI_TIER_CELL_FACTOR = 1.28
# fully-loaded rate constant used for both deployments being compared
FULL_LOAD_CONSTANT = 0.78

LN2 = math.log(2.0)


class PreconditionError(ValueError):
    """The configuration does not have the shape a reduced formula assumes."""


class RateQuadratureError(QuadratureError):
    """Quadrature failed for one (band, tier) contribution."""

    def __init__(self, band: int, tier: int, cause: QuadratureError):
        super().__init__(
            f"rate integral for band {band + 1}, tier {tier + 1} failed: {cause}",
            cause.estimate,
            cause.error,
        )
        self.band = band
        self.tier = tier


# ---------------------------------------------------------------------------
# derived state


@dataclass(frozen=True)
class DerivedPerTier:
    k_star: int
    G: float  # m^2
    coverage: float
    mean_users: float


@dataclass(frozen=True)
class DerivedPerBandTier:
    load: float
    admission: float
    noise: float  # W
    mean_connecting: float


@dataclass(frozen=True)
class DerivedState:
    per_tier: tuple[DerivedPerTier, ...]
    per_band_tier: tuple[tuple[DerivedPerBandTier, ...], ...]  # [i][k]

    @property
    def coverage(self) -> np.ndarray:
        return np.array([t.coverage for t in self.per_tier])

    @property
    def mean_users(self) -> np.ndarray:
        return np.array([t.mean_users for t in self.per_tier])

    @property
    def G(self) -> np.ndarray:
        return np.array([t.G for t in self.per_tier])

    def _matrix(self, attr: str) -> np.ndarray:
        return np.array([[getattr(c, attr) for c in row] for row in self.per_band_tier])

    @property
    def load(self) -> np.ndarray:
        return self._matrix("load")

    @property
    def admission(self) -> np.ndarray:
        return self._matrix("admission")

    @property
    def noise(self) -> np.ndarray:
        return self._matrix("noise")

    @property
    def mean_connecting(self) -> np.ndarray:
        return self._matrix("mean_connecting")


def coverage_integrals(config: NetworkConfig, settings: QuadratureSettings = KERNEL_SETTINGS) -> np.ndarray:
    """``G_k = int_0^inf r h_k(r) dr`` for every tier."""
    out = np.empty(config.n_tiers)
    for k in range(config.n_tiers):
        coef, expo = association_coefficients(config, k)

        def f(r, coef=coef, expo=expo):
            with np.errstate(over="ignore"):
                s = np.sum(coef[:, None] * r[None, :] ** expo[:, None], axis=0)
            return r * np.exp(-s)

        out[k] = integrate_semi_infinite(f, settings, scale=link_scale(config, k))
    return out


def coverage(config: NetworkConfig, settings: QuadratureSettings = KERNEL_SETTINGS) -> np.ndarray:
    """Fraction of UEs served by each tier, ``pi_k = 2 pi lambda_k G_k``."""
    require_valid(config)
    return 2.0 * math.pi * config.densities * coverage_integrals(config, settings)


def coverage_equal_exponent(config: NetworkConfig) -> np.ndarray:
    """Closed-form coverage when every tier's strongest band has the same exponent."""
    a = k_star_exponents(config)
    if np.ptp(a) != 0:
        raise PreconditionError("closed-form coverage needs a common k* exponent across tiers")
    w = config.densities * (config.biases * config.powers) ** (2.0 / a[0])
    return w / w.sum()


def load_matrix(config: NetworkConfig, cov: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load ``theta[i, k]`` and mean connecting UEs ``L[i, k]`` per BS.

    ``L = 2 pi lambda_u G_k = lambda_u pi_k / lambda_k`` on used pairs.
    """
    if cov is None:
        cov = coverage(config)
    per_bs = config.ue_density * np.asarray(cov) / config.densities
    x = config.usage
    L = np.where(x, per_bs[None, :], 0.0)
    theta = np.where(x, np.minimum(config.share * L / config.bandwidths[:, None], 1.0), 0.0)
    return theta, L


def mean_cell_users(config: NetworkConfig, cov: np.ndarray | None = None) -> np.ndarray:
    """Mean number of UEs in the tagged cell of each tier.

    One tier uses the exact size-biased Voronoi result ``9 lambda_u / (7 lambda)``;
    several tiers use ``1 + 1.28 pi_k lambda_u / lambda_k``.
    """
    if config.n_tiers == 1:
        return np.array([SINGLE_TIER_CELL_FACTOR * config.ue_density / config.densities[0]])
    if cov is None:
        cov = coverage(config)
    return 1.0 + MULTI_TIER_CELL_FACTOR * np.asarray(cov) * config.ue_density / config.densities


def admission_matrix(config: NetworkConfig, mean_users: np.ndarray) -> np.ndarray:
    """``p[i, k] = min(B_i / (b[i, k] N_k), 1)`` on used pairs, 0 elsewhere."""
    capacity = config.bandwidths[:, None] / config.share
    p = np.minimum(capacity / np.asarray(mean_users)[None, :], 1.0)
    return np.where(config.usage, np.clip(p, 0.0, 1.0), 0.0)


def derive(config: NetworkConfig, settings: QuadratureSettings = KERNEL_SETTINGS) -> DerivedState:
    require_valid(config)
    G = coverage_integrals(config, settings)
    cov = 2.0 * math.pi * config.densities * G
    theta, L = load_matrix(config, cov)
    nbar = mean_cell_users(config, cov)
    p = admission_matrix(config, nbar)
    w = config.noise_terms()
    per_tier = tuple(
        DerivedPerTier(k_star(config, k), float(G[k]), float(cov[k]), float(nbar[k]))
        for k in range(config.n_tiers)
    )
    per_pair = tuple(
        tuple(
            DerivedPerBandTier(float(theta[i, k]), float(p[i, k]), float(w[i, k]), float(L[i, k]))
            for k in range(config.n_tiers)
        )
        for i in range(config.n_bands)
    )
    return DerivedState(per_tier, per_pair)


# ---------------------------------------------------------------------------
# conditional link length


def conditional_distance_pdf(config: NetworkConfig, k: int, r, cov: np.ndarray | None = None):
    """Density of the serving distance given that the UE attaches to tier ``k``."""
    if cov is None:
        cov = coverage(config)
    coef, expo = association_coefficients(config, k)
    r = np.asarray(r, dtype=float)
    flat = r.ravel()
    with np.errstate(over="ignore"):
        s = np.sum(coef[:, None] * flat[None, :] ** expo[:, None], axis=0)
    out = (2.0 * math.pi * config.densities[k] / cov[k] * flat * np.exp(-s)).reshape(r.shape)
    return out if out.ndim else float(out)


def conditional_distance_cdf(
    config: NetworkConfig,
    k: int,
    r,
    cov: np.ndarray | None = None,
    settings: QuadratureSettings = KERNEL_SETTINGS,
):
    """CDF of the serving distance given tier ``k``, by batched quadrature of the pdf."""
    if cov is None:
        cov = coverage(config)
    r = np.asarray(r, dtype=float)
    flat = r.ravel()
    upper = np.maximum(flat, 0.0)

    def g(u, idx):
        x = upper[idx] * u
        return conditional_distance_pdf(config, k, x, cov) * upper[idx]

    vals, _ = _adaptive(g, flat.size, 0.0, 1.0, settings)
    out = np.clip(vals, 0.0, 1.0).reshape(r.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# rate reports


@dataclass(frozen=True)
class RateReport:
    total: float  # nats/s
    per_band_tier: tuple[tuple[float, ...], ...]  # [i][k], nats/s
    method: str

    @classmethod
    def from_matrix(cls, rates: np.ndarray, method: str) -> "RateReport":
        rates = np.asarray(rates, dtype=float)
        return cls(float(rates.sum()), tuple(tuple(float(v) for v in row) for row in rates), method)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.per_band_tier)

    @property
    def total_bits(self) -> float:
        return self.total / LN2

    def in_units(self, units: str) -> tuple[float, np.ndarray]:
        if units == "nats":
            return self.total, self.matrix
        if units == "bits":
            return self.total_bits, self.matrix / LN2
        raise ValueError(f"unknown units {units!r}")


def _outer_t(
    inner: Callable[[np.ndarray], np.ndarray],
    alpha: float,
    settings: QuadratureSettings,
) -> float:
    """``int_0^inf inner(t) / (1 + t) dt`` with the algebraic tail of the rate integrals."""
    return integrate_power_tail(lambda t: inner(t) / (1.0 + t), 2.0 / alpha, settings)


def _pair_rate(config: NetworkConfig, derived: DerivedState, i: int, k: int, settings: QuadratureSettings) -> float:
    """Single-flow contribution of tier ``k`` in band ``i`` (nats/s)."""
    alpha_i = config.bands[i].path_loss_exponent
    a_star = k_star_exponents(config)
    P = config.powers
    zp = config.biases * P
    theta = derived.load[:, :][i]
    w = derived.noise[i, k]
    coef, expo = association_coefficients(config, k)
    c_ratio = zp / zp[k]
    # log beta_l(r) = log_beta0_l + beta_slope_l * log r
    log_beta0 = np.log(P[k] / P) + alpha_i * np.log(c_ratio) / a_star
    beta_slope = alpha_i * (a_star[k] / a_star - 1.0)
    interferers = np.flatnonzero(theta > 0)
    fixed = interferers[beta_slope[interferers] == 0]
    moving = interferers[beta_slope[interferers] != 0]
    base_scale = link_scale(config, k)

    def inner(t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        n = t.size
        # rho terms whose beta does not depend on r are evaluated once per t
        rho_fixed = np.zeros((len(fixed), n))
        for j, l in enumerate(fixed):
            rho_fixed[j] = rho_unit(t * math.exp(-log_beta0[l]), alpha_i)
        own = rho_unit(t, alpha_i) * theta[k] if theta[k] > 0 else np.zeros(n)
        scale = base_scale / np.sqrt(1.0 + own)
        if w > 0:
            with np.errstate(divide="ignore"):
                noise_scale = (P[k] / (np.maximum(t, 1e-300) * w)) ** (1.0 / alpha_i)
            scale = np.minimum(scale, noise_scale)

        def f(r, idx):
            tt = t[idx]
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                logr = np.log(r)
                expo_sum = np.zeros_like(r)
                for l in range(config.n_tiers):
                    weight = 1.0
                    if l in fixed:
                        weight += theta[l] * rho_fixed[list(fixed).index(l)][idx]
                    elif l in moving:
                        s = tt * np.exp(-(log_beta0[l] + beta_slope[l] * logr))
                        weight += theta[l] * rho_unit(s, alpha_i)
                    expo_sum += weight * coef[l] * r ** expo[l]
                if w > 0:
                    expo_sum += tt * w * r**alpha_i / P[k]
                out = r * np.exp(-expo_sum)
            return np.where(r > 0, out, 0.0)

        return integrate_semi_infinite_batch(f, n, settings.tighter(), scale)

    try:
        value = _outer_t(inner, alpha_i, settings)
    except QuadratureError as exc:
        raise RateQuadratureError(i, k, exc) from exc
    b = config.share[i, k]
    return 2.0 * math.pi * config.densities[k] * b * derived.admission[i, k] * value


def single_flow_rate(
    config: NetworkConfig,
    settings: QuadratureSettings = NESTED_SETTINGS,
    derived: DerivedState | None = None,
) -> RateReport:
    """UE ergodic rate of single-flow CA for an arbitrary deployment."""
    require_valid(config)
    if derived is None:
        derived = derive(config)
    rates = np.zeros((config.n_bands, config.n_tiers))
    for i in range(config.n_bands):
        for k in range(config.n_tiers):
            if config.deployment.uses(i, k) and derived.admission[i, k] > 0:
                rates[i, k] = _pair_rate(config, derived, i, k, settings)
    return RateReport.from_matrix(rates, "analytic-prop2")


def single_tier_rate(
    config: NetworkConfig,
    peak: bool = False,
    settings: QuadratureSettings = NESTED_SETTINGS,
) -> RateReport:
    """UE ergodic rate of a one-tier network aggregating all of its bands.

    With ``peak=True`` the UE owns each whole band (``b = B``) with full load
    and admission and noise is ignored, giving ``sum_i q(alpha_i) B_i``.
    """
    require_valid(config)
    if config.n_tiers != 1:
        raise PreconditionError(f"single-tier rate needs exactly one tier, got {config.n_tiers}")
    rates = np.zeros((config.n_bands, 1))
    if peak:
        for i, band in enumerate(config.bands):
            rates[i, 0] = q_alpha(band.path_loss_exponent) * band.bandwidth
        return RateReport.from_matrix(rates, "analytic-prop1-peak")

    lam = config.densities[0]
    P = config.powers[0]
    lam_u = config.ue_density
    nbar = SINGLE_TIER_CELL_FACTOR * lam_u / lam
    w = config.noise_terms()[:, 0]
    for i, band in enumerate(config.bands):
        alpha, B = band.path_loss_exponent, band.bandwidth
        b = config.share[i, 0]
        theta = min(lam_u * b / (lam * B), 1.0)
        p = min(B / (b * nbar), 1.0)
        if w[i] == 0:
            eff = integrate_power_tail(
                lambda t: 1.0 / ((1.0 + t) * (1.0 + theta * rho_unit(t, alpha))), 2.0 / alpha, settings
            )
            rates[i, 0] = p * b * eff
            continue

        def inner(t, alpha=alpha, theta=theta, wi=w[i]):
            t = np.asarray(t, dtype=float)
            decay = math.pi * lam * (theta * rho_unit(t, alpha) + 1.0)

            def f(r, idx):
                with np.errstate(over="ignore", invalid="ignore"):
                    out = r * np.exp(-wi * t[idx] * r**alpha / P - decay[idx] * r * r)
                return out

            return integrate_semi_infinite_batch(f, t.size, settings.tighter(), 1.0 / np.sqrt(decay))

        try:
            value = _outer_t(inner, alpha, settings)
        except QuadratureError as exc:
            raise RateQuadratureError(i, 0, exc) from exc
        rates[i, 0] = 2.0 * math.pi * lam * p * b * value
    return RateReport.from_matrix(rates, "analytic-prop1")


def _reduced_rate(
    config: NetworkConfig,
    derived: DerivedState,
    i: int,
    k: int,
    interference: Callable[[np.ndarray], np.ndarray],
    closed_form: Callable[[np.ndarray], np.ndarray] | None,
    settings: QuadratureSettings,
) -> float:
    """``pi_k b p int int e^{-t w r^a / P} e^{-r^2 I(t)} f(r | k) / (1 + t)``.

    ``interference(t)`` is the coefficient of ``r**2`` in the exponent. When
    ``closed_form`` is given the r-integral is replaced by it (noise-free case
    with Gaussian conditional link length).
    """
    alpha = config.bands[i].path_loss_exponent
    cov = derived.coverage
    b, p, w = config.share[i, k], derived.admission[i, k], derived.noise[i, k]
    P = config.powers[k]
    if closed_form is not None:
        value = _outer_t(closed_form, alpha, settings)
    else:
        base_scale = link_scale(config, k)

        def inner(t):
            t = np.asarray(t, dtype=float)
            interf = interference(t)

            def f(r, idx):
                tt = t[idx]
                with np.errstate(over="ignore", invalid="ignore"):
                    out = np.exp(-tt * w * r**alpha / P - interf[idx] * r * r)
                    out = out * conditional_distance_pdf(config, k, r, cov)
                return np.where(np.isfinite(out), out, 0.0)

            scale = base_scale / np.sqrt(1.0 + interf * base_scale**2)
            return integrate_semi_infinite_batch(f, t.size, settings.tighter(), scale)

        value = _outer_t(inner, alpha, settings)
    return cov[k] * b * p * value


def orthogonal_rate(config: NetworkConfig, settings: QuadratureSettings = NESTED_SETTINGS) -> RateReport:
    """Rate when ``M == K`` and tier ``k`` uses band ``k`` alone.

    Without noise and with a common exponent the r-integral collapses and each
    tier contributes ``pi_k b p int dt / ((1 + t)(1 + pi_k theta rho(t)))``.
    """
    require_valid(config)
    if config.n_bands != config.n_tiers or not np.array_equal(config.usage, np.eye(config.n_tiers, dtype=bool)):
        raise PreconditionError("orthogonal rate needs M == K and tier k using band k only")
    derived = derive(config)
    cov, theta = derived.coverage, derived.load
    common_alpha = np.ptp(config.alphas) == 0
    rates = np.zeros((config.n_bands, config.n_tiers))
    for k in range(config.n_tiers):
        alpha = config.bands[k].path_loss_exponent
        lam, th = config.densities[k], theta[k, k]

        def interference(t, lam=lam, th=th, alpha=alpha):
            return math.pi * lam * th * rho_unit(t, alpha)

        closed = None
        if derived.noise[k, k] == 0 and common_alpha:
            def closed(t, pk=cov[k], th=th, alpha=alpha):
                return 1.0 / (1.0 + pk * th * rho_unit(t, alpha))
        try:
            rates[k, k] = _reduced_rate(config, derived, k, k, interference, closed, settings)
        except QuadratureError as exc:
            raise RateQuadratureError(k, k, exc) from exc
    return RateReport.from_matrix(rates, "analytic-cor4")


def cochannel_rate(config: NetworkConfig, settings: QuadratureSettings = NESTED_SETTINGS) -> RateReport:
    """Rate when a single band is shared by all tiers.

    The cross-tier interference integral starts at ``Z_l / Z_k`` (intra-tier at 1).
    """
    require_valid(config)
    if config.n_bands != 1:
        raise PreconditionError(f"cochannel rate needs exactly one band, got {config.n_bands}")
    derived = derive(config)
    alpha = config.bands[0].path_loss_exponent
    cov, theta = derived.coverage, derived.load[0]
    lam, P, Z = config.densities, config.powers, config.biases
    rates = np.zeros((1, config.n_tiers))
    for k in range(config.n_tiers):
        weights = math.pi * theta * lam * (Z * P / (Z[k] * P[k])) ** (2.0 / alpha)
        ratio = Z / Z[k]

        def interference(t, weights=weights, ratio=ratio):
            return sum(weights[l] * rho_unit(t / ratio[l], alpha) for l in range(len(ratio)) if weights[l] > 0)

        closed = None
        if derived.noise[0, k] == 0:
            def closed(t, ratio=ratio):
                s = sum(cov[l] * theta[l] * rho_unit(t / ratio[l], alpha) for l in range(len(ratio)) if theta[l] > 0)
                return 1.0 / (1.0 + s)
        try:
            rates[0, k] = _reduced_rate(config, derived, 0, k, interference, closed, settings)
        except QuadratureError as exc:
            raise RateQuadratureError(0, k, exc) from exc
    return RateReport.from_matrix(rates, "analytic-cor5")


# ---------------------------------------------------------------------------
# deployment comparison


@dataclass(frozen=True)
class DeploymentComparison:
    R_1K: float  # one band, K tiers
    R_K1: float  # K bands, one tier
    R_KK_orthogonal: float
    R_KK_cochannel: float
    density_ratio: float  # sum(lambda) / (K lambda_1)

    def as_dict(self) -> dict[str, float]:
        return {
            "R_1K": self.R_1K,
            "R_K1": self.R_K1,
            "R_KK_orthogonal": self.R_KK_orthogonal,
            "R_KK_cochannel": self.R_KK_cochannel,
            "density_ratio": self.density_ratio,
        }


def comparison_violations(config: NetworkConfig) -> list[str]:
    """Reasons the fully-loaded comparison formulas do not apply (empty if they do)."""
    out = []
    if not config.interference_limited:
        out.append("network must be interference-limited (noise ignored)")
    if not np.allclose(config.biases, 1.0, rtol=0, atol=1e-12):
        out.append("all biasing factors must be 1 (0 dB)")
    if np.ptp(config.alphas) != 0 or np.ptp(config.bandwidths) != 0:
        out.append("all bands must share one path-loss exponent and one bandwidth")
    if out:
        return out

    K = config.n_tiers
    alpha, B = config.alphas[0], config.bandwidths[0]
    lam, lam_u = config.densities, config.ue_density
    w = lam * config.powers ** (2.0 / alpha)
    cov = w / w.sum()
    b_tiers = config.share[0]
    theta = b_tiers * lam_u * cov / (lam * B)
    nbar = 1.0 + MULTI_TIER_CELL_FACTOR * cov * lam_u / lam
    for k in range(K):
        if theta[k] < 1.0 or nbar[k] <= B / b_tiers[k]:
            out.append(
                f"UE density too low: tier {k + 1} is not fully loaded "
                f"(load {min(theta[k], 1.0):.3g}, mean cell users {nbar[k]:.3g} vs capacity {B / b_tiers[k]:.3g})"
            )
    b1 = config.share[0, 0]
    if lam_u * b1 / (lam[0] * B) < 1.0 or SINGLE_TIER_CELL_FACTOR * lam_u / lam[0] <= B / b1:
        out.append("UE density too low: the single-tier K-band network is not fully loaded")
    return out


def deployment_comparison(config: NetworkConfig, settings: QuadratureSettings = KERNEL_SETTINGS) -> DeploymentComparison:
    """Fully-loaded, interference-limited rates of four band layouts built from ``config``.

    Tiers, densities and powers come from ``config``; the common band
    (exponent ``alpha``, bandwidth ``B``) is band 1.
    """
    require_valid(config)
    bad = comparison_violations(config)
    if bad:
        raise PreconditionError("deployment comparison assumptions violated: " + "; ".join(bad))
    K = config.n_tiers
    alpha, B = config.alphas[0], config.bandwidths[0]
    lam = config.densities
    unit = FULL_LOAD_CONSTANT * B / config.ue_density
    q = q_alpha(alpha, settings)
    w = lam * config.powers ** (2.0 / alpha)
    cov = w / w.sum()
    orth = sum(
        lam[k] * unit * integrate_power_tail(
            lambda t, c=cov[k]: 1.0 / ((1.0 + t) * (1.0 + c * rho_unit(t, alpha))), 2.0 / alpha, settings
        )
        for k in range(K)
    )
    return DeploymentComparison(
        R_1K=float(lam.sum() * unit * q),
        R_K1=float(K * lam[0] * unit * q),
        R_KK_orthogonal=float(orth),
        R_KK_cochannel=float(lam.sum() * unit * K * q),
        density_ratio=float(lam.sum() / (K * lam[0])),
    )
