"""Adaptive Gauss-Kronrod quadrature and the special integrals of the model.

The engine integrates vectorised integrands over ``[0, inf)`` through the map
``x = scale * u / (1 - u)``. Subdivision is batched: every pass evaluates all
unfinished intervals at once and bisects the ones whose local error exceeds
their share of the tolerance. The order of work never depends on timing, so
results are bitwise reproducible.

Besides the engine this module holds the interference integral

    rho(t, alpha, beta) = int_1^inf t / (t + beta x**(alpha/2)) dx,

the peak-rate constant ``q(alpha)`` and the association kernel ``h_k(r)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import hyp2f1

from .model import NetworkConfig, k_star_exponents

# 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15)
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])  # 15 abscissae on [-1, 1]
_KRONROD = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS = np.zeros(15)
_GAUSS[[1, 3, 5]] = _WG[:3]
_GAUSS[[9, 11, 13]] = _WG[2::-1]
_GAUSS[7] = _WG[3]


class QuadratureError(ArithmeticError):
    """The subdivision budget ran out before the tolerance was met."""

    def __init__(self, message: str, estimate, error):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class QuadratureSettings:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be at least 1")

    def tighter(self, factor: float = 10.0) -> "QuadratureSettings":
        return QuadratureSettings(self.rel_tol / factor, self.abs_tol / factor, self.max_subdivisions)


KERNEL_SETTINGS = QuadratureSettings()
NESTED_SETTINGS = QuadratureSettings(rel_tol=1e-6)


def _gk15(g, lo, hi, owner):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u = mid[:, None] + half[:, None] * _NODES[None, :]
    vals = np.asarray(g(u.ravel(), np.repeat(owner, 15)), dtype=float).reshape(u.shape)
    kron = half * (vals @ _KRONROD)
    err = np.abs(kron - half * (vals @ _GAUSS))
    return kron, err


def _adaptive(
    g: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n_problems: int,
    a: float,
    b: float,
    settings: QuadratureSettings,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate ``g(u, idx)`` over ``[a, b]`` for ``n_problems`` integrands at once.

    ``idx`` tells the integrand which problem each abscissa belongs to. A
    problem is finished once its summed error estimate meets the looser of the
    absolute and relative tolerances; until then every interval carrying more
    than its even share of the tolerance is bisected.
    """
    lo = np.full(n_problems, a, dtype=float)
    hi = np.full(n_problems, b, dtype=float)
    owner = np.arange(n_problems)
    kron, err = _gk15(g, lo, hi, owner)
    splits = np.zeros(n_problems, dtype=int)

    while True:
        total = np.bincount(owner, weights=kron, minlength=n_problems)
        total_err = np.bincount(owner, weights=err, minlength=n_problems)
        tol = np.maximum(settings.abs_tol, settings.rel_tol * np.abs(total))
        open_ = total_err > tol
        if not open_.any():
            return total, total_err
        if splits[open_].max() >= settings.max_subdivisions:
            raise QuadratureError(
                f"quadrature did not converge within {settings.max_subdivisions} subdivisions "
                f"({int(open_.sum())} of {n_problems} integrals unresolved)",
                total if n_problems > 1 else float(total[0]),
                total_err if n_problems > 1 else float(total_err[0]),
            )
        count = np.bincount(owner, minlength=n_problems)
        refine = open_[owner] & (err > tol[owner] / (2.0 * count[owner]))
        splits += np.bincount(owner[refine], minlength=n_problems)

        mid = 0.5 * (lo[refine] + hi[refine])
        # children replace their parent in place so interval order stays fixed
        new_lo = np.column_stack([lo[refine], mid]).ravel()
        new_hi = np.column_stack([mid, hi[refine]]).ravel()
        new_owner = np.repeat(owner[refine], 2)
        new_kron, new_err = _gk15(g, new_lo, new_hi, new_owner)

        keep = ~refine
        pos = np.concatenate([np.flatnonzero(keep), np.repeat(np.flatnonzero(refine), 2)])
        order = np.argsort(pos, kind="stable")
        lo = np.concatenate([lo[keep], new_lo])[order]
        hi = np.concatenate([hi[keep], new_hi])[order]
        owner = np.concatenate([owner[keep], new_owner])[order]
        kron = np.concatenate([kron[keep], new_kron])[order]
        err = np.concatenate([err[keep], new_err])[order]


def integrate_interval(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    settings: QuadratureSettings = KERNEL_SETTINGS,
) -> float:
    """Adaptive integral of a vectorised ``f`` over the finite interval ``[a, b]``."""
    if a == b:
        return 0.0
    value, _ = _adaptive(lambda u, _idx: f(u), 1, a, b, settings)
    return float(value[0])


def integrate_semi_infinite(
    f: Callable[[np.ndarray], np.ndarray],
    settings: QuadratureSettings = KERNEL_SETTINGS,
    scale: float = 1.0,
) -> float:
    """Integral of a vectorised ``f`` over ``[0, inf)``.

    Uses ``x = scale * u / (1 - u)``; ``scale`` should be the width of the
    region holding most of the mass. The Jacobian blow-up at ``u -> 1`` is left
    to subdivision.

    Raises:
        QuadratureError: carrying the best estimate and error bound when the
            subdivision budget is exhausted.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")

    def g(u, _idx):
        v = 1.0 - u
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            x = scale * u / v
            out = f(x) * (scale / (v * v))
        return np.where(np.isfinite(out), out, 0.0)

    value, _ = _adaptive(g, 1, 0.0, 1.0, settings)
    return float(value[0])


def integrate_semi_infinite_batch(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    n_problems: int,
    settings: QuadratureSettings = KERNEL_SETTINGS,
    scale=1.0,
) -> np.ndarray:
    """Integrate ``n_problems`` integrands over ``[0, inf)`` in one batched run.

    ``f(x, idx)`` receives abscissae and the problem index of each one. ``scale``
    may be a scalar or one value per problem.
    """
    scales = np.broadcast_to(np.asarray(scale, dtype=float), (n_problems,))

    def g(u, idx):
        s = scales[idx]
        v = 1.0 - u
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            x = s * u / v
            out = f(x, idx) * (s / (v * v))
        return np.where(np.isfinite(out), out, 0.0)

    value, _ = _adaptive(g, n_problems, 0.0, 1.0, settings)
    return value


def integrate_power_tail(
    f: Callable[[np.ndarray], np.ndarray],
    decay: float,
    settings: QuadratureSettings = KERNEL_SETTINGS,
) -> float:
    """Integral over ``[0, inf)`` of a vectorised ``f`` with ``f(t) ~ t**(-1 - decay)``.

    ``[0, 1]`` is integrated directly and ``[1, inf)`` through
    ``t = v**(-1/decay)``, which makes the tail integrand bounded. Both halves
    share one adaptive run on ``[0, 2]``.
    """
    if not decay > 0:
        raise ValueError("decay exponent must be positive")
    m = 1.0 / decay

    def g(u, _idx):
        v = np.where(u > 1.0, 2.0 - u, 1.0)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            t = np.where(u > 1.0, v ** (-m), u)
            jac = np.where(u > 1.0, m * v ** (-m - 1.0), 1.0)
            out = f(t) * jac
        return np.where(np.isfinite(out), out, 0.0)

    value, _ = _adaptive(g, 1, 0.0, 2.0, settings)
    return float(value[0])


# ---------------------------------------------------------------------------
# rho and q


def _check_alpha(alpha: float) -> None:
    if not alpha > 2:
        raise ValueError(f"path-loss exponent must exceed 2, got {alpha}")


def rho_unit(s, alpha: float):
    """``rho(s, alpha, 1)`` in closed form, vectorised over ``s >= 0``.

    Uses two hypergeometric representations whose arguments stay in
    ``[-1, 0]``::

        s <= 1:  2 s / (alpha - 2) * 2F1(1, 1 - d; 2 - d; -s)
        s >  1:  s**d * pi d / sin(pi d) - 2F1(1, d; 1 + d; -1/s)

    with ``d = 2 / alpha``. ``rho(t, alpha, beta) == rho_unit(t / beta, alpha)``.
    """
    _check_alpha(alpha)
    d = 2.0 / alpha
    s = np.asarray(s, dtype=float)
    small = np.minimum(s, 1.0)
    big = np.maximum(s, 1.0)
    with np.errstate(over="ignore"):
        lo = (2.0 * small / (alpha - 2.0)) * hyp2f1(1.0, 1.0 - d, 2.0 - d, -small)
        hi = big**d * (math.pi * d / math.sin(math.pi * d)) - hyp2f1(1.0, d, 1.0 + d, -1.0 / big)
    out = np.where(s <= 1.0, lo, hi)
    return out if out.ndim else float(out)


def rho(t: float, alpha: float, beta: float, settings: QuadratureSettings = KERNEL_SETTINGS) -> float:
    """Interference integral ``int_1^inf t / (t + beta x**(alpha/2)) dx`` by quadrature.

    The substitution ``x = v**(-1/(alpha/2 - 1))`` turns it into a bounded
    integrand on ``(0, 1]``, so the slow tail near ``alpha = 2`` costs nothing.

    For ``alpha == 4`` the closed form
    ``sqrt(t/beta) * (pi/2 - arctan(sqrt(beta/t)))`` is returned instead.
    """
    _check_alpha(alpha)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    if t == 0:
        return 0.0
    if alpha == 4:
        return rho4_closed_form(t, beta)
    # x = v**(-1/(a-1)) folds the slowly decaying x**(-a) tail onto (0, 1]
    a = alpha / 2.0
    c = a / (a - 1.0)
    return integrate_interval(lambda v: t / ((a - 1.0) * (t * v**c + beta)), 0.0, 1.0, settings)


def rho4_closed_form(t: float, beta: float) -> float:
    if t == 0:
        return 0.0
    return math.sqrt(t / beta) * (math.pi / 2 - math.atan(math.sqrt(beta / t)))


def q_alpha(alpha: float, settings: QuadratureSettings = KERNEL_SETTINGS) -> float:
    """Peak spectral efficiency ``int_0^inf dt / ((1 + t)(1 + rho(t, alpha, 1)))`` in nats/s/Hz."""
    _check_alpha(alpha)
    return _q_cached(float(alpha), settings)


@lru_cache(maxsize=256)
def _q_cached(alpha: float, settings: QuadratureSettings) -> float:
    return integrate_power_tail(
        lambda t: 1.0 / ((1.0 + t) * (1.0 + rho_unit(t, alpha))), 2.0 / alpha, settings
    )


def loaded_efficiency(alpha: float, load: float, settings: QuadratureSettings = KERNEL_SETTINGS) -> float:
    """``int_0^inf dt / ((1 + t)(1 + load * rho(t, alpha, 1)))``.

    Diverges as ``load -> 0``; a zero load is rejected.
    """
    _check_alpha(alpha)
    if not load > 0:
        raise ValueError("load must be positive for the interference-limited efficiency")
    return integrate_power_tail(
        lambda t: 1.0 / ((1.0 + t) * (1.0 + load * rho_unit(t, alpha))), 2.0 / alpha, settings
    )


# ---------------------------------------------------------------------------
# association kernel


def association_coefficients(config: NetworkConfig, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients ``c_l`` and exponents ``e_l`` with ``h_k(r) = exp(-sum c_l r**e_l)``.

    ``c_l = pi lambda_l (Z_l P_l / Z_k P_k)**(2/alpha_l*)`` and
    ``e_l = 2 alpha_k* / alpha_l*``.
    """
    a_star = k_star_exponents(config)
    zp = config.biases * config.powers
    coef = math.pi * config.densities * (zp / zp[k]) ** (2.0 / a_star)
    expo = 2.0 * a_star[k] / a_star
    return coef, expo


def h_k(r, config: NetworkConfig, k: int):
    """Probability that no tier beats tier ``k``'s nearest BS at distance ``r``."""
    coef, expo = association_coefficients(config, k)
    r = np.asarray(r, dtype=float)
    with np.errstate(over="ignore"):
        s = np.sum(coef[:, None] * r.ravel()[None, :] ** expo[:, None], axis=0)
    out = np.exp(-s).reshape(r.shape)
    return out if out.ndim else float(out)


def link_scale(config: NetworkConfig, k: int) -> float:
    """Distance at which tier ``k``'s own term in ``-log h_k`` reaches one."""
    coef, _ = association_coefficients(config, k)
    return 1.0 / math.sqrt(coef[k])
