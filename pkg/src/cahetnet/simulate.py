"""Monte Carlo UE rate estimates on sampled Poisson layouts.

One iteration:

1. draw Poisson BS counts per tier and a Poisson UE count on a square, place
   them uniformly;
2. draw unit-mean exponential fading per (BS, UE, band), or per subchannel;
3. attach every UE to the nearest BS of the tier maximising ``Z P r**-alpha``
   over all used (tier, band) pairs; the UE then aggregates every band of
   that tier;
4. in each band, every BS serves up to ``S = B / b`` of its UEs, chosen
   uniformly, each on a distinct random subchannel;
5. a scheduled UE gets ``b ln(1 + SINR)`` per band, where only BSs active on
   the same subchannel interfere; unscheduled UEs get 0.

The per-iteration mean over UEs is averaged over iterations.

Random streams are Philox generators keyed by
``(master_seed, iteration, purpose, index)``, so results do not depend on the
number of worker threads or the order iterations run in.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .model import NetworkConfig, require_valid

BOUNDARY_MODES = ("large-area", "toroidal")
FADING_GRANULARITIES = ("per-band", "per-subchannel")
ASSOCIATION_METRICS = ("model", "physical")

# stream purposes
_BS_POINTS, _UE_POINTS, _FADING, _SCHEDULE = 0, 1, 2, 3


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimParams:
    area_side: float = 20_000.0  # m
    iterations: int = 100
    master_seed: int = 0
    boundary_mode: str = "large-area"
    fading_granularity: str = "per-band"
    # "physical" multiplies the association metric by the band's reference gain
    association_metric: str = "model"
    rayleigh_fading: bool = True  # False pins every fading gain to 1
    sinr_cap: float = 1e12  # applied when the config is interference-limited
    # area fraction of the centred square whose UEs enter the statistics (large-area mode)
    measured_fraction: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.area_side) and self.area_side > 0):
            raise ValueError("area_side must be positive")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError("iterations must be an integer >= 1")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ValueError(f"boundary_mode must be one of {BOUNDARY_MODES}")
        if self.fading_granularity not in FADING_GRANULARITIES:
            raise ValueError(f"fading_granularity must be one of {FADING_GRANULARITIES}")
        if self.association_metric not in ASSOCIATION_METRICS:
            raise ValueError(f"association_metric must be one of {ASSOCIATION_METRICS}")
        if not 0 < self.measured_fraction <= 1:
            raise ValueError("measured_fraction must lie in (0, 1]")
        if not self.sinr_cap > 0:
            raise ValueError("sinr_cap must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")


def _rng(params: SimParams, iteration: int, purpose: int, index: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(params.master_seed, spawn_key=(iteration, purpose, index))
    return np.random.Generator(np.random.Philox(seq))


def _subchannels(config: NetworkConfig) -> np.ndarray:
    """Subchannel count per band (common share per band is enforced by validation)."""
    share = config.share
    out = np.zeros(config.n_bands, dtype=int)
    for i in range(config.n_bands):
        k = config.deployment.tiers_of(i)[0]
        out[i] = int(round(config.bands[i].bandwidth / share[i, k]))
    return out


@dataclass
class NetworkRealization:
    bs_points: tuple[np.ndarray, ...]  # per tier, (n_k, 2)
    ue_points: np.ndarray  # (n_u, 2)
    fading: tuple[np.ndarray, ...]  # per band, (n_bs, n_u) or (n_bs, n_u, S_i)
    area_side: float
    toroidal: bool
    iteration: int = 0

    @property
    def bs_tier(self) -> np.ndarray:
        return np.concatenate([np.full(len(p), k) for k, p in enumerate(self.bs_points)]).astype(int)

    @property
    def all_bs(self) -> np.ndarray:
        return np.concatenate(self.bs_points, axis=0) if self.bs_points else np.zeros((0, 2))

    @property
    def tier_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([len(p) for p in self.bs_points])]).astype(int)

    @property
    def n_ue(self) -> int:
        return len(self.ue_points)

    def distances(self, bs_index: np.ndarray | None = None, ue_index: np.ndarray | None = None) -> np.ndarray:
        """BS-to-UE distance matrix, wrapped on the torus in toroidal mode."""
        bs = self.all_bs if bs_index is None else self.all_bs[bs_index]
        ue = self.ue_points if ue_index is None else self.ue_points[ue_index]
        d = np.abs(bs[:, None, :] - ue[None, :, :])
        if self.toroidal:
            d = np.minimum(d, self.area_side - d)
        return np.hypot(d[..., 0], d[..., 1])


@dataclass(frozen=True)
class Association:
    tier: np.ndarray  # (n_u,), -1 when no BS exists
    bs: np.ndarray  # global BS index
    band: np.ndarray  # band achieving the maximum
    distance: np.ndarray  # serving distance (m)


@dataclass(frozen=True)
class Schedule:
    # per band: subchannel of each UE (-1 when not scheduled or band not aggregated)
    subchannel: tuple[np.ndarray, ...]
    # per band: (n_bs, S_i) boolean, True when the BS transmits on that subchannel
    active: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class RateEstimate:
    mean_rate: float  # nats/s
    std_error: float
    per_iteration_means: tuple[float, ...]
    iterations_used: int
    empty_iterations: tuple[int, ...] = ()
    per_band_tier: tuple[tuple[float, ...], ...] = ()  # mean per-UE contribution [i][k]
    tier_counts: tuple[int, ...] = ()  # UEs attached to each tier, summed over iterations


def sample_network(config: NetworkConfig, params: SimParams, iteration: int) -> NetworkRealization:
    """Points and fading for one iteration, fixed by ``(master_seed, iteration)``."""
    require_valid(config)
    L = params.area_side
    area = L * L
    bs = []
    for k, tier in enumerate(config.tiers):
        rng = _rng(params, iteration, _BS_POINTS, k)
        n = rng.poisson(tier.bs_density * area)
        bs.append(rng.uniform(0.0, L, size=(n, 2)))
    rng = _rng(params, iteration, _UE_POINTS)
    n_u = rng.poisson(config.ue_density * area)
    ue = rng.uniform(0.0, L, size=(n_u, 2))
    n_bs = sum(len(p) for p in bs)
    subch = _subchannels(config)
    fading = []
    for i in range(config.n_bands):
        shape = (n_bs, n_u) if params.fading_granularity == "per-band" else (n_bs, n_u, int(subch[i]))
        if params.rayleigh_fading:
            fading.append(_rng(params, iteration, _FADING, i).standard_exponential(shape))
        else:
            fading.append(np.ones(shape))
    return NetworkRealization(tuple(bs), ue, tuple(fading), L, params.boundary_mode == "toroidal", iteration)


def associate(realization: NetworkRealization, config: NetworkConfig, metric: str = "model") -> Association:
    """Strongest biased (tier, band) pair per UE; ties go to the lower tier, then band."""
    n_u = realization.n_ue
    offsets = realization.tier_offsets
    K, M = config.n_tiers, config.n_bands
    near_d = np.full((K, n_u), np.inf)
    near_j = np.full((K, n_u), -1, dtype=int)
    box = realization.area_side if realization.toroidal else None
    for k, pts in enumerate(realization.bs_points):
        if len(pts) == 0 or n_u == 0:
            continue
        pts_in = np.mod(pts, realization.area_side) if box else pts
        ue_in = np.mod(realization.ue_points, realization.area_side) if box else realization.ue_points
        d, j = cKDTree(pts_in, boxsize=box).query(ue_in)
        near_d[k], near_j[k] = d, j + offsets[k]

    log_zp = np.log(config.biases * config.powers)
    log_c = np.log(config.reference_gains) if metric == "physical" else np.zeros(M)
    cand_tier, cand_band = [], []
    for k in range(K):
        for i in config.deployment.bands_of(k):
            cand_tier.append(k)
            cand_band.append(i)
    cand_tier, cand_band = np.array(cand_tier), np.array(cand_band)
    with np.errstate(divide="ignore"):
        log_d = np.log(near_d[cand_tier])
    score = log_zp[cand_tier, None] + log_c[cand_band, None] - config.alphas[cand_band, None] * log_d
    score = np.where(np.isfinite(near_d[cand_tier]), score, -np.inf)

    if n_u == 0 or not np.isfinite(score).any():
        empty = np.full(n_u, -1, dtype=int)
        return Association(empty, empty.copy(), empty.copy(), np.full(n_u, np.inf))
    best = np.argmax(score, axis=0)  # first maximum -> lower tier, then lower band
    tier = cand_tier[best]
    cols = np.arange(n_u)
    return Association(tier, near_j[tier, cols], cand_band[best], near_d[tier, cols])


def schedule(
    realization: NetworkRealization,
    association: Association,
    config: NetworkConfig,
    rng: np.random.Generator,
) -> Schedule:
    """Uniform random selection of up to ``S`` UEs per BS and band on distinct subchannels."""
    n_bs = len(realization.all_bs)
    n_u = realization.n_ue
    usage = config.usage
    subch = _subchannels(config)
    sub_out, active_out = [], []
    for i in range(config.n_bands):
        S = int(subch[i])
        sub = np.full(n_u, -1, dtype=int)
        active = np.zeros((n_bs, S), dtype=bool)
        members = np.flatnonzero((association.tier >= 0) & usage[i, np.maximum(association.tier, 0)])
        keys = rng.random(n_u)
        perm = np.argsort(rng.random((n_bs, S)), axis=1)
        if members.size:
            bs = association.bs[members]
            order = np.lexsort((keys[members], bs))
            sorted_bs = bs[order]
            starts = np.searchsorted(sorted_bs, sorted_bs, side="left")
            rank = np.arange(order.size) - starts
            chosen = rank < S
            ue = members[order][chosen]
            server = sorted_bs[chosen]
            sub[ue] = perm[server, rank[chosen]]
            active[server, sub[ue]] = True
        sub_out.append(sub)
        active_out.append(active)
    return Schedule(tuple(sub_out), tuple(active_out))


def compute_rates(
    realization: NetworkRealization,
    association: Association,
    sched: Schedule,
    config: NetworkConfig,
    sinr_cap: float = 1e12,
) -> np.ndarray:
    """Per-UE rate contributions, shape (n_bands, n_ue), in nats/s."""
    n_u = realization.n_ue
    out = np.zeros((config.n_bands, n_u))
    powers = config.powers[realization.bs_tier] if n_u else np.zeros(0)
    noise = config.noise_terms()
    for i in range(config.n_bands):
        ue = np.flatnonzero(sched.subchannel[i] >= 0)
        if ue.size == 0:
            continue
        s = sched.subchannel[i][ue]
        serving = association.bs[ue]
        alpha = config.bands[i].path_loss_exponent
        H = realization.fading[i]
        if H.ndim == 3:
            H = H[:, ue, s]
        else:
            H = H[:, ue]
        with np.errstate(divide="ignore"):
            rx = powers[:, None] * H * realization.distances(ue_index=ue) ** (-alpha)
        cols = np.arange(ue.size)
        signal = rx[serving, cols]
        rx[serving, cols] = 0.0
        interference = (rx * sched.active[i][:, s]).sum(axis=0)
        w = noise[i, association.tier[ue]]
        with np.errstate(divide="ignore", invalid="ignore"):
            sinr = signal / (interference + w)
        if config.interference_limited:
            sinr = np.minimum(np.nan_to_num(sinr, nan=sinr_cap, posinf=sinr_cap), sinr_cap)
        b = config.share[i, association.tier[ue]]
        out[i, ue] = b * np.log1p(sinr)
    return out


@dataclass(frozen=True)
class IterationSummary:
    iteration: int
    n_measured: int
    mean_rate: float | None
    per_band_tier: np.ndarray  # (M, K) mean contribution per measured UE
    tier_counts: np.ndarray  # (K,)


def _measured_mask(realization: NetworkRealization, fraction: float) -> np.ndarray:
    if fraction >= 1.0 or realization.toroidal:
        return np.ones(realization.n_ue, dtype=bool)
    half = 0.5 * realization.area_side * math.sqrt(fraction)
    centre = 0.5 * realization.area_side
    return np.all(np.abs(realization.ue_points - centre) <= half, axis=1)


def simulate_iteration(config: NetworkConfig, params: SimParams, iteration: int) -> IterationSummary:
    real = sample_network(config, params, iteration)
    assoc = associate(real, config, params.association_metric)
    sched = schedule(real, assoc, config, _rng(params, iteration, _SCHEDULE))
    rates = compute_rates(real, assoc, sched, config, params.sinr_cap)
    mask = _measured_mask(real, params.measured_fraction) & (assoc.tier >= 0)
    K, M = config.n_tiers, config.n_bands
    counts = np.bincount(assoc.tier[mask], minlength=K)[:K]
    n = int(mask.sum())
    if n == 0:
        return IterationSummary(iteration, 0, None, np.zeros((M, K)), counts)
    breakdown = np.zeros((M, K))
    for k in range(K):
        sel = mask & (assoc.tier == k)
        breakdown[:, k] = rates[:, sel].sum(axis=1) / n
    return IterationSummary(iteration, n, float(rates[:, mask].sum() / n), breakdown, counts)


def run_monte_carlo(config: NetworkConfig, params: SimParams) -> RateEstimate:
    """Mean UE rate and its standard error over ``params.iterations`` layouts."""
    require_valid(config, simulation=True)
    its = range(int(params.iterations))
    if params.workers > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            summaries = list(pool.map(lambda it: simulate_iteration(config, params, it), its))
    else:
        summaries = [simulate_iteration(config, params, it) for it in its]
    used = [s for s in summaries if s.mean_rate is not None]
    empty = tuple(s.iteration for s in summaries if s.mean_rate is None)
    if not used:
        raise SimulationError("every iteration had zero UEs; increase the UE density or the area")
    means = np.array([s.mean_rate for s in used])
    std_error = float(means.std(ddof=1) / math.sqrt(len(means))) if len(means) > 1 else float("nan")
    breakdown = np.mean([s.per_band_tier for s in used], axis=0)
    counts = np.sum([s.tier_counts for s in summaries], axis=0)
    return RateEstimate(
        mean_rate=float(means.mean()),
        std_error=std_error,
        per_iteration_means=tuple(float(v) for v in means),
        iterations_used=len(used),
        empty_iterations=empty,
        per_band_tier=tuple(tuple(float(v) for v in row) for row in breakdown),
        tier_counts=tuple(int(c) for c in counts),
    )


def dump_realization(
    path: str | Path,
    realization: NetworkRealization,
    association: Association,
    sched: Schedule,
) -> None:
    """Write points, association and per-band subchannel assignment as JSON.

    Keys: ``iteration``, ``area_side_m``, ``toroidal``, ``bs`` (list of
    ``{tier, x, y}``), ``ue`` (list of ``{x, y, tier, bs, band, distance_m,
    subchannel}``) where ``subchannel`` has one entry per band (-1 = not
    scheduled). Tier, BS and band indices are 0-based.
    """
    bs_tier = realization.bs_tier
    doc = {
        "iteration": realization.iteration,
        "area_side_m": realization.area_side,
        "toroidal": realization.toroidal,
        "bs": [{"tier": int(t), "x": float(p[0]), "y": float(p[1])} for t, p in zip(bs_tier, realization.all_bs)],
        "ue": [
            {
                "x": float(p[0]),
                "y": float(p[1]),
                "tier": int(association.tier[u]),
                "bs": int(association.bs[u]),
                "band": int(association.band[u]),
                "distance_m": float(association.distance[u]),
                "subchannel": [int(s[u]) for s in sched.subchannel],
            }
            for u, p in enumerate(realization.ue_points)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
