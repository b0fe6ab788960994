"""Discrete-event simulation of the two update queues.

The simulator is an oracle independent of the fluid-queue machinery: it plays
the queue packet by packet, reconstructs the age sample path from the
reception epochs, and reports empirical peak-age samples, an exact
time-average age cdf built from the piecewise-linear path (no binning), and
moment estimates with batch-means standard errors.

Per cycle the age ramps from the system time ``D_j`` of reception ``j`` up to
the next peak ``D_j + (delta_{j+1} - delta_j)``, so only the reception epochs
and generation times of successful packets need to be tracked.  There are at
most two pending events (next arrival, pending service completion), so no
event calendar is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .phdist import PhDistribution

__all__ = ["SimConfig", "SimCounts", "SimResult", "simulate",
           "empirical_aoi_cdf", "empirical_paoi_cdf"]

_CHUNK = 1 << 16


@dataclass(frozen=True)
class SimConfig:
    """One simulation run: model, distributions, policy knob, run length."""

    model: str                       # "bufferless" | "single_buffer"
    arrival: PhDistribution
    service: PhDistribution
    p: float = 0.0                   # preemption probability (bufferless)
    r: float = 0.0                   # replacement probability (single buffer)
    cycles: int = 10**6              # successful receptions to keep
    warmup: int = 10**3              # receptions discarded up front
    seed: int = 1

    def __post_init__(self):
        if self.model not in ("bufferless", "single_buffer"):
            raise StructuralError(f"unknown model {self.model!r}")
        if self.cycles < 10**4:
            raise StructuralError(f"cycles must be at least 10^4, got {self.cycles}")
        if self.warmup < 0:
            raise StructuralError(f"warmup must be nonnegative, got {self.warmup}")
        for name, prob in (("p", self.p), ("r", self.r)):
            if not 0.0 <= prob <= 1.0:
                raise StructuralError(f"{name} must lie in [0,1], got {prob}")


@dataclass(frozen=True)
class SimCounts:
    arrivals: int
    successful: int
    preempted: int
    replaced: int
    dropped: int
    in_flight: int

    def to_json(self) -> dict:
        return self.__dict__.copy()


class _Stream:
    """Chunked sampler so the event loop consumes plain array entries."""

    def __init__(self, dist: PhDistribution, rng: np.random.Generator):
        self._dist = dist
        self._rng = rng
        self._buf = dist.sample(rng, _CHUNK)
        self._i = 0

    def take(self) -> float:
        i = self._i
        if i == _CHUNK:
            self._buf = self._dist.sample(self._rng, _CHUNK)
            i = 0
        self._i = i + 1
        return self._buf[i]


class _Uniforms:
    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._buf = rng.random(_CHUNK)
        self._i = 0

    def take(self) -> float:
        i = self._i
        if i == _CHUNK:
            self._buf = self._rng.random(_CHUNK)
            i = 0
        self._i = i + 1
        return self._buf[i]


@dataclass(frozen=True)
class SimResult:
    """Empirical age data of one run (post-warmup).

    ``cycle_floor[j]``/``peaks[j]`` bound the j-th age cycle; ``paoi_samples``
    aliases ``peaks``.  Moment estimates carry batch-means standard errors.
    """

    config: SimConfig
    cycle_floor: np.ndarray          # D_j at the start of each kept cycle
    peaks: np.ndarray                # peak ages Phi_{j+1} ending each cycle
    waits: np.ndarray                # queue waits of kept successful packets
    counts: SimCounts
    mean_aoi: float
    se_mean_aoi: float
    m2_aoi: float
    se_m2_aoi: float
    mean_paoi: float
    se_mean_paoi: float
    m2_paoi: float
    se_m2_paoi: float
    mean_wait: float
    se_mean_wait: float
    _floor_sorted: np.ndarray = field(repr=False, default=None)
    _floor_cumsum: np.ndarray = field(repr=False, default=None)
    _peaks_sorted: np.ndarray = field(repr=False, default=None)
    _peaks_cumsum: np.ndarray = field(repr=False, default=None)

    @property
    def paoi_samples(self) -> np.ndarray:
        return self.peaks

    def aoi_cdf(self, x):
        """Exact time-average cdf of the piecewise-linear age path."""
        xs = np.asarray(x, dtype=float)
        if np.any(np.atleast_1d(xs) < 0.0):
            raise ValueError("cdf is defined for x >= 0 only")
        # Per cycle the time below x is min(x, peak) - min(x, floor); totals
        # over sorted copies with prefix sums make each query O(log n).
        below_peak = _sum_min(self._peaks_sorted, self._peaks_cumsum, xs)
        below_floor = _sum_min(self._floor_sorted, self._floor_cumsum, xs)
        total = self._peaks_cumsum[-1] - self._floor_cumsum[-1]
        out = (below_peak - below_floor) / total
        return float(out) if xs.ndim == 0 else out

    def paoi_cdf(self, x):
        """Empirical cdf of the peak-age samples."""
        xs = np.asarray(x, dtype=float)
        out = np.searchsorted(self._peaks_sorted, xs, side="right") / self.peaks.size
        return float(out) if xs.ndim == 0 else out

    def to_json(self) -> dict:
        return {
            "counts": self.counts.to_json(),
            "mean_aoi": self.mean_aoi,
            "se_mean_aoi": self.se_mean_aoi,
            "m2_aoi": self.m2_aoi,
            "se_m2_aoi": self.se_m2_aoi,
            "mean_paoi": self.mean_paoi,
            "se_mean_paoi": self.se_mean_paoi,
            "m2_paoi": self.m2_paoi,
            "se_m2_paoi": self.se_m2_paoi,
            "mean_wait": self.mean_wait,
            "se_mean_wait": self.se_mean_wait,
            "cycles": int(self.peaks.size),
        }


def _sum_min(sorted_v: np.ndarray, cumsum: np.ndarray, x) -> np.ndarray:
    """Sum of min(x, v) over the sorted values, via prefix sums."""
    pos = np.searchsorted(sorted_v, x, side="right")
    below = np.where(pos > 0, cumsum[np.maximum(pos - 1, 0)], 0.0)
    return below + x * (sorted_v.size - pos)


def empirical_aoi_cdf(result: SimResult, x):
    return result.aoi_cdf(x)


def empirical_paoi_cdf(result: SimResult, x):
    return result.paoi_cdf(x)


def simulate(cfg: SimConfig) -> SimResult:
    """Run one simulation to ``cfg.cycles`` kept receptions (deterministic per seed)."""
    rng = np.random.default_rng(cfg.seed)
    arr = _Stream(cfg.arrival, rng)
    srv = _Stream(cfg.service, rng)
    unif = _Uniforms(rng)
    need = cfg.warmup + cfg.cycles + 1  # one extra reception to close the last cycle

    if cfg.model == "bufferless":
        gens, starts, recs, counts = _run_bufferless(arr, srv, unif, cfg.p, need)
    else:
        gens, starts, recs, counts = _run_single_buffer(arr, srv, unif, cfg.r, need)

    gens = np.asarray(gens)[cfg.warmup:]
    starts = np.asarray(starts)[cfg.warmup:]
    recs = np.asarray(recs)[cfg.warmup:]

    system_times = recs - gens
    floor = system_times[:-1]                 # cycle starts at D_j
    peaks = recs[1:] - gens[:-1]              # and ends at the next peak
    waits = starts - gens

    mean_aoi, se_mean_aoi = _batch_ratio(0.5 * (peaks**2 - floor**2), peaks - floor)
    m2_aoi, se_m2_aoi = _batch_ratio((peaks**3 - floor**3) / 3.0, peaks - floor)
    mean_paoi, se_mean_paoi = _batch_mean(peaks)
    m2_paoi, se_m2_paoi = _batch_mean(peaks**2)
    mean_wait, se_mean_wait = _batch_mean(waits)

    fs = np.sort(floor)
    ps = np.sort(peaks)
    return SimResult(
        config=cfg,
        cycle_floor=floor,
        peaks=peaks,
        waits=waits,
        counts=counts,
        mean_aoi=mean_aoi, se_mean_aoi=se_mean_aoi,
        m2_aoi=m2_aoi, se_m2_aoi=se_m2_aoi,
        mean_paoi=mean_paoi, se_mean_paoi=se_mean_paoi,
        m2_paoi=m2_paoi, se_m2_paoi=se_m2_paoi,
        mean_wait=mean_wait, se_mean_wait=se_mean_wait,
        _floor_sorted=fs, _floor_cumsum=np.cumsum(fs),
        _peaks_sorted=ps, _peaks_cumsum=np.cumsum(ps),
    )


def _batch_mean(x: np.ndarray, nbatch: int = 64) -> tuple[float, float]:
    nb = min(nbatch, max(2, x.size // 32))
    usable = (x.size // nb) * nb
    batches = x[:usable].reshape(nb, -1).mean(axis=1)
    return float(x.mean()), float(batches.std(ddof=1) / np.sqrt(nb))


def _batch_ratio(num: np.ndarray, den: np.ndarray, nbatch: int = 64) -> tuple[float, float]:
    nb = min(nbatch, max(2, num.size // 32))
    usable = (num.size // nb) * nb
    bn = num[:usable].reshape(nb, -1).mean(axis=1)
    bd = den[:usable].reshape(nb, -1).mean(axis=1)
    ratios = bn / bd
    return float(num.sum() / den.sum()), float(ratios.std(ddof=1) / np.sqrt(nb))


def _run_bufferless(arr, srv, unif, p, need):
    """Arrivals either find an idle server, preempt with probability p, or drop."""
    gens, starts, recs = [], [], []
    t = 0.0
    busy = False
    gen = completion = 0.0
    n_arr = n_pre = n_drop = 0
    while len(recs) < need:
        t += arr.take()
        n_arr += 1
        if busy and completion <= t:
            gens.append(gen)
            starts.append(gen)
            recs.append(completion)
            busy = False
        if not busy:
            gen = t
            completion = t + srv.take()
            busy = True
        elif p > 0.0 and unif.take() < p:
            n_pre += 1
            gen = t
            completion = t + srv.take()
        else:
            n_drop += 1
    counts = SimCounts(
        arrivals=n_arr, successful=len(recs), preempted=n_pre,
        replaced=0, dropped=n_drop, in_flight=1 if busy else 0,
    )
    return gens, starts, recs, counts


def _run_single_buffer(arr, srv, unif, r, need):
    """FCFS with a single waiting slot whose occupant may be replaced."""
    gens, starts, recs = [], [], []
    t = 0.0
    busy = False
    gen = start = completion = 0.0
    waiting = None                    # generation time of the queued packet
    n_arr = n_rep = n_drop = 0
    while len(recs) < need:
        t += arr.take()
        n_arr += 1
        while busy and completion <= t:
            gens.append(gen)
            starts.append(start)
            recs.append(completion)
            if waiting is not None:
                gen = waiting
                start = completion
                completion = start + srv.take()
                waiting = None
            else:
                busy = False
        if not busy:
            gen = start = t
            completion = t + srv.take()
            busy = True
        elif waiting is None:
            waiting = t
        elif r > 0.0 and unif.take() < r:
            n_rep += 1
            waiting = t
        else:
            n_drop += 1
    counts = SimCounts(
        arrivals=n_arr, successful=len(recs), preempted=0,
        replaced=n_rep, dropped=n_drop,
        in_flight=(1 if busy else 0) + (1 if waiting is not None else 0),
    )
    return gens, starts, recs, counts
