"""Compiled kernel for background-only DCF channels.

Runs the same backoff, deferral and retry rules as the event engine for a
homogeneous set of background stations plus one silent observer, and returns
the observer's busy periods. Both simulators read per-station random streams
in the same order, so for a given seed they produce identical channels.
"""

from __future__ import annotations

from typing import NamedTuple

import numba
import numpy as np

from .mac import ConfigError, MacParams, StationStreams, mean_interarrival_us

_FAR = np.int64(1) << 62


@numba.njit(cache=True)
def _air(payload, bitrate, phy):
    return (payload * 8 * 1000000 + bitrate - 1) // bitrate + phy


@numba.njit(cache=True)
def _run_channel(saturated, mac, t_end, mean_gap, U, P, E, starts, ends, stats):
    slot, difs, sifs, ack, eifs, ack_to = mac[0], mac[1], mac[2], mac[3], mac[4], mac[5]
    cw_min, cw_max, retry_limit, bitrate, phy = mac[6], mac[7], mac[8], mac[9], mac[10]
    n = U.shape[0]
    nu, np_, ne = U.shape[1], P.shape[1], E.shape[1]
    cap = starts.size
    cw = np.full(n, cw_min, dtype=np.int64)
    retries = np.zeros(n, dtype=np.int64)
    b = np.zeros(n, dtype=np.int64)
    cs = np.zeros(n, dtype=np.int64)
    active = np.zeros(n, dtype=np.bool_)
    iu = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=np.int64)
    arrived = np.zeros(n, dtype=np.int64)
    ie = np.zeros(n, dtype=np.int64)
    next_arr = np.full(n, _FAR, dtype=np.int64)
    is_tx = np.zeros(n, dtype=np.bool_)
    dur = np.zeros(n, dtype=np.int64)
    idle_since = 0
    defer = difs
    nseg = 0

    for i in range(n):
        if saturated:
            active[i] = True
            b[i] = np.int64(U[i, 0] * cw[i])
            iu[i] = 1
            stats[1] += b[i] + 1
            cs[i] = difs
        else:
            g = np.int64(np.ceil(E[i, 0] * mean_gap))
            next_arr[i] = max(1, g)
            ie[i] = 1

    while True:
        ready = idle_since + defer
        t_tx = _FAR
        while True:
            t_tx = _FAR
            for i in range(n):
                if active[i]:
                    tt = cs[i] + (b[i] + 1) * slot
                    if tt < t_tx:
                        t_tx = tt
            if saturated:
                break
            best = -1
            ba = _FAR
            for i in range(n):
                if not active[i] and next_arr[i] < ba:
                    ba = next_arr[i]
                    best = i
            if best < 0 or ba > t_tx or ba >= t_end:
                break
            # arrival at an empty station starts a fresh backoff
            arrived[best] += 1
            if ie[best] >= ne:
                return -1
            g = np.int64(np.ceil(E[best, ie[best]] * mean_gap))
            ie[best] += 1
            next_arr[best] = ba + max(1, g)
            if ba <= ready:
                cs[best] = ready
            else:
                cs[best] = ready + ((ba - ready + slot - 1) // slot) * slot
            if iu[best] >= nu:
                return -1
            b[best] = np.int64(U[best, iu[best]] * cw[best])
            iu[best] += 1
            stats[1] += b[best] + 1
            active[best] = True
        if t_tx >= t_end:
            break

        k = 0
        maxdur = 0
        for i in range(n):
            is_tx[i] = False
            if not active[i]:
                continue
            if cs[i] + (b[i] + 1) * slot == t_tx:
                is_tx[i] = True
                k += 1
                if done[i] >= np_:
                    return -1
                dur[i] = _air(500 + np.int64(P[i, done[i]] * 1501), bitrate, phy)
                if dur[i] > maxdur:
                    maxdur = dur[i]
            elif t_tx > cs[i]:
                b[i] -= (t_tx - cs[i]) // slot
        stats[0] += k
        if nseg + 2 > cap:
            return -1
        if k == 1:
            stats[2] += 1
            ack_end = t_tx + maxdur + sifs + ack
            starts[nseg] = t_tx
            ends[nseg] = t_tx + maxdur
            starts[nseg + 1] = t_tx + maxdur + sifs
            ends[nseg + 1] = ack_end
            nseg += 2
            idle_since = ack_end
            defer = difs
        else:
            stats[3] += 1
            starts[nseg] = t_tx
            ends[nseg] = t_tx + maxdur
            nseg += 1
            idle_since = t_tx + maxdur
            defer = eifs

        for i in range(n):
            if not is_tx[i]:
                continue
            if k == 1:
                done[i] += 1
                cw[i] = cw_min
                retries[i] = 0
                pop = idle_since
            else:
                if retries[i] < retry_limit:
                    cw[i] = min(2 * cw[i], cw_max)
                    retries[i] += 1
                else:
                    done[i] += 1
                    cw[i] = cw_min
                    retries[i] = 0
                pop = t_tx + dur[i] + ack_to
            if not saturated:
                while next_arr[i] <= pop:
                    arrived[i] += 1
                    if ie[i] >= ne:
                        return -1
                    g = np.int64(np.ceil(E[i, ie[i]] * mean_gap))
                    ie[i] += 1
                    next_arr[i] += max(1, g)
                if arrived[i] <= done[i]:
                    active[i] = False
                    continue
            if iu[i] >= nu:
                return -1
            b[i] = np.int64(U[i, iu[i]] * cw[i])
            iu[i] += 1
            stats[1] += b[i] + 1

        ready = idle_since + defer
        for i in range(n):
            if active[i]:
                cs[i] = ready
    return nseg


class ChannelRun(NamedTuple):
    starts: np.ndarray
    ends: np.ndarray
    attempts: int
    backoff_slots: int
    successes: int
    collisions: int

    @property
    def tau(self) -> float:
        """Attempts per backoff slot, pooled over stations."""
        return self.attempts / self.backoff_slots if self.backoff_slots else 0.0


def mac_vector(params: MacParams) -> np.ndarray:
    return np.array([params.slot, params.difs, params.sifs, params.ack_duration, params.eifs,
                     params.ack_timeout, params.cw_min, params.cw_max, params.retry_limit,
                     params.bitrate, params.phy_overhead], dtype=np.int64)


def simulate_channel(n_stations: int, params: MacParams, t_end_us: int, seed: int,
                     mode: str = "saturated", rate_bps: float = 0.0) -> ChannelRun:
    """Busy periods heard by a silent observer among `n_stations` background stations.

    Station k draws from ``StationStreams(seed, k)``.
    """
    if n_stations < 1:
        raise ConfigError("traffic.n_background must be >= 1")
    if mode not in ("saturated", "poisson"):
        raise ConfigError(f"traffic.mode must be saturated or poisson, got {mode!r}")
    saturated = mode == "saturated"
    if not saturated and rate_bps <= 0:
        raise ConfigError("traffic.rate_bps must be positive for poisson traffic")
    mean_gap = 0.0 if saturated else mean_interarrival_us(rate_bps)
    streams = [StationStreams(seed, k) for k in range(n_stations)]
    mac = mac_vector(params)
    nu = 64 + t_end_us // (60 * n_stations)
    ne = 64 if saturated else 64 + int(1.3 * t_end_us / mean_gap)
    cap = 16 + 2 * t_end_us // 100
    while True:
        U = np.stack([s.backoff.prefix(nu) for s in streams])
        P = np.stack([s.payload.prefix(nu) for s in streams])
        E = np.stack([s.arrival.prefix(ne) for s in streams])
        starts = np.empty(cap, dtype=np.int64)
        ends = np.empty(cap, dtype=np.int64)
        stats = np.zeros(4, dtype=np.int64)
        nseg = _run_channel(saturated, mac, int(t_end_us), mean_gap, U, P, E, starts, ends, stats)
        if nseg >= 0:
            return ChannelRun(starts[:nseg].copy(), ends[:nseg].copy(), int(stats[0]),
                              int(stats[1]), int(stats[2]), int(stats[3]))
        nu, ne, cap = 2 * nu, 2 * ne, 2 * cap
