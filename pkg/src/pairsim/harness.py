"""Monte Carlo replication, confidence intervals and the named reproductions."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .adversary import AttackerStrategy
from .analysis import bianchi_fixed_point, false_positive_ratio, minimal_m
from .detection import classify_busy_arrays, count_alarms, pattern_alarm_runs
from .fastchannel import simulate_channel
from .mac import ConfigError, MacParams
from .pairing import PairingConfig, estimate_from_counts, select_m
from .scenario import RunResult, ScenarioConfig, TrafficConfig, run, write_runs

Z95 = 1.959963984540054
NAMES = ("fig7", "fig8", "fig9", "table2", "table3", "case_study")

# reported reference figures each reproduction is compared against
TABLE_SETUPS = {
    "table2": dict(n=5, mode="saturated", rate_bps=0.0, target_count=1545, ms=(4, 5, 6)),
    "table3": dict(n=12, mode="poisson", rate_bps=1.875e6, target_count=1198, ms=(4, 5, 6)),
}
CASE_STUDY_REPORTED = {4: 0.0136, 5: 0.0008}


class Interval(NamedTuple):
    rate: float
    lo: float
    hi: float
    successes: int
    n: int


def proportion_ci(successes: int, n: int, method: str = "normal") -> Interval:
    """95% interval for a binomial proportion (normal approximation or Wilson)."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = successes / n
    if method == "normal":
        half = Z95 * math.sqrt(p * (1 - p) / n)
        return Interval(p, max(0.0, p - half), min(1.0, p + half), successes, n)
    if method == "wilson":
        z2 = Z95 * Z95
        centre = (p + z2 / (2 * n)) / (1 + z2 / n)
        half = Z95 * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n)
        return Interval(p, max(0.0, centre - half), min(1.0, centre + half), successes, n)
    raise ValueError(f"unknown interval method {method!r}")


def run_replications(cfg: ScenarioConfig, runs: Optional[int] = None,
                     ci: str = "normal", progress: Optional[Callable] = None):
    """Replication r uses seed ``base_seed + r``; returns results and the alarm-rate interval."""
    cfg.validate()
    n = cfg.replications if runs is None else runs
    results = []
    for r in range(n):
        out = run(cfg, cfg.base_seed + r, run_id=r, log=False)
        results.append(out.result)
        if progress is not None:
            progress(r, out)
    alarms = sum(r.alarm for r in results)
    return results, proportion_ci(alarms, n, ci)


# --------------------------------------------------------------------------
# fast false-positive suites (silent observer, background traffic only)


class WindowStats(NamedTuple):
    n_tx: int
    n_collision: int
    max_run: int
    alarms: dict  # m -> detector alarm count in the window
    pattern_alarms: dict  # m -> alarms surviving the timestamp-pattern check


def observe_window(n: int, params: MacParams, seed: int, mode: str, rate_bps: float,
                   warmup_us: int, window_us: int, ms: Sequence[int]) -> WindowStats:
    t_end = warmup_us + window_us + 5_000
    ch = simulate_channel(n, params, t_end, seed, mode, rate_bps)
    kinds, starts, durs = classify_busy_arrays(ch.starts, ch.ends, params)
    sel = (starts >= warmup_us) & (starts < warmup_us + window_us)
    kinds, starts, durs = kinds[sel], starts[sel], durs[sel]
    ind = (kinds != 0).astype(np.int64)
    runs = _max_run(ind)
    alarms = {m: count_alarms(ind, m) for m in ms}
    pattern = {m: (pattern_alarm_runs(kinds, starts, durs, m, params) if runs >= m else 0)
               for m in ms}
    return WindowStats(int(ind.size), int(ind.sum()), runs, alarms, pattern)


def _max_run(ind: np.ndarray) -> int:
    if not ind.any():
        return 0
    padded = np.concatenate(([0], ind, [0]))
    d = np.diff(padded)
    return int((np.flatnonzero(d == -1) - np.flatnonzero(d == 1)).max())


def mean_window_count(n: int, params: MacParams, mode: str, rate_bps: float,
                      probes: int, seed0: int, warmup_us: int, window_us: int) -> float:
    return float(np.mean([observe_window(n, params, seed0 + r, mode, rate_bps, warmup_us,
                                         window_us, ()).n_tx for r in range(probes)]))


def calibrate_overhead(n: int, mode: str, rate_bps: float, target_count: float,
                       params: MacParams = MacParams(), probes: int = 200,
                       seed0: int = 10_000_000, warmup_us: int = 100_000,
                       window_us: int = 500_000, lo: int = 0, hi: int = 80) -> tuple:
    """Integer PHY overhead whose mean per-window transmission count is closest to target.

    The count is monotone in the overhead (down for saturated traffic, up for
    Poisson traffic), so a bisection over integers suffices. Probe seeds are
    disjoint from replication seeds. Returns ``(overhead, mean_count)``.
    """
    cache: dict = {}

    def count(ph: int) -> float:
        if ph not in cache:
            cache[ph] = mean_window_count(n, replace(params, phy_overhead=ph), mode, rate_bps,
                                          probes, seed0, warmup_us, window_us)
        return cache[ph]

    rising = count(hi) > count(lo)
    a, b = lo, hi
    while b - a > 1:
        mid = (a + b) // 2
        if (count(mid) < target_count) == rising:
            a = mid
        else:
            b = mid
    best = min((a, b), key=lambda ph: (abs(count(ph) - target_count), ph))
    return best, count(best)


class SuiteResult(NamedTuple):
    runs: dict  # m -> list of RunResult
    summary: list  # rows for the summary CSV
    phy_overhead: int
    mean_count: float
    mean_p_ch: float


def false_positive_suite(n: int, mode: str, rate_bps: float, ms: Sequence[int], runs: int,
                         base_seed: int = 0, params: MacParams = MacParams(),
                         warmup_us: int = 100_000, window_us: int = 500_000,
                         ci: str = "normal") -> SuiteResult:
    """Alarm rates of a silent observer's detector over one detection window per run."""
    per_m: dict = {m: [] for m in ms}
    pattern_hits = {m: 0 for m in ms}
    counts, pch = [], []
    for r in range(runs):
        seed = base_seed + r
        w = observe_window(n, params, seed, mode, rate_bps, warmup_us, window_us, ms)
        counts.append(w.n_tx)
        pch.append(w.n_collision / w.n_tx if w.n_tx else 0.0)
        for m in ms:
            alarm = w.alarms[m] > 0
            pattern_hits[m] += w.pattern_alarms[m] > 0
            per_m[m].append(RunResult(r, seed, w.n_tx, w.n_tx - w.n_collision, w.n_collision,
                                      w.max_run, alarm, "rule2" if alarm else None,
                                      "observer" if alarm else "", False))
    summary = []
    mean_count = float(np.mean(counts))
    mean_p = float(np.mean(pch))
    for m in ms:
        iv = proportion_ci(sum(x.alarm for x in per_m[m]), runs, ci)
        summary.append(dict(m=m, runs=runs, alarms=iv.successes, rate=iv.rate, ci_lo=iv.lo,
                            ci_hi=iv.hi, pattern_alarms=pattern_hits[m],
                            expected_false_alarms=false_positive_ratio(mean_count, mean_p, m),
                            mean_tx=mean_count, mean_p_ch=mean_p,
                            phy_overhead=params.phy_overhead))
    return SuiteResult(per_m, summary, params.phy_overhead, mean_count, mean_p)


# --------------------------------------------------------------------------
# reproductions


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(round(v, 12))
    return str(v)


def write_rows(path: str, header: Sequence[str], rows: Sequence[dict]) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])
    return path


def reproduce_fig7(out: str, runs: int, base_seed: int, params: MacParams = MacParams(),
                   sim_ns: Sequence[int] = (5, 10, 15, 20, 25, 30),
                   min_tx: int = 10_000) -> list:
    """Analytic saturated collision ratio for 2..30 stations, simulated at `sim_ns`."""
    analytic = []
    for n in range(2, 31):
        op = bianchi_fixed_point(n, params)
        analytic.append(dict(n=n, tau=op.tau, p_cond=op.p_cond, p_ch=op.p_ch))
    sim_rows = []
    for n in sim_ns:
        tx = coll = 0
        attempts = slots = 0
        r = 0
        while tx < min_tx or r < runs:
            ch = simulate_channel(n, params, 2_000_000, base_seed + r, "saturated")
            kinds, _, _ = classify_busy_arrays(ch.starts, ch.ends, params)
            tx += kinds.size
            coll += int((kinds != 0).sum())
            attempts += ch.attempts
            slots += ch.backoff_slots
            r += 1
        op = bianchi_fixed_point(n, params)
        sim_rows.append(dict(n=n, runs=r, observed=tx, p_ch_sim=coll / tx, p_ch_model=op.p_ch,
                             tau_sim=attempts / slots, tau_model=op.tau))
    return [write_rows(os.path.join(out, "fig7_analytic.csv"), ["n", "tau", "p_cond", "p_ch"],
                       analytic),
            write_rows(os.path.join(out, "fig7_simulated.csv"),
                       ["n", "runs", "observed", "p_ch_sim", "p_ch_model", "tau_sim",
                        "tau_model"], sim_rows)]


def reproduce_fig8(out: str, runs: int, base_seed: int, params: MacParams = MacParams(),
                   station_counts: Sequence[int] = (5, 15, 25),
                   rates_mbps: Sequence[float] = (0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0,
                                                  8.0)) -> list:
    rows = []
    for n in station_counts:
        for rate in rates_mbps:
            tx = coll = 0
            for r in range(max(1, runs)):
                ch = simulate_channel(n, params, 1_000_000, base_seed + r, "poisson", rate * 1e6)
                kinds, _, _ = classify_busy_arrays(ch.starts, ch.ends, params)
                tx += kinds.size
                coll += int((kinds != 0).sum())
            rows.append(dict(n=n, rate_mbps=rate, observed=tx, p_ch=coll / tx if tx else 0.0))
    return [write_rows(os.path.join(out, "fig8.csv"), ["n", "rate_mbps", "observed", "p_ch"],
                       rows)]


def reproduce_fig9(out: str) -> list:
    rows = []
    for p in (0.05, 0.10, 0.15, 0.20, 0.25):
        for k in range(1000, 4001, 500):
            for m in range(4, 13):
                rows.append(dict(p_ch=p, k=k, m=m, p_fp=false_positive_ratio(k, p, m)))
    return [write_rows(os.path.join(out, "fig9.csv"), ["p_ch", "k", "m", "p_fp"], rows)]


SUMMARY_HEADER = ["m", "runs", "alarms", "rate", "ci_lo", "ci_hi", "pattern_alarms", "expected_false_alarms",
                  "mean_tx", "mean_p_ch", "phy_overhead"]


def reproduce_table(name: str, out: str, runs: int, base_seed: int,
                    params: MacParams = MacParams(), calibrate: bool = True,
                    ci: str = "normal") -> tuple:
    setup = TABLE_SETUPS[name]
    if calibrate:
        phy, _ = calibrate_overhead(setup["n"], setup["mode"], setup["rate_bps"],
                                    setup["target_count"], params)
        params = replace(params, phy_overhead=phy)
    suite = false_positive_suite(setup["n"], setup["mode"], setup["rate_bps"], setup["ms"],
                                 runs, base_seed, params, ci=ci)
    files = []
    for m, results in suite.runs.items():
        path = os.path.join(out, f"{name}_m{m}_runs.csv")
        write_runs(path, results)
        files.append(path)
    files.append(write_rows(os.path.join(out, f"{name}_summary.csv"), SUMMARY_HEADER,
                            suite.summary))
    return files, suite


CASE_HEADER = ["run", "scenario", "seed", "p_ch_hat", "k_hat", "observed_success",
               "observed_collision", "minimal_m", "selected_m", "alarm", "alarm_rule",
               "detected_by", "keys_match", "first_run_length", "first_run_offset_us"]


def case_study_config(attack: str = "none", base_seed: int = 0) -> ScenarioConfig:
    return ScenarioConfig(traffic=TrafficConfig(10, "poisson", 2.0e6),
                          protocol=PairingConfig(T=1.5, t=1.0, target_pfp=0.005,
                                                 safety_margin=2),
                          attacker=AttackerStrategy(attack), warmup=0.1, base_seed=base_seed)


def reproduce_case_study(out: str, runs: int, base_seed: int) -> tuple:
    rows = []
    for r in range(max(1, runs)):
        for scenario in ("none", "type2"):
            cfg = case_study_config(scenario, base_seed)
            seed = base_seed + r
            res = run(cfg, seed, run_id=r, log=False)
            est = res.alice.estimate
            bob_node = res.sim.nodes["bob"]
            ctx = res.bob.ctx
            seq = [o for o in bob_node.outcomes if not o.own and ctx.in_window(o.start)]
            run_len, first = 0, -1
            for o in seq:
                if o.is_collision:
                    if first < 0:
                        first = o.start - ctx.window_start
                    run_len += 1
                elif first >= 0:
                    break
            rows.append(dict(run=r, scenario=scenario, seed=seed, p_ch_hat=est.p_ch_hat,
                             k_hat=est.k_hat, observed_success=est.observed_success,
                             observed_collision=est.observed_collision,
                             minimal_m=minimal_m(est.k_hat, est.p_ch_hat,
                                                 cfg.protocol.target_pfp),
                             selected_m=res.alice.m, alarm=int(res.result.alarm),
                             alarm_rule=res.result.alarm_rule or "",
                             detected_by=res.result.detected_by,
                             keys_match=int(res.result.keys_match), first_run_length=run_len,
                             first_run_offset_us=first))
    # selection table for the worked example estimate (71 collisions in 2065 events)
    est = estimate_from_counts(1994, 71, 1.0, 0.5)
    sel = []
    for m in range(1, 9):
        sel.append(dict(p_ch_hat=est.p_ch_hat, k_hat=est.k_hat, m=m,
                        expected_false_alarms=false_positive_ratio(est.k_hat, est.p_ch_hat, m),
                        reported_value=CASE_STUDY_REPORTED.get(m, ""),
                        selected=int(m == select_m(est, PairingConfig()))))
    files = [write_rows(os.path.join(out, "case_study_runs.csv"), CASE_HEADER, rows),
             write_rows(os.path.join(out, "case_study_selection.csv"),
                        ["p_ch_hat", "k_hat", "m", "expected_false_alarms", "reported_value",
                         "selected"], sel)]
    return files, rows, sel


def reproduce(name: str, out: str, runs: Optional[int] = None, base_seed: int = 0) -> list:
    """Write the CSV artifacts of one named reproduction into `out`; returns their paths."""
    if name not in NAMES:
        raise ConfigError(f"unknown reproduction {name!r}; choose from {', '.join(NAMES)}")
    os.makedirs(out, exist_ok=True)
    if name == "fig7":
        return reproduce_fig7(out, runs or 3, base_seed)
    if name == "fig8":
        return reproduce_fig8(out, runs or 2, base_seed)
    if name == "fig9":
        return reproduce_fig9(out)
    if name in TABLE_SETUPS:
        return reproduce_table(name, out, runs or 20_000, base_seed)[0]
    return reproduce_case_study(out, runs or 1, base_seed)[0]
