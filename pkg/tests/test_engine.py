import numpy as np
import pytest
from _support import engine_busy

from pairsim.engine import Simulator, Sink, Station
from pairsim.fastchannel import simulate_channel
from pairsim.mac import ConfigError, MacParams, StationStreams, air_time, payload_from_uniform

P = MacParams()


@pytest.mark.parametrize("n,mode,rate,seed", [
    (5, "saturated", 0.0, 0), (5, "saturated", 0.0, 1), (2, "saturated", 0.0, 2),
    (12, "poisson", 1.875e6, 0), (3, "poisson", 3e6, 1), (10, "poisson", 2e6, 2)])
def test_kernel_reproduces_engine_busy_trace(n, mode, rate, seed):
    t_end = 200_000
    es, ee = engine_busy(n, P, t_end, seed, mode, rate)
    ch = simulate_channel(n, P, t_end, seed, mode, rate)
    # the two simulators may cut the final in-flight frames differently
    keep_e, keep_k = es < t_end - 3000, ch.starts < t_end - 3000
    assert np.array_equal(es[keep_e], ch.starts[keep_k])
    assert np.array_equal(ee[keep_e], ch.ends[keep_k])


def test_lone_saturated_station_follows_dcf_timing():
    sim = Simulator(P, 20_000, log=True)
    sim.add(Station("a", P, StationStreams(4, 0), "saturated"))
    sim.add(Sink("ap", P))
    sim.run()
    starts = [t for t, kind, st, *_ in sim.log if kind == "data_start"]
    acks = [t for t, kind, *_ in sim.log if kind == "ack_start"]
    u = StationStreams(4, 0).backoff.prefix(len(starts))
    sizes = StationStreams(4, 0).payload.prefix(len(starts))
    ready = P.difs  # medium idle since t=0
    for k, start in enumerate(starts):
        assert start == ready + (int(u[k] * P.cw_min) + 1) * P.slot
        end = start + air_time(payload_from_uniform(sizes[k]), P)
        if k < len(acks):
            assert acks[k] == end + P.sifs
        ready = end + P.sifs + P.ack_duration + P.difs
    assert len(starts) > 20 and len(acks) >= len(starts) - 1


def test_kernel_statistics_are_consistent():
    ch = simulate_channel(10, P, 500_000, 3)
    assert ch.successes > 0 and ch.collisions > 0
    assert 0 < ch.tau < 1
    assert np.all(ch.ends > ch.starts)
    assert np.all(ch.starts[1:] >= ch.ends[:-1])


def test_kernel_argument_checks():
    with pytest.raises(ConfigError):
        simulate_channel(0, P, 1000, 0)
    with pytest.raises(ConfigError):
        simulate_channel(3, P, 1000, 0, "bursty")
    with pytest.raises(ConfigError):
        simulate_channel(3, P, 1000, 0, "poisson", 0.0)


def test_busy_medium_never_hosts_a_scheduled_transmission_start_at_difs():
    # background stations wait at least one slot past DIFS, leaving that instant free
    sim = Simulator(P, 300_000, log=True)
    for k in range(6):
        sim.add(Station(f"bg{k}", P, StationStreams(9, k), "saturated"))
    sim.add(Sink("ap", P))
    sim.run()
    ends = sorted(t for t, kind, *_ in sim.log if kind.endswith("_end"))
    starts = {t for t, kind, *_ in sim.log if kind == "data_start"}
    for e in ends:
        assert e + P.difs not in starts
        assert e + P.eifs not in starts


def test_duplicate_node_ids_rejected():
    sim = Simulator(P, 10)
    sim.add(Sink("ap", P))
    with pytest.raises(ValueError):
        sim.add(Sink("ap", P))
