import heapq
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from janusauth import bitcodec as bc
from janusauth.authproto import Role
from janusauth.channelsim import (AdversarySpec, DeviceClock, ScenarioError, Simulator, VirtualSea,
                                  load_scenario, run_scenario, two_device_scenario, write_metrics, write_trace)

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def test_delivery_time():
    sim = Simulator(two_device_scenario(1500))
    a = sim.devices["A"]
    (name, t), = sim.schedule_send(a, bytes(8), 100.0)
    assert name == "B" and t == pytest.approx(100.0 + 0.8 + 1.0)


def test_current_asymmetry():
    sea = VirtualSea(1500, 1500, 1.5)
    assert sea.propagation_delay(0, 1500) == pytest.approx(1500 / 1501.5)
    assert sea.propagation_delay(1500, 0) == pytest.approx(1500 / 1498.5)
    with pytest.raises(ScenarioError):
        VirtualSea(current_mps=1500)


def test_total_loss():
    sim = Simulator(two_device_scenario(1500, loss=1.0))
    a = sim.devices["A"]
    assert sum(len(sim.schedule_send(a, bytes(8), float(i))) for i in range(10_000)) == 0
    assert sim.metrics.packets_lost == 10_000


def test_fifo_tie_break():
    sim = Simulator(two_device_scenario(1500))
    order = []
    for k in range(5):
        sim._push(10.0, order.append, k)
    while sim.queue:
        _, _, action, args = heapq.heappop(sim.queue)
        action(*args)
    assert order == [0, 1, 2, 3, 4]


def test_deterministic_trace():
    a = run_scenario(two_device_scenario(2500, seed=4, loss=0.3, ber=0.002))
    b = run_scenario(two_device_scenario(2500, seed=4, loss=0.3, ber=0.002))
    assert a.trace_text() == b.trace_text()


def test_honest_pair():
    r = run_scenario(two_device_scenario(1500))
    m = r.metrics
    assert m.authenticated and m.keys_equal
    assert m.packets_sent == 2
    assert m.established_at_s == pytest.approx(2 * (0.8 + 1.0))
    assert r.session_keys["A"] == r.session_keys["B"]
    kinds = [e.kind for e in r.trace]
    assert kinds.count("send") == 2 and "established" in kinds


def test_clock_sync_coarse_initiator():
    r = run_scenario(two_device_scenario(3000, current_mps=1.0, cd_a=1, cd_b=6, offset_b=2.0))
    a, b = r.devices["A"], r.devices["B"]
    bias = 3000 * 1.0 / (1500**2 - 1.0)
    assert abs(a.clock.offset_s - b.clock.offset_s) <= 1e-3 + bias + 1e-9


def test_no_sync_on_equal_descriptors():
    r = run_scenario(two_device_scenario(3000, cd_a=3, cd_b=3, offset_b=2.0))
    assert r.metrics.clock_adjustment_s is None
    assert r.devices["A"].clock.offset_s == 0.0


def test_drift_must_respect_descriptor():
    with pytest.raises(ScenarioError):
        DeviceClock(drift_rate=1e-5, descriptor=2)


def test_clock_affine():
    c = DeviceClock(offset_s=3.0, drift_rate=1e-6, descriptor=1, sync_epoch=100.0)
    ts = [100.0, 200.0, 400.0]
    r = [c.reported(t) for t in ts]
    assert r[0] == 103.0
    assert (r[2] - r[1]) / 200 == pytest.approx((r[1] - r[0]) / 100)


def test_replay_adversary():
    sc = two_device_scenario(4000, seed=2, adversary=AdversarySpec((30.0, 300.0, 3600.0)), stop_time_s=4000)
    m = run_scenario(sc).metrics
    assert m.authenticated
    assert m.adversary_injections == 12
    assert m.adversary_authentications == 0 and m.adversary_state_changes == 0


def test_bit_errors_dropped_by_crc():
    r = run_scenario(two_device_scenario(1500, seed=5, ber=0.05, stop_time_s=1000))
    assert r.metrics.crc_drops > 0
    # any established key still agrees
    if r.metrics.authenticated:
        assert r.metrics.keys_equal


@settings(max_examples=15, deadline=None)
@given(st.floats(0, 10_000), st.floats(-2, 2), st.integers(0, 2**32))
def test_causality(d, v, seed):
    r = run_scenario(two_device_scenario(d, current_mps=v, seed=seed, loss=0.2))
    sends = {}
    for e in r.trace:
        if e.kind == "send":
            sends.setdefault(e.detail, e.time)
        elif e.kind == "deliver":
            assert e.time >= sends[e.detail] + 0.8 + d / (1500 + abs(v)) - 1e-6


@pytest.mark.slow
def test_lossy_eventual_establishment():
    ok = sum(run_scenario(two_device_scenario(1500, seed=s, loss=0.3)).metrics.authenticated
             for s in range(1000))
    assert ok >= 950


class TestConfig:
    def test_load_two_devices(self):
        sc = load_scenario(SCENARIOS / "two_devices.ini")
        assert [d.name for d in sc.devices] == ["A", "B"]
        assert sc.devices[0].role is Role.INITIATOR
        assert sc.devices[1].clock.offset_s == 2.0
        assert sc.devices[0].keystore.longterm[0, 1].key == sc.devices[1].keystore.longterm[0, 1].key
        r = run_scenario(sc)
        assert r.metrics.authenticated and r.metrics.clock_adjustment_s == pytest.approx(2.0, abs=1e-3)

    def test_all_shipped_scenarios_run(self):
        for path in sorted(SCENARIOS.glob("*.ini")):
            assert run_scenario(path).metrics.authenticated, path.name

    def test_keystore_path(self, tmp_path):
        sc = two_device_scenario(1000)
        sc.devices[0].keystore.save(tmp_path / "a.ks")
        sc.devices[1].keystore.save(tmp_path / "b.ks")
        (tmp_path / "s.ini").write_text(
            "[channel]\ndistance_m = 1000\n"
            "[device A]\nmmsi = 257000001\nrole = initiator\npeer = B\nkeystore = a.ks\n"
            "[device B]\nmmsi = 257000002\npeer = A\nkeystore = b.ks\n")
        assert run_scenario(tmp_path / "s.ini").metrics.keys_equal

    @pytest.mark.parametrize("text", [
        "[device A]\nmmsi = 1\n",
        "[channel]\ndistance_m = far\n[device A]\nmmsi=1\n[device B]\nmmsi=2\n",
        "[channel]\n[device A]\nmmsi = 1\n",
        "[channel]\n[device A]\nmmsi = 1\npeer = Z\n[device B]\nmmsi = 2\n",
        "not an ini file",
    ])
    def test_malformed(self, tmp_path, text):
        p = tmp_path / "bad.ini"
        p.write_text(text)
        with pytest.raises(ScenarioError):
            load_scenario(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            load_scenario(tmp_path / "nope.ini")

    def test_outputs(self, tmp_path):
        r = run_scenario(two_device_scenario(1500))
        write_trace(r, tmp_path / "t.tsv")
        write_metrics(r, tmp_path / "m.tsv")
        first = (tmp_path / "t.tsv").read_text().splitlines()[0].split("\t")
        assert len(first) == 4 and first[1] in ("A", "B")
        metrics = dict(line.split("\t") for line in (tmp_path / "m.tsv").read_text().splitlines())
        assert metrics["authenticated"] == "True" and metrics["packets_sent"] == "2"


def test_wire_packets_are_baseline():
    r = run_scenario(two_device_scenario(1500))
    for e in r.trace:
        if e.kind == "send":
            p = bc.decode_baseline(bytes.fromhex(e.detail))
            assert p.version == 3 and p.auth.syn == 1
