"""Deterministic discrete-event simulation of devices authenticating over a
virtual acoustic channel.

Devices sit on one axis; the current ``v`` flows toward increasing
position, so a packet travelling with it takes ``dist/(c+v)`` and against
it ``dist/(c-v)``. Transmission takes ``bits / bit_rate`` seconds. The
receiver handles a packet once it has fully arrived plus its processing
delay.
"""

from __future__ import annotations

import configparser
import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bitcodec as bc
from .authproto import AuthConfig, AuthSession, Role, State, next_challenge_time, sync_clock_if_coarser
from .cipher import LONGTERM_KEY_BYTES
from .keystore import KeyStore, LongTermKeyRecord, parse_iso

log = logging.getLogger(__name__)

DEFAULT_START = parse_iso("2026-01-01T00:00:00Z")


class ScenarioError(ValueError):
    pass


@dataclass
class VirtualSea:
    distance_m: float = 1500.0
    sound_speed_mps: float = 1500.0
    current_mps: float = 0.0
    loss_probability: float = 0.0
    bit_error_rate: float = 0.0
    seed: int = 0
    bit_rate_bps: float = 80.0

    def __post_init__(self):
        if abs(self.current_mps) >= self.sound_speed_mps:
            raise ScenarioError("current must be slower than sound")
        if not 0 <= self.loss_probability <= 1 or not 0 <= self.bit_error_rate <= 1:
            raise ScenarioError("probabilities must lie in [0, 1]")

    def propagation_delay(self, src_pos: float, dst_pos: float) -> float:
        dist = abs(dst_pos - src_pos)
        v = self.current_mps if dst_pos >= src_pos else -self.current_mps
        return dist / (self.sound_speed_mps + v)

    def tx_duration(self, nbits: int) -> float:
        return nbits / self.bit_rate_bps


@dataclass
class DeviceClock:
    offset_s: float = 0.0
    drift_rate: float = 0.0
    descriptor: int = 0
    sync_epoch: float = DEFAULT_START

    def __post_init__(self):
        if abs(self.drift_rate) > bc.drift_bound(self.descriptor):
            raise ScenarioError(f"drift {self.drift_rate} exceeds descriptor {self.descriptor} bound")

    def reported(self, t_true: float) -> float:
        return t_true + self.offset_s + self.drift_rate * (t_true - self.sync_epoch)

    def step(self, delta: float):
        self.offset_s += delta


@dataclass
class DeviceSpec:
    name: str
    mmsi: int
    role: Role = Role.RESPONDER
    clock: DeviceClock = field(default_factory=DeviceClock)
    keystore: KeyStore = field(default_factory=KeyStore)
    peer: str | None = None
    position_m: float | None = None
    sync_clocks: bool = True


@dataclass
class AdversarySpec:
    """Records every honest transmission and re-injects it after each delay."""

    replay_delays_s: tuple[float, ...] = (30.0, 300.0, 3600.0)


@dataclass
class Scenario:
    sea: VirtualSea
    devices: list[DeviceSpec]
    auth: AuthConfig = field(default_factory=AuthConfig)
    adversary: AdversarySpec | None = None
    start_time: float = DEFAULT_START
    stop_time_s: float = 3600.0
    first_challenge_s: float = 0.0


@dataclass(frozen=True)
class TraceEvent:
    time: float
    device: str
    kind: str
    detail: str

    def tsv(self) -> str:
        return f"{self.time:.6f}\t{self.device}\t{self.kind}\t{self.detail}"


@dataclass
class Metrics:
    authenticated: bool = False
    established_at_s: float | None = None
    packets_sent: int = 0
    packets_delivered: int = 0
    packets_lost: int = 0
    crc_drops: int = 0
    keys_equal: bool = False
    distance_true_m: float = 0.0
    distance_est_m: float | None = None
    ranging_error_m: float | None = None
    clock_offset_est_s: float | None = None
    clock_offset_true_s: float | None = None
    clock_adjustment_s: float | None = None
    adversary_injections: int = 0
    adversary_authentications: int = 0
    adversary_state_changes: int = 0

    def rows(self) -> list[tuple[str, str]]:
        return [(k, "" if v is None else str(v)) for k, v in vars(self).items()]


@dataclass
class SimResult:
    trace: list[TraceEvent]
    metrics: Metrics
    session_keys: dict[str, bytes]
    devices: dict[str, "Device"]

    def trace_text(self) -> str:
        return "".join(e.tsv() + "\n" for e in self.trace)


class Device:
    def __init__(self, spec: DeviceSpec, position: float, auth: AuthConfig, sim: "Simulator"):
        self.spec = spec
        self.name = spec.name
        self.mmsi = spec.mmsi
        self.clock = spec.clock
        self.store = spec.keystore
        self.position = position
        self.auth = auth
        self.sim = sim
        self.initiator: AuthSession | None = None
        self.responders: dict[int, AuthSession] = {}
        self.result = None

    def local(self, t_true: float) -> float:
        return self.clock.reported(t_true)

    def _session(self, role: Role, peer: int | None = None) -> AuthSession:
        return AuthSession(role, self.mmsi, self.clock.descriptor, self.auth, peer_mmsi=peer,
                           on_event=lambda d: self.sim.record(self.name, d.kind, d.reason))

    def snapshot(self):
        sessions = {p: s.key for p, s in self.store.sessions.items()}
        states = {id(s): s.state for s in [self.initiator, *self.responders.values()] if s}
        return sessions, states

    def receive(self, data: bytes, t_true: float) -> bool:
        """Handle a delivered packet; True when it advanced authentication."""
        try:
            packet = bc.decode_baseline(data)
        except bc.IntegrityError:
            self.sim.metrics.crc_drops += 1
            self.sim.record(self.name, "drop", "crc-mismatch")
            return False
        now = self.local(t_true)
        flags = (packet.auth.syn, packet.auth.ack)
        if flags == (1, 0):
            sess = self._session(Role.RESPONDER)
            reply = sess.handle_challenge(packet, now, self.store)
            if reply is None:
                return False
            self.responders[sess.peer_mmsi] = sess
            self.sim.send(self, bc.encode_baseline(reply), t_true)
            return True
        if flags == (1, 1) and self.initiator is not None:
            result = self.initiator.handle_response(packet, now, self.store)
            if result is None:
                return False
            self.result = result
            self.sim.on_established(self, result, t_true)
            return True
        self.sim.record(self.name, "drop", f"unhandled flags {flags}")
        return False


class Simulator:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.sea = scenario.sea
        self.rng = np.random.default_rng(scenario.sea.seed)
        self.queue: list = []
        self.seq = itertools.count()
        self.trace: list[TraceEvent] = []
        self.metrics = Metrics()
        self.now = scenario.start_time
        self.devices: dict[str, Device] = {}
        for idx, spec in enumerate(scenario.devices):
            pos = spec.position_m if spec.position_m is not None else idx * self.sea.distance_m
            self.devices[spec.name] = Device(spec, pos, scenario.auth, self)
        if len(self.devices) >= 2:
            a, b = list(self.devices.values())[:2]
            self.metrics.distance_true_m = abs(b.position - a.position)

    # bookkeeping

    def record(self, device: str, kind: str, detail: str):
        self.trace.append(TraceEvent(self.now - self.sc.start_time, device, kind, detail))

    def _push(self, t: float, action, *args):
        heapq.heappush(self.queue, (t, next(self.seq), action, args))

    # channel

    def schedule_send(self, sender: Device, data: bytes, t_true: float) -> list[tuple[str, float]]:
        """Enqueue deliveries of `data` to every other device."""
        nbits = len(data) * 8
        tx = self.sea.tx_duration(nbits)
        deliveries = []
        for dev in self.devices.values():
            if dev is sender:
                continue
            if self.rng.random() < self.sea.loss_probability:
                self.metrics.packets_lost += 1
                self.record(dev.name, "loss", data.hex())
                continue
            payload = data
            if self.sea.bit_error_rate > 0:
                flips = np.flatnonzero(self.rng.random(nbits) < self.sea.bit_error_rate)
                if len(flips):
                    word = int.from_bytes(data, "big")
                    for k in flips:
                        word ^= 1 << (nbits - 1 - int(k))
                    payload = word.to_bytes(len(data), "big")
                    self.record(dev.name, "bit-errors", str(len(flips)))
            t = t_true + tx + self.sea.propagation_delay(sender.position, dev.position) + self.sc.auth.processing_delay_s
            self._push(t, self._deliver, dev, payload, False)
            deliveries.append((dev.name, t))
        return deliveries

    def send(self, sender: Device, data: bytes, t_true: float):
        self.metrics.packets_sent += 1
        self.record(sender.name, "send", data.hex())
        self.schedule_send(sender, data, t_true)
        if self.sc.adversary:
            for delay in self.sc.adversary.replay_delays_s:
                self._push(t_true + delay, self._inject, data)

    def _deliver(self, dev: Device, data: bytes, injected: bool):
        self.metrics.packets_delivered += 1
        self.record(dev.name, "deliver", data.hex())
        dev.receive(data, self.now)

    def _inject(self, data: bytes):
        for dev in self.devices.values():
            self.metrics.adversary_injections += 1
            self.record(dev.name, "inject", data.hex())
            before = dev.snapshot()
            advanced = dev.receive(data, self.now)
            if advanced:
                self.metrics.adversary_authentications += 1
            if dev.snapshot() != before:
                self.metrics.adversary_state_changes += 1

    # protocol drivers

    def _challenge(self, dev: Device):
        sess = dev.initiator
        if sess.state in (State.ESTABLISHED, State.RENEWING):
            return
        packet = sess.make_challenge(dev.local(self.now), dev.store)
        self.send(dev, bc.encode_baseline(packet), self.now)
        nxt = next_challenge_time(dev.local(self.now), self.sc.auth) - dev.local(self.now) + self.now
        self._push(nxt, self._challenge, dev)

    def on_established(self, dev: Device, result, t_true: float):
        m = self.metrics
        self.record(dev.name, "established",
                    f"peer={result.peer_mmsi:09d} distance={result.ranging.distance_m:.3f}")
        if m.established_at_s is None:
            m.established_at_s = round(t_true - self.sc.start_time, 6)
        m.authenticated = True
        m.distance_est_m = result.ranging.distance_m
        m.ranging_error_m = result.ranging.distance_m - m.distance_true_m
        m.clock_offset_est_s = result.ranging.clock_offset_s
        peer = self._by_mmsi(result.peer_mmsi)
        if peer is not None:
            m.clock_offset_true_s = peer.clock.offset_s - dev.clock.offset_s
            other = peer.store.sessions.get(dev.mmsi)
            m.keys_equal = other is not None and other.key == result.session_key
        if dev.spec.sync_clocks:
            rtt = result.ranging.round_trip_s
            t_local = result.t_a2 / 1000
            t_peer = t_local + bc.timestamp_diff_ms(result.t_b, result.t_a2) / 1000
            adj = sync_clock_if_coarser(dev.clock.descriptor, t_local, t_peer, result.cd_peer, rtt)
            if adj is not None:
                dev.clock.step(adj)
                m.clock_adjustment_s = adj
                self.record(dev.name, "clock-sync", f"{adj:+.6f}")

    def _by_mmsi(self, mmsi: int) -> Device | None:
        for d in self.devices.values():
            if d.mmsi == mmsi:
                return d
        return None

    def run(self) -> SimResult:
        for dev in self.devices.values():
            if dev.spec.role is Role.INITIATOR:
                peer = self.devices.get(dev.spec.peer) if dev.spec.peer else None
                peer_mmsi = peer.mmsi if peer else None
                dev.initiator = dev._session(Role.INITIATOR, peer_mmsi)
                self._push(self.sc.start_time + self.sc.first_challenge_s, self._challenge, dev)
        stop = self.sc.start_time + self.sc.stop_time_s
        while self.queue:
            t, _, action, args = heapq.heappop(self.queue)
            if t > stop:
                break
            self.now = t
            action(*args)
            if self._done():
                break
        keys = {}
        for dev in self.devices.values():
            if dev.result is not None:
                keys[dev.name] = dev.result.session_key
            for peer, s in dev.store.sessions.items():
                keys.setdefault(dev.name, s.key)
        return SimResult(self.trace, self.metrics, keys, self.devices)

    def _done(self) -> bool:
        if self.sc.adversary:
            return False
        inits = [d for d in self.devices.values() if d.initiator is not None]
        return bool(inits) and all(d.initiator.state is State.ESTABLISHED for d in inits)


def run_scenario(scenario: Scenario | str | Path) -> SimResult:
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    return Simulator(scenario).run()


# --- builders and config parsing -------------------------------------------------


def pair_keystores(mmsi_a: int, mmsi_b: int, key: bytes, epoch: float, slot=(0, 1),
                   lifetime_days: int = 60) -> tuple[KeyStore, KeyStore]:
    """Two keystores sharing a long-term key, each bound to the other party."""
    a, b = KeyStore(), KeyStore()
    a.add_longterm(LongTermKeyRecord(*slot, key, epoch, lifetime_days, peer_mmsi=mmsi_b))
    b.add_longterm(LongTermKeyRecord(*slot, key, epoch, lifetime_days, peer_mmsi=mmsi_a))
    return a, b


def two_device_scenario(distance_m: float = 1500.0, *, seed: int = 0, current_mps: float = 0.0,
                        offset_a: float = 0.0, offset_b: float = 0.0,
                        drift_a: float = 0.0, drift_b: float = 0.0,
                        cd_a: int = 0, cd_b: int = 0, key_age_s: float = 3 * 86_400,
                        loss: float = 0.0, ber: float = 0.0, stop_time_s: float = 3600.0,
                        auth: AuthConfig | None = None, adversary: AdversarySpec | None = None,
                        start_time: float = DEFAULT_START, key: bytes | None = None,
                        mmsi_a: int = 257_000_001, mmsi_b: int = 257_000_002) -> Scenario:
    """Initiator A at position 0 and responder B at `distance_m`."""
    if key is None:
        key = random.Random(seed).randbytes(LONGTERM_KEY_BYTES)
    epoch = start_time - key_age_s
    store_a, store_b = pair_keystores(mmsi_a, mmsi_b, key, epoch)
    sea = VirtualSea(distance_m, 1500.0, current_mps, loss, ber, seed)
    devices = [
        DeviceSpec("A", mmsi_a, Role.INITIATOR, DeviceClock(offset_a, drift_a, cd_a, epoch), store_a, peer="B"),
        DeviceSpec("B", mmsi_b, Role.RESPONDER, DeviceClock(offset_b, drift_b, cd_b, epoch), store_b, peer="A"),
    ]
    return Scenario(sea, devices, auth or AuthConfig(), adversary, start_time, stop_time_s)


def load_scenario(path: str | Path) -> Scenario:
    """Parse an INI-style scenario file.

    Sections: ``[channel]``, optional ``[protocol]``, optional
    ``[adversary]``, optional ``[keys]`` and one ``[device NAME]`` per
    device. A device without a ``keystore`` path gets a key generated from
    the ``[keys]`` seed and bound to its ``peer``.
    """
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        if not cp.read(path):
            raise ScenarioError(f"cannot read scenario {path}")
        return _build(cp, path.parent)
    except (configparser.Error, ValueError, KeyError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"malformed scenario {path}: {exc}") from exc


def _build(cp: configparser.ConfigParser, base: Path) -> Scenario:
    if "channel" not in cp:
        raise ScenarioError("scenario needs a [channel] section")
    ch = cp["channel"]
    sea = VirtualSea(
        distance_m=ch.getfloat("distance_m", 1500.0),
        sound_speed_mps=ch.getfloat("sound_speed_mps", 1500.0),
        current_mps=ch.getfloat("current_mps", 0.0),
        loss_probability=ch.getfloat("loss_probability", 0.0),
        bit_error_rate=ch.getfloat("bit_error_rate", 0.0),
        seed=ch.getint("seed", 0),
        bit_rate_bps=ch.getfloat("bit_rate_bps", 80.0),
    )
    start = parse_iso(ch.get("start_time", "2026-01-01T00:00:00Z"))
    auth = AuthConfig()
    if "protocol" in cp:
        pr = cp["protocol"]
        for name in ("max_range_m", "processing_delay_s", "challenge_interval_s",
                     "rollover_offset_s", "window_s", "rtt_slack_s"):
            if name in pr:
                setattr(auth, name, pr.getfloat(name))
    auth.sound_speed_mps = sea.sound_speed_mps
    auth.bit_rate_bps = sea.bit_rate_bps

    keys = cp["keys"] if "keys" in cp else {}
    key_seed = int(keys.get("seed", sea.seed))
    key_age = float(keys.get("age_days", 3)) * 86_400
    slot = (int(keys.get("class_id", 0)), int(keys.get("app_type", 1)))

    specs = []
    for name in cp.sections():
        if not name.startswith("device "):
            continue
        sec = cp[name]
        role = Role.INITIATOR if sec.get("role", "responder").lower() in ("initiator", "a") else Role.RESPONDER
        clock = DeviceClock(sec.getfloat("clock_offset_s", 0.0), sec.getfloat("clock_drift", 0.0),
                            sec.getint("clock_descriptor", 0), start - key_age)
        store = KeyStore.load(base / sec["keystore"]) if "keystore" in sec else KeyStore()
        pos = sec.getfloat("position_m") if "position_m" in sec else None
        specs.append(DeviceSpec(name.split(None, 1)[1], bc.mmsi_to_bits(sec["mmsi"]), role, clock,
                                store, sec.get("peer"), pos, sec.getboolean("sync_clocks", True)))
    if len(specs) < 2:
        raise ScenarioError("scenario needs at least two devices")

    by_name = {s.name: s for s in specs}
    rng = random.Random(key_seed)
    for s in specs:
        if s.peer and s.peer not in by_name:
            raise ScenarioError(f"device {s.name} names unknown peer {s.peer}")
        if s.peer and not s.keystore.longterm and not by_name[s.peer].keystore.longterm:
            key = rng.randbytes(LONGTERM_KEY_BYTES)
            p = by_name[s.peer]
            s.keystore.add_longterm(LongTermKeyRecord(*slot, key, start - key_age, peer_mmsi=p.mmsi))
            p.keystore.add_longterm(LongTermKeyRecord(*slot, key, start - key_age, peer_mmsi=s.mmsi))

    adversary = None
    if "adversary" in cp:
        delays = cp["adversary"].get("replay_delays_s", "30, 300, 3600")
        adversary = AdversarySpec(tuple(float(x) for x in delays.split(",")))
    return Scenario(sea, specs, auth, adversary, start, ch.getfloat("stop_time_s", 3600.0),
                    ch.getfloat("first_challenge_s", 0.0))


def write_trace(result: SimResult, path: str | Path):
    Path(path).write_text(result.trace_text())


def write_metrics(result: SimResult, path: str | Path):
    Path(path).write_text("".join(f"{k}\t{v}\n" for k, v in result.metrics.rows()))
