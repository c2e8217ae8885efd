"""Deterministic discrete-event simulator for pub/sub datagram traffic.

One subnet (10.0.5.0/24) with the fixed cast:

* ``.4`` / ``.5``  data-plane hosts; in benign, dos and clone scenarios the
  subscriber sits on ``.4`` and five publisher instances on ``.5``; in the
  malsub scenario the publisher sits on ``.4`` and the genuine subscriber on
  ``.5``,
* ``.6``           the attacker in every attack scenario,
* ``.2`` / ``.3``  virtual routers, emitting chatter only in malsub traces.

Every participant (re)launch draws a fresh ephemeral source port, so each
launch becomes a new bidirectional session.  A session opens with a 4-packet
16-byte discovery handshake on the same port pair that carries the data,
followed by the receiver announcing its topic slice (8 bytes per topic key).
Publishers then serialize one topic batch per interval: each topic is an
8-byte key plus an 8-byte value (the values sampled from the square GPS
patrol track), so a batch of n topics is a 16*n-byte datagram.  Receivers
acknowledge every 8th batch with a 16-byte datagram.  Per-launch topic
counts mix a compact 50..60 profile with a log-uniform draw across the
configured range, so batch sizes span the fleet.

Fixed accounting decisions: every packet carries a 28-byte header (datagram
plus network header), zeroed TCP-style flags, protocol 17, and a 1-microsecond
clock resolution.  The DoS flood keeps a 1 ms minimum inter-packet gap by
default (``dos_gap``) so inter-arrival statistics stay finite.

The clone keeps the genuine cadence and alternates between its two payloads:
a filler datagram of the maximum topic length and a forged topic batch whose
false values leave no visible trace at the metadata level.  The malicious
subscriber's sessions reuse the genuine session shape end to end; only its
address and its narrow topic slice set it apart.  Trace generation is a pure
function of (config, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

import numpy as np

SUBNET = "10.0.5."
ROUTER_HOSTS = (2, 3)
PROTO_UDP = 17
HEADER_LEN = 28
DISCOVERY_PAYLOAD = 16
ACK_PAYLOAD = 16
ACK_EVERY = 8
TOPIC_BYTES = 16  # 8-byte key + 8-byte value
SUBSCRIPTION_KEY_BYTES = 8
DOS_PAYLOAD = 256
MIN_TOPICS = 50
PATROL_PERIOD_S = 120.0

# Benign lifecycle texture (relative to ScenarioConfig.benign_relaunch_period
# and publish_interval).
CYCLE_JITTER = (0.7, 1.3)
BENIGN_INTERVAL_JITTER_MAX = 0.01
RELAUNCH_DOWNTIME_S = 0.2
FIRST_DATA_OFFSET_S = 0.05
# Fraction of publisher relaunches that carry a compact batch (50..60 topics,
# heartbeat-style) instead of a draw over the full topic range.
COMPACT_BATCH_FRACTION = 0.25
# Fraction of clone launches that fall back to the 256-byte filler payload
# instead of forging a plausible topic batch.
CLONE_FILLER_FRACTION = 0.65

SCENARIOS = ("benign", "dos", "clone", "malsub")
ATTACK_SCENARIOS = ("dos", "clone", "malsub")


class PacketRecord(NamedTuple):
    """One simulated datagram event."""

    ts: float
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    proto: int
    payload_len: int
    header_len: int
    flags: int


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    duration: float
    publish_interval: float = 0.5
    topics_per_publisher: int = 200
    relaunch_period: float = 1.0
    relaunch_count: int = 0
    rng_seed: int = 1
    gps_origin: tuple[float, float] = (51.5279719, -0.1024624)
    gps_max_delta: float = 0.015
    # Artifact knobs the scenario descriptions imply but leave open.
    n_publishers: int = 5
    benign_relaunch_period: float = 40.0
    dos_gap: float = 0.001
    attack_active: float | None = None
    malsub_join_delay: float = 0.3

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}, expected one of {SCENARIOS}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.publish_interval <= 0:
            raise ValueError("publish_interval must be positive")
        if not MIN_TOPICS <= self.topics_per_publisher <= 500:
            raise ValueError("topics_per_publisher must be within 50..500")
        if self.relaunch_period <= 0:
            raise ValueError("relaunch_period must be positive")
        if not 0 <= self.relaunch_count <= 2000:
            raise ValueError("relaunch_count must be within 0..2000")
        if self.gps_max_delta <= 0:
            raise ValueError("gps_max_delta must be positive")
        if self.n_publishers < 1:
            raise ValueError("n_publishers must be at least 1")
        if self.dos_gap <= 0:
            raise ValueError("dos_gap must be positive")
        if self.attack_active is not None and self.attack_active <= 0:
            raise ValueError("attack_active must be positive when set")


def host_ip(host: int) -> str:
    return f"{SUBNET}{host}"


def patrol_position(origin: tuple[float, float], max_delta: float, t: float) -> tuple[float, float]:
    """Position on the square patrol perimeter at time t; stays within
    +/- max_delta of the origin on both axes."""
    corners = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
    s = (t % PATROL_PERIOD_S) / PATROL_PERIOD_S * 4.0
    side = min(int(s), 3)
    frac = s - side
    ax, ay = corners[side]
    bx, by = corners[(side + 1) % 4]
    lat = origin[0] + max_delta * (ax + frac * (bx - ax))
    lon = origin[1] + max_delta * (ay + frac * (by - ay))
    return lat, lon


class _TraceBuilder:
    def __init__(self, config: ScenarioConfig):
        self.cfg = config
        self.rng = np.random.default_rng(config.rng_seed)
        self.duration_us = int(round(config.duration * 1e6))
        self.events: list[tuple[int, int, str, int, str, int, int]] = []
        self.used_ports: set[tuple[int, int]] = set()

    def ephemeral_port(self, host: int) -> int:
        while True:
            port = int(self.rng.integers(1024, 65536))
            if (host, port) not in self.used_ports:
                self.used_ports.add((host, port))
                return port

    def emit(self, t_us: int, src: int, sport: int, dst: int, dport: int, payload: int) -> bool:
        if not 0 <= t_us < self.duration_us:
            return False
        self.events.append((t_us, len(self.events), host_ip(src), sport, host_ip(dst), dport, payload))
        return True

    def discovery(self, t_us: int, joiner: int, jport: int, peer: int, pport: int) -> None:
        for i in range(4):
            src, sport, dst, dport = (joiner, jport, peer, pport) if i % 2 == 0 else (peer, pport, joiner, jport)
            self.emit(t_us + i * 1000, src, sport, dst, dport, DISCOVERY_PAYLOAD)

    def stream(
        self,
        start_us: int,
        end_us: int,
        src: int,
        sport: int,
        dst: int,
        dport: int,
        payload: int,
        interval_s: float,
        jitter_scale: float,
        ack_from_dst: bool = True,
    ) -> int:
        """Emit one topic batch per interval from start to end; the receiver
        acknowledges every ACK_EVERY-th batch.  Returns batches emitted."""
        t_us = start_us
        sent = 0
        while t_us < min(end_us, self.duration_us):
            if not self.emit(t_us, src, sport, dst, dport, payload):
                break
            sent += 1
            if ack_from_dst and sent % ACK_EVERY == 0:
                self.emit(t_us + 2000, dst, dport, src, sport, ACK_PAYLOAD)
            eps = float(self.rng.uniform(-jitter_scale, jitter_scale))
            t_us += int(round(interval_s * (1.0 + eps) * 1e6))
        return sent

    def finish(self) -> list[PacketRecord]:
        self.events.sort(key=lambda e: (e[0], e[1]))
        return [
            PacketRecord(t / 1e6, src, sport, dst, dport, PROTO_UDP, payload, HEADER_LEN, 0)
            for t, _, src, sport, dst, dport, payload in self.events
        ]


def _draw_topics(b: _TraceBuilder) -> int:
    """Per-launch topic count: a compact 50..60 batch for some launches,
    otherwise log-uniform across the configured range."""
    hi = b.cfg.topics_per_publisher
    if hi <= 60 or float(b.rng.uniform()) < COMPACT_BATCH_FRACTION:
        return int(b.rng.integers(MIN_TOPICS, min(60, hi) + 1))
    span = math.log(hi / MIN_TOPICS)
    return min(hi, int(round(MIN_TOPICS * math.exp(float(b.rng.uniform()) * span))))


def _benign_substrate(b: _TraceBuilder, sub_host: int, pub_host: int, sub_port: int) -> None:
    """Five (configurable) publisher instances streaming topic batches to the
    subscriber, each instance relaunching on a fresh port every cycle."""
    cfg = b.cfg
    for i in range(cfg.n_publishers):
        t_us = int(round(i * 0.1 * 1e6))
        while t_us < b.duration_us:
            cycle_s = cfg.benign_relaunch_period * float(b.rng.uniform(*CYCLE_JITTER))
            n_topics = _draw_topics(b)
            jitter_scale = float(b.rng.uniform(0.0, BENIGN_INTERVAL_JITTER_MAX))
            port = b.ephemeral_port(pub_host)
            b.discovery(t_us, pub_host, port, sub_host, sub_port)
            b.emit(t_us + 5_000, sub_host, sub_port, pub_host, port, n_topics * SUBSCRIPTION_KEY_BYTES)
            end_us = t_us + int(round(cycle_s * 1e6))
            b.stream(
                t_us + int(FIRST_DATA_OFFSET_S * 1e6),
                end_us,
                pub_host,
                port,
                sub_host,
                sub_port,
                n_topics * TOPIC_BYTES,
                cfg.publish_interval,
                jitter_scale,
            )
            t_us = end_us + int(RELAUNCH_DOWNTIME_S * 1e6)


def _attack_launches(cfg: ScenarioConfig) -> list[int]:
    """Launch times (us) for the attacker, one per malicious session."""
    launches = []
    for k in range(cfg.relaunch_count):
        t = k * cfg.relaunch_period
        if t + 0.01 >= cfg.duration:
            break
        launches.append(int(round(t * 1e6)))
    if len(launches) < cfg.relaunch_count:
        raise ValueError(
            f"{cfg.scenario}: only {len(launches)} of {cfg.relaunch_count} malicious "
            f"sessions fit in duration {cfg.duration:.1f} s at relaunch_period "
            f"{cfg.relaunch_period:.3f} s (short by {cfg.relaunch_count - len(launches)})"
        )
    return launches


def generate_benign(config: ScenarioConfig) -> list[PacketRecord]:
    """Benign pub/sub trace (also the substrate of dos and clone traces)."""
    b = _TraceBuilder(config)
    sub_port = b.ephemeral_port(4)
    _benign_substrate(b, sub_host=4, pub_host=5, sub_port=sub_port)
    return b.finish()


def generate_attack(config: ScenarioConfig) -> list[PacketRecord]:
    if config.scenario not in ATTACK_SCENARIOS:
        raise ValueError(f"generate_attack requires an attack scenario, got {config.scenario!r}")
    launches = _attack_launches(config)
    b = _TraceBuilder(config)

    if config.scenario in ("dos", "clone"):
        sub_port = b.ephemeral_port(4)
        _benign_substrate(b, sub_host=4, pub_host=5, sub_port=sub_port)
        for t_us in launches:
            port = b.ephemeral_port(6)
            n_topics = _draw_topics(b)
            b.discovery(t_us, 6, port, 4, sub_port)
            b.emit(t_us + 5_000, 4, sub_port, 6, port, n_topics * SUBSCRIPTION_KEY_BYTES)
            if config.scenario == "dos":
                active = config.attack_active if config.attack_active is not None else 0.08
                t = t_us + 10_000
                end = t_us + int(round(active * 1e6))
                gap_us = max(1, int(round(config.dos_gap * 1e6)))
                while t < end:
                    if not b.emit(t, 6, port, 4, sub_port, DOS_PAYLOAD):
                        break
                    t += gap_us
            else:
                # The clone matches the genuine rate; some launches push the
                # fixed 256-byte filler, the rest forge a plausible topic
                # batch with false values.
                if config.attack_active is not None:
                    active = config.attack_active
                else:
                    active = config.benign_relaunch_period * float(b.rng.uniform(*CYCLE_JITTER))
                # The forged batch mirrors the announced slice, as a genuine
                # publisher's would.
                if float(b.rng.uniform()) < CLONE_FILLER_FRACTION:
                    payload = DOS_PAYLOAD
                else:
                    payload = n_topics * TOPIC_BYTES
                jitter_scale = float(b.rng.uniform(0.0, BENIGN_INTERVAL_JITTER_MAX))
                b.stream(
                    t_us + int(FIRST_DATA_OFFSET_S * 1e6),
                    t_us + int(round(active * 1e6)),
                    6,
                    port,
                    4,
                    sub_port,
                    payload,
                    config.publish_interval,
                    jitter_scale,
                )
        return b.finish()

    # malsub: the publisher on .4 opens one stream per subscriber session;
    # the receiver announces its topic slice, then batches flow to it.
    mgmt_port = b.ephemeral_port(4)

    def subscriber_session(t_us: int, host: int, n_topics: int, active_s: float, jitter: float) -> None:
        pub_port = b.ephemeral_port(4)
        port = b.ephemeral_port(host)
        b.discovery(t_us, 4, pub_port, host, port)
        b.emit(t_us + 5_000, host, port, 4, pub_port, n_topics * SUBSCRIPTION_KEY_BYTES)
        b.stream(
            t_us + int(FIRST_DATA_OFFSET_S * 1e6),
            t_us + int(round(active_s * 1e6)),
            4,
            pub_port,
            host,
            port,
            n_topics * TOPIC_BYTES,
            config.publish_interval,
            jitter,
        )

    # Genuine subscriber on .5, re-served each publisher cycle with all topics.
    t_us = 0
    while t_us < b.duration_us:
        cycle_s = config.benign_relaunch_period * float(b.rng.uniform(*CYCLE_JITTER))
        jitter_scale = float(b.rng.uniform(0.0, BENIGN_INTERVAL_JITTER_MAX))
        subscriber_session(t_us, 5, config.topics_per_publisher, cycle_s, jitter_scale)
        t_us += int(round((cycle_s + RELAUNCH_DOWNTIME_S) * 1e6))

    # Malicious subscriber on .6: joins after a delay, harvests 50..60 of the
    # topics for a limited window, leaves before the trace ends.
    join_delay_us = int(round(config.malsub_join_delay * 1e6))
    for t_us in launches:
        if config.attack_active is not None:
            active = config.attack_active
        else:
            active = config.benign_relaunch_period * float(b.rng.uniform(*CYCLE_JITTER))
        active = min(active, (b.duration_us - t_us - join_delay_us) / 1e6 - 0.05)
        if active <= 0:
            active = 0.05
        n_topics = int(b.rng.integers(50, 61))
        jitter_scale = float(b.rng.uniform(0.0, BENIGN_INTERVAL_JITTER_MAX))
        subscriber_session(t_us + join_delay_us, 6, n_topics, active, jitter_scale)

    # Router chatter, removed later by preprocessing.
    t_us = 0
    while t_us < b.duration_us:
        pa = b.ephemeral_port(2)
        pb = b.ephemeral_port(3)
        b.discovery(t_us, 2, pa, 3, pb)
        t = t_us + 50_000
        end = t_us + int(round(config.benign_relaunch_period * 1e6))
        sent = 0
        while t < end and b.emit(t, 2, pa, 3, pb, 48):
            sent += 1
            if sent % 4 == 0:
                b.emit(t + 3000, 3, pb, 2, pa, 48)
            t += 1_000_000
        pc = b.ephemeral_port(3)
        b.emit(t_us + 7_000, 3, pc, 4, mgmt_port, 64)
        b.emit(t_us + 9_000, 4, mgmt_port, 3, pc, 64)
        t_us = end + int(RELAUNCH_DOWNTIME_S * 1e6)

    return b.finish()


def generate(config: ScenarioConfig) -> list[PacketRecord]:
    if config.scenario == "benign":
        return generate_benign(config)
    return generate_attack(config)


PACKET_CSV_HEADER = "ts,src_ip,src_port,dst_ip,dst_port,proto,payload_len,header_len,flags"


def write_packet_csv(trace: Iterable[PacketRecord], path) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(PACKET_CSV_HEADER + "\n")
            for p in trace:
                fh.write(
                    f"{p.ts:.6f},{p.src_ip},{p.src_port},{p.dst_ip},{p.dst_port},"
                    f"{p.proto},{p.payload_len},{p.header_len},{p.flags}\n"
                )
    except OSError as exc:
        raise OSError(f"cannot write packet csv {path}: {exc}") from exc


def read_packet_csv(path) -> list[PacketRecord]:
    try:
        with open(path) as fh:
            header = fh.readline().rstrip("\n")
            if header != PACKET_CSV_HEADER:
                raise ValueError(f"{path}: unexpected packet csv header {header!r}")
            trace = []
            for line in fh:
                f = line.rstrip("\n").split(",")
                if len(f) != 9:
                    raise ValueError(f"{path}: malformed row {line!r}")
                trace.append(
                    PacketRecord(
                        float(f[0]), f[1], int(f[2]), f[3], int(f[4]),
                        int(f[5]), int(f[6]), int(f[7]), int(f[8]),
                    )
                )
    except OSError as exc:
        raise OSError(f"cannot read packet csv {path}: {exc}") from exc
    return trace


_CONFIG_FIELDS = {
    "scenario": str,
    "duration": float,
    "publish_interval": float,
    "topics_per_publisher": int,
    "relaunch_period": float,
    "relaunch_count": int,
    "rng_seed": int,
    "gps_max_delta": float,
    "n_publishers": int,
    "benign_relaunch_period": float,
    "dos_gap": float,
    "attack_active": float,
    "malsub_join_delay": float,
}


def load_scenario_config(path, seed_override: int | None = None) -> ScenarioConfig:
    """Parse a key = value scenario file; '#' starts a comment."""
    kwargs: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "gps_origin":
                lat, lon = value.split(",")
                kwargs[key] = (float(lat), float(lon))
            elif key in _CONFIG_FIELDS:
                kwargs[key] = _CONFIG_FIELDS[key](value)
            else:
                raise ValueError(f"{path}:{lineno}: unknown scenario field {key!r}")
    config = ScenarioConfig(**kwargs)
    if seed_override is not None:
        config = replace(config, rng_seed=seed_override)
    return config


def save_scenario_config(config: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"scenario = {config.scenario}\n")
        fh.write(f"duration = {config.duration!r}\n")
        fh.write(f"publish_interval = {config.publish_interval!r}\n")
        fh.write(f"topics_per_publisher = {config.topics_per_publisher}\n")
        fh.write(f"relaunch_period = {config.relaunch_period!r}\n")
        fh.write(f"relaunch_count = {config.relaunch_count}\n")
        fh.write(f"rng_seed = {config.rng_seed}\n")
        fh.write(f"gps_origin = {config.gps_origin[0]!r},{config.gps_origin[1]!r}\n")
        fh.write(f"gps_max_delta = {config.gps_max_delta!r}\n")
        fh.write(f"n_publishers = {config.n_publishers}\n")
        fh.write(f"benign_relaunch_period = {config.benign_relaunch_period!r}\n")
        fh.write(f"dos_gap = {config.dos_gap!r}\n")
        if config.attack_active is not None:
            fh.write(f"attack_active = {config.attack_active!r}\n")
        fh.write(f"malsub_join_delay = {config.malsub_join_delay!r}\n")
