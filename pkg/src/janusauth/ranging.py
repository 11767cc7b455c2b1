"""Two-way time-of-flight ranging from the three protocol timestamps.

With A's ping stamped t_a1 on A's clock, B's reception stamped t_b1 on B's
clock and the pong's reception stamped t_a2 on A's clock::

    t_b1 - t_a1 = d/(c+v) + (dB - dA)
    t_a2 - t_b1 = d/(c-v) + (dA - dB)
    t_a2 - t_a1 = 2dc / (c^2 - v^2)

so the round trip is free of both clock offsets.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bitcodec import TIMESTAMP_WINDOW_MS

WINDOW_S = TIMESTAMP_WINDOW_MS / 1000
TIMESTAMP_RESOLUTION_S = 1e-3
DEFAULT_SOUND_SPEED = 1500.0


class RangingError(ValueError):
    pass


@dataclass(frozen=True)
class RangingEstimate:
    distance_m: float
    clock_offset_s: float
    round_trip_s: float
    quantization_bound_m: float


def _unwrap(t: float, ref: float) -> float:
    """Move `t` onto the 6-day window nearest `ref`."""
    return ref + ((t - ref + WINDOW_S / 2) % WINDOW_S - WINDOW_S / 2)


def estimate_distance(t_a1: float, t_b1: float, t_a2: float,
                      sound_speed: float = DEFAULT_SOUND_SPEED,
                      current: float | None = None) -> RangingEstimate:
    """Distance and differential clock offset (dB - dA).

    Times are in seconds within the timestamp window. Without `current`
    the first-order inversion d = c*rtt/2 is used; with it the exact
    d = (c^2 - v^2) * rtt / (2c).
    """
    if sound_speed <= 0:
        raise RangingError("sound speed must be positive")
    if t_a2 < t_a1:
        t_a2 += WINDOW_S
    rtt = t_a2 - t_a1
    if rtt < 0 or rtt >= WINDOW_S / 2:
        raise RangingError(f"timestamps out of order: round trip {rtt:.3f} s")
    t_b1 = _unwrap(t_b1, t_a1)
    if current is None:
        distance = sound_speed * rtt / 2
    else:
        if abs(current) >= sound_speed:
            raise RangingError("current must be slower than sound")
        distance = (sound_speed**2 - current**2) * rtt / (2 * sound_speed)
    offset = ((t_b1 - t_a1) - (t_a2 - t_b1)) / 2
    return RangingEstimate(distance, offset, rtt, sound_speed * TIMESTAMP_RESOLUTION_S)


def predict_observables(d: float, c: float, v: float, delta_a: float, delta_b: float,
                        t0: float = 0.0) -> tuple[float, float, float]:
    """Forward model: (t_a1, t_b1, t_a2) for a ping sent at true time t0."""
    if abs(v) >= c:
        raise RangingError("current must be slower than sound")
    if d < 0:
        raise RangingError("distance must be non-negative")
    t1 = t0 + d / (c + v)
    return t0 + delta_a, t1 + delta_b, t1 + d / (c - v) + delta_a


def offset_residual_bound(d: float, c: float, v: float) -> float:
    """|d v / (c^2 - v^2)|: the current-induced bias of the offset estimate."""
    return abs(d * v / (c * c - v * v))
