"""Bang-bang controls represented by their switching times.

A control with m channels is stored as per-channel bounds, per-channel
initial values, and a flat time-ordered list of switching events, each
event flipping exactly one channel between its two extreme values. The
event list is the vector of switching times that every differential in
this package is indexed by.

Channel indices are 1-based throughout (they name physical actuators and
match the JSON interchange format); event positions are 0-based.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import OrderViolation


@dataclass(frozen=True)
class ChannelBounds:
    """Per-channel extreme control values; channel i takes values in
    {lower[i], upper[i]}."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower/upper must be non-empty and of equal length")
        for a, b in zip(self.lower, self.upper):
            if not a < b:
                raise ValueError(f"need lower < upper per channel, got {a} >= {b}")

    @property
    def num_channels(self) -> int:
        return len(self.lower)


@dataclass(frozen=True, order=True)
class SwitchingEvent:
    """One switching time: channel `channel` (1-based) flips at `time`."""

    time: float
    channel: int

    def __post_init__(self):
        object.__setattr__(self, "time", float(self.time))
        object.__setattr__(self, "channel", int(self.channel))


@dataclass(frozen=True)
class GapPolicy:
    """Minimum dwell time between consecutive switching times.

    The gap is also enforced against the boundaries: first event at least
    eta after 0 and last event at most t_f - eta.
    """

    eta: float = 0.05

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")


@dataclass(frozen=True)
class BangBangControl:
    """Immutable bang-bang control on [0, final_time].

    Channel i starts at initial_values[i-1] (one of its two bounds) and
    flips between bounds at each of its own events. Events are strictly
    increasing in time and each flips a single channel.
    """

    bounds: ChannelBounds
    initial_values: tuple[float, ...]
    events: tuple[SwitchingEvent, ...]
    final_time: float

    def __post_init__(self):
        object.__setattr__(
            self, "initial_values", tuple(float(v) for v in self.initial_values)
        )
        object.__setattr__(self, "events", tuple(self.events))
        object.__setattr__(self, "final_time", float(self.final_time))
        m = self.bounds.num_channels
        if len(self.initial_values) != m:
            raise ValueError("initial_values length must match channel count")
        for i, v in enumerate(self.initial_values):
            if v != self.bounds.lower[i] and v != self.bounds.upper[i]:
                raise ValueError(
                    f"initial value {v} of channel {i + 1} is not one of its bounds"
                )
        if self.final_time <= 0:
            raise ValueError("final_time must be positive")
        prev = 0.0
        for k, ev in enumerate(self.events):
            if not 0.0 < ev.time < self.final_time:
                raise OrderViolation(
                    f"event {k} at t={ev.time} outside (0, {self.final_time})"
                )
            if k > 0 and ev.time <= prev:
                raise OrderViolation(
                    f"event times must be strictly increasing, got {prev} then {ev.time}"
                )
            if not 1 <= ev.channel <= m:
                raise ValueError(f"event channel {ev.channel} outside 1..{m}")
            prev = ev.time

    @property
    def num_channels(self) -> int:
        return self.bounds.num_channels

    @property
    def num_events(self) -> int:
        return len(self.events)

    def event_times(self) -> np.ndarray:
        return np.array([ev.time for ev in self.events], dtype=float)

    def channel_value_before(self, event_index: int) -> float:
        """Value of the flipping channel on the open interval ending at the
        event (reconstructed by flip counting)."""
        ev = self.events[event_index]
        flips = sum(
            1
            for e in self.events[:event_index]
            if e.channel == ev.channel
        )
        lo = self.bounds.lower[ev.channel - 1]
        hi = self.bounds.upper[ev.channel - 1]
        start = self.initial_values[ev.channel - 1]
        other = hi if start == lo else lo
        return start if flips % 2 == 0 else other

    def channel_value_after(self, event_index: int) -> float:
        ev = self.events[event_index]
        before = self.channel_value_before(event_index)
        lo = self.bounds.lower[ev.channel - 1]
        hi = self.bounds.upper[ev.channel - 1]
        return hi if before == lo else lo

    def with_events(self, events: Sequence[SwitchingEvent]) -> "BangBangControl":
        return BangBangControl(
            bounds=self.bounds,
            initial_values=self.initial_values,
            events=tuple(events),
            final_time=self.final_time,
        )

    def to_json(self) -> str:
        return json.dumps(control_to_dict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "BangBangControl":
        return control_from_dict(json.loads(text))


def value_at(control: BangBangControl, t: float) -> np.ndarray:
    """Control vector u(t), right-continuous at event times.

    Channel i equals its initial value flipped once per event of channel i
    with time <= t.
    """
    if not 0.0 <= t <= control.final_time:
        raise ValueError(f"t={t} outside [0, {control.final_time}]")
    flips = [0] * control.num_channels
    for ev in control.events:
        if ev.time > t:
            break
        flips[ev.channel - 1] += 1
    out = np.empty(control.num_channels, dtype=float)
    for i in range(control.num_channels):
        if flips[i] % 2 == 0:
            out[i] = control.initial_values[i]
        else:
            lo, hi = control.bounds.lower[i], control.bounds.upper[i]
            out[i] = hi if control.initial_values[i] == lo else lo
    return out


def insert_needle(
    control: BangBangControl, channel: int, s_open: float, s_close: float
) -> BangBangControl:
    """Add a needle: two extra events (s_open, channel), (s_close, channel)
    merged into the time-ordered event list. The control is unchanged
    outside [s_open, s_close]."""
    if not s_open < s_close:
        raise OrderViolation(f"need s_open < s_close, got {s_open} >= {s_close}")
    if not (0.0 < s_open and s_close < control.final_time):
        raise OrderViolation(
            f"needle [{s_open}, {s_close}] outside (0, {control.final_time})"
        )
    times = [ev.time for ev in control.events]
    for s in (s_open, s_close):
        if s in times:
            raise OrderViolation(f"needle time {s} collides with an existing event")
    merged = sorted(
        list(control.events)
        + [SwitchingEvent(s_open, channel), SwitchingEvent(s_close, channel)],
        key=lambda ev: ev.time,
    )
    return control.with_events(merged)


def validate_gaps(control: BangBangControl, policy: GapPolicy) -> bool:
    """True iff consecutive events are at least eta apart, the first event is
    at least eta after 0, and the last at most t_f - eta."""
    times = control.event_times()
    if times.size == 0:
        return True
    eta = policy.eta
    if times[0] < eta or times[-1] > control.final_time - eta:
        return False
    return bool(np.all(np.diff(times) >= eta)) if times.size > 1 else True


def apply_shift(
    control: BangBangControl, shift: np.ndarray, frozen_before: float = 0.0
) -> BangBangControl:
    """Shift the times of all events with time > frozen_before.

    `shift` has one entry per movable event, in event order. Raises
    OrderViolation if the shifted list is no longer strictly increasing or
    any shifted event leaves (frozen_before, final_time); the caller (the
    tracking loop) then keeps the last admissible control.
    """
    shift = np.asarray(shift, dtype=float)
    movable = [k for k, ev in enumerate(control.events) if ev.time > frozen_before]
    if shift.shape != (len(movable),):
        raise ValueError(
            f"shift has {shift.shape} entries for {len(movable)} movable events"
        )
    new_events = list(control.events)
    for d, k in zip(shift, movable):
        ev = new_events[k]
        new_t = ev.time + d
        if not frozen_before < new_t < control.final_time:
            raise OrderViolation(
                f"shifted event {k} at t={new_t} leaves "
                f"({frozen_before}, {control.final_time})"
            )
        new_events[k] = SwitchingEvent(new_t, ev.channel)
    for a, b in zip(new_events, new_events[1:]):
        if b.time <= a.time:
            raise OrderViolation(
                f"shift interchanges switching times ({a.time} >= {b.time})"
            )
    return control.with_events(new_events)


def first_event_index_after(control: BangBangControl, t: float) -> int:
    """Index of the first event with time > t (== num_events if none)."""
    times = [ev.time for ev in control.events]
    return bisect.bisect_right(times, t)


def control_to_dict(control: BangBangControl) -> dict:
    return {
        "bounds": {
            "lower": list(control.bounds.lower),
            "upper": list(control.bounds.upper),
        },
        "initial_values": list(control.initial_values),
        "events": [{"t": ev.time, "channel": ev.channel} for ev in control.events],
        "t_f": control.final_time,
    }


def control_from_dict(data: dict) -> BangBangControl:
    return BangBangControl(
        bounds=ChannelBounds(
            lower=tuple(data["bounds"]["lower"]),
            upper=tuple(data["bounds"]["upper"]),
        ),
        initial_values=tuple(data["initial_values"]),
        events=tuple(
            SwitchingEvent(ev["t"], ev["channel"]) for ev in data["events"]
        ),
        final_time=data["t_f"],
    )
