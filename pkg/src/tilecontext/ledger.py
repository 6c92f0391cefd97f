"""Live-activation accounting for streamed forwards.

Memory is measured in live scalars (buffer elements), not process RSS: every
tensor allocated while a ledger is active registers itself, and a weakref
finalizer records the release when the buffer dies. Counting scalars keeps
the measurement portable and deterministic, which a GB axis is not.

Allocations are tagged with the current *phase* ("region", "context",
"caches", "outputs", ...). The "outputs" phase marks the per-region feature
accumulator, which necessarily grows with image area and is therefore
reported separately from the working-set peak.
"""

from __future__ import annotations

import threading
import weakref

_lock = threading.Lock()
_active: "MemoryLedger | None" = None
_phase: str = "other"


class MemoryLedger:
    """Running and peak counts of live scalars, with a per-phase breakdown."""

    def __init__(self):
        self.allocated = 0
        self.released = 0
        self.live = 0
        self.peak = 0
        self.live_by_phase: dict[str, int] = {}
        self.peak_by_phase: dict[str, int] = {}
        self.peak_excl_outputs = 0

    def _register(self, tensor):
        size = int(tensor.data.size)
        phase = _phase
        with _lock:
            self.allocated += size
            self.live += size
            self.live_by_phase[phase] = self.live_by_phase.get(phase, 0) + size
            if self.live > self.peak:
                self.peak = self.live
            lp = self.live_by_phase[phase]
            if lp > self.peak_by_phase.get(phase, 0):
                self.peak_by_phase[phase] = lp
            excl = self.live - self.live_by_phase.get("outputs", 0)
            if excl > self.peak_excl_outputs:
                self.peak_excl_outputs = excl
        weakref.finalize(tensor, self._release, size, phase)

    def _release(self, size, phase):
        with _lock:
            self.released += size
            self.live -= size
            self.live_by_phase[phase] = self.live_by_phase.get(phase, 0) - size

    def snapshot(self) -> dict:
        with _lock:
            return {
                "allocated": self.allocated,
                "released": self.released,
                "live": self.live,
                "peak": self.peak,
                "peak_excl_outputs": self.peak_excl_outputs,
                "peak_by_phase": dict(self.peak_by_phase),
            }


def active() -> MemoryLedger | None:
    return _active


class activate:
    """Context manager installing a ledger as the allocation hook target."""

    def __init__(self, led: MemoryLedger):
        self.led = led
        self._prev = None

    def __enter__(self):
        global _active
        self._prev = _active
        _active = self.led
        return self.led

    def __exit__(self, *exc):
        global _active
        _active = self._prev
        return False


class phase:
    """Context manager tagging allocations with a phase name."""

    def __init__(self, name: str):
        self.name = name
        self._prev = None

    def __enter__(self):
        global _phase
        self._prev = _phase
        _phase = self.name
        return self

    def __exit__(self, *exc):
        global _phase
        _phase = self._prev
        return False
