"""Submodel streaming: ping-pong GPU slots over an LRU CPU cache.

The cache is a single-owner state machine driven by camera events and
fetch-completion events. At most two submodels are ever GPU-resident (the
one rendering and the one being promoted); CPU-resident bundles are evicted
least-recently-used, except while they occupy a GPU slot.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .scene import SceneLayout, assign_submodel, cell_distance

# camera must be this far inside a new cell before a swap is triggered
HYSTERESIS = 0.02

RETRY_BASE_S = 0.25
RETRY_CAP_S = 4.0


@dataclasses.dataclass(frozen=True)
class Action:
    kind: str          # fetch | promote | evict | retry
    cell: tuple
    tier: str = ""     # for evict: "gpu" (slot release) or "cpu" (memory)
    delay_s: float = 0.0


@dataclasses.dataclass
class Decision:
    render_with: tuple | None
    actions: list


class StreamerState:
    """Two-tier submodel cache: ping-pong GPU slots + LRU CPU tier."""

    def __init__(self, layout: SceneLayout, cpu_capacity: int = 4,
                 hysteresis: float = HYSTERESIS):
        if cpu_capacity < 2:
            raise ValueError("cpu tier needs room for at least two bundles")
        self.layout = layout
        self.cpu_capacity = cpu_capacity
        self.hysteresis = hysteresis
        self.active: tuple | None = None
        self.loading: tuple | None = None
        self.pending: set = set()
        self.retries: dict = {}
        self._cpu: list = []  # LRU order, oldest first

    # -- introspection used by tests and the viewer HUD

    @property
    def gpu_cells(self) -> set:
        return {c for c in (self.active, self.loading) if c is not None}

    @property
    def cpu_cells(self) -> list:
        return list(self._cpu)

    def _touch(self, cell):
        if cell in self._cpu:
            self._cpu.remove(cell)
        self._cpu.append(cell)

    def _evict_overflow(self, actions):
        while len(self._cpu) > self.cpu_capacity:
            victim = next((c for c in self._cpu if c not in self.gpu_cells), None)
            if victim is None:
                break  # every resident bundle is pinned by a GPU slot
            self._cpu.remove(victim)
            actions.append(Action("evict", victim, tier="cpu"))

    def _swap_to(self, cell, actions):
        """Promote a CPU-resident bundle and make it the render source."""
        self.loading = cell
        actions.append(Action("promote", cell))
        old = self.active
        self.active = cell
        self.loading = None
        self._touch(cell)
        if old is not None:
            actions.append(Action("evict", old, tier="gpu"))

    def _target_for(self, pos) -> tuple:
        """Current cell choice with hysteresis against boundary thrash."""
        target = assign_submodel(pos, self.layout)
        if self.active is None or target == self.active:
            return target
        if cell_distance(pos, target, self.layout) > 0.0:
            return target  # outside every active cell: nearest wins outright
        margin = _interior_margin(pos, target, self.layout)
        if margin < self.hysteresis and cell_distance(pos, self.active, self.layout) <= self.hysteresis:
            return self.active
        return target

    def on_camera(self, pos) -> Decision:
        """Camera moved; returns the cell to render with plus actions."""
        actions: list = []
        target = self._target_for(pos)

        if target != self.active:
            if target in self._cpu:
                self._swap_to(target, actions)
            elif target not in self.pending:
                self.pending.add(target)
                actions.append(Action("fetch", target))
        if self.active is not None:
            self._touch(self.active)
        return Decision(render_with=self.active, actions=actions)

    def on_fetch_complete(self, cell, pos=None) -> Decision:
        """A bundle arrived in CPU memory; promote it if still wanted."""
        actions: list = []
        self.pending.discard(cell)
        self.retries.pop(cell, None)
        self._touch(cell)
        self._evict_overflow(actions)

        wanted = cell if pos is None else self._target_for(pos)
        if self.active is None or (cell == wanted and cell != self.active):
            self._swap_to(cell, actions)
        return Decision(render_with=self.active, actions=actions)

    def on_fetch_failed(self, cell) -> Decision:
        """Failed fetch: keep rendering with the active cell, back off."""
        attempts = self.retries.get(cell, 0) + 1
        self.retries[cell] = attempts
        delay = min(RETRY_BASE_S * 2 ** (attempts - 1), RETRY_CAP_S)
        return Decision(render_with=self.active,
                        actions=[Action("retry", cell, delay_s=delay)])


def _interior_margin(pos, cell, layout: SceneLayout) -> float:
    """Distance from a point inside a cell to the nearest cell face."""
    p = np.asarray(pos, dtype=np.float64)
    lo = np.asarray(cell, dtype=np.float64) - layout.grid_size / 2.0
    hi = lo + 1.0
    return float(min((p - lo).min(), (hi - p).min()))


class ReferenceLru:
    """Brute-force LRU simulator used as the oracle in tests."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.entries: list = []
        self.evicted: list = []

    def access(self, key, pinned=()):
        if key in self.entries:
            self.entries.remove(key)
        self.entries.append(key)
        while len(self.entries) > self.capacity:
            victim = next((k for k in self.entries if k not in pinned), None)
            if victim is None:
                break
            self.entries.remove(victim)
            self.evicted.append(victim)
