"""Event-driven simulation of binary branching Brownian motion with a
point catalyst at the origin.

A particle diffuses as standard Brownian motion and branches when the
local time it accumulates at the origin exhausts an Exp(beta) budget drawn
at birth; the two children start at the origin with fresh budgets.  The
exact engine realizes this with no time discretization by combining the
hitting-time, inverse-local-time, bridge-maximum and zero-avoiding
samplers from `randkit`.  A discretized engine (Euler walk, branching at
rate beta/(2*epsilon) inside a band of half-width epsilon) serves as an
independent brute-force cross-check.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .randkit import (
    REJECTION_CAP,
    RejectionCapError,
    RngStream,
    particle_stream,
    sample_hitting_time,
    sample_inverse_local_time,
    sample_joint_position_localtime,
    sample_position_avoiding_zero,
)

__all__ = [
    "SimConfig",
    "Particle",
    "Snapshot",
    "Genealogy",
    "ExtremeStats",
    "SimResult",
    "Survived",
    "Branched",
    "PopulationCapExceeded",
    "advance_particle",
    "simulate",
    "simulate_discretized",
    "rightmost",
    "count_above",
    "additive_martingale",
    "compute_stats",
]

DEFAULT_MAX_POPULATION = 10_000_000


class PopulationCapExceeded(RuntimeError):
    """The exponential-growth guard tripped; carries the time reached."""

    def __init__(self, time_reached: float, max_population: int) -> None:
        super().__init__(
            f"population exceeded {max_population} at t={time_reached:.6g}; "
            "lower the horizons or raise the cap"
        )
        self.time_reached = time_reached
        self.max_population = max_population


@dataclass(frozen=True)
class SimConfig:
    """Run parameters for one replicate of the particle system.

    `beta` is the branching intensity per unit of local time at the origin,
    `x0` the start position, `horizons` the strictly increasing observation
    times.  In discretized mode `dt` is the Euler step and `epsilon` the
    catalyst half-width, subject to dt <= epsilon^2 / 10.
    """

    beta: float
    horizons: tuple[float, ...]
    x0: float = 0.0
    seed: int = 0
    max_population: int = DEFAULT_MAX_POPULATION
    mode: str = "exact"
    dt: float | None = None
    epsilon: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))
        if not (self.beta > 0.0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be a positive finite real, got {self.beta}")
        if not self.horizons:
            raise ValueError("at least one horizon is required")
        if self.horizons[0] <= 0.0:
            raise ValueError(f"horizons must be > 0, got {self.horizons[0]}")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValueError(f"horizons must be strictly increasing, got {self.horizons}")
        if self.max_population < 1:
            raise ValueError("max_population must be a positive integer")
        if self.mode not in ("exact", "discretized"):
            raise ValueError(f"mode must be 'exact' or 'discretized', got {self.mode!r}")
        if self.mode == "discretized":
            if self.dt is None or self.epsilon is None:
                raise ValueError("discretized mode requires both dt and epsilon")
            if self.dt <= 0.0 or self.epsilon <= 0.0:
                raise ValueError("dt and epsilon must be > 0")
            if self.dt > self.epsilon**2 / 10.0:
                raise ValueError(
                    f"discretized mode requires dt <= epsilon^2/10 "
                    f"(dt={self.dt}, epsilon={self.epsilon})"
                )
            if self.beta * self.dt / (2.0 * self.epsilon) >= 1.0:
                raise ValueError("per-step branch probability beta*dt/(2*epsilon) must be < 1")


@dataclass
class Particle:
    id: int
    parent_id: int | None
    birth_time: float
    position: float
    residual_budget: float  # remaining Exp(beta) local-time budget


@dataclass(frozen=True)
class Snapshot:
    """Population state observed at one horizon."""

    time: float
    positions: tuple[float, ...]

    @property
    def population(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class Genealogy:
    """Branch events: two edges per event, positions aligned with edges."""

    edges: tuple[tuple[int, int, float], ...]
    branch_positions: tuple[float, ...]


@dataclass(frozen=True)
class ExtremeStats:
    r_t: float
    count_above: dict[float, int]
    martingale: float


@dataclass(frozen=True)
class SimResult:
    observations: tuple[tuple[Snapshot, ExtremeStats], ...]
    genealogy: Genealogy


@dataclass(frozen=True)
class Survived:
    position: float
    consumed_local_time: float


@dataclass(frozen=True)
class Branched:
    at: float


def rightmost(s: Snapshot) -> float:
    """Maximum particle position in the snapshot."""
    if not s.positions:
        raise ValueError("rightmost undefined for an empty snapshot")
    return max(s.positions)


def count_above(s: Snapshot, x: float) -> int:
    """Number of particles at position >= x (closed threshold)."""
    return sum(1 for p in s.positions if p >= x)


def additive_martingale(s: Snapshot, beta: float) -> float:
    """exp(-beta^2 t / 2) * sum over particles of exp(-beta |position|)."""
    if beta <= 0.0:
        raise ValueError(f"beta must be > 0, got {beta}")
    return math.exp(-0.5 * beta * beta * s.time) * sum(
        math.exp(-beta * abs(p)) for p in s.positions
    )


def compute_stats(s: Snapshot, beta: float, thresholds: tuple[float, ...] = ()) -> ExtremeStats:
    return ExtremeStats(
        r_t=rightmost(s),
        count_above={x: count_above(s, x) for x in thresholds},
        martingale=additive_martingale(s, beta),
    )


def advance_particle(
    p: Particle, t_from: float, t_to: float, stream: RngStream
) -> Survived | Branched:
    """Advance one particle across [t_from, t_to] without discretization.

    Off the origin, draw the hitting time of 0; if it exceeds the window the
    terminal position follows the zero-avoiding conditional law and no local
    time is consumed.  At the origin, draw the time to exhaust the whole
    residual budget; if it fits the window the particle branches there,
    otherwise the terminal (position, local time) pair is drawn jointly,
    conditioned by rejection on not exhausting the budget.
    """
    if not t_from < t_to:
        raise ValueError(f"need t_from < t_to, got [{t_from}, {t_to}]")
    t = t_from
    if p.position != 0.0:
        tau = sample_hitting_time(stream, p.position)
        window = t_to - t
        if tau > window:
            pos = sample_position_avoiding_zero(stream, p.position, window)
            return Survived(position=pos, consumed_local_time=0.0)
        if tau == window:
            return Survived(position=0.0, consumed_local_time=0.0)
        t += tau
    budget = p.residual_budget
    sigma = sample_inverse_local_time(stream, budget)
    if t + sigma <= t_to:
        return Branched(at=t + sigma)
    duration = t_to - t
    for _ in range(REJECTION_CAP):
        draw = sample_joint_position_localtime(stream, duration)
        if draw.local_time < budget:
            return Survived(position=draw.position, consumed_local_time=draw.local_time)
    raise RejectionCapError(
        f"joint sampler failed to satisfy local_time < {budget} in {REJECTION_CAP} proposals"
    )


def simulate(
    config: SimConfig, replicate: int = 0, thresholds: tuple[float, ...] = ()
) -> SimResult:
    """Exact event-driven run of one replicate; deterministic per (seed, replicate).

    Each particle owns a counter-based stream keyed by (seed, replicate,
    birth index), so results do not depend on event scheduling.  Raises
    PopulationCapExceeded when a branch would push the population over
    `config.max_population`.
    """
    if config.mode != "exact":
        raise ValueError("simulate requires mode='exact'; use simulate_discretized otherwise")
    beta = config.beta
    scale = 1.0 / beta

    streams: dict[int, RngStream] = {}
    alive: dict[int, Particle] = {}

    def new_particle(pid: int, parent_id: int | None, birth_time: float, position: float) -> Particle:
        stream = particle_stream(config.seed, replicate, pid)
        streams[pid] = stream
        p = Particle(
            id=pid,
            parent_id=parent_id,
            birth_time=birth_time,
            position=position,
            residual_budget=stream.gen.exponential(scale),
        )
        alive[pid] = p
        return p

    new_particle(0, None, 0.0, config.x0)
    next_id = 1
    edges: list[tuple[int, int, float]] = []
    branch_positions: list[float] = []
    observations: list[tuple[Snapshot, ExtremeStats]] = []

    prev = 0.0
    for horizon in config.horizons:
        # time-ordered queue of pending advances within this window
        queue: list[tuple[float, int]] = [(prev, pid) for pid in sorted(alive)]
        heapq.heapify(queue)
        while queue:
            t0, pid = heapq.heappop(queue)
            if t0 >= horizon:
                continue  # born exactly at the horizon: observed at birth position
            p = alive[pid]
            outcome = advance_particle(p, t0, horizon, streams[pid])
            if isinstance(outcome, Survived):
                p.position = outcome.position
                p.residual_budget -= outcome.consumed_local_time
            else:
                del alive[pid]
                streams.pop(pid).release()
                for _ in range(2):
                    new_particle(next_id, pid, outcome.at, 0.0)
                    edges.append((pid, next_id, outcome.at))
                    branch_positions.append(0.0)
                    heapq.heappush(queue, (outcome.at, next_id))
                    next_id += 1
                if len(alive) > config.max_population:
                    raise PopulationCapExceeded(outcome.at, config.max_population)
        snap = Snapshot(time=horizon, positions=tuple(alive[pid].position for pid in sorted(alive)))
        observations.append((snap, compute_stats(snap, beta, thresholds)))
        prev = horizon

    for stream in streams.values():
        stream.release()
    genealogy = Genealogy(edges=tuple(edges), branch_positions=tuple(branch_positions))
    return SimResult(observations=tuple(observations), genealogy=genealogy)


def simulate_discretized(
    config: SimConfig, replicate: int = 0, thresholds: tuple[float, ...] = ()
) -> SimResult:
    """Euler-walk cross-validation engine with a band catalyst.

    Steps of N(0, dt); while |position| <= epsilon a particle branches with
    probability beta*dt/(2*epsilon) per step, approximating local time by
    scaled occupation time.  The band device approximates only the branching
    clock: children start at the origin (the model's birth rule), from the
    next grid step, while the genealogy records the parent's in-band position
    as the branch-event position.  Horizons are snapped to the step grid.
    """
    if config.mode != "discretized":
        raise ValueError("simulate_discretized requires mode='discretized'")
    beta, dt, eps = config.beta, config.dt, config.epsilon
    assert dt is not None and eps is not None
    sqrt_dt = math.sqrt(dt)
    p_branch = beta * dt / (2.0 * eps)
    horizon_steps = [int(round(h / dt)) for h in config.horizons]
    last_step = horizon_steps[-1]

    gen = particle_stream(config.seed, replicate, 0).gen
    # segment: (birth_step, birth_position, particle_id)
    segments: deque[tuple[int, float, int]] = deque([(0, config.x0, 0)])
    next_id = 1
    population = 1
    edges: list[tuple[int, int, float]] = []
    branch_positions: list[float] = []
    observed: list[list[tuple[int, float]]] = [[] for _ in horizon_steps]

    while segments:
        birth_step, birth_pos, pid = segments.popleft()
        steps = last_step - birth_step
        if steps > 0:
            path = np.empty(steps + 1)
            path[0] = birth_pos
            np.cumsum(gen.standard_normal(steps) * sqrt_dt, out=path[1:])
            path[1:] += birth_pos
            # branch decision for step interval [s, s+1) uses the position at s
            in_band = np.abs(path[:steps]) <= eps
            fires = in_band & (gen.random(steps) < p_branch)
            hit = int(np.argmax(fires)) if fires.any() else -1
        else:
            path = np.array([birth_pos])
            hit = -1

        if hit >= 0:
            end_step = birth_step + hit
            branch_time = (end_step + 1) * dt
            branch_pos = float(path[hit])
            population += 1
            if population > config.max_population:
                raise PopulationCapExceeded(branch_time, config.max_population)
            for _ in range(2):
                segments.append((end_step + 1, 0.0, next_id))
                edges.append((pid, next_id, branch_time))
                branch_positions.append(branch_pos)
                next_id += 1
        else:
            end_step = last_step

        for k, h_step in enumerate(horizon_steps):
            if birth_step <= h_step <= end_step:
                observed[k].append((pid, float(path[h_step - birth_step])))

    observations = []
    for k, h_step in enumerate(horizon_steps):
        snap = Snapshot(
            time=h_step * dt,
            positions=tuple(pos for _, pos in sorted(observed[k])),
        )
        observations.append((snap, compute_stats(snap, beta, thresholds)))
    genealogy = Genealogy(edges=tuple(edges), branch_positions=tuple(branch_positions))
    return SimResult(observations=tuple(observations), genealogy=genealogy)
