"""Exact samplers and special functions for the Brownian building blocks.

Everything here is an *exact* sampler (no discretization): first hitting
times of the origin, the inverse of Brownian local time, the running
maximum of a Brownian bridge, the joint law of (position, local time at 0)
via Levy's identity, and Brownian positions conditioned to avoid the
origin.  All randomness flows through explicitly passed `RngStream`
objects, so every sampler is safe to call concurrently on distinct
streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RngStream",
    "JointPositionLocalTime",
    "RejectionCapError",
    "REJECTION_CAP",
    "std_normal_cdf",
    "std_normal_logcdf",
    "normal_tail_ratio",
    "sample_hitting_time",
    "sample_inverse_local_time",
    "sample_bridge_max",
    "sample_joint_position_localtime",
    "sample_position_avoiding_zero",
]

_SQRT2 = math.sqrt(2.0)
_U64 = (1 << 64) - 1

# Rejection loops abort with RejectionCapError after this many proposals.
REJECTION_CAP = 10**6


class RejectionCapError(RuntimeError):
    """A rejection sampler exhausted its proposal budget."""


_PHILOX_ZEROS = np.zeros(4, dtype=np.uint64)


class RngStream:
    """Counter-based random stream: Philox keyed by (seed, stream_id).

    Identical (seed, stream_id) pairs reproduce bit-identical draw
    sequences; distinct stream ids give statistically independent streams
    without any jump-ahead bookkeeping.

    Constructing a numpy Generator is two orders of magnitude more
    expensive than re-keying one, and the engine creates a stream per
    particle, so retired (bit generator, generator) pairs are kept in a
    process-local pool and re-keyed on reuse; `release()` returns a
    stream's pair to the pool.  The produced sequence depends only on
    (seed, stream_id), never on pooling.  Not safe to share one stream
    across OS threads.
    """

    __slots__ = ("seed", "stream_id", "gen", "_bit_generator")

    _pool: list = []  # per-process; fork gives each worker its own copy

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        if RngStream._pool:
            bit_generator, gen = RngStream._pool.pop()
        else:
            bit_generator = np.random.Philox(key=_PHILOX_ZEROS[:2])
            gen = np.random.Generator(bit_generator)
        bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": _PHILOX_ZEROS,
                "key": np.array([self.seed & _U64, self.stream_id & _U64], dtype=np.uint64),
            },
            "buffer": _PHILOX_ZEROS,
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        self._bit_generator = bit_generator
        self.gen = gen

    def release(self) -> None:
        """Return the underlying generator pair to the pool; the stream dies."""
        if self.gen is not None:
            RngStream._pool.append((self._bit_generator, self.gen))
            self.gen = None
            self._bit_generator = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def particle_stream(seed: int, replicate: int, birth_index: int) -> RngStream:
    """Stream for one particle: stream_id packs (replicate, birth_index).

    Requires 0 <= birth_index < 2**32 (guaranteed by the population cap)
    and 0 <= replicate < 2**31.
    """
    return RngStream(seed, (int(replicate) << 32) | int(birth_index))


@dataclass(frozen=True)
class JointPositionLocalTime:
    """Terminal position and accumulated local time at 0 of one Brownian path."""

    position: float
    local_time: float


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF via erfc; absolute error below 1e-12 everywhere."""
    return 0.5 * math.erfc(-z / _SQRT2)


def std_normal_logcdf(z: float) -> float:
    """log of the standard normal CDF, stable for very negative arguments.

    erfc keeps full relative accuracy down to z ~ -30; below that the
    classical tail expansion phi(z)/|z| * (1 - 1/z^2 + 3/z^4 - 15/z^6)
    takes over (relative error < 1e-10 at the switch point).
    """
    if z > -30.0:
        return math.log(0.5 * math.erfc(-z / _SQRT2))
    z2 = z * z
    series = 1.0 - 1.0 / z2 + 3.0 / z2**2 - 15.0 / z2**3
    return -0.5 * z2 - 0.5 * math.log(2.0 * math.pi) - math.log(-z) + math.log(series)


def normal_tail_ratio(x: float) -> float:
    """Ratio of the exact normal upper tail to its phi(x)/x approximation."""
    if x <= 0:
        raise ValueError(f"normal_tail_ratio requires x > 0, got {x}")
    tail = 0.5 * math.erfc(x / _SQRT2)
    density_over_x = math.exp(-0.5 * x * x) / (math.sqrt(2.0 * math.pi) * x)
    return tail / density_over_x


def _nonzero_normal(stream: RngStream) -> float:
    z = stream.gen.standard_normal()
    while z == 0.0:
        z = stream.gen.standard_normal()
    return z


def sample_hitting_time(stream: RngStream, x: float) -> float:
    """First time a standard Brownian motion from x hits the origin.

    Levy law: tau = (x/Z)^2 with Z standard normal, so
    P(tau <= u) = 2 * Phi(-|x| / sqrt(u)).
    """
    if x == 0.0:
        raise ValueError("hitting time from 0 is identically 0; caller must special-case")
    z = _nonzero_normal(stream)
    return (x / z) ** 2


def sample_inverse_local_time(stream: RngStream, ell: float) -> float:
    """Time for local time at 0 to reach level ell, for a path started at 0.

    The inverse local time is a stable-1/2 subordinator; each increment has
    the same Levy law as a hitting time from level ell.
    """
    if ell <= 0.0:
        raise ValueError(f"inverse local time requires ell > 0, got {ell}")
    z = _nonzero_normal(stream)
    return (ell / z) ** 2


def sample_bridge_max(stream: RngStream, endpoint: float, duration: float) -> float:
    """Running maximum of a Brownian bridge from 0 to endpoint over [0, duration].

    Inverts the classical tail P(M >= m) = exp(-2 m (m - endpoint) / duration)
    with a unit exponential draw.
    """
    if duration <= 0.0:
        raise ValueError(f"bridge max requires duration > 0, got {duration}")
    e = stream.gen.exponential()
    return 0.5 * (endpoint + math.sqrt(endpoint * endpoint + 2.0 * duration * e))


def sample_joint_position_localtime(stream: RngStream, duration: float) -> JointPositionLocalTime:
    """Joint draw of (B_t, L_t) for Brownian motion from 0, t = duration.

    Levy's identity: (L_t, |B_t|) has the law of (M_t, M_t - B_t) with M the
    running maximum.  Draw the terminal value b, the bridge maximum M given
    b, then attach an independent fair sign to M - b.
    """
    if duration <= 0.0:
        raise ValueError(f"joint sampler requires duration > 0, got {duration}")
    b = stream.gen.standard_normal() * math.sqrt(duration)
    m = sample_bridge_max(stream, b, duration)
    sign = 1.0 if stream.gen.random() < 0.5 else -1.0
    return JointPositionLocalTime(position=sign * (m - b), local_time=m)


def sample_position_avoiding_zero(stream: RngStream, x: float, duration: float) -> float:
    """Position at time `duration` of a Brownian motion from x, given no hit of 0.

    Exact rejection from N(x, duration) restricted to sign(x): by the
    reflection principle the conditional density is proportional to
    phi(y - x) - phi(y + x), so a proposal y with x*y > 0 is accepted with
    probability 1 - exp(-2 x y / duration).
    """
    if x == 0.0:
        raise ValueError("zero-avoiding position requires x != 0")
    if duration <= 0.0:
        raise ValueError(f"zero-avoiding position requires duration > 0, got {duration}")
    sd = math.sqrt(duration)
    gen = stream.gen
    for _ in range(REJECTION_CAP):
        y = x + sd * gen.standard_normal()
        if x * y <= 0.0:
            continue
        if gen.random() < -math.expm1(-2.0 * x * y / duration):
            return y
    raise RejectionCapError(
        f"zero-avoiding sampler exhausted {REJECTION_CAP} proposals at x={x}, duration={duration}"
    )
