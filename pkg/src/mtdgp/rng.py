"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream_id, counter)``: the 64-bit
key derived from seed and stream id is combined with the counter through the
SplitMix64 finaliser, and normals come from Box-Muller on two such words.
Because draws are addressed rather than consumed, Monte Carlo noise can be
keyed by datapoint identity, which is what makes minibatch estimates agree
exactly with the full-batch estimator.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _mix_int(value):
    return int(_mix(np.array([value & _MASK64], dtype=np.uint64))[0])


class RngStream:
    """A position in a counter-addressed random stream.

    Sequential draws via :func:`draw_standard_normal` advance ``counter``;
    :meth:`normal_at` reads arbitrary counters without moving it.
    """

    __slots__ = ("seed", "stream_id", "counter", "_key")

    def __init__(self, seed, stream_id=0, counter=0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = int(counter)
        self._key = np.uint64(_mix_int(_mix_int(self.seed) ^ _mix_int(self.stream_id ^ 0x5851F42D4C957F2D)))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, counter={self.counter})"

    def __eq__(self, other):
        return (
            isinstance(other, RngStream)
            and (self.seed, self.stream_id, self.counter) == (other.seed, other.stream_id, other.counter)
        )

    def __hash__(self):
        return hash((self.seed, self.stream_id, self.counter))

    def child(self, index):
        """An independent stream derived from this one and ``index``."""
        sub = _mix_int((self.stream_id * 0x2545F4914F6CDD1D + _mix_int(int(index) + 0x632BE59BD9B4E019)) & _MASK64)
        return RngStream(self.seed, sub, 0)

    def split(self, n):
        return [self.child(i) for i in range(n)]

    def _bits(self, counters):
        c = np.asarray(counters, dtype=np.uint64)
        return _mix(self._key + (c + np.uint64(1)) * _GOLDEN)

    def uniform_at(self, counters):
        """Uniforms in (0, 1] addressed by counter."""
        bits = self._bits(counters)
        return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53

    def normal_at(self, counters):
        """Standard normals addressed by counter; shape follows ``counters``."""
        c = np.asarray(counters, dtype=np.uint64)
        u1 = self.uniform_at(c * np.uint64(2))
        u2 = self.uniform_at(c * np.uint64(2) + np.uint64(1))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def draw_standard_normal(stream, rows, cols):
    """A rows x cols block of i.i.d. standard normals; advances the stream."""
    n = int(rows) * int(cols)
    counters = np.arange(stream.counter, stream.counter + n, dtype=np.uint64)
    stream.counter += n
    return stream.normal_at(counters).reshape(int(rows), int(cols))
