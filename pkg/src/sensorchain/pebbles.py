"""Logarithmic hash-chain traversal with per-level pebbles.

The signer must hand out chain elements in order of increasing distance
from the public commitment: element ``d`` (for ``d = 1..n``) equals
``h^(n-d)(seed)``, so consecutive outputs require ever *fewer* hash
applications from the seed but ever more from scratch.  Storing one
pebble per power-of-two level keeps both storage and per-output work
logarithmic.

Level ``i`` owns the positions that are odd multiples of ``2^i``; every
position in ``1..n-1`` is owned by exactly one level, and position ``n``
(the seed itself) is held by a dedicated stationary pebble.  After a
pebble is consumed at ``m * 2^i`` it is relaunched toward
``(m+2) * 2^i``, copying the value of the nearest stationary pebble
above and re-hashing downward at two applications per subsequent
output.  Each pebble occupies exactly one value cell whether parked or
in transit, so the state never exceeds ``ceil(log2 n) + 1`` cells, and
one output triggers at most two hashes per traveling pebble, which
stays within ``ceil(log2 n)`` in total.  Both bounds are asserted
exhaustively in the test suite against a naive full-chain oracle.

The walk schedule is a pure function of ``(n, ctr)``, which is what
makes the serialized state self-describing: a state file only needs the
``(position, value)`` pairs (see :mod:`sensorchain.chainwire`).
"""

from __future__ import annotations

from dataclasses import dataclass

from .hashing import Hasher

TRAVEL_HASHES_PER_OUTPUT = 2


def ceil_log2(n: int) -> int:
    return (n - 1).bit_length() if n > 1 else 0


def max_pebbles(n: int) -> int:
    """Upper bound on simultaneously stored pebbles for chain length n."""
    return ceil_log2(n) + 1


@dataclass
class Pebble:
    level: int        # -1 marks the stationary seed pebble
    pos: int          # position currently held (h^pos(value) = pk)
    dest: int         # position this pebble is moving toward
    remaining: int    # hash applications left until arrival
    value: bytes

    @property
    def arrived(self) -> bool:
        return self.remaining == 0


def expected_layout(n: int, ctr: int) -> list[tuple[int, int, int, int]]:
    """Pebble metadata ``(level, pos, dest, remaining)`` after ``ctr``
    outputs, ordered by level with the seed pebble last.

    This is the schedule replay used to re-attach roles to the bare
    ``(position, digest)`` pairs of a serialized state.
    """
    sigma = ceil_log2(n)
    c = ctr + 1  # next position to emit
    out = []
    for i in range(sigma):
        if (1 << i) >= n:
            continue
        m = c >> i
        if (m << i) < c:
            m += 1
        if m % 2 == 0:
            m += 1
        dest = m << i
        if dest >= n:
            continue  # retired: position n is the seed pebble's
        if m == 1:
            out.append((i, dest, dest, 0))
            continue
        src = min((m + 1) << i, n)
        total = src - dest
        steps_run = max(0, ctr - ((m - 2) << i))
        done = min(total, TRAVEL_HASHES_PER_OUTPUT * steps_run)
        out.append((i, src - done, dest, total - done))
    if ctr < n:
        out.append((-1, n, n, 0))
    return out


class Traversal:
    """Owns the live pebbles of one signer chain."""

    def __init__(self, n: int, ctr: int, pebbles: list[Pebble]):
        self.n = n
        self.ctr = ctr
        self.pebbles = pebbles

    @classmethod
    def from_seed(cls, seed: bytes, n: int, hasher: Hasher
                  ) -> tuple[bytes, "Traversal"]:
        """Walk the full chain once, capturing the initial pebbles.

        Returns ``(pk, traversal)`` where ``pk = h^n(seed)``.  The seed
        is not retained anywhere except as the pebble at position ``n``,
        which is itself consumed by the final signature.
        """
        sigma = ceil_log2(n)
        wanted = {n}
        for i in range(sigma):
            if (1 << i) < n:
                wanted.add(1 << i)
        captured: dict[int, bytes] = {}
        value = seed
        d = n  # h^(n-d) applications done so far
        if d in wanted:
            captured[d] = value
        while d > 0:
            value = hasher.digest(value)
            d -= 1
            if d in wanted:
                captured[d] = value
        pk = value
        pebbles = [
            Pebble(level, pos, dest, remaining, captured[pos])
            for level, pos, dest, remaining in expected_layout(n, 0)
        ]
        return pk, cls(n, 0, pebbles)

    @classmethod
    def restore(cls, n: int, ctr: int, values: list[bytes]) -> "Traversal":
        """Rebuild a traversal from serialized pebble values.

        ``values`` must follow the canonical order of
        :func:`expected_layout` for ``(n, ctr)``.
        """
        layout = expected_layout(n, ctr)
        if len(layout) != len(values):
            raise ValueError(
                f"expected {len(layout)} pebbles for n={n} ctr={ctr}, "
                f"got {len(values)}"
            )
        pebbles = [
            Pebble(level, pos, dest, remaining, value)
            for (level, pos, dest, remaining), value in zip(layout, values)
        ]
        return cls(n, ctr, pebbles)

    def layout(self) -> list[tuple[int, int, int, int]]:
        return [(p.level, p.pos, p.dest, p.remaining) for p in self.pebbles]

    def next_key(self, hasher: Hasher) -> bytes:
        """Emit the chain element at distance ``ctr + 1`` from pk.

        Advances every traveling pebble by at most two hash
        applications, hands out the value parked at the next position,
        and relaunches that pebble toward its next destination.
        """
        if self.ctr >= self.n:
            raise RuntimeError("chain exhausted")
        c = self.ctr + 1
        for p in self.pebbles:
            if p.remaining > 0:
                steps = min(TRAVEL_HASHES_PER_OUTPUT, p.remaining)
                p.value = hasher.iterate(p.value, steps)
                p.pos -= steps
                p.remaining -= steps
        owner = next(
            (p for p in self.pebbles if p.arrived and p.pos == c), None
        )
        if owner is None:  # cannot happen if state is well-formed
            raise RuntimeError(f"no pebble parked at position {c}")
        key = owner.value
        if owner.level < 0:
            self.pebbles.remove(owner)  # the seed, final output
        else:
            i = owner.level
            m = c >> i
            dest = (m + 2) << i
            if dest >= self.n:
                self.pebbles.remove(owner)
            else:
                src = min((m + 3) << i, self.n)
                source = next(
                    p for p in self.pebbles if p.arrived and p.pos == src
                )
                owner.value = source.value
                owner.pos = src
                owner.dest = dest
                owner.remaining = src - dest
        self.ctr = c
        return key
