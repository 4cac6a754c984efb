"""Reservoir-sampled experience memory for the replay term of the update.

Classic algorithm-R reservoir: after n insertions every past sample survives
with probability capacity/n, so the buffer is a uniform subsample of the whole
stream. Batches are drawn uniformly without replacement; the buffer stores raw
normalized windows, never gradients, because replay gradients are recomputed
at the current weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StateError
from .seeding import as_generator
from .streams import WindowedSample


@dataclass
class ReservoirBuffer:
    capacity: int
    seed: int | np.random.Generator = 0
    items: list[WindowedSample] = field(default_factory=list)
    seen_count: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise StateError("capacity must be >= 0")
        self._rng = as_generator(self.seed)

    def __len__(self) -> int:
        return len(self.items)


def reservoir_update(buf: ReservoirBuffer, sample: WindowedSample) -> ReservoirBuffer:
    """Insert one sample, keeping a uniform subsample of everything seen."""
    buf.seen_count += 1
    if buf.capacity == 0:
        return buf
    if len(buf.items) < buf.capacity:
        buf.items.append(sample)
    else:
        j = int(buf._rng.integers(0, buf.seen_count))
        if j < buf.capacity:
            buf.items[j] = sample
    return buf


def sample_batch(buf: ReservoirBuffer, batch: int, seed) -> list[WindowedSample]:
    """Uniform draw of min(batch, len) samples without replacement; [] if empty."""
    if not buf.items or batch <= 0:
        return []
    rng = as_generator(seed)
    take = min(batch, len(buf.items))
    idx = rng.choice(len(buf.items), size=take, replace=False)
    return [buf.items[i] for i in idx]


# -- snapshots -------------------------------------------------------------------

SNAPSHOT_MAGIC = "natsr-buffer v1"


def save_buffer(buf: ReservoirBuffer, path) -> None:
    lines = [SNAPSHOT_MAGIC, f"capacity {buf.capacity}", f"seen {buf.seen_count}", f"items {len(buf.items)}"]
    for s in buf.items:
        xs = " ".join(repr(float(v)) for v in s.x)
        ys = " ".join(repr(float(v)) for v in s.y)
        lines.append(f"{s.t}|{xs}|{ys}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_buffer(path, seed=0) -> ReservoirBuffer:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != SNAPSHOT_MAGIC:
        raise StateError(f"{path}: not a recognizable buffer snapshot")
    capacity = int(lines[1].split()[1])
    seen = int(lines[2].split()[1])
    count = int(lines[3].split()[1])
    buf = ReservoirBuffer(capacity=capacity, seed=seed)
    for line in lines[4 : 4 + count]:
        t_part, x_part, y_part = line.split("|")
        buf.items.append(
            WindowedSample(
                t=int(t_part),
                x=np.asarray([float(v) for v in x_part.split()]),
                y=np.asarray([float(v) for v in y_part.split()]),
            )
        )
    buf.seen_count = seen
    return buf
