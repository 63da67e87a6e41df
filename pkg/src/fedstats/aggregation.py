"""Honest-but-curious simulation of the two-server additive-share aggregator.

Each report is split into two uniformly random additive shares mod 2^32, one
per server.  Every server accumulates the shares of a batch window and then
forgets them; the combined sums are released only when both windows hold at
least the minimum cohort, otherwise the publish step outputs nothing at all.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .randomizers import PrivatizedReport

MODULUS = 2**32  # coordinates are uint32; valid while cohorts stay below 2^31

SLOT_A = "A"
SLOT_B = "B"


class AggregatorFault(RuntimeError):
    """Simulation integrity violation (mismatched windows or corrupted sums)."""


@dataclass(frozen=True)
class ShareVector:
    coords: np.ndarray
    recipe_id: str
    server_slot: str

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=np.uint32)
        if coords.ndim != 1:
            raise ValueError("share coordinates must be a 1-d vector")
        object.__setattr__(self, "coords", coords)
        if self.server_slot not in (SLOT_A, SLOT_B):
            raise ValueError(f"server slot must be A or B, got {self.server_slot!r}")


@dataclass(frozen=True)
class PublishedAggregate:
    recipe_id: str
    counts: np.ndarray
    cohort_size: int


@dataclass(frozen=True)
class Gated:
    """Below-threshold window: carries no payload, not even the received count."""

    recipe_id: str
    min_cohort: int


def split(
    report: PrivatizedReport | np.ndarray, recipe_id: str, rng: np.random.Generator
) -> tuple[ShareVector, ShareVector]:
    """Split a report into two additive shares: A uniform, B = report - A (mod 2^32)."""
    bits = report.bits if isinstance(report, PrivatizedReport) else np.asarray(report)
    a = rng.integers(0, MODULUS, size=bits.shape[0], dtype=np.uint32)
    b = bits.astype(np.uint32) - a  # uint32 arithmetic wraps mod 2^32
    return (
        ShareVector(coords=a, recipe_id=recipe_id, server_slot=SLOT_A),
        ShareVector(coords=b, recipe_id=recipe_id, server_slot=SLOT_B),
    )


def split_batch(
    bits: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized share split of an (n, d) report matrix; rows pair up A/B."""
    bits = np.asarray(bits)
    a = rng.integers(0, MODULUS, size=bits.shape, dtype=np.uint32)
    b = bits.astype(np.uint32) - a
    return a, b


def encode_share(share: ShareVector) -> bytes:
    """Wire format: u32le recipe-id length, utf-8 id, 1 slot byte, u32le count, u32le coords."""
    rid = share.recipe_id.encode("utf-8")
    return b"".join(
        (
            struct.pack("<I", len(rid)),
            rid,
            share.server_slot.encode("ascii"),
            struct.pack("<I", share.coords.shape[0]),
            share.coords.astype("<u4").tobytes(),
        )
    )


def decode_share(payload: bytes) -> ShareVector:
    offset = 4
    (rid_len,) = struct.unpack_from("<I", payload, 0)
    rid = payload[offset : offset + rid_len].decode("utf-8")
    offset += rid_len
    slot = payload[offset : offset + 1].decode("ascii")
    offset += 1
    (count,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    coords = np.frombuffer(payload, dtype="<u4", count=count, offset=offset).copy()
    if offset + 4 * count != len(payload):
        raise ValueError("trailing bytes after share payload")
    return ShareVector(coords=coords, recipe_id=rid, server_slot=slot)


@dataclass
class BatchWindow:
    """One server's accumulator for one recipe's batch.

    Shares are folded into the running sum and dropped immediately; nothing
    per-client survives the accumulate call.
    """

    recipe_id: str
    min_cohort: int
    domain_size: int
    server_slot: str
    received: int = 0
    partial_sum: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.partial_sum is None:
            self.partial_sum = np.zeros(self.domain_size, dtype=np.uint32)
        self._lock = threading.Lock()

    def accumulate(self, share: ShareVector) -> None:
        if share.recipe_id != self.recipe_id:
            raise AggregatorFault(
                f"share for recipe {share.recipe_id!r} sent to window {self.recipe_id!r}"
            )
        if share.server_slot != self.server_slot:
            raise AggregatorFault(f"share for slot {share.server_slot} sent to slot {self.server_slot}")
        if share.coords.shape[0] != self.domain_size:
            raise AggregatorFault("share length does not match the recipe's bin count")
        with self._lock:
            self.partial_sum += share.coords
            self.received += 1

    def accumulate_batch(self, coords: np.ndarray) -> None:
        """Bulk accumulate an (n, d) uint32 share matrix from the vectorized fleet."""
        coords = np.asarray(coords, dtype=np.uint32)
        if coords.ndim != 2 or coords.shape[1] != self.domain_size:
            raise AggregatorFault("share matrix shape does not match the recipe's bin count")
        with self._lock:
            total = coords.sum(axis=0, dtype=np.uint64) & np.uint64(MODULUS - 1)
            self.partial_sum += total.astype(np.uint32)
            self.received += coords.shape[0]


def publish(window_a: BatchWindow, window_b: BatchWindow) -> PublishedAggregate | Gated:
    """Combine both servers' sums; release only at or above the minimum cohort."""
    if window_a.recipe_id != window_b.recipe_id:
        raise AggregatorFault("windows refer to different recipes")
    if window_a.min_cohort != window_b.min_cohort:
        raise AggregatorFault("windows disagree on the minimum cohort")
    if {window_a.server_slot, window_b.server_slot} != {SLOT_A, SLOT_B}:
        raise AggregatorFault("publish needs one window per server slot")
    if window_a.received != window_b.received:
        raise AggregatorFault(
            f"received counts diverge: {window_a.received} vs {window_b.received}"
        )
    n = window_a.received
    if n < window_a.min_cohort:
        return Gated(recipe_id=window_a.recipe_id, min_cohort=window_a.min_cohort)
    counts = (window_a.partial_sum + window_b.partial_sum).astype(np.int64)
    if counts.size and counts.max() > n:
        raise AggregatorFault("reconstructed counts exceed the cohort size")
    return PublishedAggregate(recipe_id=window_a.recipe_id, counts=counts, cohort_size=n)
