"""Sensor frame container and edge-bitmap packing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WIDTH = 256
HEIGHT = 256
BITMAP_BYTES = WIDTH * HEIGHT // 8
MAX_EVENTS = 1000


def pack_edges(edges: np.ndarray) -> bytes:
    """256x256 boolean image to 8192 bytes, row-major, MSB = leftmost pixel."""
    return np.packbits(np.asarray(edges, dtype=bool), axis=None).tobytes()


def unpack_edges(data) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8, count=BITMAP_BYTES)
    return np.unpackbits(buf).reshape(HEIGHT, WIDTH).view(bool)


@dataclass(eq=False)
class FeatureFrame:
    """One sensor output: corner events plus the binary edge image.

    ``corners`` is an (N, 2) uint8 array of (x, y) pixel coordinates and
    ``edges`` a (256, 256) boolean array indexed ``[y, x]``.
    """

    timestamp_ns: int
    corners: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        self.corners = np.asarray(self.corners, dtype=np.uint8).reshape(-1, 2)
        self.edges = np.asarray(self.edges, dtype=bool)
        if self.edges.shape != (HEIGHT, WIDTH):
            raise ValueError(f"edge bitmap must be {HEIGHT}x{WIDTH}, got {self.edges.shape}")
        if len(self.corners) > MAX_EVENTS:
            raise ValueError(f"{len(self.corners)} corner events exceed the limit of {MAX_EVENTS}")

    @property
    def timestamp(self) -> float:
        return self.timestamp_ns * 1e-9

    def edge_density(self) -> float:
        return float(self.edges.mean())

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureFrame):
            return NotImplemented
        return (
            self.timestamp_ns == other.timestamp_ns
            and np.array_equal(self.corners, other.corners)
            and np.array_equal(self.edges, other.edges)
        )
