"""Binary dataset files of sensor frames.

Layout, all integers little-endian::

    header   "BITVOSIM"  u16 version=1  u32 frame count  u32 fps     (18 bytes)
    frame    u64 timestamp_ns  u16 n  n x (u8 x, u8 y)  8192-byte edge bitmap

The bitmap is row-major with the most significant bit holding the leftmost
pixel of each byte.
"""

from __future__ import annotations

import queue
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError
from .frame import BITMAP_BYTES, HEIGHT, MAX_EVENTS, WIDTH, FeatureFrame, pack_edges

MAGIC = b"BITVOSIM"
VERSION = 1
HEADER = struct.Struct("<8sHII")
FRAME_HEAD = struct.Struct("<QH")


@dataclass(frozen=True)
class DatasetHeader:
    frame_count: int
    fps: int
    version: int = VERSION


def frame_size(n_corners: int) -> int:
    return FRAME_HEAD.size + 2 * n_corners + BITMAP_BYTES


def encode_header(frame_count: int, fps: int) -> bytes:
    if not 0 < fps < 2**32:
        raise ValueError(f"fps must be a positive 32-bit integer, got {fps}")
    return HEADER.pack(MAGIC, VERSION, frame_count, fps)


def encode_frame(frame: FeatureFrame) -> bytes:
    n = len(frame.corners)
    if n > MAX_EVENTS:
        raise ValueError(f"{n} corner events exceed {MAX_EVENTS}")
    return FRAME_HEAD.pack(frame.timestamp_ns, n) + frame.corners.astype(np.uint8).tobytes() + pack_edges(frame.edges)


class DatasetWriter:
    """Streams frames to disk; the frame count is fixed up front."""

    def __init__(self, path, frame_count: int, fps: int):
        self.path = Path(path)
        self.expected = frame_count
        self.written = 0
        self._last_ts = None
        self._fh = open(self.path, "wb")
        self._fh.write(encode_header(frame_count, fps))

    def write(self, frame: FeatureFrame) -> None:
        if self.written >= self.expected:
            raise ValueError(f"more than the declared {self.expected} frames")
        if self._last_ts is not None and frame.timestamp_ns <= self._last_ts:
            raise ValueError("frame timestamps must be strictly increasing")
        self._fh.write(encode_frame(frame))
        self._last_ts = frame.timestamp_ns
        self.written += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.close()
        if self.written != self.expected:
            raise ValueError(f"declared {self.expected} frames but wrote {self.written}")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.close()
        else:
            self._fh.close()


def write_dataset(path, frames, fps: int) -> None:
    frames = list(frames)
    with DatasetWriter(path, len(frames), fps) as w:
        for f in frames:
            w.write(f)


def _read_exact(fh, n: int, offset: int, what: str, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DatasetFormatError(
            f"{path}: truncated at byte offset {offset + len(data)}: {what} needs {n} bytes from offset {offset}, "
            f"only {len(data)} present"
        )
    return data


def _unpack_bitmap(raw: bytes) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
    return bits.reshape(HEIGHT, WIDTH).view(bool)


class DatasetReader:
    """Sequential frame reader that validates the layout as it goes.

    Iterating yields :class:`FeatureFrame` objects. Any malformed or
    truncated content raises :class:`DatasetFormatError` naming the byte
    offset.
    """

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.is_file():
            raise FileNotFoundError(f"dataset not found: {self.path}")
        with open(self.path, "rb") as fh:
            raw = _read_exact(fh, HEADER.size, 0, "header", self.path)
        magic, version, count, fps = HEADER.unpack(raw)
        if magic != MAGIC:
            raise DatasetFormatError(f"{self.path}: bad magic {magic!r} at byte offset 0")
        if version != VERSION:
            raise DatasetFormatError(f"{self.path}: unsupported version {version} at byte offset 8")
        if fps == 0:
            raise DatasetFormatError(f"{self.path}: fps is zero at byte offset 14")
        self.header = DatasetHeader(count, fps, version)

    def __len__(self) -> int:
        return self.header.frame_count

    def __iter__(self):
        with open(self.path, "rb") as fh:
            fh.seek(HEADER.size)
            offset = HEADER.size
            for i in range(self.header.frame_count):
                ts, n = FRAME_HEAD.unpack(_read_exact(fh, FRAME_HEAD.size, offset, f"frame {i} header", self.path))
                if n > MAX_EVENTS:
                    raise DatasetFormatError(
                        f"{self.path}: frame {i} declares {n} corners (max {MAX_EVENTS}) at byte offset {offset + 8}"
                    )
                offset += FRAME_HEAD.size
                xy = _read_exact(fh, 2 * n, offset, f"frame {i} corners", self.path)
                offset += 2 * n
                bitmap = _read_exact(fh, BITMAP_BYTES, offset, f"frame {i} edge bitmap", self.path)
                offset += BITMAP_BYTES
                corners = np.frombuffer(xy, dtype=np.uint8).reshape(-1, 2)
                yield FeatureFrame(ts, corners, _unpack_bitmap(bitmap))
            extra = fh.read(1)
            if extra:
                raise DatasetFormatError(f"{self.path}: unexpected trailing data at byte offset {offset}")


def read_dataset(path):
    """Load a whole dataset. Returns ``(header, frames)``."""
    reader = DatasetReader(path)
    return reader.header, list(reader)


# ---------------------------------------------------------------------------
# prefetching
# ---------------------------------------------------------------------------

_DONE = object()


class _Failure:
    def __init__(self, exc):
        self.exc = exc


def prefetch(iterable, capacity: int = 4):
    """Produce items from ``iterable`` on a background thread.

    Items pass through a bounded FIFO of ``capacity`` entries and come out
    in their original order, so the consumer sees exactly what a plain loop
    would. Exceptions raised by the producer are re-raised here.
    """
    if capacity < 1:
        raise ValueError("capacity must be at least 1")
    q: queue.Queue = queue.Queue(maxsize=capacity)
    stop = threading.Event()

    def put(item) -> bool:
        while not stop.is_set():
            try:
                q.put(item, timeout=0.05)
                return True
            except queue.Full:
                continue
        return False

    def produce():
        try:
            for item in iterable:
                if not put(item):
                    return
            put(_DONE)
        except BaseException as exc:  # handed to the consumer
            put(_Failure(exc))

    worker = threading.Thread(target=produce, name="bitvo-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = q.get()
            if item is _DONE:
                break
            if isinstance(item, _Failure):
                raise item.exc
            yield item
    finally:
        stop.set()
        worker.join()
