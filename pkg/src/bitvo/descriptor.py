"""44-bit rotation-invariant descriptor computed from a binary edge image.

A 7x7 window of edge bits around a corner is packed row-major into one
integer (bit 0 = top-left, bit 24 = centre, bit 48 = bottom-right). Three
rings are sampled from the window:

* ``r1`` - the 8 pixels at Chebyshev radius 1,
* ``r2`` - the 16 pixels at Chebyshev radius 2,
* ``r3`` - the 20 pixels of the 7x7 border without its 4 corners.

Each ring is ordered by increasing angle ``atan2(dy, dx)`` (x right, y down,
the same angular convention as the orientation) starting at the +x sample,
and sample ``j`` is stored at bit ``j`` of the ring value. The rings are
circularly shifted by ``floor(theta * len / 360)`` so that reading starts at
the patch orientation, then packed as ``r1 << 36 | r2 << 20 | r3``.

All three ring sizes are divisible by 4, so rotating a patch by a multiple
of 90 degrees leaves the descriptor unchanged exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import BorderCorner

PATCH_SIZE = 7
HALF = PATCH_SIZE // 2
CENTER_BIT = 24
RING_LENGTHS = (8, 16, 20)
DESCRIPTOR_BITS = 44
DESCRIPTOR_MASK = (1 << DESCRIPTOR_BITS) - 1

# (dy, dx) offset of each patch bit
_OFF_Y, _OFF_X = np.divmod(np.arange(49), PATCH_SIZE)
_OFF_Y = _OFF_Y - HALF
_OFF_X = _OFF_X - HALF
_POW2_49 = np.left_shift(np.uint64(1), np.arange(49, dtype=np.uint64))


def _ring_indices(radius: int, drop_corners: bool) -> np.ndarray:
    cheb = np.maximum(np.abs(_OFF_X), np.abs(_OFF_Y))
    sel = cheb == radius
    if drop_corners:
        sel &= ~((np.abs(_OFF_X) == radius) & (np.abs(_OFF_Y) == radius))
    idx = np.flatnonzero(sel)
    angle = np.mod(np.degrees(np.arctan2(_OFF_Y[idx], _OFF_X[idx])), 360.0)
    return idx[np.argsort(angle, kind="stable")]


RING_INDICES = (
    _ring_indices(1, False),
    _ring_indices(2, False),
    _ring_indices(3, True),
)
RING_SHIFTS = (36, 20, 0)
assert tuple(len(r) for r in RING_INDICES) == RING_LENGTHS

_MOMENT_WEIGHTS = np.column_stack([_OFF_X, _OFF_Y]).astype(np.float64)
# (49, 3) matrix mapping patch bits to the three unrotated ring values
_RING_WEIGHTS = np.zeros((49, 3))
for _col, _idx in enumerate(RING_INDICES):
    _RING_WEIGHTS[_idx, _col] = 2.0 ** np.arange(len(_idx))


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


def corners_in_window(corners: np.ndarray, width: int = 256, height: int = 256) -> np.ndarray:
    """Mask of corners whose full 7x7 window lies inside the image."""
    c = np.asarray(corners).reshape(-1, 2).astype(np.int64)
    return (c[:, 0] >= HALF) & (c[:, 0] < width - HALF) & (c[:, 1] >= HALF) & (c[:, 1] < height - HALF)


def extract_patch_bits(edges: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """(N, 49) boolean windows for in-window corners given as (x, y) rows."""
    c = np.asarray(corners).reshape(-1, 2).astype(np.int64)
    h, w = edges.shape
    flat = np.ascontiguousarray(edges).reshape(-1)
    return flat[(c[:, 1] * w + c[:, 0])[:, None] + (_OFF_Y * w + _OFF_X)]


def extract_patch(edges: np.ndarray, corner) -> int:
    """Pack the 7x7 window around ``corner`` = (x, y) into a 49-bit integer."""
    if not corners_in_window(np.asarray(corner), edges.shape[1], edges.shape[0])[0]:
        raise BorderCorner(f"corner {tuple(corner)} too close to the image border")
    return int(pack_patch_bits(extract_patch_bits(edges, np.asarray(corner)))[0])


def pack_patch_bits(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=bool).reshape(-1, 49)
    return np.bitwise_or.reduce(np.where(bits, _POW2_49, np.uint64(0)), axis=1)


def unpack_patch(patch: int) -> np.ndarray:
    """49-bit integer to a boolean (49,) vector."""
    return ((int(patch) >> np.arange(49)) & 1).astype(bool)


def rotate_patch90(patch: int, k: int = 1) -> int:
    """Rotate a packed patch by ``k`` quarter turns (+x axis towards +y axis)."""
    grid = unpack_patch(patch).reshape(PATCH_SIZE, PATCH_SIZE)
    for _ in range(k % 4):
        # new[(x, y)] = old[(y, -x)]
        grid = grid[::-1, :].T
    return int(pack_patch_bits(grid.reshape(1, 49))[0])


# ---------------------------------------------------------------------------
# orientation
# ---------------------------------------------------------------------------


def _moments(bits: np.ndarray):
    m = (np.asarray(bits, dtype=np.float64) @ _MOMENT_WEIGHTS).astype(np.int64)
    return m[:, 0], m[:, 1]


def _quantized_orientation(m10: np.ndarray, m01: np.ndarray):
    """Return (theta_deg, quadrant, reduced_theta_deg) for integer moments.

    The moments are first rotated by whole quarter turns into the half-open
    first quadrant, so patches that differ by a 90 degree rotation reduce to
    bit-identical arguments of ``arctan2``. Zero moments map to theta = 0.
    """
    a = np.asarray(m10, dtype=np.int64)
    b = np.asarray(m01, dtype=np.int64)
    q1 = (a <= 0) & (b > 0)
    q2 = (a < 0) & (b <= 0)
    q3 = (a >= 0) & (b < 0)
    quadrant = q1 + 2 * q2 + 3 * q3
    ra = np.where(q1, b, np.where(q2, -a, np.where(q3, -b, a)))
    rb = np.where(q1, -a, np.where(q2, -b, np.where(q3, a, b)))
    # arctan2(0, 0) = 0, so zero moments need no special case
    reduced = np.degrees(np.arctan2(rb.astype(float), ra.astype(float)))
    return quadrant * 90.0 + reduced, quadrant, reduced


def compute_orientation(patch: int) -> float:
    """Orientation in degrees [0, 360) of the binary centroid of a packed patch."""
    m10, m01 = _moments(unpack_patch(patch)[None])
    return float(_quantized_orientation(m10, m01)[0][0])


def orientations(bits: np.ndarray) -> np.ndarray:
    m10, m01 = _moments(bits)
    return _quantized_orientation(m10, m01)[0]


# ---------------------------------------------------------------------------
# rings
# ---------------------------------------------------------------------------


def rotate_by(theta: float, length: int) -> int:
    return int(np.floor(theta * length / 360.0)) % length


def rotate_ring(ring: int, length: int, theta: float) -> int:
    """Circularly shift ``ring`` so sample ``floor(theta*length/360)`` lands at bit 0."""
    if length not in RING_LENGTHS:
        raise ValueError(f"ring length must be one of {RING_LENGTHS}")
    k = rotate_by(theta, length)
    mask = (1 << length) - 1
    ring &= mask
    return ((ring >> k) | (ring << (length - k))) & mask


def _ring_value(bits: np.ndarray) -> np.ndarray:
    return (bits.astype(np.float64) @ 2.0 ** np.arange(bits.shape[1])).astype(np.int64)


def patch_to_rings(patch: int):
    bits = unpack_patch(patch)[None]
    return tuple(int(_ring_value(bits[:, idx])[0]) for idx in RING_INDICES)


def describe_bits(bits: np.ndarray) -> np.ndarray:
    """Descriptors for an (N, 49) stack of patch bits."""
    # float matmuls go through BLAS and are exact for these magnitudes
    bits = np.asarray(bits).reshape(-1, 49).astype(np.float64)
    moments = (bits @ _MOMENT_WEIGHTS).astype(np.int64)
    _, quadrant, reduced = _quantized_orientation(moments[:, 0], moments[:, 1])
    rings = (bits @ _RING_WEIGHTS).astype(np.int64)  # (N, 3): unrotated r1, r2, r3
    out = np.zeros(len(bits), dtype=np.int64)
    for col, (L, shift) in enumerate(zip(RING_LENGTHS, RING_SHIFTS)):
        k = (quadrant * (L // 4) + np.floor(reduced * L / 360.0).astype(np.int64)) % L
        v = rings[:, col]
        rotated = ((v >> k) | (v << (L - k))) & ((1 << L) - 1)
        out |= rotated << shift
    return out.astype(np.uint64)


def describe_patch(patch: int) -> int:
    return int(describe_bits(unpack_patch(patch))[0])


def build_descriptor(edges: np.ndarray, corner) -> int:
    return describe_patch(extract_patch(edges, corner))


def describe(edges: np.ndarray, corners: np.ndarray):
    """Descriptors for every corner of a frame.

    Returns ``(descriptors, keep)``: ``keep`` masks corners with a full
    window; ``descriptors`` holds only those rows.
    """
    corners = np.asarray(corners).reshape(-1, 2)
    keep = corners_in_window(corners, edges.shape[1], edges.shape[0])
    if not keep.any():
        return np.zeros(0, dtype=np.uint64), keep
    return describe_bits(extract_patch_bits(edges, corners[keep])), keep


# ---------------------------------------------------------------------------
# distance
# ---------------------------------------------------------------------------


def hamming(a: int, b: int) -> int:
    return int(a ^ b).bit_count()


def hamming_many(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise (broadcasting) Hamming distance of uint64 descriptors."""
    return np.bitwise_count(np.bitwise_xor(np.asarray(a, dtype=np.uint64), np.asarray(b, dtype=np.uint64)))
