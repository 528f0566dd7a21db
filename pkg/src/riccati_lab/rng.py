"""Counter-based splittable random numbers.

The bit source is Philox4x64-10.  A stream is addressed by
``(seed, stream_id, component)``: its ``b``-th block of four 64-bit words is
``philox(counter=(b, component, 0, 0), key=(seed, stream_id))``.  Streams are
therefore independent of each other and of the order in which they are
consumed, which makes ensembles bit-identical under any thread count.

Component 0 drives the Riccati noise ``W`` and component 1 drives the
independent Ornstein-Uhlenbeck noise ``W'``.

Standard normals are produced from the 64-bit words by a 256-layer ziggurat.
"""

from __future__ import annotations

import hashlib

import numba as nb
import numpy as np
from llvmlite import ir
from numba import types
from numba.extending import intrinsic

MASK64 = (1 << 64) - 1

COMPONENT_W = 0
COMPONENT_W_PRIME = 1

STATE_SIZE = 9  # 4 buffered words, position, next block, seed, stream id, component

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)


@intrinsic
def _mulhilo(typingctx, a, b):
    sig = types.UniTuple(types.uint64, 2)(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        wide = ir.IntType(128)
        prod = builder.mul(builder.zext(args[0], wide), builder.zext(args[1], wide))
        lo = builder.trunc(prod, ir.IntType(64))
        hi = builder.trunc(builder.lshr(prod, ir.Constant(wide, 64)), ir.IntType(64))
        return context.make_tuple(builder, signature.return_type, [hi, lo])

    return sig, codegen


@nb.njit(inline="always")
def philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox4x64 bijection of a 256-bit counter under a 128-bit key."""
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


def _ziggurat_tables(layers: int = 256):
    # Marsaglia-Tsang construction for the half-normal, 52-bit magnitudes.
    r = 3.6541528853610088
    area = 0.00492867323399
    m = 2.0**52
    ki = np.zeros(layers, dtype=np.uint64)
    wi = np.zeros(layers)
    fi = np.zeros(layers)
    dn = tn = r
    q = area / np.exp(-0.5 * dn * dn)
    ki[0] = np.uint64((dn / q) * m)
    ki[1] = 0
    wi[0] = q / m
    wi[layers - 1] = dn / m
    fi[0] = 1.0
    fi[layers - 1] = np.exp(-0.5 * dn * dn)
    for i in range(layers - 2, 0, -1):
        dn = np.sqrt(-2.0 * np.log(area / dn + np.exp(-0.5 * dn * dn)))
        ki[i + 1] = np.uint64((dn / tn) * m)
        tn = dn
        fi[i] = np.exp(-0.5 * dn * dn)
        wi[i] = dn / m
    return ki, wi, fi, r


_KI, _WI, _FI, _ZIG_R = _ziggurat_tables()
_KI = _KI.astype(np.int64)
_ZIG_INV_R = 1.0 / _ZIG_R
_INV53 = 1.0 / 9007199254740992.0
_MASK52 = np.uint64(0x000FFFFFFFFFFFFF)
_U0 = np.uint64(0)
_U1 = np.uint64(1)
_U4 = np.uint64(4)
_U8 = np.uint64(8)
_U9 = np.uint64(9)
_U11 = np.uint64(11)
_UFF = np.uint64(0xFF)


@nb.njit(inline="always")
def stream_init(state, seed, stream, component):
    """Point a 9-word state vector at the start of stream ``(seed, stream, component)``."""
    state[4] = _U4
    state[5] = _U0
    state[6] = np.uint64(seed)
    state[7] = np.uint64(stream)
    state[8] = np.uint64(component)


@nb.njit(inline="always")
def next_u64(state):
    if state[4] >= _U4:
        r0, r1, r2, r3 = philox4x64(state[5], state[8], _U0, _U0, state[6], state[7])
        state[0] = r0
        state[1] = r1
        state[2] = r2
        state[3] = r3
        state[5] += _U1
        state[4] = _U0
    pos = state[4]
    state[4] = pos + _U1
    return state[pos]


@nb.njit(inline="always")
def next_uniform(state):
    """Uniform on the open interval (0, 1) with 53-bit resolution."""
    return (np.float64(next_u64(state) >> _U11) + 0.5) * _INV53


@nb.njit(inline="always")
def _ziggurat_candidate(r):
    idx = np.intp(r & _UFF)
    rabs = np.int64((r >> _U9) & _MASK52)
    sign = 1.0 - 2.0 * np.float64((r >> _U8) & _U1)
    return idx, rabs, sign * np.float64(rabs) * _WI[idx]


@nb.njit(inline="always")
def _word_to_uniform(u):
    return (np.float64(u >> _U11) + 0.5) * _INV53


@nb.njit(inline="always")
def _rejected_branch(seed, stream, component, block, pos, idx, x):
    # Rare branch (about 1.5% of draws).  Its uniforms come from a side counter
    # space (third counter word = 1 + position of the triggering word), so the
    # main stream layout stays fixed and the hot path keeps one Philox copy.
    # Returns nan when the candidate is rejected and a fresh draw is needed.
    side = np.uint64(1) + pos
    if idx == 0:
        attempt = np.uint64(0)
        while True:
            r0, r1, r2, r3 = philox4x64(block, component, side, attempt, seed, stream)
            attempt += _U1
            for u_a, u_b in ((r0, r1), (r2, r3)):
                xx = -_ZIG_INV_R * np.log(_word_to_uniform(u_a))
                yy = -np.log(_word_to_uniform(u_b))
                if yy + yy > xx * xx:
                    return -(_ZIG_R + xx) if x < 0.0 else _ZIG_R + xx
    r0, _, _, _ = philox4x64(block, component, side, _U0, seed, stream)
    if (_FI[idx - 1] - _FI[idx]) * _word_to_uniform(r0) + _FI[idx] < np.exp(-0.5 * x * x):
        return x
    return np.nan


@nb.njit(inline="always")
def next_normal(state):
    """One standard normal draw from the stream."""
    while True:
        idx, rabs, x = _ziggurat_candidate(next_u64(state))
        if rabs < _KI[idx]:
            return x
        x = _rejected_branch(state[6], state[7], state[8], state[5] - _U1, state[4] - _U1, idx, x)
        if x == x:
            return x


@nb.njit
def _raw_block(c0, c1, c2, c3, k0, k1, out):
    r0, r1, r2, r3 = philox4x64(c0, c1, c2, c3, k0, k1)
    out[0] = r0
    out[1] = r1
    out[2] = r2
    out[3] = r3


@nb.njit
def _fill(seed, stream, component, kind, out):
    state = np.empty(STATE_SIZE, dtype=np.uint64)
    stream_init(state, seed, stream, component)
    for i in range(out.shape[0]):
        if kind == 0:
            out[i] = next_normal(state)
        else:
            out[i] = next_uniform(state)


def raw_block(counter: tuple[int, int, int, int], key: tuple[int, int]) -> np.ndarray:
    """Raw Philox output words for one counter value."""
    out = np.empty(4, dtype=np.uint64)
    c = [np.uint64(v & MASK64) for v in counter]
    k = [np.uint64(v & MASK64) for v in key]
    _raw_block(c[0], c[1], c[2], c[3], k[0], k[1], out)
    return out


def normals(seed: int, stream: int, n: int, component: int = COMPONENT_W) -> np.ndarray:
    """First ``n`` standard normals of a stream, exactly as the simulation kernels draw them."""
    out = np.empty(n)
    _fill(np.uint64(seed & MASK64), np.uint64(stream & MASK64), np.uint64(component), 0, out)
    return out


def uniforms(seed: int, stream: int, n: int, component: int = COMPONENT_W) -> np.ndarray:
    out = np.empty(n)
    _fill(np.uint64(seed & MASK64), np.uint64(stream & MASK64), np.uint64(component), 1, out)
    return out


def derive_seed(master: int, label: str) -> int:
    """Hash a master seed and a label into an independent 64-bit seed."""
    digest = hashlib.sha256(f"{int(master)}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
