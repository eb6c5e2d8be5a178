"""Binary range coder with 16-bit probabilities.

32-bit range with byte-wise renormalisation and deferred carry propagation
(the scheme popularised by LZMA). The encoder flushes only the bytes needed
to pin down a value inside the final interval; the decoder pads the stream
with exactly three zero bytes, which doubles as a length check.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "PROB_BITS",
    "CorruptStreamError",
    "quantize_probs",
    "BinaryEncoder",
    "BinaryDecoder",
    "ac_encode",
    "ac_decode",
    "ideal_bits",
]

PROB_BITS = 16
PROB_ONE = 1 << PROB_BITS
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_PAD_BYTES = 3


class CorruptStreamError(ValueError):
    """The byte stream cannot be decoded with the supplied probabilities."""


def quantize_probs(p) -> np.ndarray:
    """P(bit = 1) in 1/65536 units, clamped to [1, 65535]."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite")
    return np.clip(np.rint(p * PROB_ONE), 1, PROB_ONE - 1).astype(np.int64)


def ideal_bits(bits, p16) -> float:
    """Code length in bits implied by the quantised probabilities."""
    bits = np.asarray(bits, dtype=bool)
    p1 = np.asarray(p16, dtype=np.float64) / PROB_ONE
    return float(-(np.log2(np.where(bits, p1, 1.0 - p1))).sum())


class BinaryEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self.cache
            out = self.out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, bit: int, p16: int) -> None:
        bound = (self.range >> PROB_BITS) * p16
        if bit:
            self.range = bound
        else:
            self.low += bound
            self.range -= bound
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_many(self, bits, p16) -> None:
        # inlined hot loop of encode()
        low, rng = self.low, self.range
        for bit, p in zip(bits, p16):
            bound = (rng >> PROB_BITS) * p
            if bit:
                rng = bound
            else:
                low += bound
                rng -= bound
            while rng < _TOP:
                rng <<= 8
                self.low = low
                self._shift_low()
                low = self.low
        self.low, self.range = low, rng

    def finish(self) -> bytes:
        # any value in [low, low + range) works; pick one whose low 24 bits are zero
        self.low = (self.low + _TOP - 1) & ~(_TOP - 1)
        self._shift_low()
        self._shift_low()
        return bytes(self.out[1:])


class BinaryDecoder:
    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0
        self.pad = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        self.pad += 1
        return 0

    def decode(self, p16: int) -> int:
        bound = (self.range >> PROB_BITS) * p16
        if self.code < bound:
            self.range = bound
            bit = 1
        else:
            self.code -= bound
            self.range -= bound
            bit = 0
        while self.range < _TOP:
            self.range <<= 8
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
        return bit

    def decode_many(self, p16) -> list:
        data, pos, pad = self.data, self.pos, self.pad
        n = len(data)
        rng, code = self.range, self.code
        out = []
        append = out.append
        for p in p16:
            bound = (rng >> PROB_BITS) * p
            if code < bound:
                rng = bound
                append(1)
            else:
                code -= bound
                rng -= bound
                append(0)
            while rng < _TOP:
                rng <<= 8
                if pos < n:
                    byte = data[pos]
                    pos += 1
                else:
                    byte = 0
                    pad += 1
                code = ((code << 8) | byte) & _MASK32
        self.pos, self.pad, self.range, self.code = pos, pad, rng, code
        return out

    def check_end(self) -> None:
        """Raise unless the stream was consumed exactly."""
        if self.pad != _PAD_BYTES or self.pos != len(self.data):
            if self.pad > _PAD_BYTES:
                raise CorruptStreamError(f"stream truncated: ran past its end at byte {len(self.data)}")
            raise CorruptStreamError(
                f"stream length mismatch: stopped at byte {self.pos} of {len(self.data)}"
            )


def ac_encode(bits, probs) -> bytes:
    """Encode binary ``bits`` where ``probs`` are P(bit = 1)."""
    bits = np.asarray(bits, dtype=np.uint8).reshape(-1)
    p16 = quantize_probs(probs).reshape(-1)
    if bits.shape != p16.shape:
        raise ValueError("bits and probabilities differ in length")
    enc = BinaryEncoder()
    enc.encode_many(bits.tolist(), p16.tolist())
    return enc.finish()


def ac_decode(data: bytes, probs) -> np.ndarray:
    """Inverse of :func:`ac_encode`; ``probs`` must match the encoder's exactly."""
    p16 = quantize_probs(probs).reshape(-1)
    dec = BinaryDecoder(data)
    bits = dec.decode_many(p16.tolist())
    dec.check_end()
    return np.asarray(bits, dtype=np.uint8)
