"""Binary token-stream format.

Layout (little-endian), 87 header bytes followed by the packed payload:

    offset  size  field
    0       4     magic 0x67 0x44 0x44 0x43 ("gDDC")
    4       1     version (0x01)
    5       1     family (0=ddpm, 1=ve, 2=consistency, 3=flow)
    6       8     p                    float64
    14      4     n_tokens (N)         uint32
    18      4     codebook_size (K)    uint32
    22      8     seed                 uint64
    30      4     intervals (P)        uint32
    34      8     dt_min               float64
    42      8     dt_max               float64
    50      8     rho                  float64
    58      8     sigma_max            float64
    66      8     t_start              float64
    74      8     t_end                float64 (0.0 when p = 0)
    82      1     init strategy (0=random, 1=anchor, 2=nearest)
    83      4     init token           uint32 (0xFFFFFFFF when absent)
    87      ...   N indices, ceil(log2 K) bits each, packed big-endian
                  bit-first and zero-padded to a byte boundary

Decoding is strict: bad magic, short payload, trailing bytes, nonzero
padding bits, or out-of-range indices raise CorruptStreamError with the
offending byte offset, so every decodable blob re-encodes byte-identically.
"""

from __future__ import annotations

import struct

from .errors import CorruptStreamError
from .schedules import ModelFamily
from .tokenizer import NO_INIT_TOKEN, InitStrategy, TokenStream

MAGIC = b"gDDC"
VERSION = 1
_HEADER = struct.Struct("<4sBBdIIQIddddddBI")
HEADER_SIZE = _HEADER.size


def _index_bits(codebook_size: int) -> int:
    return (codebook_size - 1).bit_length()


def _pack_indices(indices, bits: int) -> bytes:
    out = bytearray()
    acc = 0
    nbits = 0
    for idx in indices:
        acc = (acc << bits) | idx
        nbits += bits
        while nbits >= 8:
            nbits -= 8
            out.append((acc >> nbits) & 0xFF)
    if nbits:
        out.append((acc << (8 - nbits)) & 0xFF)
    return bytes(out)


def encode_stream(stream: TokenStream) -> bytes:
    """Serialize a token stream to its canonical byte form."""
    bits = _index_bits(stream.codebook_size)
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        stream.family.wire_code,
        stream.p,
        stream.n_tokens,
        stream.codebook_size,
        stream.seed & 0xFFFFFFFFFFFFFFFF,
        stream.intervals,
        stream.dt_min,
        stream.dt_max,
        stream.rho,
        stream.sigma_max,
        stream.start_time,
        0.0 if stream.end_time is None else stream.end_time,
        stream.init_strategy.value,
        NO_INIT_TOKEN if stream.init_token is None else stream.init_token,
    )
    return header + _pack_indices(stream.indices, bits)


def decode_stream(data: bytes) -> TokenStream:
    """Parse a canonical blob back into a TokenStream; strict inverse of
    :func:`encode_stream`."""
    if len(data) < HEADER_SIZE:
        raise CorruptStreamError(
            f"blob too short for header: {len(data)} < {HEADER_SIZE} bytes",
            offset=len(data))
    (magic, version, family_code, p, n_tokens, codebook_size, seed, intervals,
     dt_min, dt_max, rho, sigma_max, t_start, t_end, init_code,
     init_token_raw) = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptStreamError(f"bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise CorruptStreamError(f"unsupported version {version}", offset=4)
    try:
        family = ModelFamily.from_wire(family_code)
    except Exception:
        raise CorruptStreamError(f"unknown family code {family_code}", offset=5) from None
    try:
        init_strategy = InitStrategy(init_code)
    except ValueError:
        raise CorruptStreamError(f"unknown init strategy {init_code}", offset=82) from None
    if codebook_size < 2:
        raise CorruptStreamError(f"codebook size {codebook_size} < 2", offset=18)

    bits = _index_bits(codebook_size)
    expected = (n_tokens * bits + 7) // 8
    payload = data[HEADER_SIZE:]
    if len(payload) < expected:
        raise CorruptStreamError(
            f"payload too short: expected {expected} bytes, found {len(payload)}",
            offset=len(data))
    if len(payload) > expected:
        raise CorruptStreamError(
            "trailing bytes after payload", offset=HEADER_SIZE + expected)

    acc = 0
    nbits = 0
    indices = []
    pos = 0
    for byte in payload:
        acc = (acc << 8) | byte
        nbits += 8
        while nbits >= bits and len(indices) < n_tokens:
            nbits -= bits
            idx = (acc >> nbits) & ((1 << bits) - 1)
            if idx >= codebook_size:
                raise CorruptStreamError(
                    f"index {idx} >= codebook size {codebook_size}",
                    offset=HEADER_SIZE + pos)
            indices.append(idx)
        pos += 1
    if acc & ((1 << nbits) - 1):
        raise CorruptStreamError("nonzero padding bits", offset=len(data) - 1)

    init_token = None if init_token_raw == NO_INIT_TOKEN else init_token_raw
    if init_token is not None and init_token >= codebook_size:
        raise CorruptStreamError(f"init token {init_token} out of range", offset=83)
    return TokenStream(
        family=family, p=p, n_tokens=n_tokens, codebook_size=codebook_size,
        seed=seed, intervals=intervals, dt_min=dt_min, dt_max=dt_max, rho=rho,
        sigma_max=sigma_max, start_time=t_start,
        end_time=None if p == 0.0 else t_end,
        init_strategy=init_strategy, init_token=init_token,
        indices=tuple(indices),
    )
