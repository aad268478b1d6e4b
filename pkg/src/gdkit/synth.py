"""Synthetic best-case datasets for Hamming-based deduplication runs.

Every chunk in a generated dataset sits within bit-distance 1 of one of a
small set of random error-free codewords, so the number of distinct bases
is exactly the number of codewords while the number of distinct chunks can
be dialed up to ``2^(m+1)`` per basis.  Datasets are reproducible: all
randomness comes from one seed (Python's Mersenne Twister), which is
recorded in the file header together with the generation parameters.

File layout: ``HSYN`` magic, then m (u8), bases (u64), chunks per basis
(u32), repetitions (u32), seed (u64), followed by the raw concatenated
chunks.  The header does not count toward compression-ratio accounting.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .ecc import hamming_params
from .errors import ConfigError

MAGIC = b"HSYN"
_HEADER = struct.Struct(">4sBQIIQ")
HEADER_BYTES = _HEADER.size


@dataclass(frozen=True)
class DatasetParams:
    m: int
    num_bases: int
    chunks_per_basis: int
    repetitions: int
    seed: int

    @property
    def chunk_bytes(self) -> int:
        return (1 << self.m) // 8

    @property
    def total_chunks(self) -> int:
        return self.num_bases * self.chunks_per_basis * self.repetitions

    def header(self) -> bytes:
        return _HEADER.pack(
            MAGIC, self.m, self.num_bases, self.chunks_per_basis,
            self.repetitions, self.seed,
        )


def generate_dataset(
    m: int,
    num_bases: int,
    chunks_per_basis: int,
    repetitions: int,
    seed: int,
) -> tuple[DatasetParams, bytes]:
    """Build a dataset; returns (params, chunk bytes without header).

    Each basis contributes ``chunks_per_basis`` distinct chunks drawn from
    its ``2^(m+1)`` variants (any single-bit flip of the codeword, or none,
    with either value of the trailing bit).  The full chunk set is repeated
    and deterministically shuffled.
    """
    cfg = hamming_params(m)
    variants = 1 << (m + 1)
    if num_bases < 1 or chunks_per_basis < 1 or repetitions < 1:
        raise ConfigError("dataset parameters must be positive")
    if chunks_per_basis > variants:
        raise ConfigError(
            f"at most {variants} distinct chunks exist per basis at m={m}"
        )
    if num_bases > min(1 << cfg.k, 1 << 24):
        raise ConfigError("num_bases out of practical range")

    rng = random.Random(seed)
    pad_shift = 8 * cfg.k_B - cfg.k
    seen: set[int] = set()
    basis_rows = np.empty((num_bases, cfg.k_B), dtype=np.uint8)
    for i in range(num_bases):
        while True:
            value = rng.getrandbits(cfg.k)
            if value not in seen:
                seen.add(value)
                break
        basis_rows[i] = np.frombuffer(
            (value << pad_shift).to_bytes(cfg.k_B, "big"), dtype=np.uint8
        )
    codewords = kernels.hamming_encode_batch(basis_rows, m)

    chunks: list[bytes] = []
    expected_rows = np.empty(
        (num_bases * chunks_per_basis, cfg.n_B), dtype=np.uint8
    )
    row = 0
    for i in range(num_bases):
        codeword = bytearray(codewords[i].tobytes())
        for variant in rng.sample(range(variants), chunks_per_basis):
            err_pos = variant >> 1
            chunk = bytearray(codeword)
            if err_pos:
                bit = err_pos - 1
                chunk[bit >> 3] ^= 0x80 >> (bit & 7)
            chunk[-1] = (chunk[-1] & 0xFE) | (variant & 1)
            chunks.append(bytes(chunk))
            expected_rows[row] = np.frombuffer(chunk, dtype=np.uint8)
            row += 1

    # every generated chunk must map back to the basis it was derived from
    got_bases, _, _ = kernels.hamming_transform_batch(expected_rows, m)
    want = np.repeat(basis_rows, chunks_per_basis, axis=0)
    if not np.array_equal(got_bases, want):
        raise AssertionError("generated chunk does not map back to its basis")

    chunks = chunks * repetitions
    rng.shuffle(chunks)
    params = DatasetParams(m, num_bases, chunks_per_basis, repetitions, seed)
    return params, b"".join(chunks)


def write_dataset(path: str, params: DatasetParams, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(params.header())
        fh.write(payload)


def parse_dataset(blob: bytes) -> tuple[DatasetParams, bytes]:
    if len(blob) < HEADER_BYTES or blob[:4] != MAGIC:
        raise ConfigError("not a synthetic dataset (missing header)")
    magic, m, bases, cpb, reps, seed = _HEADER.unpack_from(blob)
    params = DatasetParams(m, bases, cpb, reps, seed)
    payload = blob[HEADER_BYTES:]
    if len(payload) != params.total_chunks * params.chunk_bytes:
        raise ConfigError("dataset payload does not match its header")
    return params, payload


def read_dataset(path: str) -> tuple[DatasetParams, bytes]:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


def is_dataset(blob: bytes) -> bool:
    return blob[:4] == MAGIC
