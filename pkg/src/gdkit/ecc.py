"""Chunk <-> (basis, deviation) transforms.

A transform maps every fixed-size chunk onto a larger *basis* (shared by all
similar chunks) and a small *deviation* that restores the exact original.
Two code families are provided:

* Hamming codes over bits: chunks of ``2^m`` bytes, where the first
  ``2^m - 1`` bits are syndrome-decoded and the final bit rides along in the
  deviation.  Every chunk within bit-distance 1 of a codeword (plus either
  value of the final bit) shares that codeword's basis.
* Shortened Reed-Solomon codes over GF(256) bytes: bounded-distance decoding
  clusters chunks within ``t`` byte-errors of a codeword; anything further
  away falls back to a systematic split so the mapping is total.

The identity transform (basis = chunk, no deviation) gives classic
deduplication the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log2

import numpy as np

from . import _gf, kernels
from .errors import ConfigError, CorruptDeviationError

HAMMING_MIN_M = 3
HAMMING_MAX_M = 15

# Known covering radii for the supported shortened RS codes: the largest
# byte-distance any word can be from its nearest codeword.
COVERING_RADIUS = {
    (16, 14): 2,
    (255, 253): 2,
    (255, 247): 8,
    (64, 56): 11,
}


@dataclass(frozen=True)
class BasisDeviation:
    basis: bytes
    deviation: bytes


@dataclass(frozen=True)
class HammingConfig:
    m: int
    n: int
    k: int
    n_B: int
    k_B: int
    dev_bits: int
    dev_bytes: int


def hamming_params(m: int) -> HammingConfig:
    """Derive all code dimensions from the parity-bit count m."""
    if not HAMMING_MIN_M <= m <= HAMMING_MAX_M:
        raise ConfigError(f"hamming parity bits out of range: m={m}")
    n = (1 << m) - 1
    k = n - m
    return HammingConfig(
        m=m,
        n=n,
        k=k,
        n_B=(n + 1) // 8,
        k_B=(k + 7) // 8,
        dev_bits=m + 1,
        dev_bytes=(m + 8) // 8,
    )


@dataclass(frozen=True)
class RsConfig:
    n_B: int
    k_B: int
    t: int
    nsym: int
    covering_radius: int | None
    q: int = 256

    @property
    def max_deviation_bits(self) -> int | None:
        """Worst-case deviation size implied by the covering radius."""
        if self.covering_radius is None:
            return None
        return self.covering_radius * (ceil(log2(self.n_B)) + 8)


def rs_params(n_B: int, k_B: int) -> RsConfig:
    if not 1 <= k_B < n_B <= 255:
        raise ConfigError(f"invalid RS dimensions: ({n_B}, {k_B})")
    nsym = n_B - k_B
    return RsConfig(
        n_B=n_B,
        k_B=k_B,
        t=nsym // 2,
        nsym=nsym,
        covering_radius=COVERING_RADIUS.get((n_B, k_B)),
    )


def _as_rows(chunks, n_B: int) -> np.ndarray:
    if isinstance(chunks, (bytes, bytearray, memoryview)):
        arr = np.frombuffer(bytes(chunks), dtype=np.uint8)
    else:
        arr = np.ascontiguousarray(chunks, dtype=np.uint8)
    if arr.ndim == 1:
        if arr.size % n_B:
            raise ConfigError(f"byte count {arr.size} not a multiple of {n_B}")
        arr = arr.reshape(-1, n_B)
    elif arr.shape[1] != n_B:
        raise ConfigError(f"chunk rows are {arr.shape[1]} bytes, expected {n_B}")
    return arr


class Transform:
    """Common interface: batch split/rebuild plus wire helpers."""

    wire_id: int
    n_B: int
    k_B: int
    fixed_dev_bytes: int

    def transform_batch(self, chunks) -> tuple[np.ndarray, list[bytes]]:
        raise NotImplementedError

    def reconstruct_batch(self, bases, deviations) -> np.ndarray:
        raise NotImplementedError

    def transform(self, chunk: bytes) -> BasisDeviation:
        if len(chunk) != self.n_B:
            raise ConfigError(f"chunk is {len(chunk)} bytes, expected {self.n_B}")
        bases, devs = self.transform_batch(_as_rows(chunk, self.n_B))
        return BasisDeviation(bases[0].tobytes(), devs[0])

    def reconstruct(self, bd: BasisDeviation) -> bytes:
        if len(bd.basis) != self.k_B:
            raise CorruptDeviationError(
                f"basis is {len(bd.basis)} bytes, expected {self.k_B}"
            )
        out = self.reconstruct_batch(
            np.frombuffer(bd.basis, dtype=np.uint8).reshape(1, -1),
            [bd.deviation],
        )
        return out[0].tobytes()

    def read_deviation(self, buf, pos: int) -> tuple[bytes, int]:
        """Slice one deviation out of a byte stream at pos (self-delimiting)."""
        raise NotImplementedError

    def wire_params(self) -> bytes:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError


class IdentityTransform(Transform):
    """Degenerate transform used by classic deduplication."""

    wire_id = 0

    def __init__(self, n_B: int):
        if n_B < 1:
            raise ConfigError("chunk length must be positive")
        self.n_B = n_B
        self.k_B = n_B
        self.fixed_dev_bytes = 0

    def transform_batch(self, chunks):
        rows = _as_rows(chunks, self.n_B)
        return rows, [b""] * rows.shape[0]

    def reconstruct_batch(self, bases, deviations):
        rows = _as_rows(bases, self.k_B)
        for dev in deviations:
            if dev:
                raise CorruptDeviationError("identity transform takes no deviation")
        return rows

    def read_deviation(self, buf, pos):
        return b"", pos

    def wire_params(self) -> bytes:
        return b""

    def describe(self) -> str:
        return "identity"


class HammingTransform(Transform):
    wire_id = 1

    def __init__(self, cfg: HammingConfig):
        self.cfg = cfg
        self.n_B = cfg.n_B
        self.k_B = cfg.k_B
        self.fixed_dev_bytes = cfg.dev_bytes

    def transform_batch(self, chunks):
        cfg = self.cfg
        rows = _as_rows(chunks, self.n_B)
        bases, syn, extra = kernels.hamming_transform_batch(rows, cfg.m)
        vals = syn.astype(np.uint32) | (extra.astype(np.uint32) << cfg.m)
        nbytes = cfg.dev_bytes
        devs = [v.to_bytes(nbytes, "little") for v in vals.tolist()]
        return bases, devs

    def _unpack_deviations(self, deviations):
        cfg = self.cfg
        syn = np.empty(len(deviations), dtype=np.int64)
        extra = np.empty(len(deviations), dtype=np.uint8)
        limit = 1 << (cfg.m + 1)
        for i, dev in enumerate(deviations):
            if len(dev) != cfg.dev_bytes:
                raise CorruptDeviationError(
                    f"deviation is {len(dev)} bytes, expected {cfg.dev_bytes}"
                )
            val = int.from_bytes(dev, "little")
            if val >= limit:
                raise CorruptDeviationError(f"deviation value out of range: {val}")
            syn[i] = val & cfg.n
            extra[i] = val >> cfg.m
        return syn, extra

    def reconstruct_batch(self, bases, deviations):
        cfg = self.cfg
        rows = _as_rows(bases, self.k_B)
        if rows.shape[0] != len(deviations):
            raise CorruptDeviationError("basis/deviation count mismatch")
        syn, extra = self._unpack_deviations(deviations)
        out = kernels.hamming_encode_batch(rows, cfg.m)
        hit = np.nonzero(syn)[0]
        if hit.size:
            bit = syn[hit] - 1
            out[hit, bit >> 3] ^= (0x80 >> (bit & 7)).astype(np.uint8)
        out[:, -1] |= extra
        return out

    def read_deviation(self, buf, pos):
        end = pos + self.cfg.dev_bytes
        if end > len(buf):
            raise CorruptDeviationError("truncated deviation")
        return bytes(buf[pos:end]), end

    def wire_params(self) -> bytes:
        return bytes([self.cfg.m])

    def describe(self) -> str:
        return f"hamming:{self.cfg.m}"


def _serialize_pairs(pairs) -> bytes:
    out = bytearray([len(pairs)])
    for pos, val in pairs:
        out.append(pos)
        out.append(val)
    return bytes(out)


class RsTransform(Transform):
    wire_id = 2

    def __init__(self, cfg: RsConfig):
        self.cfg = cfg
        self.n_B = cfg.n_B
        self.k_B = cfg.k_B
        self.gen = _gf.generator_poly(cfg.nsym)
        # Widest deviation this transform can emit: one count byte plus a
        # (position, value) pair per parity symbol.
        self.fixed_dev_bytes = 1 + 2 * cfg.nsym

    def transform_batch(self, chunks):
        cfg = self.cfg
        rows = _as_rows(chunks, self.n_B)
        count = rows.shape[0]
        syn = kernels.rs_syndromes_batch(rows, cfg.nsym)

        bases = rows[:, : cfg.k_B].copy()
        devs: list[bytes] = [b"\x00"] * count
        dirty = np.nonzero(syn.any(axis=1))[0]
        fallback: list[int] = []

        if dirty.size:
            if cfg.nsym == 2 and cfg.t == 1:
                fallback = self._correct_single(rows, syn, dirty, bases, devs)
            else:
                for r in dirty.tolist():
                    pairs = self._bm_correct(rows[r], syn[r])
                    if pairs is None:
                        fallback.append(r)
                        continue
                    for pos, val in pairs:
                        if pos < cfg.k_B:
                            bases[r, pos] ^= val
                    devs[r] = _serialize_pairs(pairs)

        if fallback:
            idx = np.array(fallback, dtype=np.int64)
            parity = kernels.rs_encode_parity_batch(bases[idx], self.gen)
            diff = rows[idx, cfg.k_B:] ^ parity
            for row_pos, r in enumerate(fallback):
                pairs = [
                    (cfg.k_B + int(off), int(val))
                    for off, val in zip(*_nonzero_row(diff[row_pos]))
                ]
                devs[r] = _serialize_pairs(pairs)
        return bases, devs

    def _correct_single(self, rows, syn, dirty, bases, devs):
        """Vectorized single-error decode for nsym == 2; returns fallback rows."""
        cfg = self.cfg
        log = np.array(_gf.LOG, dtype=np.int64)
        s0 = syn[dirty, 0].astype(np.int64)
        s1 = syn[dirty, 1].astype(np.int64)
        cand = (s0 != 0) & (s1 != 0)
        pdeg = (log[s1] - log[s0]) % _gf.FIELD_CHARAC
        ok = cand & (pdeg < cfg.n_B)
        for i in np.nonzero(ok)[0].tolist():
            r = int(dirty[i])
            pos = cfg.n_B - 1 - int(pdeg[i])
            val = int(s0[i])
            if pos < cfg.k_B:
                bases[r, pos] ^= val
            devs[r] = _serialize_pairs([(pos, val)])
        return [int(dirty[i]) for i in np.nonzero(~ok)[0].tolist()]

    def _bm_correct(self, word, syndromes):
        """Berlekamp-Massey decode of one word; None when beyond capability."""
        cfg = self.cfg
        syn = [int(s) for s in syndromes]
        sigma, degree = _berlekamp_massey(syn)
        if degree == 0 or degree > cfg.t or len(sigma) - 1 != degree:
            return None
        positions = _chien_search(sigma, degree, cfg.n_B)
        if positions is None:
            return None
        magnitudes = _forney(syn, sigma, positions)
        if magnitudes is None:
            return None
        corrected = [int(b) for b in word]
        pairs = []
        for pdeg, mag in zip(positions, magnitudes):
            idx = cfg.n_B - 1 - pdeg
            corrected[idx] ^= mag
            pairs.append((idx, mag))
        # accept only true codewords; miscorrections fall back
        for j in range(cfg.nsym):
            if _gf.poly_eval(corrected, _gf.EXP[j]):
                return None
        pairs.sort()
        return pairs

    def reconstruct_batch(self, bases, deviations):
        cfg = self.cfg
        rows = _as_rows(bases, self.k_B)
        if rows.shape[0] != len(deviations):
            raise CorruptDeviationError("basis/deviation count mismatch")
        parity = kernels.rs_encode_parity_batch(rows, self.gen)
        out = np.concatenate([rows, parity], axis=1)
        for r, dev in enumerate(deviations):
            for pos, val in _parse_pairs(dev, cfg.n_B):
                out[r, pos] ^= val
        return out

    def read_deviation(self, buf, pos):
        if pos >= len(buf):
            raise CorruptDeviationError("truncated deviation")
        end = pos + 1 + 2 * buf[pos]
        if end > len(buf):
            raise CorruptDeviationError("truncated deviation")
        return bytes(buf[pos:end]), end

    def wire_params(self) -> bytes:
        return bytes([self.cfg.k_B])

    def describe(self) -> str:
        return f"rs:{self.cfg.n_B},{self.cfg.k_B}"


def _nonzero_row(row):
    idx = np.nonzero(row)[0]
    return idx, row[idx]


def _parse_pairs(dev: bytes, n_B: int):
    if not dev or len(dev) != 1 + 2 * dev[0]:
        raise CorruptDeviationError("deviation length does not match its count")
    pairs = []
    last = -1
    for i in range(dev[0]):
        pos = dev[1 + 2 * i]
        val = dev[2 + 2 * i]
        if pos >= n_B:
            raise CorruptDeviationError(f"deviation position {pos} out of range")
        if pos <= last:
            raise CorruptDeviationError("deviation positions must increase")
        last = pos
        pairs.append((pos, val))
    return pairs


def _berlekamp_massey(syn):
    """Error-locator polynomial (lowest degree first) and its degree."""
    mul, inv = _gf.gf_mul, _gf.gf_inv
    cur = [1]
    prev = [1]
    length = 0
    gap = 1
    prev_d = 1
    for i, s in enumerate(syn):
        d = s
        for j in range(1, length + 1):
            d ^= mul(cur[j], syn[i - j])
        if d == 0:
            gap += 1
            continue
        coef = mul(d, inv(prev_d))
        cand = cur + [0] * (len(prev) + gap - len(cur))
        for j, p in enumerate(prev):
            cand[j + gap] ^= mul(coef, p)
        if 2 * length <= i:
            prev = cur
            prev_d = d
            length = i + 1 - length
            gap = 1
        else:
            gap += 1
        cur = cand
    while cur and cur[-1] == 0:
        cur.pop()
    return cur, length


def _chien_search(sigma, degree, n_B):
    """Degrees of the error positions, or None when the roots do not fit."""
    positions = []
    for pdeg in range(n_B):
        x_inv = _gf.gf_pow(_gf.GENERATOR, -pdeg) if pdeg else 1
        acc = 0
        for j, c in enumerate(sigma):
            if c:
                acc ^= _gf.gf_mul(c, _gf.gf_pow(x_inv, j))
        if acc == 0:
            positions.append(pdeg)
    if len(positions) != degree:
        return None
    return positions


def _forney(syn, sigma, positions):
    """Error magnitudes for roots alpha^p, first consecutive root alpha^0."""
    nsym = len(syn)
    omega = [0] * nsym
    for i, s in enumerate(syn):
        if s == 0:
            continue
        for j, c in enumerate(sigma):
            if i + j < nsym and c:
                omega[i + j] ^= _gf.gf_mul(s, c)
    # formal derivative keeps odd-degree coefficients only
    sigma_prime = [c if j % 2 == 1 else 0 for j, c in enumerate(sigma)][1:]
    mags = []
    for pdeg in positions:
        x = _gf.gf_pow(_gf.GENERATOR, pdeg)
        x_inv = _gf.gf_inv(x)
        num = 0
        for j, c in enumerate(omega):
            if c:
                num ^= _gf.gf_mul(c, _gf.gf_pow(x_inv, j))
        den = 0
        for j, c in enumerate(sigma_prime):
            if c:
                den ^= _gf.gf_mul(c, _gf.gf_pow(x_inv, j))
        if den == 0:
            return None
        mag = _gf.gf_mul(x, _gf.gf_div(num, den))
        if mag == 0:
            return None
        mags.append(mag)
    return mags


def hamming_transform(chunk: bytes, cfg: HammingConfig) -> BasisDeviation:
    if len(chunk) != cfg.n_B:
        raise ConfigError(f"chunk is {len(chunk)} bytes, expected {cfg.n_B}")
    return HammingTransform(cfg).transform(chunk)


def hamming_reconstruct(bd: BasisDeviation, cfg: HammingConfig) -> bytes:
    return HammingTransform(cfg).reconstruct(bd)


def rs_transform(chunk: bytes, cfg: RsConfig) -> BasisDeviation:
    if len(chunk) != cfg.n_B:
        raise ConfigError(f"chunk is {len(chunk)} bytes, expected {cfg.n_B}")
    return RsTransform(cfg).transform(chunk)


def rs_reconstruct(bd: BasisDeviation, cfg: RsConfig) -> bytes:
    return RsTransform(cfg).reconstruct(bd)


def make_transform(spec: str, chunk_bytes: int | None = None) -> Transform:
    """Build a transform from a CLI-style spec.

    Accepted forms: ``identity`` (requires chunk_bytes), ``hamming:M``,
    ``rs:N,K``.
    """
    name, _, arg = spec.partition(":")
    name = name.strip().lower()
    if name == "identity":
        if chunk_bytes is None:
            raise ConfigError("identity transform needs an explicit chunk length")
        return IdentityTransform(chunk_bytes)
    if name == "hamming":
        try:
            m = int(arg)
        except ValueError:
            raise ConfigError(f"bad hamming spec: {spec!r}") from None
        return HammingTransform(hamming_params(m))
    if name == "rs":
        try:
            n_b, k_b = (int(x) for x in arg.split(","))
        except ValueError:
            raise ConfigError(f"bad rs spec: {spec!r}") from None
        return RsTransform(rs_params(n_b, k_b))
    raise ConfigError(f"unknown transform: {spec!r}")


def transform_from_wire(wire_id: int, params: bytes, chunk_bytes: int) -> Transform:
    if wire_id == IdentityTransform.wire_id:
        return IdentityTransform(chunk_bytes)
    if wire_id == HammingTransform.wire_id:
        if len(params) != 1:
            raise ConfigError("hamming wire params must be one byte")
        t = HammingTransform(hamming_params(params[0]))
    elif wire_id == RsTransform.wire_id:
        if len(params) != 1:
            raise ConfigError("rs wire params must be one byte")
        t = RsTransform(rs_params(chunk_bytes, params[0]))
    else:
        raise ConfigError(f"unknown transform wire id: {wire_id}")
    if t.n_B != chunk_bytes:
        raise ConfigError("transform chunk length disagrees with configuration")
    return t
