"""Pure-Python kernel backend (numpy-vectorized).

Mirrors the API of the compiled backend in ``_kernels_c``; the active backend
is picked in :mod:`gdkit.kernels`.  All functions operate on batches of
chunks laid out as C-contiguous ``uint8`` arrays of shape (count, bytes).

Bit conventions (shared with the compiled backend):

* bits are viewed MSB-first within each byte;
* Hamming parity-check column ``i`` (1-based) is the binary expansion of
  ``i``, so the syndrome value is the 1-based position of the corrected bit;
* the last bit of a Hamming chunk (LSB of the final byte) is outside the
  code and travels untouched as part of the deviation.

The message bits of a codeword occupy the runs between parity positions
(powers of two), so basis extraction and codeword rebuilding are shifted
byte-level copies of those runs rather than per-bit work.
"""

import numpy as np

from . import _gf

BACKEND = "py"

# Per-byte syndrome contribution tables.  A set bit t (MSB-first, t = 0..6)
# of the byte at offset o occupies column 8*o + (t+1); the byte's LSB (t = 7)
# occupies column 8*(o+1).  XOR-accumulating (t+1) and the parity of the top
# seven bits lets the column XOR be assembled without unpacking bits.
_LOW_XOR = np.zeros(256, dtype=np.uint16)
_PAR7 = np.zeros(256, dtype=np.uint8)
for _v in range(256):
    _acc = 0
    _par = 0
    for _j in range(1, 8):  # integer bit j holds MSB-first bit t = 7 - j
        if _v & (1 << _j):
            _acc ^= 8 - _j
            _par ^= 1
    _LOW_XOR[_v] = _acc
    _PAR7[_v] = _par
del _v, _acc, _par, _j

_MSG_POS: dict[int, np.ndarray] = {}
_MUL = None


def _msg_positions(m: int) -> np.ndarray:
    """0-based bit indices of the k message positions (1..n minus powers of 2)."""
    pos = _MSG_POS.get(m)
    if pos is None:
        n = (1 << m) - 1
        pos = np.array(
            [p - 1 for p in range(1, n + 1) if p & (p - 1)], dtype=np.int64
        )
        _MSG_POS[m] = pos
    return pos


def _extract_runs(m: int) -> list[tuple[int, int, int]]:
    """(dst_bit, src_bit, length) runs copying message bits out of a codeword."""
    return [((1 << j) - j - 1, 1 << j, (1 << j) - 1) for j in range(1, m)]


def _embed_runs(m: int) -> list[tuple[int, int, int]]:
    """(dst_bit, src_bit, length) runs placing basis bits into a codeword."""
    return [(1 << j, (1 << j) - j - 1, (1 << j) - 1) for j in range(1, m)]


def _copy_bit_runs(dst: np.ndarray, src: np.ndarray, runs) -> None:
    """OR contiguous bit runs of src into the zero-initialized dst rows.

    Bit offsets are MSB-first; each run has a constant shift, so a run is a
    pair of byte-shifted slices plus edge masks.
    """
    count, src_bytes = src.shape
    padded = np.zeros((count, src_bytes + 3), dtype=np.uint8)
    padded[:, 1 : src_bytes + 1] = src
    for d0, s0, length in runs:
        delta = s0 - d0
        r = delta & 7
        t0 = d0 >> 3
        t1 = (d0 + length - 1) >> 3
        bsh = (delta - r) >> 3
        a0 = t0 + bsh + 1  # +1 for the left pad column
        a1 = t1 + bsh + 2
        first = padded[:, a0:a1]
        if r:
            second = padded[:, a0 + 1 : a1 + 1]
            vals = (first << r) | (second >> (8 - r))
        else:
            vals = first.copy()
        head_mask = 0xFF >> (d0 & 7)
        tail_bits = (d0 + length) & 7
        tail_mask = (0xFF ^ (0xFF >> tail_bits)) if tail_bits else 0xFF
        if t0 == t1:
            mask = head_mask & tail_mask
            if mask != 0xFF:
                vals[:, 0] &= mask
        else:
            if head_mask != 0xFF:
                vals[:, 0] &= head_mask
            if tail_mask != 0xFF:
                vals[:, -1] &= tail_mask
        dst[:, t0 : t1 + 1] |= vals


def _syndromes_of(v: np.ndarray) -> np.ndarray:
    """Column-XOR syndrome of each row, excluding the trailing extra bit."""
    n_B = v.shape[1]
    offs = 8 * np.arange(n_B, dtype=np.uint16)
    contrib = _LOW_XOR[v] ^ (_PAR7[v] * offs)
    if n_B > 1:
        lsb = (v[:, :-1] & 1).astype(np.uint16)
        contrib[:, :-1] ^= lsb * (offs[:-1] + 8)
    return np.bitwise_xor.reduce(contrib, axis=1).astype(np.uint16)


def hamming_transform_batch(chunks: np.ndarray, m: int):
    """Split chunks into (bases, syndromes, extra bits).

    Returns ``(bases, syndromes, extras)`` where ``bases`` holds the packed
    message bits of the nearest codeword, ``syndromes`` the 1-based corrected
    position (0 = already a codeword) and ``extras`` the untouched final bit.
    """
    chunks = np.ascontiguousarray(chunks, dtype=np.uint8)
    count = chunks.shape[0]
    n = 8 * chunks.shape[1] - 1
    k_B = (n - m + 7) // 8

    syndromes = _syndromes_of(chunks)
    extras = chunks[:, -1] & 1

    corrected = chunks.copy()
    rows = np.nonzero(syndromes)[0]
    if rows.size:
        bit = syndromes[rows].astype(np.int64) - 1
        corrected[rows, bit >> 3] ^= (0x80 >> (bit & 7)).astype(np.uint8)

    bases = np.zeros((count, k_B), dtype=np.uint8)
    _copy_bit_runs(bases, corrected, _extract_runs(m))
    return bases, syndromes, extras.copy()


def hamming_encode_batch(bases: np.ndarray, m: int) -> np.ndarray:
    """Rebuild error-free codeword chunks from packed bases (extra bit 0)."""
    bases = np.ascontiguousarray(bases, dtype=np.uint8)
    count = bases.shape[0]
    n_B = (1 << m) // 8

    out = np.zeros((count, n_B), dtype=np.uint8)
    _copy_bit_runs(out, bases, _embed_runs(m))
    # Parity bit at position 2^j mirrors bit j of the message-column XOR so
    # the full-word syndrome cancels to zero.
    syn = _syndromes_of(out)
    for j in range(m):
        rows = np.nonzero((syn >> j) & 1)[0]
        if rows.size:
            bit = (1 << j) - 1
            out[rows, bit >> 3] ^= 0x80 >> (bit & 7)
    return out


def _mul_table() -> np.ndarray:
    global _MUL
    if _MUL is None:
        exp = np.array(_gf.EXP, dtype=np.uint8)
        log = np.array(_gf.LOG, dtype=np.int32)
        table = exp[log[:, None] + log[None, :]]
        table[0, :] = 0
        table[:, 0] = 0
        _MUL = table
    return _MUL


def rs_encode_parity_batch(msgs: np.ndarray, gen: bytes) -> np.ndarray:
    """Systematic RS parity symbols for each message row.

    ``gen`` is the monic generator polynomial from ``_gf.generator_poly``;
    the returned array has ``len(gen) - 1`` parity symbols per row.
    """
    msgs = np.ascontiguousarray(msgs, dtype=np.uint8)
    count, k = msgs.shape
    nsym = len(gen) - 1
    mul = _mul_table()
    gen_rows = [mul[g] for g in gen[1:]]

    rem = np.zeros((count, nsym), dtype=np.uint8)
    for i in range(k):
        coef = msgs[:, i] ^ rem[:, 0]
        rem[:, :-1] = rem[:, 1:]
        rem[:, -1] = 0
        for j in range(nsym):
            rem[:, j] ^= gen_rows[j][coef]
    return rem


def rs_syndromes_batch(words: np.ndarray, nsym: int) -> np.ndarray:
    """Syndromes S_j = word(alpha^j), j = 0..nsym-1, per row."""
    words = np.ascontiguousarray(words, dtype=np.uint8)
    count, n_B = words.shape
    mul = _mul_table()
    cols = np.ascontiguousarray(words.T)

    out = np.empty((count, nsym), dtype=np.uint8)
    for j in range(nsym):
        row = mul[_gf.EXP[j]]
        acc = np.zeros(count, dtype=np.uint8)
        for i in range(n_B):
            acc = row[acc] ^ cols[i]
        out[:, j] = acc
    return out
