# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Same API and bit conventions as ``_kernels_py``; see that module for the
layout documentation.  Selected at import time by :mod:`gdkit.kernels`.
"""

import numpy as np

from . import _gf

BACKEND = "c"

cdef unsigned short LOW_XOR[256]
cdef unsigned char PAR7[256]
cdef unsigned char EXP_T[510]
cdef unsigned short LOG_T[256]


def _init_tables():
    cdef int v, j
    cdef unsigned short acc
    cdef unsigned char par
    for v in range(256):
        acc = 0
        par = 0
        for j in range(1, 8):
            if v & (1 << j):
                acc ^= <unsigned short> (8 - j)
                par ^= 1
        LOW_XOR[v] = acc
        PAR7[v] = par
    exp = _gf.EXP
    log = _gf.LOG
    for v in range(510):
        EXP_T[v] = exp[v]
    for v in range(256):
        LOG_T[v] = log[v]


_init_tables()


cdef inline unsigned short _syndrome_of(const unsigned char* row, Py_ssize_t n_B) nogil:
    cdef unsigned short s = 0
    cdef Py_ssize_t o
    cdef unsigned char byte
    for o in range(n_B):
        byte = row[o]
        s ^= LOW_XOR[byte]
        if PAR7[byte]:
            s ^= <unsigned short> (8 * o)
        if (byte & 1) and o != n_B - 1:
            s ^= <unsigned short> (8 * (o + 1))
    return s


cdef inline void _copy_bits(unsigned char* dst, long d0,
                            const unsigned char* src, long s0,
                            long count, long src_len) nogil:
    # OR `count` bits of src starting at bit s0 into dst at bit d0
    # (MSB-first); dst bits must start out zero.
    cdef long i = 0, db, sb, sbyte
    cdef int doff, soff, take
    cdef unsigned int window, val
    while i < count:
        db = d0 + i
        doff = <int> (db & 7)
        take = 8 - doff
        if take > count - i:
            take = <int> (count - i)
        sb = s0 + i
        sbyte = sb >> 3
        soff = <int> (sb & 7)
        window = (<unsigned int> src[sbyte]) << 8
        if sbyte + 1 < src_len:
            window |= src[sbyte + 1]
        val = (window >> (16 - soff - take)) & <unsigned int> ((1 << take) - 1)
        dst[db >> 3] |= <unsigned char> (val << (8 - doff - take))
        i += take


def hamming_transform_batch(chunks, int m):
    """Split chunks into (bases, syndromes, extra bits)."""
    chunks = np.ascontiguousarray(chunks, dtype=np.uint8)
    cdef const unsigned char[:, ::1] cv = chunks
    cdef Py_ssize_t count = cv.shape[0]
    cdef Py_ssize_t n_B = cv.shape[1]
    cdef int n = 8 * <int> n_B - 1
    cdef int k = n - m
    cdef Py_ssize_t k_B = (k + 7) // 8

    bases = np.zeros((count, k_B), dtype=np.uint8)
    syndromes = np.empty(count, dtype=np.uint16)
    extras = np.empty(count, dtype=np.uint8)
    scratch = np.empty(n_B, dtype=np.uint8)
    cdef unsigned char[:, ::1] bv = bases
    cdef unsigned short[::1] sv = syndromes
    cdef unsigned char[::1] ev = extras
    cdef unsigned char[::1] tmp = scratch

    cdef Py_ssize_t i, o
    cdef unsigned short s
    cdef int j
    cdef long bit
    with nogil:
        for i in range(count):
            s = _syndrome_of(&cv[i, 0], n_B)
            sv[i] = s
            ev[i] = cv[i, n_B - 1] & 1
            for o in range(n_B):
                tmp[o] = cv[i, o]
            if s:
                bit = s - 1
                tmp[bit >> 3] ^= <unsigned char> (0x80 >> (bit & 7))
            for j in range(1, m):
                _copy_bits(&bv[i, 0], (1 << j) - j - 1,
                           &tmp[0], 1 << j, (1 << j) - 1, n_B)
    return bases, syndromes, extras


def hamming_encode_batch(bases, int m):
    """Rebuild error-free codeword chunks from packed bases (extra bit 0)."""
    bases = np.ascontiguousarray(bases, dtype=np.uint8)
    cdef const unsigned char[:, ::1] bv = bases
    cdef Py_ssize_t count = bv.shape[0]
    cdef Py_ssize_t k_B = bv.shape[1]
    cdef Py_ssize_t n_B = (1 << m) // 8

    out = np.zeros((count, n_B), dtype=np.uint8)
    cdef unsigned char[:, ::1] ov = out

    cdef Py_ssize_t i
    cdef unsigned short s
    cdef int j
    cdef long bit
    with nogil:
        for i in range(count):
            for j in range(1, m):
                _copy_bits(&ov[i, 0], 1 << j,
                           &bv[i, 0], (1 << j) - j - 1, (1 << j) - 1, k_B)
            # parity at 2^j mirrors bit j of the message-column XOR
            s = _syndrome_of(&ov[i, 0], n_B)
            for j in range(m):
                if (s >> j) & 1:
                    bit = (1 << j) - 1
                    ov[i, bit >> 3] |= <unsigned char> (0x80 >> (bit & 7))
    return out


def rs_encode_parity_batch(msgs, gen):
    """Systematic RS parity symbols for each message row."""
    msgs = np.ascontiguousarray(msgs, dtype=np.uint8)
    gen_arr = np.frombuffer(bytes(gen), dtype=np.uint8)
    cdef const unsigned char[:, ::1] mv = msgs
    cdef const unsigned char[::1] gv = gen_arr
    cdef Py_ssize_t count = mv.shape[0]
    cdef Py_ssize_t k = mv.shape[1]
    cdef Py_ssize_t nsym = gv.shape[0] - 1

    rem = np.zeros((count, nsym), dtype=np.uint8)
    cdef unsigned char[:, ::1] rv = rem

    cdef Py_ssize_t i, col, j
    cdef unsigned char coef, gj
    cdef unsigned short lc
    with nogil:
        for i in range(count):
            for col in range(k):
                coef = mv[i, col] ^ rv[i, 0]
                for j in range(nsym - 1):
                    rv[i, j] = rv[i, j + 1]
                rv[i, nsym - 1] = 0
                if coef:
                    lc = LOG_T[coef]
                    for j in range(nsym):
                        gj = gv[j + 1]
                        if gj:
                            rv[i, j] ^= EXP_T[LOG_T[gj] + lc]
    return rem


def rs_syndromes_batch(words, int nsym):
    """Syndromes S_j = word(alpha^j), j = 0..nsym-1, per row."""
    words = np.ascontiguousarray(words, dtype=np.uint8)
    cdef const unsigned char[:, ::1] wv = words
    cdef Py_ssize_t count = wv.shape[0]
    cdef Py_ssize_t n_B = wv.shape[1]

    out = np.empty((count, nsym), dtype=np.uint8)
    cdef unsigned char[:, ::1] ov = out

    cdef Py_ssize_t i, col
    cdef int j
    cdef unsigned char acc
    cdef unsigned short la
    with nogil:
        for i in range(count):
            for j in range(nsym):
                acc = 0
                la = LOG_T[EXP_T[j]]
                for col in range(n_B):
                    if acc:
                        acc = EXP_T[LOG_T[acc] + la]
                    acc ^= wv[i, col]
                ov[i, j] = acc
    return out
