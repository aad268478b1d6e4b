"""Per-chunk sample preprocessing: delta encoding and offset removal.

Chunks are viewed as concatenations of unsigned big-endian samples of 1, 2
or 4 bytes.  Both preprocessors are strictly chunk-local and invertible:

* delta encoding keeps the first sample and replaces each following sample
  by its difference to the predecessor;
* offset removal subtracts the chunk minimum from every sample and hands
  the minimum to the caller, which carries it next to the deviation.

Each chunk travels with a one-byte mode tag so the receiver knows how to
invert it.  Delta chunks whose differences do not fit the signed sample
width are sent unprocessed under TAG_NONE.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, CorruptInputError

TAG_NONE = 0
TAG_DELTA = 1
TAG_OFFSET = 2

MODES = ("none", "delta", "offset")

_WIDTH_DTYPES = {1: ">u1", 2: ">u2", 4: ">u4"}


def delta_encode(samples) -> list[int]:
    """First sample verbatim, then successive differences (may be negative)."""
    if len(samples) == 0:
        raise ValueError("cannot delta-encode an empty sequence")
    out = [samples[0]]
    for prev, cur in zip(samples, samples[1:]):
        out.append(cur - prev)
    return out


def delta_decode(deltas) -> list[int]:
    """Prefix-sum inverse of delta_encode."""
    if len(deltas) == 0:
        raise ValueError("cannot delta-decode an empty sequence")
    out = [deltas[0]]
    for d in deltas[1:]:
        out.append(out[-1] + d)
    return out


def offset_remove(samples) -> tuple[list[int], int]:
    """Subtract the minimum from every sample; returns (residuals, minimum)."""
    if len(samples) == 0:
        raise ValueError("cannot offset-encode an empty sequence")
    low = min(samples)
    return [s - low for s in samples], low


def offset_restore(residuals, min_value: int) -> list[int]:
    if len(residuals) == 0:
        raise ValueError("cannot offset-decode an empty sequence")
    return [r + min_value for r in residuals]


def check_layout(chunk_bytes: int, sample_width: int) -> None:
    if sample_width not in _WIDTH_DTYPES:
        raise ConfigError(f"unsupported sample width: {sample_width}")
    if chunk_bytes % sample_width:
        raise ConfigError(
            f"chunk length {chunk_bytes} not divisible by sample width {sample_width}"
        )


def _sample_view(chunks: np.ndarray, width: int) -> np.ndarray:
    return chunks.reshape(chunks.shape[0], -1).view(_WIDTH_DTYPES[width])


def encode_batch(chunks: np.ndarray, mode: str, width: int):
    """Preprocess chunk rows; returns (processed, tags, extras).

    ``extras[i]`` is the serialized minimum for offset rows, else ``b""``.
    """
    chunks = np.ascontiguousarray(chunks, dtype=np.uint8)
    count = chunks.shape[0]
    if mode == "none":
        return chunks, np.zeros(count, dtype=np.uint8), [b""] * count
    check_layout(chunks.shape[1], width)
    samples = _sample_view(chunks, width).astype(np.int64)

    if mode == "delta":
        out = np.empty_like(samples)
        out[:, 0] = samples[:, 0]
        diffs = samples[:, 1:] - samples[:, :-1]
        out[:, 1:] = diffs
        half = 1 << (8 * width - 1)
        bad = ((diffs < -half) | (diffs >= half)).any(axis=1)
        tags = np.where(bad, TAG_NONE, TAG_DELTA).astype(np.uint8)
        # two's-complement serialization in the original width
        encoded = (out & ((1 << (8 * width)) - 1)).astype(_WIDTH_DTYPES[width])
        processed = encoded.view(np.uint8).reshape(count, -1)
        processed = np.where(bad[:, None], chunks, processed)
        return np.ascontiguousarray(processed), tags, [b""] * count

    if mode == "offset":
        mins = samples.min(axis=1)
        residuals = (samples - mins[:, None]).astype(_WIDTH_DTYPES[width])
        processed = np.ascontiguousarray(residuals.view(np.uint8).reshape(count, -1))
        tags = np.full(count, TAG_OFFSET, dtype=np.uint8)
        extras = [int(m).to_bytes(width, "big") for m in mins.tolist()]
        return processed, tags, extras

    raise ConfigError(f"unknown preprocessing mode: {mode!r}")


def decode_batch(chunks: np.ndarray, tags, extras, width: int) -> np.ndarray:
    """Invert encode_batch given each chunk's tag and serialized extra."""
    chunks = np.ascontiguousarray(chunks, dtype=np.uint8)
    count = chunks.shape[0]
    tags = np.asarray(tags, dtype=np.uint8)
    if tags.shape[0] != count or len(extras) != count:
        raise CorruptInputError("tag/extra count mismatch")
    if not tags.any():
        return chunks
    check_layout(chunks.shape[1], width)
    limit = 1 << (8 * width)
    half = limit >> 1
    out = chunks.copy()

    delta_rows = np.nonzero(tags == TAG_DELTA)[0]
    if delta_rows.size:
        enc = _sample_view(chunks[delta_rows], width).astype(np.int64)
        signed = np.where(enc[:, 1:] >= half, enc[:, 1:] - limit, enc[:, 1:])
        samples = np.concatenate([enc[:, :1], signed], axis=1).cumsum(axis=1)
        if ((samples < 0) | (samples >= limit)).any():
            raise CorruptInputError("delta decode escapes the sample range")
        restored = samples.astype(_WIDTH_DTYPES[width]).view(np.uint8)
        out[delta_rows] = restored.reshape(delta_rows.size, -1)

    offset_rows = np.nonzero(tags == TAG_OFFSET)[0]
    if offset_rows.size:
        mins = np.empty(offset_rows.size, dtype=np.int64)
        for i, r in enumerate(offset_rows.tolist()):
            if len(extras[r]) != width:
                raise CorruptInputError("offset minimum has the wrong width")
            mins[i] = int.from_bytes(extras[r], "big")
        samples = _sample_view(chunks[offset_rows], width).astype(np.int64)
        samples += mins[:, None]
        if (samples >= limit).any():
            raise CorruptInputError("offset restore escapes the sample range")
        restored = samples.astype(_WIDTH_DTYPES[width]).view(np.uint8)
        out[offset_rows] = restored.reshape(offset_rows.size, -1)

    bad = ~np.isin(tags, (TAG_NONE, TAG_DELTA, TAG_OFFSET))
    if bad.any():
        raise CorruptInputError(f"unknown preprocessing tag {tags[bad][0]}")
    return out


def encode_chunk(chunk: bytes, mode: str, width: int) -> tuple[bytes, int, bytes]:
    """Single-chunk convenience wrapper; returns (processed, tag, extra)."""
    arr = np.frombuffer(chunk, dtype=np.uint8).reshape(1, -1)
    processed, tags, extras = encode_batch(arr, mode, width)
    return processed[0].tobytes(), int(tags[0]), extras[0]


def decode_chunk(chunk: bytes, tag: int, extra: bytes, width: int) -> bytes:
    arr = np.frombuffer(chunk, dtype=np.uint8).reshape(1, -1)
    return decode_batch(arr, [tag], [extra], width)[0].tobytes()


def extra_width(tag: int, sample_width: int) -> int:
    """Byte count of the serialized extra carried next to the deviation."""
    return sample_width if tag == TAG_OFFSET else 0
