"""Stream engine: chunking, per-scheme encoding/decoding, fingerprint store.

The encoder walks a byte stream chunk by chunk, applies preprocessing and
the configured transform, and emits one token per chunk.  A token always
carries the scheme identifiers; it additionally carries the basis (or, for
DD and the dual layout, the chunk) exactly when the encoder believes the
receiver does not have it yet.  The decoder mirrors that bookkeeping, so a
serialized token stream is self-delimiting given the shared configuration.

Byte accounting follows the transmission-cost model: identifier bytes are
counted once per chunk, payload bytes once per new basis/chunk, deviation
bytes once per chunk (dual layout: only for chunks resolved via a basis).
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from . import preprocess
from .ecc import IdentityTransform, Transform
from .errors import (
    ConfigError,
    CorruptDeviationError,
    MissingBasisError,
    ValidationError,
)
from .fingerprint import (
    FingerprintConfig,
    Scheme,
    dual_lengths,
    fingerprint,
    reduced_fp_len,
)

SNAPSHOT_MAGIC = b"HRMS"
SNAPSHOT_VERSION = 1

# Store bookkeeping cost per record on top of the fingerprint itself.
RECORD_REF_BYTES = 8

_FP_ALGO_IDS = {"crc32": 0, "sha1": 1, "sha256": 2}
_FP_ALGO_NAMES = {v: k for k, v in _FP_ALGO_IDS.items()}
_PREPROCESS_IDS = {"none": 0, "delta": 1, "offset": 2}
_PREPROCESS_NAMES = {v: k for k, v in _PREPROCESS_IDS.items()}


@dataclass(frozen=True)
class ChunkingConfig:
    scheme: Scheme
    transform: Transform
    fingerprint: FingerprintConfig
    preprocess: str = "none"
    sample_width: int = 1

    def __post_init__(self):
        if self.preprocess not in _PREPROCESS_IDS:
            raise ConfigError(f"unknown preprocessing mode: {self.preprocess!r}")
        if self.scheme is Scheme.DD:
            if not isinstance(self.transform, IdentityTransform):
                raise ConfigError("classic deduplication uses the identity transform")
            if self.preprocess != "none":
                raise ConfigError(
                    "classic deduplication has no deviation to carry "
                    "preprocessing state"
                )
        if self.preprocess != "none":
            preprocess.check_layout(self.n_B, self.sample_width)
        if self.scheme is Scheme.GD_REDUCED:
            reduced_fp_len(self.fingerprint, self.transform.fixed_dev_bytes)
        if self.scheme is Scheme.GD_DUAL and self.fingerprint.length < 2:
            raise ConfigError("the dual layout needs at least a 2-byte fingerprint")

    @property
    def n_B(self) -> int:
        return self.transform.n_B

    @property
    def k_B(self) -> int:
        return self.transform.k_B

    @property
    def primary_fp_len(self) -> int:
        if self.scheme is Scheme.GD_REDUCED:
            return reduced_fp_len(self.fingerprint, self.transform.fixed_dev_bytes)
        if self.scheme is Scheme.GD_DUAL:
            return dual_lengths(self.fingerprint.length)[0]
        return self.fingerprint.length

    @property
    def secondary_fp_len(self) -> int:
        if self.scheme is Scheme.GD_DUAL:
            return dual_lengths(self.fingerprint.length)[1]
        return 0

    @property
    def has_tag(self) -> bool:
        return self.preprocess != "none"

    def build_devblob(self, tag: int, dev: bytes, extra: bytes) -> bytes:
        if not self.has_tag:
            return dev
        return bytes([tag]) + dev + extra

    def read_devblob(self, buf, pos: int) -> tuple[int, bytes, bytes, int]:
        """Parse (tag, deviation, extra) out of a byte stream at pos."""
        tag = preprocess.TAG_NONE
        if self.has_tag:
            if pos >= len(buf):
                raise CorruptDeviationError("truncated deviation block")
            tag = buf[pos]
            pos += 1
        dev, pos = self.transform.read_deviation(buf, pos)
        extra = b""
        width = preprocess.extra_width(tag, self.sample_width)
        if width:
            if pos + width > len(buf):
                raise CorruptDeviationError("truncated preprocessing minimum")
            extra = bytes(buf[pos : pos + width])
            pos += width
        return tag, dev, extra, pos

    def wire_bytes(self) -> bytes:
        """Serialized form used in session handshakes."""
        t = self.transform
        return (
            struct.pack(">I", self.n_B)
            + bytes([t.wire_id])
            + t.wire_params()
            + bytes(
                [
                    _FP_ALGO_IDS[self.fingerprint.algorithm],
                    self.fingerprint.length,
                    int(self.scheme),
                    _PREPROCESS_IDS[self.preprocess],
                    self.sample_width,
                ]
            )
        )

    @classmethod
    def from_wire_bytes(cls, blob: bytes) -> "ChunkingConfig":
        from .ecc import transform_from_wire

        if len(blob) < 5:
            raise ConfigError("truncated configuration blob")
        n_b = struct.unpack(">I", blob[:4])[0]
        wire_id = blob[4]
        params_len = 0 if wire_id == 0 else 1
        params = blob[5 : 5 + params_len]
        rest = blob[5 + params_len :]
        if len(rest) != 5 or len(params) != params_len:
            raise ConfigError("malformed configuration blob")
        algo_id, h_b, scheme_id, prep_id, width = rest
        if algo_id not in _FP_ALGO_NAMES:
            raise ConfigError(f"unknown fingerprint algorithm id: {algo_id}")
        if prep_id not in _PREPROCESS_NAMES:
            raise ConfigError(f"unknown preprocessing id: {prep_id}")
        try:
            scheme = Scheme(scheme_id)
        except ValueError:
            raise ConfigError(f"unknown scheme id: {scheme_id}") from None
        return cls(
            scheme=scheme,
            transform=transform_from_wire(wire_id, params, n_b),
            fingerprint=FingerprintConfig(_FP_ALGO_NAMES[algo_id], h_b),
            preprocess=_PREPROCESS_NAMES[prep_id],
            sample_width=width,
        )


@dataclass(frozen=True)
class PadDescriptor:
    """Original stream length; the final chunk is zero-padded up to n_B."""

    length: int

    def chunk_count(self, n_B: int) -> int:
        return (self.length + n_B - 1) // n_B


def split_into_chunks(data: bytes, n_B: int) -> tuple[np.ndarray, PadDescriptor]:
    if not data:
        raise ValueError("cannot chunk an empty stream")
    if n_B < 1:
        raise ConfigError("chunk length must be positive")
    arr = np.frombuffer(data, dtype=np.uint8)
    count = (arr.size + n_B - 1) // n_B
    padded = np.zeros(count * n_B, dtype=np.uint8)
    padded[: arr.size] = arr
    return padded.reshape(count, n_B), PadDescriptor(arr.size)


def reassemble(chunks, pad: PadDescriptor) -> bytes:
    if isinstance(chunks, np.ndarray):
        blob = chunks.tobytes()
    else:
        blob = b"".join(chunks)
    if len(blob) < pad.length:
        raise ValueError("chunk stream shorter than the recorded length")
    return blob[: pad.length]


def store_capacity(memory_mb: int, h_b: int) -> int:
    """Records representable in memory_mb MB of fingerprint-store memory."""
    if memory_mb <= 0:
        raise ValueError("memory budget must be positive")
    if h_b < 1:
        raise ValueError("fingerprint length must be positive")
    return memory_mb * (1 << 20) // (h_b + RECORD_REF_BYTES)


class FingerprintStore:
    """fp -> payload map with insert-if-absent semantics.

    A fingerprint, once bound, never changes.  Concurrent sessions may also
    *reserve* a missing fingerprint while its payload is in flight so a
    payload crosses the network at most once (other sessions block on
    ``wait_for`` instead of requesting it again).
    """

    def __init__(self, key_len: int):
        if key_len < 1:
            raise ConfigError("fingerprint length must be positive")
        self.key_len = key_len
        self._map: dict[bytes, object] = {}
        self._reserved: dict[bytes, object] = {}
        self._lock = threading.Lock()
        self._changed = threading.Condition(self._lock)

    def __len__(self) -> int:
        return len(self._map)

    def __contains__(self, fp: bytes) -> bool:
        with self._lock:
            return fp in self._map

    def lookup(self, fp: bytes):
        with self._lock:
            return self._map.get(fp)

    def insert_if_absent(self, fp: bytes, payload) -> bool:
        """Bind fp to payload unless already bound; True when this call won."""
        if len(fp) != self.key_len:
            raise ConfigError(f"fingerprint is {len(fp)} bytes, expected {self.key_len}")
        with self._changed:
            if fp in self._map:
                return False
            self._map[fp] = payload
            self._reserved.pop(fp, None)
            self._changed.notify_all()
            return True

    def replace(self, fp: bytes, payload) -> None:
        """Swap the stored object for an equivalent representation.

        Used to materialize lazily-derived payloads; never changes what the
        fingerprint means.
        """
        with self._lock:
            self._map[fp] = payload

    def lookup_or_reserve(self, fp: bytes, owner) -> tuple[str, object]:
        """Return ("hit", payload), ("reserved", None) or ("wait", None).

        "reserved" means the caller is now responsible for supplying the
        payload; "wait" means another session already is.
        """
        with self._lock:
            if fp in self._map:
                return "hit", self._map[fp]
            holder = self._reserved.get(fp)
            if holder is None or holder == owner:
                self._reserved[fp] = owner
                return "reserved", None
            return "wait", None

    def release(self, fp: bytes, owner) -> None:
        with self._changed:
            if self._reserved.get(fp) == owner:
                del self._reserved[fp]
                self._changed.notify_all()

    def release_all(self, owner) -> None:
        with self._changed:
            stale = [fp for fp, who in self._reserved.items() if who == owner]
            for fp in stale:
                del self._reserved[fp]
            if stale:
                self._changed.notify_all()

    def wait_for(self, fp: bytes, timeout: float | None = None):
        """Block until fp is bound or its reservation is dropped."""
        with self._changed:
            while True:
                if fp in self._map:
                    return self._map[fp]
                if fp not in self._reserved:
                    return None
                if not self._changed.wait(timeout):
                    return None

    def items(self) -> list[tuple[bytes, object]]:
        with self._lock:
            return list(self._map.items())

    def save(self, path: str) -> None:
        records = self.items()
        with open(path, "wb") as fh:
            fh.write(SNAPSHOT_MAGIC)
            fh.write(bytes([SNAPSHOT_VERSION, self.key_len]))
            fh.write(struct.pack(">Q", len(records)))
            for fp, payload in records:
                if not isinstance(payload, (bytes, bytearray)):
                    raise ValueError("store holds unmaterialized payloads")
                fh.write(fp)
                fh.write(struct.pack(">I", len(payload)))
                fh.write(payload)

    @classmethod
    def load(cls, path: str) -> "FingerprintStore":
        with open(path, "rb") as fh:
            head = fh.read(6)
            if len(head) != 6 or head[:4] != SNAPSHOT_MAGIC:
                raise ValueError(f"{path}: not a store snapshot")
            if head[4] != SNAPSHOT_VERSION:
                raise ValueError(f"{path}: unsupported snapshot version {head[4]}")
            key_len = head[5]
            store = cls(key_len)
            (count,) = struct.unpack(">Q", fh.read(8))
            for _ in range(count):
                fp = fh.read(key_len)
                (plen,) = struct.unpack(">I", fh.read(4))
                payload = fh.read(plen)
                if len(fp) != key_len or len(payload) != plen:
                    raise ValueError(f"{path}: truncated snapshot")
                store.insert_if_absent(bytes(fp), bytes(payload))
        return store


@dataclass
class EncodedToken:
    primary_fp: bytes
    secondary_fp: bytes | None = None
    devblob: bytes = b""
    payload: bytes | None = None
    payload_kind: str | None = None  # "basis" or "chunk"


@dataclass
class RunStats:
    """Observed counters for one encoded stream (one link, one direction)."""

    scheme: Scheme
    transform: str
    chunk_bytes: int
    basis_bytes: int
    fp_bytes: int
    dev_fixed: int = 0
    chunks: int = 0
    distinct_chunks: int = 0  # tracked for DD and the dual layout
    distinct_bases: int = 0
    payload_count: int = 0
    payload_bytes: int = 0
    identifier_bytes: int = 0
    dev_list: list[int] = field(default_factory=list)
    q_dev_list: list[int] = field(default_factory=list)

    @property
    def deviation_bytes(self) -> int:
        return sum(self.dev_list) + sum(self.q_dev_list)

    @property
    def wire_payload_bytes(self) -> int:
        """Model-aligned bytes: identifiers + deviations + payloads."""
        return self.identifier_bytes + self.deviation_bytes + self.payload_bytes

    @property
    def matches(self) -> int:
        return self.chunks - self.payload_count


class _LazyBasis:
    """Placeholder for a basis that will be derived from a received chunk.

    Carrying the chunk bytes keeps the placeholder self-contained, so stores
    shared between sessions can be materialized by whichever decoder gets
    there first.
    """

    __slots__ = ("chunk",)

    def __init__(self, chunk: bytes):
        self.chunk = chunk


class _LazyChunk:
    """Placeholder for a chunk announced via (basis fp, deviation).

    Reconstruction is deferred and batched; later references to the chunk
    fingerprint re-derive it from these fields.
    """

    __slots__ = ("fp_b", "tag", "dev", "extra")

    def __init__(self, fp_b: bytes, tag: int, dev: bytes, extra: bytes):
        self.fp_b = fp_b
        self.tag = tag
        self.dev = dev
        self.extra = extra


class StreamEncoder:
    """Per-scheme token emitter with a local view of the receiver's store.

    ``known`` holds payload fingerprints the receiver is assumed to have
    (basis fps for the GD layouts, chunk fps for DD); the dual layout keeps
    a second set for chunk fingerprints.  The sets only ever grow.
    """

    def __init__(self, cfg: ChunkingConfig, known: set | None = None,
                 known_chunks: set | None = None):
        self.cfg = cfg
        self.known = known if known is not None else set()
        self.known_chunks = known_chunks if known_chunks is not None else set()
        self.stats = RunStats(
            scheme=cfg.scheme,
            transform=cfg.transform.describe(),
            chunk_bytes=cfg.n_B,
            basis_bytes=cfg.k_B,
            fp_bytes=cfg.fingerprint.length,
            dev_fixed=cfg.transform.fixed_dev_bytes,
        )
        self._seen_chunks: set[bytes] = set()
        self._seen_bases: set[bytes] = set()

    def encode_rows(self, rows: np.ndarray) -> list[EncodedToken]:
        cfg = self.cfg
        scheme = cfg.scheme
        st = self.stats
        fp_cfg = cfg.fingerprint

        if scheme is Scheme.DD:
            tokens = []
            for i in range(rows.shape[0]):
                chunk = rows[i].tobytes()
                fp = fingerprint(chunk, fp_cfg)
                st.chunks += 1
                st.identifier_bytes += len(fp)
                if fp not in self._seen_chunks:
                    self._seen_chunks.add(fp)
                    st.distinct_chunks += 1
                    st.distinct_bases += 1
                token = EncodedToken(primary_fp=fp)
                if fp not in self.known:
                    self.known.add(fp)
                    token.payload = chunk
                    token.payload_kind = "chunk"
                    st.payload_count += 1
                    st.payload_bytes += len(chunk)
                tokens.append(token)
            return tokens

        processed, tags, extras = preprocess.encode_batch(
            rows, cfg.preprocess, cfg.sample_width
        )
        bases, devs = cfg.transform.transform_batch(processed)
        p_len = cfg.primary_fp_len
        s_len = cfg.secondary_fp_len

        tokens = []
        for i in range(rows.shape[0]):
            basis = bases[i].tobytes()
            devblob = cfg.build_devblob(int(tags[i]), devs[i], extras[i])
            st.chunks += 1
            if basis not in self._seen_bases:
                self._seen_bases.add(basis)
                st.distinct_bases += 1

            if scheme is Scheme.GD_DUAL:
                chunk = rows[i].tobytes()
                fp_c = fingerprint(chunk, fp_cfg)[:p_len]
                fp_b = fingerprint(basis, fp_cfg)[:s_len]
                st.identifier_bytes += p_len + s_len
                if fp_c not in self._seen_chunks:
                    self._seen_chunks.add(fp_c)
                    st.distinct_chunks += 1
                token = EncodedToken(primary_fp=fp_c, secondary_fp=fp_b)
                if fp_c in self.known_chunks:
                    pass
                elif fp_b in self.known:
                    token.devblob = devblob
                    st.q_dev_list.append(len(devblob))
                    self.known_chunks.add(fp_c)
                else:
                    token.payload = chunk
                    token.payload_kind = "chunk"
                    st.payload_count += 1
                    st.payload_bytes += len(chunk)
                    self.known.add(fp_b)
                    self.known_chunks.add(fp_c)
                tokens.append(token)
                continue

            fp_b = fingerprint(basis, fp_cfg)[:p_len]
            st.identifier_bytes += p_len
            st.dev_list.append(len(devblob))
            token = EncodedToken(primary_fp=fp_b, devblob=devblob)
            if fp_b not in self.known:
                self.known.add(fp_b)
                token.payload = basis
                token.payload_kind = "basis"
                st.payload_count += 1
                st.payload_bytes += len(basis)
            tokens.append(token)
        return tokens

    def encode_stream(self, data: bytes) -> tuple[list[EncodedToken], PadDescriptor]:
        rows, pad = split_into_chunks(data, self.cfg.n_B)
        return self.encode_rows(rows), pad

    def encode_chunk(self, chunk: bytes) -> EncodedToken:
        if len(chunk) != self.cfg.n_B:
            raise ConfigError(
                f"chunk is {len(chunk)} bytes, expected {self.cfg.n_B}"
            )
        return self.encode_rows(
            np.frombuffer(chunk, dtype=np.uint8).reshape(1, -1)
        )[0]


class StreamDecoder:
    """Token consumer; mirrors the encoder's store bookkeeping.

    ``store`` maps payload fingerprints to payload bytes (bases for the GD
    layouts, chunks for DD); the dual layout adds ``chunk_store``.  Chunk
    reconstruction is deferred and batched: bases received as raw chunks are
    materialized in one pass at the end of ``decode``.
    """

    def __init__(self, cfg: ChunkingConfig, store: FingerprintStore | None = None,
                 chunk_store: FingerprintStore | None = None, validate: bool = True):
        self.cfg = cfg
        self.store = store if store is not None else FingerprintStore(cfg.primary_fp_len if cfg.scheme is not Scheme.GD_DUAL else cfg.secondary_fp_len)
        self.chunk_store = chunk_store
        if cfg.scheme is Scheme.GD_DUAL and self.chunk_store is None:
            self.chunk_store = FingerprintStore(cfg.primary_fp_len)
        self.validate = validate
        # plan entries: ("chunk", bytes) | ("gd", fp, tag, dev, extra, fp_c)
        self._plan: list[tuple] = []

    def _check(self, claim: bytes, data: bytes) -> None:
        if self.validate and fingerprint(data, self.cfg.fingerprint)[: len(claim)] != claim:
            raise ValidationError("payload does not match its fingerprint")

    def feed_token(self, token: EncodedToken) -> None:
        cfg = self.cfg
        scheme = cfg.scheme

        if scheme is Scheme.DD:
            if token.payload is not None:
                self._check(token.primary_fp, token.payload)
                self.store.insert_if_absent(token.primary_fp, token.payload)
                self._plan.append(("chunk", token.payload))
                return
            chunk = self.store.lookup(token.primary_fp)
            if chunk is None:
                raise MissingBasisError(token.primary_fp.hex())
            self._plan.append(("chunk", chunk))
            return

        if scheme is Scheme.GD_DUAL:
            fp_c, fp_b = token.primary_fp, token.secondary_fp
            if token.payload is not None:
                self._check(fp_c, token.payload)
                self.chunk_store.insert_if_absent(fp_c, token.payload)
                self.store.insert_if_absent(fp_b, _LazyBasis(token.payload))
                self._plan.append(("chunk", token.payload))
                return
            if token.devblob:
                if self.store.lookup(fp_b) is None:
                    raise MissingBasisError(fp_b.hex())
                tag, dev, extra, pos = cfg.read_devblob(token.devblob, 0)
                if pos != len(token.devblob):
                    raise CorruptDeviationError("trailing bytes after deviation")
                self.chunk_store.insert_if_absent(
                    fp_c, _LazyChunk(fp_b, tag, dev, extra)
                )
                self._plan.append(("gd", fp_b, tag, dev, extra, fp_c))
                return
            known = self.chunk_store.lookup(fp_c)
            if known is None:
                raise MissingBasisError(fp_c.hex())
            if isinstance(known, _LazyChunk):
                self._plan.append(
                    ("gd", known.fp_b, known.tag, known.dev, known.extra, fp_c)
                )
            else:
                self._plan.append(("chunk", known))
            return

        if token.payload is not None:
            self._check(token.primary_fp, token.payload)
            self.store.insert_if_absent(token.primary_fp, token.payload)
        basis = self.store.lookup(token.primary_fp)
        if basis is None:
            raise MissingBasisError(token.primary_fp.hex())
        tag, dev, extra, pos = cfg.read_devblob(token.devblob, 0)
        if pos != len(token.devblob):
            raise CorruptDeviationError("trailing bytes after deviation")
        self._plan.append(("gd", token.primary_fp, tag, dev, extra, None))

    def _materialize_lazy(self) -> None:
        if self.cfg.scheme is not Scheme.GD_DUAL:
            return
        lazies = [
            (fp, payload.chunk)
            for fp, payload in self.store.items()
            if isinstance(payload, _LazyBasis)
        ]
        if not lazies:
            return
        cfg = self.cfg
        rows = np.frombuffer(
            b"".join(chunk for _, chunk in lazies), dtype=np.uint8
        ).reshape(-1, cfg.n_B)
        processed, _, _ = preprocess.encode_batch(rows, cfg.preprocess, cfg.sample_width)
        bases, _ = cfg.transform.transform_batch(processed)
        for i, (fp, _) in enumerate(lazies):
            basis = bases[i].tobytes()
            if self.validate and fingerprint(basis, cfg.fingerprint)[: len(fp)] != fp:
                raise ValidationError(
                    "basis fingerprint does not match the delivered chunk"
                )
            self.store.replace(fp, basis)

    def decode(self, pad: PadDescriptor) -> bytes:
        """Resolve all fed tokens into the original byte stream."""
        cfg = self.cfg
        self._materialize_lazy()

        gd_rows = [i for i, entry in enumerate(self._plan) if entry[0] == "gd"]
        restored: dict[int, bytes] = {}
        if gd_rows:
            bases = []
            devs = []
            tags = []
            extras = []
            for i in gd_rows:
                _, fp_or_basis, tag, dev, extra, _fp_c = self._plan[i]
                basis = self.store.lookup(fp_or_basis)
                if basis is None or isinstance(basis, _LazyBasis):
                    raise MissingBasisError(fp_or_basis.hex())
                bases.append(basis)
                devs.append(dev)
                tags.append(tag)
                extras.append(extra)
            rows = np.frombuffer(b"".join(bases), dtype=np.uint8).reshape(
                -1, cfg.k_B
            )
            processed = cfg.transform.reconstruct_batch(rows, devs)
            chunks = preprocess.decode_batch(processed, tags, extras, cfg.sample_width)
            for slot, i in enumerate(gd_rows):
                chunk = chunks[slot].tobytes()
                fp_c = self._plan[i][5]
                if fp_c is not None:
                    self._check(fp_c, chunk)
                    if not self.chunk_store.insert_if_absent(fp_c, chunk):
                        if isinstance(self.chunk_store.lookup(fp_c), _LazyChunk):
                            self.chunk_store.replace(fp_c, chunk)
                restored[i] = chunk

        out = []
        for i, entry in enumerate(self._plan):
            out.append(entry[1] if entry[0] == "chunk" else restored[i])
        self._plan.clear()
        return reassemble(out, pad)

    def decode_tokens(self, tokens, pad: PadDescriptor) -> bytes:
        for token in tokens:
            self.feed_token(token)
        return self.decode(pad)


def serialize_tokens(tokens) -> bytes:
    """Concatenate tokens into the self-delimiting offline stream form."""
    out = bytearray()
    for t in tokens:
        out += t.primary_fp
        if t.secondary_fp is not None:
            out += t.secondary_fp
        out += t.devblob
        if t.payload is not None:
            out += t.payload
    return bytes(out)


def parse_token_stream(blob: bytes, cfg: ChunkingConfig, pad: PadDescriptor,
                       store: FingerprintStore | None = None,
                       chunk_store: FingerprintStore | None = None,
                       validate: bool = True) -> bytes:
    """Decode a serialized token stream against (possibly fresh) stores.

    Token boundaries are recovered from the decoder's own store state: a
    payload follows exactly when the referenced fingerprint is unknown,
    mirroring the encoder's decision.
    """
    cfg_scheme = cfg.scheme
    decoder = StreamDecoder(cfg, store=store, chunk_store=chunk_store,
                            validate=validate)
    view = memoryview(blob)
    pos = 0
    p_len = cfg.primary_fp_len
    s_len = cfg.secondary_fp_len

    def take(nbytes: int) -> bytes:
        nonlocal pos
        if pos + nbytes > len(view):
            raise CorruptDeviationError("token stream truncated")
        out = bytes(view[pos : pos + nbytes])
        pos += nbytes
        return out

    for _ in range(pad.chunk_count(cfg.n_B)):
        token = EncodedToken(primary_fp=take(p_len))
        if cfg_scheme is Scheme.DD:
            if token.primary_fp not in decoder.store:
                token.payload = take(cfg.n_B)
                token.payload_kind = "chunk"
        elif cfg_scheme is Scheme.GD_DUAL:
            token.secondary_fp = take(s_len)
            if token.primary_fp in decoder.chunk_store:
                pass
            elif token.secondary_fp in decoder.store:
                _, _, _, end = cfg.read_devblob(view, pos)
                token.devblob = take(end - pos)
            else:
                token.payload = take(cfg.n_B)
                token.payload_kind = "chunk"
        else:
            _, _, _, end = cfg.read_devblob(view, pos)
            token.devblob = take(end - pos)
            if token.primary_fp not in decoder.store:
                token.payload = take(cfg.k_B)
                token.payload_kind = "basis"
        decoder.feed_token(token)
    if pos != len(view):
        raise CorruptDeviationError("trailing bytes after the token stream")
    return decoder.decode(pad)
