"""Wire protocol: message framing and the source/sink/relay state machines.

Frames are ``[type u8][status u8][seq u32][length u32][payload]`` with
big-endian integers; ``status`` is meaningful only on responses.  Every
non-response message elicits exactly one response carrying the same
sequence number.  A session opens with a CONFIG frame (node class plus the
shared chunking configuration) and closes with an END frame carrying the
original stream length.

Node classes restrict which message types a node may emit or accept:

==============  =========================================
basic           DATA
deduplication   DATA (processed locally), DEDUP, DEDUP_DATA
gen. dedup      DATA (processed locally), GEN_DEDUP, GEN_DEDUP_DATA
==============  =========================================

Sources always announce a chunk by its identifiers first and ship the
payload only when the sink answers NEW_FINGERPRINT (or, for the dual
layout, DEVIATION_REQUEST / CHUNK_REQUEST), so a payload crosses a link at
most once per store lifetime.  The state machines are synchronous step
functions, which keeps sessions deterministic and directly simulatable.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import preprocess
from .engine import (
    ChunkingConfig,
    EncodedToken,
    FingerprintStore,
    PadDescriptor,
    RunStats,
    StreamDecoder,
    _LazyBasis,
    _LazyChunk,
    split_into_chunks,
)
from .errors import ConfigError, FrameError, ProtocolError, ValidationError
from .fingerprint import Scheme, fingerprint

MSG_RESPONSE = 0
MSG_DATA = 1
MSG_DEDUP = 2
MSG_DEDUP_DATA = 3
MSG_GEN_DEDUP = 4
MSG_GEN_DEDUP_DATA = 5
MSG_CONFIG = 0xC0
MSG_END = 0xC1

_MSG_NAMES = {
    MSG_RESPONSE: "response",
    MSG_DATA: "data",
    MSG_DEDUP: "dedup",
    MSG_DEDUP_DATA: "dedup-data",
    MSG_GEN_DEDUP: "gen-dedup",
    MSG_GEN_DEDUP_DATA: "gen-dedup-data",
    MSG_CONFIG: "config",
    MSG_END: "end",
}

STATUS_ACK = 0
STATUS_NEW_FINGERPRINT = 1
STATUS_DEVIATION_REQUEST = 2
STATUS_CHUNK_REQUEST = 3
STATUS_ERROR = 4

_STATUS_NAMES = {
    STATUS_ACK: "ack",
    STATUS_NEW_FINGERPRINT: "new-fingerprint",
    STATUS_DEVIATION_REQUEST: "deviation-request",
    STATUS_CHUNK_REQUEST: "chunk-request",
    STATUS_ERROR: "error",
}

CLASS_BASIC = 0
CLASS_DEDUP = 1
CLASS_GD = 2

CLASS_NAMES = {CLASS_BASIC: "basic", CLASS_DEDUP: "dedup", CLASS_GD: "gd"}
CLASS_IDS = {v: k for k, v in CLASS_NAMES.items()}

# Message types each class may receive (responses/config/end are universal).
RECEIVABLE = {
    CLASS_BASIC: {MSG_DATA},
    CLASS_DEDUP: {MSG_DATA, MSG_DEDUP, MSG_DEDUP_DATA},
    CLASS_GD: {MSG_DATA, MSG_GEN_DEDUP, MSG_GEN_DEDUP_DATA},
}

# Dual-layout data-message subtypes.
DUAL_DEVIATION = 0
DUAL_CHUNK = 1

FRAME_HEADER = struct.Struct(">BBII")
FRAME_HEADER_BYTES = FRAME_HEADER.size
MAX_PAYLOAD = 1 << 26

_KNOWN_TYPES = set(_MSG_NAMES)


@dataclass
class Message:
    type: int
    status: int = 0
    seq: int = 0
    payload: bytes = b""

    @property
    def type_name(self) -> str:
        return _MSG_NAMES.get(self.type, f"type-{self.type}")

    @property
    def status_name(self) -> str:
        return _STATUS_NAMES.get(self.status, f"status-{self.status}")


def encode_message(msg: Message) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise FrameError("payload exceeds the frame size limit")
    return FRAME_HEADER.pack(msg.type, msg.status, msg.seq, len(msg.payload)) + msg.payload


def decode_message(buf: bytes) -> Message:
    """Exact inverse of encode_message; rejects any malformed frame."""
    if len(buf) < FRAME_HEADER_BYTES:
        raise FrameError("frame shorter than its header")
    mtype, status, seq, length = FRAME_HEADER.unpack_from(buf)
    if mtype not in _KNOWN_TYPES:
        raise FrameError(f"unknown frame type {mtype}")
    if length > MAX_PAYLOAD:
        raise FrameError("declared payload exceeds the frame size limit")
    if len(buf) != FRAME_HEADER_BYTES + length:
        raise FrameError("frame length does not match its header")
    return Message(mtype, status, seq, buf[FRAME_HEADER_BYTES:])


class FrameReader:
    """Reads whole frames from a blocking file-like object."""

    def __init__(self, fh):
        self._fh = fh

    def read(self) -> Message | None:
        head = self._read_exact(FRAME_HEADER_BYTES, eof_ok=True)
        if head is None:
            return None
        mtype, status, seq, length = FRAME_HEADER.unpack(head)
        if mtype not in _KNOWN_TYPES:
            raise FrameError(f"unknown frame type {mtype}")
        if length > MAX_PAYLOAD:
            raise FrameError("declared payload exceeds the frame size limit")
        payload = self._read_exact(length) if length else b""
        return Message(mtype, status, seq, payload)

    def _read_exact(self, count: int, eof_ok: bool = False) -> bytes | None:
        parts = []
        remaining = count
        while remaining:
            blob = self._fh.read(remaining)
            if not blob:
                if eof_ok and remaining == count:
                    return None
                raise FrameError("connection closed mid-frame")
            parts.append(blob)
            remaining -= len(blob)
        return b"".join(parts)


def config_message(node_class: int, cfg: ChunkingConfig | None) -> Message:
    payload = bytes([node_class])
    if cfg is not None:
        payload += cfg.wire_bytes()
    return Message(MSG_CONFIG, seq=0, payload=payload)


def parse_config_payload(payload: bytes) -> tuple[int, ChunkingConfig | None]:
    if not payload:
        raise FrameError("empty configuration frame")
    node_class = payload[0]
    if node_class not in CLASS_NAMES:
        raise FrameError(f"unknown node class {node_class}")
    if len(payload) == 1:
        return node_class, None
    return node_class, ChunkingConfig.from_wire_bytes(payload[1:])


def end_message(seq: int, total_length: int) -> Message:
    return Message(MSG_END, seq=seq, payload=struct.pack(">Q", total_length))


@dataclass
class WireStats:
    """Byte accounting for one direction of one link.

    ``identifier/deviation/payload`` follow the transmission-cost model;
    ``duplicate`` holds identifier and deviation bytes re-sent inside
    payload-carrying messages, and ``framing`` the fixed header plus
    session-management frames.  wire = model + duplicate + framing.
    """

    frames: int = 0
    payload_frames: int = 0
    identifier_bytes: int = 0
    deviation_bytes: int = 0
    payload_bytes: int = 0
    duplicate_bytes: int = 0
    framing_bytes: int = 0

    @property
    def model_bytes(self) -> int:
        return self.identifier_bytes + self.deviation_bytes + self.payload_bytes

    @property
    def wire_bytes(self) -> int:
        return self.model_bytes + self.duplicate_bytes + self.framing_bytes

    def count_frame(self, msg: Message) -> None:
        self.frames += 1
        self.framing_bytes += FRAME_HEADER_BYTES
        if msg.type in (MSG_RESPONSE, MSG_CONFIG, MSG_END):
            self.framing_bytes += len(msg.payload)


@dataclass
class Trace:
    """Chronological (direction, message, status) log of one endpoint."""

    events: list[tuple[str, str, str]] = field(default_factory=list)

    def record(self, direction: str, msg: Message) -> None:
        status = msg.status_name if msg.type == MSG_RESPONSE else ""
        self.events.append((direction, msg.type_name, status))

    def data_plane(self) -> list[tuple[str, str, str]]:
        return [e for e in self.events if e[1] not in ("config", "end")]


def _response(seq: int, status: int) -> Message:
    return Message(MSG_RESPONSE, status=status, seq=seq)


class SinkSession:
    """Handles one inbound session; owns ordered reconstruction state.

    ``handle`` is a pure step: one inbound message in, one response out,
    plus store effects.  Reconstruction of the byte stream is deferred to
    ``finalize`` (triggered by the END frame) and batched.
    """

    def __init__(
        self,
        node_class: int,
        cfg: ChunkingConfig | None,
        store: FingerprintStore | None = None,
        chunk_store: FingerprintStore | None = None,
        session_id: object = None,
        trace: Trace | None = None,
        stats: WireStats | None = None,
        collect_output: bool = True,
    ):
        self.node_class = node_class
        self.cfg = cfg
        self.collect_output = collect_output
        self.store = store
        self.chunk_store = chunk_store
        if cfg is not None:
            if self.store is None:
                key_len = (
                    cfg.secondary_fp_len
                    if cfg.scheme is Scheme.GD_DUAL
                    else cfg.primary_fp_len
                )
                self.store = FingerprintStore(key_len)
            if cfg.scheme is Scheme.GD_DUAL and self.chunk_store is None:
                self.chunk_store = FingerprintStore(cfg.primary_fp_len)
        self.session_id = session_id if session_id is not None else id(self)
        self.trace = trace
        self.stats = stats or WireStats()
        self.run_stats = (
            RunStats(
                scheme=cfg.scheme,
                transform=cfg.transform.describe(),
                chunk_bytes=cfg.n_B,
                basis_bytes=cfg.k_B,
                fp_bytes=cfg.fingerprint.length,
                dev_fixed=cfg.transform.fixed_dev_bytes,
            )
            if cfg is not None
            else None
        )
        self.output = bytearray()
        self.peer_class: int | None = None
        self.peer_cfg: ChunkingConfig | None = None
        self.configured = False
        self.finished = False
        self.validation_failures = 0
        self.hits = 0
        self.misses = 0
        # ordered output positions: ("raw", bytes) | ("token", EncodedToken)
        self._positions: list[tuple] = []
        # dual continuations keyed by (fp_c, fp_b) -> position indexes
        self._awaiting: dict[tuple[bytes, bytes], deque] = {}
        self._declared_length: int | None = None

    # -- helpers ---------------------------------------------------------

    def _fail_validation(self, seq: int) -> Message:
        self.validation_failures += 1
        if self.validation_failures >= 2:
            raise ProtocolError("peer failed validation twice; disconnecting")
        return _response(seq, STATUS_ERROR)

    def _fp(self, data: bytes, length: int) -> bytes:
        return fingerprint(data, self.cfg.fingerprint)[:length]

    def _reserve(self, store: FingerprintStore, fp: bytes) -> str:
        while True:
            state, _ = store.lookup_or_reserve(fp, self.session_id)
            if state != "wait":
                return state
            if store.wait_for(fp, timeout=30.0) is None:
                continue
            return "hit"

    # -- message handling --------------------------------------------------

    def handle(self, msg: Message) -> list[Message]:
        if self.trace is not None:
            self.trace.record("recv", msg)
        self.stats.count_frame(msg)
        try:
            response = self._dispatch(msg)
        except (ValidationError, ConfigError, FrameError):
            response = self._fail_validation(msg.seq)
        responses = [response] if response is not None else []
        for resp in responses:
            if self.trace is not None:
                self.trace.record("send", resp)
        return responses

    def _dispatch(self, msg: Message) -> Message | None:
        if msg.type == MSG_CONFIG:
            return self._on_config(msg)
        if msg.type == MSG_RESPONSE:
            raise ProtocolError("sink received an unsolicited response")
        if not self.configured:
            raise ProtocolError("session not configured")
        if msg.type == MSG_END:
            return self._on_end(msg)
        if msg.type not in RECEIVABLE[self.node_class]:
            return _response(msg.seq, STATUS_ERROR)
        if msg.type == MSG_DATA:
            return self._on_data(msg)
        if msg.type == MSG_DEDUP:
            return self._on_dedup(msg)
        if msg.type == MSG_DEDUP_DATA:
            return self._on_dedup_data(msg)
        if msg.type == MSG_GEN_DEDUP:
            return self._on_gen_dedup(msg)
        if msg.type == MSG_GEN_DEDUP_DATA:
            return self._on_gen_dedup_data(msg)
        return _response(msg.seq, STATUS_ERROR)

    def _on_config(self, msg: Message) -> Message:
        try:
            peer_class, peer_cfg = parse_config_payload(msg.payload)
        except (FrameError, ConfigError):
            return _response(msg.seq, STATUS_ERROR)
        if peer_class != CLASS_BASIC:
            # encoded traffic requires full configuration agreement
            if self.cfg is None or peer_cfg is None or peer_cfg.wire_bytes() != self.cfg.wire_bytes():
                return _response(msg.seq, STATUS_ERROR)
            scheme_class = CLASS_DEDUP if peer_cfg.scheme is Scheme.DD else CLASS_GD
            if peer_class != scheme_class or peer_class != self.node_class:
                return _response(msg.seq, STATUS_ERROR)
        self.peer_class = peer_class
        self.peer_cfg = peer_cfg
        self.configured = True
        return _response(msg.seq, STATUS_ACK)

    def _on_data(self, msg: Message) -> Message:
        if self.collect_output:
            self._positions.append(("raw", msg.payload))
        self.stats.payload_bytes += len(msg.payload)
        self.stats.payload_frames += 1
        if self.cfg is not None and self.node_class in (CLASS_DEDUP, CLASS_GD):
            self._ingest_raw(msg.payload)
        return _response(msg.seq, STATUS_ACK)

    def _ingest_raw(self, payload: bytes) -> None:
        """Deduplicate a raw payload into the local store (packet-local)."""
        cfg = self.cfg
        if not payload:
            return
        rows, _ = split_into_chunks(payload, cfg.n_B)
        if cfg.scheme is Scheme.DD:
            for i in range(rows.shape[0]):
                chunk = rows[i].tobytes()
                self.store.insert_if_absent(self._fp(chunk, cfg.primary_fp_len), chunk)
            return
        processed, _, _ = preprocess.encode_batch(rows, cfg.preprocess, cfg.sample_width)
        bases, _ = cfg.transform.transform_batch(processed)
        key_len = (
            cfg.secondary_fp_len if cfg.scheme is Scheme.GD_DUAL else cfg.primary_fp_len
        )
        for i in range(rows.shape[0]):
            basis = bases[i].tobytes()
            self.store.insert_if_absent(self._fp(basis, key_len), basis)
            if cfg.scheme is Scheme.GD_DUAL:
                chunk = rows[i].tobytes()
                self.chunk_store.insert_if_absent(
                    self._fp(chunk, cfg.primary_fp_len), chunk
                )

    def _note_chunk(self) -> None:
        self.run_stats.chunks += 1

    def _on_dedup(self, msg: Message) -> Message:
        cfg = self.cfg
        if len(msg.payload) != cfg.primary_fp_len:
            raise FrameError("bad dedup payload size")
        fp = msg.payload
        self._note_chunk()
        self.stats.identifier_bytes += len(fp)
        self.run_stats.identifier_bytes += len(fp)
        state = self._reserve(self.store, fp)
        self._positions.append(("token", EncodedToken(primary_fp=fp)))
        if state == "hit":
            self.hits += 1
            return _response(msg.seq, STATUS_ACK)
        self.misses += 1
        return _response(msg.seq, STATUS_NEW_FINGERPRINT)

    def _on_dedup_data(self, msg: Message) -> Message:
        cfg = self.cfg
        h = cfg.primary_fp_len
        if len(msg.payload) != h + cfg.n_B:
            raise FrameError("bad dedup-data payload size")
        fp, chunk = msg.payload[:h], msg.payload[h:]
        if self._fp(chunk, h) != fp:
            self.store.release(fp, self.session_id)
            return self._fail_validation(msg.seq)
        self.store.insert_if_absent(fp, chunk)
        self.stats.payload_bytes += len(chunk)
        self.stats.payload_frames += 1
        self.stats.duplicate_bytes += h
        self.run_stats.payload_count += 1
        self.run_stats.payload_bytes += len(chunk)
        return _response(msg.seq, STATUS_ACK)

    def _read_gd_identifiers(self, payload: bytes):
        cfg = self.cfg
        p = cfg.primary_fp_len
        if cfg.scheme is Scheme.GD_DUAL:
            s = cfg.secondary_fp_len
            if len(payload) < p + s:
                raise FrameError("truncated identifiers")
            return payload[:p], payload[p : p + s], p + s
        if len(payload) < p:
            raise FrameError("truncated identifiers")
        return payload[:p], None, p

    def _on_gen_dedup(self, msg: Message) -> Message:
        cfg = self.cfg
        fp_1, fp_2, pos = self._read_gd_identifiers(msg.payload)
        self._note_chunk()

        if cfg.scheme is not Scheme.GD_DUAL:
            tag, dev, extra, end = cfg.read_devblob(msg.payload, pos)
            if end != len(msg.payload):
                raise FrameError("trailing bytes after deviation")
            devblob = msg.payload[pos:end]
            self.stats.identifier_bytes += len(fp_1)
            self.stats.deviation_bytes += len(devblob)
            self.run_stats.identifier_bytes += len(fp_1)
            self.run_stats.dev_list.append(len(devblob))
            state = self._reserve(self.store, fp_1)
            self._positions.append(
                ("token", EncodedToken(primary_fp=fp_1, devblob=devblob))
            )
            if state == "hit":
                self.hits += 1
                return _response(msg.seq, STATUS_ACK)
            self.misses += 1
            return _response(msg.seq, STATUS_NEW_FINGERPRINT)

        if pos != len(msg.payload):
            raise FrameError("trailing bytes after dual identifiers")
        fp_c, fp_b = fp_1, fp_2
        self.stats.identifier_bytes += len(fp_c) + len(fp_b)
        self.run_stats.identifier_bytes += len(fp_c) + len(fp_b)
        token = EncodedToken(primary_fp=fp_c, secondary_fp=fp_b)
        state = self._reserve(self.chunk_store, fp_c)
        if state == "hit":
            self.hits += 1
            self._positions.append(("token", token))
            return _response(msg.seq, STATUS_ACK)
        self.misses += 1
        index = len(self._positions)
        self._positions.append(("token", token))
        self._awaiting.setdefault((fp_c, fp_b), deque()).append(index)
        if fp_b in self.store:
            return _response(msg.seq, STATUS_DEVIATION_REQUEST)
        self.store.lookup_or_reserve(fp_b, self.session_id)
        return _response(msg.seq, STATUS_CHUNK_REQUEST)

    def _on_gen_dedup_data(self, msg: Message) -> Message:
        cfg = self.cfg
        fp_1, fp_2, pos = self._read_gd_identifiers(msg.payload)

        if cfg.scheme is not Scheme.GD_DUAL:
            tag, dev, extra, end = cfg.read_devblob(msg.payload, pos)
            basis = msg.payload[end:]
            if len(basis) != cfg.k_B:
                raise FrameError("bad basis payload size")
            if self._fp(basis, len(fp_1)) != fp_1:
                self.store.release(fp_1, self.session_id)
                return self._fail_validation(msg.seq)
            self.store.insert_if_absent(fp_1, basis)
            self.stats.payload_bytes += len(basis)
            self.stats.payload_frames += 1
            self.stats.duplicate_bytes += end
            self.run_stats.payload_count += 1
            self.run_stats.payload_bytes += len(basis)
            return _response(msg.seq, STATUS_ACK)

        fp_c, fp_b = fp_1, fp_2
        if pos >= len(msg.payload):
            raise FrameError("missing dual payload subtype")
        subtype = msg.payload[pos]
        pos += 1
        key = (fp_c, fp_b)
        waiting = self._awaiting.get(key)
        if not waiting:
            raise ProtocolError("dual continuation without a pending request")

        if subtype == DUAL_CHUNK:
            chunk = msg.payload[pos:]
            if len(chunk) != cfg.n_B:
                raise FrameError("bad chunk payload size")
            if self._fp(chunk, len(fp_c)) != fp_c:
                self.chunk_store.release(fp_c, self.session_id)
                self.store.release(fp_b, self.session_id)
                return self._fail_validation(msg.seq)
            # basis fingerprint is checked when the basis is materialized
            self.chunk_store.insert_if_absent(fp_c, chunk)
            self.store.insert_if_absent(fp_b, _LazyBasis(chunk))
            index = waiting.popleft()
            if not waiting:
                del self._awaiting[key]
            self._positions[index] = ("token", EncodedToken(
                primary_fp=fp_c, secondary_fp=fp_b, payload=chunk,
                payload_kind="chunk",
            ))
            self.stats.payload_bytes += len(chunk)
            self.stats.payload_frames += 1
            self.stats.duplicate_bytes += len(fp_c) + len(fp_b) + 1
            self.run_stats.payload_count += 1
            self.run_stats.payload_bytes += len(chunk)
            return _response(msg.seq, STATUS_ACK)

        if subtype == DUAL_DEVIATION:
            tag, dev, extra, end = cfg.read_devblob(msg.payload, pos)
            if end != len(msg.payload):
                raise FrameError("trailing bytes after deviation")
            devblob = msg.payload[pos:end]
            basis = self.store.lookup(fp_b)
            if basis is None:
                raise ProtocolError("deviation for an unknown basis")
            if isinstance(basis, _LazyBasis):
                basis = self._materialize_basis(fp_b, basis)
            chunk = self._rebuild_chunk(basis, tag, dev, extra)
            if self._fp(chunk, len(fp_c)) != fp_c:
                # mismatched chunk fingerprint: fall back to a full chunk
                self.validation_failures += 1
                if self.validation_failures >= 2:
                    raise ProtocolError("peer failed validation twice; disconnecting")
                return _response(msg.seq, STATUS_CHUNK_REQUEST)
            self.chunk_store.insert_if_absent(fp_c, chunk)
            index = waiting.popleft()
            if not waiting:
                del self._awaiting[key]
            self._positions[index] = ("token", EncodedToken(
                primary_fp=fp_c, secondary_fp=fp_b, devblob=devblob,
            ))
            self.stats.deviation_bytes += len(devblob)
            self.stats.duplicate_bytes += len(fp_c) + len(fp_b) + 1
            self.run_stats.q_dev_list.append(len(devblob))
            return _response(msg.seq, STATUS_ACK)

        raise FrameError(f"unknown dual payload subtype {subtype}")

    def _materialize_basis(self, fp_b: bytes, lazy: _LazyBasis) -> bytes:
        cfg = self.cfg
        rows = np.frombuffer(lazy.chunk, dtype=np.uint8).reshape(1, -1)
        processed, _, _ = preprocess.encode_batch(rows, cfg.preprocess, cfg.sample_width)
        bases, _ = cfg.transform.transform_batch(processed)
        basis = bases[0].tobytes()
        if self._fp(basis, len(fp_b)) != fp_b:
            raise ValidationError("basis fingerprint does not match the delivered chunk")
        self.store.replace(fp_b, basis)
        return basis

    def _rebuild_chunk(self, basis: bytes, tag: int, dev: bytes, extra: bytes) -> bytes:
        cfg = self.cfg
        rows = np.frombuffer(basis, dtype=np.uint8).reshape(1, -1)
        processed = cfg.transform.reconstruct_batch(rows, [dev])
        return preprocess.decode_batch(
            processed, [tag], [extra], cfg.sample_width
        )[0].tobytes()

    def _on_end(self, msg: Message) -> Message:
        if len(msg.payload) != 8:
            raise FrameError("bad end payload")
        (self._declared_length,) = struct.unpack(">Q", msg.payload)
        self.finalize()
        self.finished = True
        return _response(msg.seq, STATUS_ACK)

    def finalize(self) -> None:
        """Resolve every position into the output buffer."""
        if self._awaiting:
            raise ProtocolError("stream ended with unresolved chunks")
        raw_parts: list[bytes] = []
        tokens: list[EncodedToken] = []
        layout: list[tuple[str, int]] = []
        for kind, item in self._positions:
            if kind == "raw":
                layout.append(("raw", len(raw_parts)))
                raw_parts.append(item)
            else:
                layout.append(("token", len(tokens)))
                tokens.append(item)
        chunks: list[bytes] = []
        if tokens:
            decoder = StreamDecoder(
                self.cfg, store=self.store, chunk_store=self.chunk_store
            )
            for token in tokens:
                decoder.feed_token(token)
            blob = decoder.decode(
                PadDescriptor(len(tokens) * self.cfg.n_B)
            )
            chunks = [
                blob[i * self.cfg.n_B : (i + 1) * self.cfg.n_B]
                for i in range(len(tokens))
            ]
        for kind, index in layout:
            self.output += raw_parts[index] if kind == "raw" else chunks[index]
        self._positions.clear()
        if self._declared_length is not None:
            if len(self.output) < self._declared_length:
                raise ProtocolError("stream shorter than its declared length")
            del self.output[self._declared_length :]
        if self.run_stats is not None:
            # payloads received on a cold store == distinct new bases
            self.run_stats.distinct_bases = self.run_stats.payload_count

    def close(self) -> None:
        """Drop reservations held by this session (error paths)."""
        for store in (self.store, self.chunk_store):
            if store is not None:
                store.release_all(self.session_id)


@dataclass
class _ChunkPlan:
    primary_fp: bytes
    secondary_fp: bytes = b""
    devblob: bytes = b""
    payload: bytes = b""
    stage: str = "new"

    @property
    def fps(self) -> tuple:
        return (self.primary_fp, self.secondary_fp) if self.secondary_fp else (self.primary_fp,)


class SourceSession:
    """Drives one outbound session over an in-order transport.

    Usage: ``feed_data`` any number of times, then ``finish``; repeatedly
    send the messages from ``pump`` and feed each inbound response to
    ``on_response`` until ``done``.
    """

    def __init__(
        self,
        node_class: int,
        cfg: ChunkingConfig | None,
        window: int = 64,
        raw_block: int | None = None,
        trace: Trace | None = None,
        stats: WireStats | None = None,
    ):
        if node_class == CLASS_BASIC:
            if cfg is not None:
                raise ConfigError("basic sources do not carry a chunking config")
        else:
            if cfg is None:
                raise ConfigError("encoding sources need a chunking config")
            expected = CLASS_DEDUP if cfg.scheme is Scheme.DD else CLASS_GD
            if node_class != expected:
                raise ConfigError("node class does not match the scheme")
        if window < 1:
            raise ConfigError("window must be at least 1")
        self.node_class = node_class
        self.cfg = cfg
        self.window = window
        self.raw_block = raw_block
        self.trace = trace
        self.stats = stats or WireStats()
        self.acked_primary: set[bytes] = set()
        self.acked_secondary: set[bytes] = set()
        self._plans: deque = deque()
        self._raw: deque[bytes] = deque()
        self._inflight: dict[int, _ChunkPlan | str] = {}
        self._busy_fps: set[bytes] = set()
        self._next_seq = 1
        self._total_len = 0
        self._padded = False
        self._finishing = False
        self._end_sent = False
        self._end_acked = False
        self._config_sent = False
        self._config_acked = False
        self.failed: str | None = None

    # -- data intake -------------------------------------------------------

    def feed_data(self, data: bytes) -> None:
        if self._finishing:
            raise ProtocolError("cannot feed data after finish()")
        if not data:
            return
        self._total_len += len(data)
        if self.node_class == CLASS_BASIC:
            block = self.raw_block or len(data)
            for lo in range(0, len(data), block):
                self._raw.append(data[lo : lo + block])
            return
        cfg = self.cfg
        if self._padded:
            raise ProtocolError("cannot feed more data after a partial final chunk")
        rows, _ = split_into_chunks(data, cfg.n_B)
        if len(data) % cfg.n_B:
            self._padded = True
        self._plans.extend(self._build_plans(rows))

    def _build_plans(self, rows: np.ndarray) -> list[_ChunkPlan]:
        cfg = self.cfg
        plans = []
        if cfg.scheme is Scheme.DD:
            for i in range(rows.shape[0]):
                chunk = rows[i].tobytes()
                fp = fingerprint(chunk, cfg.fingerprint)[: cfg.primary_fp_len]
                plans.append(_ChunkPlan(primary_fp=fp, payload=chunk))
            return plans
        processed, tags, extras = preprocess.encode_batch(
            rows, cfg.preprocess, cfg.sample_width
        )
        bases, devs = cfg.transform.transform_batch(processed)
        for i in range(rows.shape[0]):
            basis = bases[i].tobytes()
            devblob = cfg.build_devblob(int(tags[i]), devs[i], extras[i])
            if cfg.scheme is Scheme.GD_DUAL:
                chunk = rows[i].tobytes()
                fp_c = fingerprint(chunk, cfg.fingerprint)[: cfg.primary_fp_len]
                fp_b = fingerprint(basis, cfg.fingerprint)[: cfg.secondary_fp_len]
                plans.append(
                    _ChunkPlan(
                        primary_fp=fp_c,
                        secondary_fp=fp_b,
                        devblob=devblob,
                        payload=chunk,
                    )
                )
            else:
                fp_b = fingerprint(basis, cfg.fingerprint)[: cfg.primary_fp_len]
                plans.append(
                    _ChunkPlan(primary_fp=fp_b, devblob=devblob, payload=basis)
                )
        return plans

    def finish(self) -> None:
        self._finishing = True

    @property
    def done(self) -> bool:
        return self._end_acked or self.failed is not None

    # -- outbound ----------------------------------------------------------

    def _take_seq(self) -> int:
        seq = self._next_seq
        self._next_seq += 1
        return seq

    def _emit(self, msg: Message) -> Message:
        if self.trace is not None:
            self.trace.record("send", msg)
        self.stats.count_frame(msg)
        return msg

    def pump(self) -> list[Message]:
        out = []
        if not self._config_sent:
            self._config_sent = True
            out.append(self._emit(config_message(self.node_class, self.cfg)))
            return out  # wait for the config ack before any data
        if not self._config_acked or self.failed:
            return out

        while self._raw and len(self._inflight) < self.window:
            payload = self._raw.popleft()
            seq = self._take_seq()
            self._inflight[seq] = "raw"
            msg = Message(MSG_DATA, seq=seq, payload=payload)
            self.stats.payload_bytes += len(payload)
            self.stats.payload_frames += 1
            out.append(self._emit(msg))

        while self._plans and len(self._inflight) < self.window:
            plan = self._plans[0]
            if any(fp in self._busy_fps for fp in plan.fps):
                break  # keep order; wait until the busy fingerprint settles
            self._plans.popleft()
            seq = self._take_seq()
            plan.stage = "ident"
            self._inflight[seq] = plan
            for fp in plan.fps:
                self._busy_fps.add(fp)
            out.append(self._emit(self._ident_message(seq, plan)))

        if (
            self._finishing
            and not self._raw
            and not self._plans
            and not self._inflight
            and not self._end_sent
        ):
            self._end_sent = True
            seq = self._take_seq()
            self._inflight[seq] = "end"
            out.append(self._emit(end_message(seq, self._total_len)))
        return out

    def _ident_message(self, seq: int, plan: _ChunkPlan) -> Message:
        cfg = self.cfg
        if cfg.scheme is Scheme.DD:
            self.stats.identifier_bytes += len(plan.primary_fp)
            return Message(MSG_DEDUP, seq=seq, payload=plan.primary_fp)
        if cfg.scheme is Scheme.GD_DUAL:
            payload = plan.primary_fp + plan.secondary_fp
            self.stats.identifier_bytes += len(payload)
            return Message(MSG_GEN_DEDUP, seq=seq, payload=payload)
        payload = plan.primary_fp + plan.devblob
        self.stats.identifier_bytes += len(plan.primary_fp)
        self.stats.deviation_bytes += len(plan.devblob)
        return Message(MSG_GEN_DEDUP, seq=seq, payload=payload)

    def _data_message(self, seq: int, plan: _ChunkPlan, subtype: int | None) -> Message:
        cfg = self.cfg
        if cfg.scheme is Scheme.DD:
            payload = plan.primary_fp + plan.payload
            self.stats.payload_bytes += len(plan.payload)
            self.stats.payload_frames += 1
            self.stats.duplicate_bytes += len(plan.primary_fp)
            return Message(MSG_DEDUP_DATA, seq=seq, payload=payload)
        if cfg.scheme is Scheme.GD_DUAL:
            head = plan.primary_fp + plan.secondary_fp + bytes([subtype])
            self.stats.duplicate_bytes += len(head)
            if subtype == DUAL_CHUNK:
                self.stats.payload_bytes += len(plan.payload)
                self.stats.payload_frames += 1
                return Message(MSG_GEN_DEDUP_DATA, seq=seq, payload=head + plan.payload)
            self.stats.deviation_bytes += len(plan.devblob)
            return Message(MSG_GEN_DEDUP_DATA, seq=seq, payload=head + plan.devblob)
        payload = plan.primary_fp + plan.devblob + plan.payload
        self.stats.payload_bytes += len(plan.payload)
        self.stats.payload_frames += 1
        self.stats.duplicate_bytes += len(plan.primary_fp) + len(plan.devblob)
        return Message(MSG_GEN_DEDUP_DATA, seq=seq, payload=payload)

    # -- inbound -----------------------------------------------------------

    def on_response(self, msg: Message) -> list[Message]:
        """Process one response; may return follow-up messages."""
        if self.trace is not None:
            self.trace.record("recv", msg)
        self.stats.count_frame(msg)
        if msg.type != MSG_RESPONSE:
            raise ProtocolError("source received a non-response message")
        if msg.seq == 0 and not self._config_acked:
            if msg.status != STATUS_ACK:
                self.failed = "configuration rejected"
                raise ProtocolError(self.failed)
            self._config_acked = True
            return []
        entry = self._inflight.pop(msg.seq, None)
        if entry is None:
            raise ProtocolError(f"response for unknown seq {msg.seq}")
        if msg.status == STATUS_ERROR:
            self.failed = f"peer reported an error for seq {msg.seq}"
            raise ProtocolError(self.failed)
        if entry == "raw":
            if msg.status != STATUS_ACK:
                raise ProtocolError("unexpected status for a data frame")
            return []
        if entry == "end":
            if msg.status != STATUS_ACK:
                raise ProtocolError("unexpected status for the end frame")
            self._end_acked = True
            return []
        return self._advance_plan(msg, entry)

    def _advance_plan(self, msg: Message, plan: _ChunkPlan) -> list[Message]:
        cfg = self.cfg
        follow: list[Message] = []

        def complete():
            self.acked_primary.add(plan.primary_fp)
            if plan.secondary_fp:
                self.acked_secondary.add(plan.secondary_fp)
            for fp in plan.fps:
                self._busy_fps.discard(fp)
            plan.payload = b""  # erase local copy once the sink holds it

        def send(stage: str, subtype: int | None = None):
            seq = self._take_seq()
            plan.stage = stage
            self._inflight[seq] = plan
            follow.append(self._emit(self._data_message(seq, plan, subtype)))

        status = msg.status
        if plan.stage == "ident":
            if status == STATUS_ACK:
                complete()
            elif status == STATUS_NEW_FINGERPRINT and cfg.scheme is not Scheme.GD_DUAL:
                send("payload")
            elif status == STATUS_DEVIATION_REQUEST and cfg.scheme is Scheme.GD_DUAL:
                send("deviation", DUAL_DEVIATION)
            elif status == STATUS_CHUNK_REQUEST and cfg.scheme is Scheme.GD_DUAL:
                send("chunk", DUAL_CHUNK)
            else:
                raise ProtocolError(f"unexpected status {msg.status_name}")
        elif plan.stage == "payload":
            if status != STATUS_ACK:
                raise ProtocolError(f"unexpected status {msg.status_name}")
            complete()
        elif plan.stage == "deviation":
            if status == STATUS_ACK:
                complete()
            elif status == STATUS_CHUNK_REQUEST:
                send("chunk", DUAL_CHUNK)
            else:
                raise ProtocolError(f"unexpected status {msg.status_name}")
        elif plan.stage == "chunk":
            if status != STATUS_ACK:
                raise ProtocolError(f"unexpected status {msg.status_name}")
            complete()
        else:
            raise ProtocolError(f"plan in unexpected stage {plan.stage}")
        return follow


class RelaySession:
    """Deduplicating relay: terminates the downstream link like a sink and
    re-encodes raw payloads upstream through an embedded source session.

    ``exchange`` performs one synchronous upstream round trip (message in,
    response out); the relay keeps one upstream exchange outstanding at a
    time.  Downstream DATA frames are acknowledged immediately and queued;
    ``idle`` drains the queue between downstream frames.  Already-encoded
    messages of the relay's own class are forwarded verbatim with
    opportunistic local store updates.
    """

    def __init__(
        self,
        node_class: int,
        cfg: ChunkingConfig,
        exchange,
        store: FingerprintStore | None = None,
        chunk_store: FingerprintStore | None = None,
        trace: Trace | None = None,
    ):
        if node_class not in (CLASS_DEDUP, CLASS_GD):
            raise ConfigError("relay sessions need a deduplicating class")
        self.node_class = node_class
        self.cfg = cfg
        self.exchange = exchange
        self.sink = SinkSession(
            node_class, cfg, store=store, chunk_store=chunk_store, trace=trace,
            collect_output=False,
        )
        self.up = SourceSession(node_class, cfg, window=1)
        self._end_seq: int | None = None
        self.finished = False

    def handle_downstream(self, msg: Message) -> list[Message]:
        """Process one downstream frame; returns immediate responses."""
        if msg.type == MSG_END:
            if len(msg.payload) != 8:
                return [_response(msg.seq, STATUS_ERROR)]
            self._end_seq = msg.seq
            self.up.finish()
            return []  # acknowledged once upstream has drained
        if msg.type == MSG_DATA:
            responses = self.sink.handle(msg)
            if responses and responses[0].status == STATUS_ACK:
                self.up.feed_data(msg.payload)
            return responses
        if msg.type in (MSG_DEDUP, MSG_DEDUP_DATA, MSG_GEN_DEDUP, MSG_GEN_DEDUP_DATA):
            if msg.type not in RECEIVABLE[self.node_class]:
                return [_response(msg.seq, STATUS_ERROR)]
            self._observe(msg)
            self._drive_config()
            resp = self.exchange(Message(msg.type, seq=msg.seq, payload=msg.payload))
            return [Message(MSG_RESPONSE, status=resp.status, seq=msg.seq)]
        return self.sink.handle(msg)

    def idle(self) -> list[Message]:
        """Drain queued upstream work; may emit the deferred END response."""
        self._drive_up()
        if self._end_seq is not None and self.up.done:
            seq, self._end_seq = self._end_seq, None
            self.finished = True
            return [_response(seq, STATUS_ACK)]
        return []

    def _drive_config(self) -> None:
        if not self.up._config_sent:
            self._drive_up_step(self.up.pump())

    def _drive_up(self) -> None:
        while True:
            msgs = self.up.pump()
            if not msgs:
                return
            self._drive_up_step(msgs)

    def _drive_up_step(self, msgs) -> None:
        queue = deque(msgs)
        while queue:
            resp = self.exchange(queue.popleft())
            queue.extend(self.up.on_response(resp))

    def _observe(self, msg: Message) -> None:
        """Opportunistic store updates from pass-through payload messages."""
        cfg = self.cfg
        try:
            if msg.type == MSG_DEDUP_DATA:
                h = cfg.primary_fp_len
                fp, chunk = msg.payload[:h], msg.payload[h:]
                if len(chunk) == cfg.n_B and fingerprint(chunk, cfg.fingerprint)[:h] == fp:
                    self.sink.store.insert_if_absent(fp, chunk)
            elif msg.type == MSG_GEN_DEDUP_DATA and cfg.scheme is not Scheme.GD_DUAL:
                p = cfg.primary_fp_len
                fp = msg.payload[:p]
                _, _, _, end = cfg.read_devblob(msg.payload, p)
                basis = msg.payload[end:]
                if len(basis) == cfg.k_B and fingerprint(basis, cfg.fingerprint)[:p] == fp:
                    self.sink.store.insert_if_absent(fp, basis)
        except (FrameError, ConfigError, ValidationError):
            pass  # forwarded traffic is validated by the sink


def scheme_class(cfg: ChunkingConfig) -> int:
    return CLASS_DEDUP if cfg.scheme is Scheme.DD else CLASS_GD


def run_loopback(
    data: bytes,
    cfg: ChunkingConfig,
    window: int = 64,
    store: FingerprintStore | None = None,
    chunk_store: FingerprintStore | None = None,
    trace_source: Trace | None = None,
    trace_sink: Trace | None = None,
) -> tuple[bytes, SourceSession, SinkSession]:
    """Drive one source->sink session in memory, framing every message.

    Every message crosses encode_message/decode_message, so the wire format
    is exercised end to end without sockets.
    """
    node_class = scheme_class(cfg)
    source = SourceSession(node_class, cfg, window=window, trace=trace_source)
    sink = SinkSession(
        node_class, cfg, store=store, chunk_store=chunk_store, trace=trace_sink
    )
    source.feed_data(data)
    source.finish()

    outbox = deque(source.pump())
    while outbox:
        msg = decode_message(encode_message(outbox.popleft()))
        for resp in sink.handle(msg):
            wire_resp = decode_message(encode_message(resp))
            outbox.extend(source.on_response(wire_resp))
        if not outbox:
            outbox.extend(source.pump())
    if not source.done:
        raise ProtocolError("loopback session stalled before completion")
    return bytes(sink.output), source, sink
