"""Operational node runner: protocol sessions over TCP stream sockets.

Three roles exist.  A *sink* listens, ingests sessions into its shared
fingerprint store and writes reconstructed streams out.  A *source* reads an
input file and drives one session upstream.  An *intermediate* accepts
downstream sessions and relays them upstream, re-encoding raw data when its
class calls for it; a basic intermediate splices bytes verbatim.

Configuration comes from ``key=value`` text files and/or keyword overrides
(the CLI maps flags onto the same keys).  Metrics are pull-based: each node
can expose a small admin socket that dumps a CSV snapshot per connection.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass, field

from . import protocol
from .ecc import IdentityTransform, make_transform
from .engine import ChunkingConfig, FingerprintStore
from .errors import ConfigError, ProtocolError
from .fingerprint import FingerprintConfig, Scheme
from .protocol import (
    CLASS_BASIC,
    CLASS_IDS,
    FrameReader,
    RelaySession,
    SinkSession,
    SourceSession,
    Trace,
    WireStats,
    encode_message,
)

_SOCKET_BACKLOG = 32
_POLL_SECONDS = 0.2


def parse_hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"bad address (want host:port): {text!r}")
    return host, int(port)


def load_config_file(path: str) -> dict[str, str]:
    """Parse a line-oriented key=value file; '#' starts a comment."""
    options: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            options[key.strip()] = value.strip()
    return options


def chunking_from_options(options: dict[str, str]) -> ChunkingConfig | None:
    """Build the shared chunking configuration from option keys.

    Recognized keys: scheme, transform, chunk_bytes, fp, preprocess,
    sample_width.  Returns None when no scheme is configured (basic nodes).
    """
    if "scheme" not in options:
        return None
    scheme = Scheme.parse(options["scheme"])
    chunk_bytes = int(options["chunk_bytes"]) if "chunk_bytes" in options else None
    if scheme is Scheme.DD:
        if chunk_bytes is None:
            raise ConfigError("classic deduplication needs chunk_bytes")
        transform = IdentityTransform(chunk_bytes)
    else:
        spec = options.get("transform")
        if not spec:
            raise ConfigError("generalized deduplication needs a transform")
        transform = make_transform(spec, chunk_bytes)
    fp = FingerprintConfig.parse(options.get("fp", "sha1:6"))
    return ChunkingConfig(
        scheme=scheme,
        transform=transform,
        fingerprint=fp,
        preprocess=options.get("preprocess", "none"),
        sample_width=int(options.get("sample_width", "1")),
    )


@dataclass
class NodeConfig:
    role: str
    node_class: str = "basic"
    listen: str | None = None
    upstream: str | None = None
    input: str | None = None
    output: str | None = None
    snapshot: str | None = None
    admin: str | None = None
    window: int = 64
    raw_block: int | None = None
    trace: bool = False
    chunking: ChunkingConfig | None = None

    def __post_init__(self):
        if self.role not in ("source", "intermediate", "sink"):
            raise ConfigError(f"unknown role: {self.role!r}")
        if self.node_class not in CLASS_IDS:
            raise ConfigError(f"unknown node class: {self.node_class!r}")
        if self.node_class != "basic" and self.chunking is None:
            raise ConfigError(f"class {self.node_class!r} needs a chunking config")

    @property
    def class_id(self) -> int:
        return CLASS_IDS[self.node_class]

    @classmethod
    def from_options(cls, options: dict[str, str], **overrides) -> "NodeConfig":
        merged = dict(options)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        chunking = merged.pop("chunking", None)
        if chunking is None:
            chunking = chunking_from_options(merged)
        keys = ("role", "node_class", "listen", "upstream", "input", "output",
                "snapshot", "admin")
        kwargs = {k: merged[k] for k in keys if merged.get(k)}
        if "class" in merged and "node_class" not in kwargs:
            kwargs["node_class"] = merged["class"]
        if merged.get("window"):
            kwargs["window"] = int(merged["window"])
        if merged.get("raw_block"):
            kwargs["raw_block"] = int(merged["raw_block"])
        if str(merged.get("trace", "")).lower() in ("1", "true", "yes"):
            kwargs["trace"] = True
        return cls(chunking=chunking, **kwargs)


@dataclass
class Metrics:
    """Aggregated node counters; all monotone, updated under a lock."""

    bytes_sent: int = 0
    bytes_received: int = 0
    frames_sent: int = 0
    frames_received: int = 0
    chunks_processed: int = 0
    store_hits: int = 0
    store_misses: int = 0
    bases_sent: int = 0
    payload_model_bytes: int = 0
    framing_bytes: int = 0
    duplicate_bytes: int = 0
    sessions: int = 0
    duration_s: float = 0.0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def throughput_bps(self) -> float:
        if self.duration_s <= 0:
            return 0.0
        return (self.bytes_sent + self.bytes_received) / self.duration_s

    CSV_FIELDS = (
        "bytes_sent", "bytes_received", "frames_sent", "frames_received",
        "chunks_processed", "store_hits", "store_misses", "bases_sent",
        "payload_model_bytes", "framing_bytes", "duplicate_bytes",
        "sessions", "duration_s", "throughput_bps",
    )

    def to_csv(self) -> str:
        header = ",".join(self.CSV_FIELDS)
        row = ",".join(
            f"{getattr(self, name):.3f}" if name in ("duration_s", "throughput_bps")
            else str(getattr(self, name))
            for name in self.CSV_FIELDS
        )
        return f"{header}\n{row}\n"

    def add_wire(self, sent: WireStats, received: WireStats) -> None:
        with self._lock:
            self.frames_sent += sent.frames
            self.frames_received += received.frames
            self.bases_sent += sent.payload_frames


def export_metrics(node) -> str:
    """CSV snapshot of a node's metrics."""
    return node.metrics.to_csv()


class _CountingSocket:
    """sendall/recv wrapper feeding the node byte counters."""

    def __init__(self, sock: socket.socket, metrics: Metrics):
        self._sock = sock
        self._metrics = metrics

    def sendall(self, blob: bytes) -> None:
        self._sock.sendall(blob)
        with self._metrics._lock:
            self._metrics.bytes_sent += len(blob)

    def read(self, count: int) -> bytes:
        blob = self._sock.recv(count)
        with self._metrics._lock:
            self._metrics.bytes_received += len(blob)
        return blob

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class _NodeBase:
    def __init__(self, cfg: NodeConfig):
        self.cfg = cfg
        self.metrics = Metrics()
        self.traces: list[Trace] = []
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._admin_sock: socket.socket | None = None
        if cfg.admin:
            self._start_admin()

    def _start_admin(self) -> None:
        host, port = parse_hostport(self.cfg.admin)
        self._admin_sock = socket.create_server((host, port), backlog=4)
        self._admin_sock.settimeout(_POLL_SECONDS)
        thread = threading.Thread(target=self._admin_loop, daemon=True)
        thread.start()
        self._threads.append(thread)

    @property
    def admin_port(self) -> int | None:
        return self._admin_sock.getsockname()[1] if self._admin_sock else None

    def _admin_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._admin_sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                conn.sendall(self.metrics.to_csv().encode())
            finally:
                conn.close()

    def stop(self) -> None:
        self._stop.set()
        if self._admin_sock is not None:
            self._admin_sock.close()
        for thread in self._threads:
            thread.join(timeout=5.0)


class SinkNode(_NodeBase):
    """Listening ingester; all sessions share one store."""

    def __init__(self, cfg: NodeConfig):
        super().__init__(cfg)
        if cfg.listen is None:
            raise ConfigError("sink nodes need a listen address")
        self.store: FingerprintStore | None = None
        self.chunk_store: FingerprintStore | None = None
        ccfg = cfg.chunking
        if ccfg is not None:
            key_len = (
                ccfg.secondary_fp_len
                if ccfg.scheme is Scheme.GD_DUAL
                else ccfg.primary_fp_len
            )
            self.store = FingerprintStore(key_len)
            if ccfg.scheme is Scheme.GD_DUAL:
                self.chunk_store = FingerprintStore(ccfg.primary_fp_len)
            if cfg.snapshot:
                self._load_snapshot()
        self.sessions: list[SinkSession] = []
        self._sessions_lock = threading.Lock()
        host, port = parse_hostport(cfg.listen)
        self._listener = socket.create_server((host, port), backlog=_SOCKET_BACKLOG)
        self._listener.settimeout(_POLL_SECONDS)

    @property
    def bound_port(self) -> int:
        return self._listener.getsockname()[1]

    def _load_snapshot(self) -> None:
        import os

        if os.path.exists(self.cfg.snapshot):
            self.store = FingerprintStore.load(self.cfg.snapshot)
        chunk_path = self.cfg.snapshot + ".chunks"
        if self.chunk_store is not None and os.path.exists(chunk_path):
            self.chunk_store = FingerprintStore.load(chunk_path)

    def start(self) -> "SinkNode":
        thread = threading.Thread(target=self._accept_loop, daemon=True)
        thread.start()
        self._threads.append(thread)
        return self

    def _accept_loop(self) -> None:
        started = time.monotonic()
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            handler = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            handler.start()
            self._threads.append(handler)
        with self.metrics._lock:
            self.metrics.duration_s = time.monotonic() - started

    def _serve(self, conn: socket.socket) -> None:
        wire = _CountingSocket(conn, self.metrics)
        trace = Trace() if self.cfg.trace else None
        session = SinkSession(
            self.cfg.class_id,
            self.cfg.chunking,
            store=self.store,
            chunk_store=self.chunk_store,
            trace=trace,
        )
        if trace is not None:
            self.traces.append(trace)
        with self._sessions_lock:
            self.sessions.append(session)
            self.metrics.sessions += 1
        reader = FrameReader(wire)
        try:
            while not self._stop.is_set():
                msg = reader.read()
                if msg is None:
                    break
                for resp in session.handle(msg):
                    wire.sendall(encode_message(resp))
                with self.metrics._lock:
                    self.metrics.frames_received += 1
                    self.metrics.frames_sent += 1
                if session.finished:
                    break
        except (ProtocolError, Exception):
            pass  # drop the connection; reservations released below
        finally:
            session.close()
            self._harvest(session)
            wire.close()

    def _harvest(self, session: SinkSession) -> None:
        with self.metrics._lock:
            self.metrics.store_hits += session.hits
            self.metrics.store_misses += session.misses
            if session.run_stats is not None:
                self.metrics.chunks_processed += session.run_stats.chunks
            self.metrics.payload_model_bytes += session.stats.model_bytes
            self.metrics.framing_bytes += session.stats.framing_bytes
            self.metrics.duplicate_bytes += session.stats.duplicate_bytes
        if session.finished and self.cfg.output:
            index = self.sessions.index(session)
            path = self.cfg.output if index == 0 else f"{self.cfg.output}.{index}"
            with open(path, "wb") as fh:
                fh.write(session.output)

    def stop(self) -> None:
        self._listener.close()
        super().stop()
        if self.cfg.snapshot and self.store is not None:
            self.store.save(self.cfg.snapshot)
            if self.chunk_store is not None:
                self.chunk_store.save(self.cfg.snapshot + ".chunks")


class SourceNode(_NodeBase):
    """Reads the input and drives one upstream session to completion."""

    def __init__(self, cfg: NodeConfig):
        super().__init__(cfg)
        if cfg.upstream is None:
            raise ConfigError("source nodes need an upstream address")
        self.session: SourceSession | None = None

    def run(self, data: bytes | None = None) -> SourceSession:
        cfg = self.cfg
        if data is None:
            if not cfg.input:
                raise ConfigError("source nodes need an input file")
            with open(cfg.input, "rb") as fh:
                data = fh.read()
        trace = Trace() if cfg.trace else None
        if trace is not None:
            self.traces.append(trace)
        session = SourceSession(
            cfg.class_id,
            cfg.chunking if cfg.node_class != "basic" else None,
            window=cfg.window,
            raw_block=cfg.raw_block,
            trace=trace,
        )
        self.session = session
        session.feed_data(data)
        session.finish()

        started = time.monotonic()
        sock = socket.create_connection(parse_hostport(cfg.upstream))
        wire = _CountingSocket(sock, self.metrics)
        reader = FrameReader(wire)
        try:
            while not session.done:
                out = session.pump()
                for msg in out:
                    wire.sendall(encode_message(msg))
                resp = reader.read()
                if resp is None:
                    raise ProtocolError("upstream closed mid-session")
                for follow in session.on_response(resp):
                    wire.sendall(encode_message(follow))
        finally:
            wire.close()
            with self.metrics._lock:
                self.metrics.duration_s = time.monotonic() - started
                self.metrics.sessions += 1
                self.metrics.frames_sent += session.stats.frames
                self.metrics.bases_sent += session.stats.payload_frames
                self.metrics.payload_model_bytes += session.stats.model_bytes
                self.metrics.framing_bytes += session.stats.framing_bytes
                self.metrics.duplicate_bytes += session.stats.duplicate_bytes
        return session


class IntermediateNode(_NodeBase):
    """Accepts downstream sessions and relays them upstream."""

    def __init__(self, cfg: NodeConfig):
        super().__init__(cfg)
        if cfg.listen is None or cfg.upstream is None:
            raise ConfigError("intermediate nodes need listen and upstream addresses")
        self.store: FingerprintStore | None = None
        self.chunk_store: FingerprintStore | None = None
        ccfg = cfg.chunking
        if ccfg is not None and cfg.node_class != "basic":
            key_len = (
                ccfg.secondary_fp_len
                if ccfg.scheme is Scheme.GD_DUAL
                else ccfg.primary_fp_len
            )
            self.store = FingerprintStore(key_len)
            if ccfg.scheme is Scheme.GD_DUAL:
                self.chunk_store = FingerprintStore(ccfg.primary_fp_len)
        self.relays: list[RelaySession] = []
        host, port = parse_hostport(cfg.listen)
        self._listener = socket.create_server((host, port), backlog=_SOCKET_BACKLOG)
        self._listener.settimeout(_POLL_SECONDS)

    @property
    def bound_port(self) -> int:
        return self._listener.getsockname()[1]

    def start(self) -> "IntermediateNode":
        thread = threading.Thread(target=self._accept_loop, daemon=True)
        thread.start()
        self._threads.append(thread)
        return self

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            handler = threading.Thread(target=self._serve, args=(conn,), daemon=True)
            handler.start()
            self._threads.append(handler)

    def _serve(self, down_conn: socket.socket) -> None:
        down = _CountingSocket(down_conn, self.metrics)
        up_sock = socket.create_connection(parse_hostport(self.cfg.upstream))
        up = _CountingSocket(up_sock, self.metrics)
        try:
            if self.cfg.node_class == "basic":
                self._splice(down, up)
            else:
                self._relay(down, up)
        except (ProtocolError, Exception):
            pass
        finally:
            down.close()
            up.close()

    def _splice(self, down: _CountingSocket, up: _CountingSocket) -> None:
        """Byte-identical pass-through in both directions."""

        def pump(src: _CountingSocket, dst: _CountingSocket):
            while True:
                blob = src.read(65536)
                if not blob:
                    break
                dst.sendall(blob)

        back = threading.Thread(target=pump, args=(up, down), daemon=True)
        back.start()
        pump(down, up)
        back.join(timeout=5.0)

    def _relay(self, down: _CountingSocket, up: _CountingSocket) -> None:
        up_reader = FrameReader(up)

        def exchange(msg):
            up.sendall(encode_message(msg))
            resp = up_reader.read()
            if resp is None:
                raise ProtocolError("upstream closed mid-session")
            return resp

        trace = Trace() if self.cfg.trace else None
        if trace is not None:
            self.traces.append(trace)
        relay = RelaySession(
            self.cfg.class_id,
            self.cfg.chunking,
            exchange,
            store=self.store,
            chunk_store=self.chunk_store,
            trace=trace,
        )
        self.relays.append(relay)
        reader = FrameReader(down)
        while not self._stop.is_set():
            msg = reader.read()
            if msg is None:
                break
            for resp in relay.handle_downstream(msg):
                down.sendall(encode_message(resp))
            for resp in relay.idle():
                down.sendall(encode_message(resp))
            if relay.finished:
                break
        relay.sink.close()


def run_node(cfg: NodeConfig):
    """Construct and run a node for the configured role.

    Sinks and intermediates return the started node (callers stop() them);
    sources block until their stream is fully acknowledged.
    """
    if cfg.role == "sink":
        return SinkNode(cfg).start()
    if cfg.role == "intermediate":
        return IntermediateNode(cfg).start()
    node = SourceNode(cfg)
    node.run()
    return node
