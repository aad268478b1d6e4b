"""Command-line surface.

Subcommands: ``compress`` (offline per-scheme analysis of a file),
``synth`` (dataset generation), ``cost`` (analytic cost tables),
``bench`` (loopback benchmark over real sockets), ``node`` (long-running
source/intermediate/sink).  Reports are CSV on stdout or ``-o``.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 protocol/validation
error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time

from . import costmodel, node as node_mod, protocol, synth
from .ecc import IdentityTransform, make_transform
from .engine import ChunkingConfig, StreamDecoder, StreamEncoder
from .errors import ConfigError, GdkitError, ProtocolError, ValidationError
from .fingerprint import FingerprintConfig, Scheme
from .node import IntermediateNode, NodeConfig, SinkNode, SourceNode

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_PROTOCOL = 3

ALL_SCHEMES = ("dd", "gd-vanilla", "gd-reduced", "gd-dual")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def _add_codec_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transform", default=None,
                   help="hamming:M | rs:NB,KB | identity")
    p.add_argument("--chunk-bytes", type=int, default=None,
                   help="chunk length (required for identity/dd)")
    p.add_argument("--fp", default="sha1:6", help="fingerprint ALGO:LEN")
    p.add_argument("--preprocess", default="none",
                   choices=("none", "delta", "offset"))
    p.add_argument("--sample-width", type=int, default=1, choices=(1, 2, 4))


def _build_cfg(args, scheme: Scheme) -> ChunkingConfig:
    fp = FingerprintConfig.parse(args.fp)
    if scheme is Scheme.DD:
        if args.chunk_bytes:
            transform = IdentityTransform(args.chunk_bytes)
        elif args.transform and not args.transform.startswith("identity"):
            transform = IdentityTransform(make_transform(args.transform).n_B)
        else:
            raise ConfigError("dd needs --chunk-bytes or a sizing --transform")
        return ChunkingConfig(scheme=scheme, transform=transform, fingerprint=fp)
    if not args.transform:
        raise ConfigError(f"{scheme.label} needs --transform")
    transform = make_transform(args.transform, args.chunk_bytes)
    return ChunkingConfig(
        scheme=scheme,
        transform=transform,
        fingerprint=fp,
        preprocess=args.preprocess,
        sample_width=args.sample_width,
    )


def _read_input(path: str, csv_columns: str | None) -> bytes:
    with open(path, "rb") as fh:
        blob = fh.read()
    if csv_columns is not None:
        return _csv_bytes(blob, csv_columns)
    if synth.is_dataset(blob):
        _, payload = synth.parse_dataset(blob)
        return payload
    return blob


def _csv_bytes(blob: bytes, columns: str) -> bytes:
    """Concatenate the raw text bytes of the selected CSV columns.

    Columns are selected by zero-based index or header name, separated by
    commas; each column's cells are concatenated in row order, and the
    selected columns are concatenated in the given order.
    """
    text = blob.decode("utf-8", errors="replace")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return b""
    want = [c.strip() for c in columns.split(",") if c.strip()]
    header = rows[0]
    indexes: list[int] = []
    start = 0
    for col in want:
        if col.isdigit():
            indexes.append(int(col))
        else:
            try:
                indexes.append(header.index(col))
            except ValueError:
                raise ConfigError(f"no CSV column named {col!r}") from None
            start = 1
    parts: list[bytes] = []
    for index in indexes:
        for row in rows[start:]:
            if index < len(row):
                parts.append(row[index].encode("utf-8"))
    return b"".join(parts)


def _open_out(path: str | None):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


# -- compress ---------------------------------------------------------------

COMPRESS_HEADER = (
    "scheme,transform,preprocess,chunk_bytes,chunks,bases,payload_bytes,"
    "identifier_bytes,deviation_bytes,total_bytes,compression_ratio"
)


def cmd_compress(args) -> int:
    data = _read_input(args.input, args.csv_columns)
    if not data:
        with _open_out(args.output) as out:
            print(COMPRESS_HEADER, file=out)
        return EXIT_OK
    schemes = (
        ALL_SCHEMES if args.scheme == "all" else tuple(args.scheme.split(","))
    )
    lines = [COMPRESS_HEADER]
    for label in schemes:
        cfg = _build_cfg(args, Scheme.parse(label))
        encoder = StreamEncoder(cfg)
        tokens, pad = encoder.encode_stream(data)
        if args.verify:
            decoder = StreamDecoder(cfg)
            if decoder.decode_tokens(tokens, pad) != data:
                raise ValidationError(f"{label}: decoded stream differs")
        st = encoder.stats
        total = st.wire_payload_bytes
        ratio = (st.chunks * st.chunk_bytes) / total
        lines.append(
            f"{label},{cfg.transform.describe()},{cfg.preprocess},"
            f"{st.chunk_bytes},{st.chunks},{st.distinct_bases},"
            f"{st.payload_bytes},{st.identifier_bytes},{st.deviation_bytes},"
            f"{total},{ratio:.6f}"
        )
    with _open_out(args.output) as out:
        for line in lines:
            print(line, file=out)
    return EXIT_OK


# -- synth ------------------------------------------------------------------


def cmd_synth(args) -> int:
    params, payload = synth.generate_dataset(
        args.m, args.bases, args.chunks_per_basis, args.repetitions, args.seed
    )
    synth.write_dataset(args.output, params, payload)
    print(
        f"wrote {args.output}: m={params.m} bases={params.num_bases} "
        f"chunks_per_basis={params.chunks_per_basis} "
        f"repetitions={params.repetitions} bytes={len(payload)}"
    )
    return EXIT_OK


# -- cost -------------------------------------------------------------------


def cmd_cost(args) -> int:
    params = costmodel.CostParams(
        chunks=args.chunks,
        chunk_bytes=args.chunk_bytes,
        basis_bytes=args.basis_bytes or args.chunk_bytes,
        fp_bytes=args.fp_bytes,
        bases_dd=args.bases_dd,
        bases_gd=args.bases_gd,
        dev_bytes=args.dev_bytes,
    )
    lines = ["key,value"]
    threshold = costmodel.dd_outperformance(params)
    value = (
        str(threshold.numerator)
        if threshold.denominator == 1
        else f"{float(threshold):.6f}"
    )
    lines.append(f"threshold.dd_matches,{value}")
    if args.matches_dd is not None:
        min_gd, extra = costmodel.gd_vanilla_outperformance(params, args.matches_dd)
        lines.append(f"threshold.gd_vanilla_min_matches,{min_gd}")
        lines.append(f"threshold.gd_vanilla_extra_matches,{extra}")
    if args.bases_dd is not None:
        for label, cost, ratio in costmodel.cost_table(params):
            lines.append(f"{label}.bytes,{cost}")
            lines.append(f"{label}.ratio,{float(ratio):.6f}")
    with _open_out(args.output) as out:
        for line in lines:
            print(line, file=out)
    return EXIT_OK


# -- bench ------------------------------------------------------------------

BENCH_HEADER = (
    "scheme,transform,preprocess,chunk_bytes,sources,chunks,"
    "payload_model_bytes,expected_model_bytes,duplicate_bytes,framing_bytes,"
    "wire_bytes,store_hits,store_misses,compression_ratio,throughput_bps,"
    "duration_s"
)


def cmd_bench(args) -> int:
    data = _read_input(args.input, None) if args.input else b""
    lines = [BENCH_HEADER]
    if data:
        schemes = (
            ("raw",) + ALL_SCHEMES if args.schemes == "all"
            else tuple(args.schemes.split(","))
        )
        transforms = args.transforms.split(",")
        for tspec in transforms:
            for label in schemes:
                lines.append(_bench_one(args, data, label, tspec))
    with _open_out(args.output) as out:
        for line in lines:
            print(line, file=out)
    return EXIT_OK


def _bench_one(args, data: bytes, label: str, tspec: str) -> str:
    args.transform = tspec
    if label == "raw":
        chunk_bytes = args.chunk_bytes or make_transform(tspec).n_B
        sink_cfg = NodeConfig(role="sink", node_class="basic", listen="127.0.0.1:0")
        src_chunking = None
        src_class = "basic"
        cfg = None
    else:
        scheme = Scheme.parse(label)
        cfg = _build_cfg(args, scheme)
        chunk_bytes = cfg.n_B
        sink_class = "dedup" if scheme is Scheme.DD else "gd"
        sink_cfg = NodeConfig(
            role="sink", node_class=sink_class, listen="127.0.0.1:0", chunking=cfg
        )
        src_chunking = cfg
        src_class = sink_class

    sink = SinkNode(sink_cfg).start()
    started = time.monotonic()
    try:
        upstream = f"127.0.0.1:{sink.bound_port}"
        sessions = []
        for _ in range(args.sources):
            src = SourceNode(
                NodeConfig(
                    role="source",
                    node_class=src_class,
                    upstream=upstream,
                    window=args.window,
                    raw_block=chunk_bytes if label == "raw" else None,
                    chunking=src_chunking,
                )
            )
            sessions.append(src.run(data))
        duration = time.monotonic() - started
        deadline = time.monotonic() + 10.0
        while sum(1 for s in sink.sessions if s.finished) < args.sources:
            if time.monotonic() > deadline:
                raise ProtocolError("sink did not finish all sessions")
            time.sleep(0.01)
    finally:
        sink.stop()

    total_chunks = sum(
        s.run_stats.chunks if s.run_stats else 0 for s in sink.sessions
    )
    model = sum(s.stats.model_bytes for s in sink.sessions)
    dup = sum(s.stats.duplicate_bytes for s in sink.sessions)
    framing = sum(s.stats.framing_bytes for s in sink.sessions)
    hits = sum(s.hits for s in sink.sessions)
    misses = sum(s.misses for s in sink.sessions)
    if label == "raw":
        expected = len(data) * args.sources
        raw_bytes = expected
        chunks = (len(data) + chunk_bytes - 1) // chunk_bytes * args.sources
    else:
        expected = sum(
            costmodel.transmission_cost(
                cfg.scheme, costmodel.params_from_stats(s.run_stats)
            )
            for s in sink.sessions
            if s.run_stats is not None
        )
        raw_bytes = total_chunks * chunk_bytes
        chunks = total_chunks
    wire = model + dup + framing
    ratio = raw_bytes / model if model else 0.0
    throughput = (len(data) * args.sources) / duration if duration > 0 else 0.0
    return (
        f"{label},{tspec if label != 'raw' else 'none'},{args.preprocess},"
        f"{chunk_bytes},{args.sources},{chunks},{model},{expected},{dup},"
        f"{framing},{wire},{hits},{misses},{ratio:.6f},{throughput:.1f},"
        f"{duration:.3f}"
    )


# -- node -------------------------------------------------------------------


def cmd_node(args) -> int:
    options = node_mod.load_config_file(args.config) if args.config else {}
    cfg = NodeConfig.from_options(
        options,
        role=args.role,
        node_class=args.node_class,
        listen=args.listen,
        upstream=args.upstream,
        input=args.input,
        output=args.node_output,
        snapshot=args.snapshot,
        admin=args.admin,
        window=args.window,
        chunking=_build_cfg(args, Scheme.parse(args.scheme)) if args.scheme else None,
    )
    started = node_mod.run_node(cfg)
    if cfg.role == "source":
        print(started.metrics.to_csv(), end="")
        return EXIT_OK
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        started.stop()
        print(started.metrics.to_csv(), end="")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="gdkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", help="offline per-scheme compression report")
    p.add_argument("input")
    p.add_argument("--scheme", default="all",
                   help="comma list of dd,gd-vanilla,gd-reduced,gd-dual or 'all'")
    p.add_argument("--csv-columns", dest="csv_columns", default=None,
                   help="treat input as CSV; concatenate these columns")
    p.add_argument("--verify", action="store_true",
                   help="decode and compare against the input")
    p.add_argument("-o", "--output", default=None)
    _add_codec_options(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("synth", help="generate a reproducible synthetic dataset")
    p.add_argument("-m", type=int, required=True, help="Hamming parity bits")
    p.add_argument("--bases", type=int, required=True)
    p.add_argument("--chunks-per-basis", type=int, required=True)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cost", help="analytic transmission costs and thresholds")
    p.add_argument("--chunks", type=int, required=True)
    p.add_argument("--chunk-bytes", type=int, required=True)
    p.add_argument("--basis-bytes", type=int, default=None)
    p.add_argument("--fp-bytes", type=int, required=True)
    p.add_argument("--bases-dd", type=int, default=None)
    p.add_argument("--bases-gd", type=int, default=None)
    p.add_argument("--dev-bytes", type=int, default=0)
    p.add_argument("--matches-dd", type=int, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("bench", help="loopback benchmark over real sockets")
    p.add_argument("--input", default=None)
    p.add_argument("--schemes", default="all",
                   help="comma list incl. 'raw', or 'all'")
    p.add_argument("--transforms", default="hamming:7",
                   help="comma list of transform specs")
    p.add_argument("--sources", type=int, default=1)
    p.add_argument("--window", type=int, default=64)
    p.add_argument("-o", "--output", default=None)
    _add_codec_options(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("node", help="run a protocol node")
    p.add_argument("--role", required=True,
                   choices=("source", "intermediate", "sink"))
    p.add_argument("--class", dest="node_class", default=None,
                   choices=("basic", "dedup", "gd"))
    p.add_argument("--listen", default=None)
    p.add_argument("--upstream", default=None)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--input", default=None)
    p.add_argument("--output", dest="node_output", default=None)
    p.add_argument("--snapshot", default=None)
    p.add_argument("--admin", default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--scheme", default=None)
    _add_codec_options(p)
    p.set_defaults(func=cmd_node)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProtocolError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ConfigError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GdkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
