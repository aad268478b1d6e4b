"""Fingerprints and per-scheme wire identifier layouts.

A fingerprint is a digest truncated to its leading ``length`` bytes; every
node in a deployment uses the same algorithm and length.  Four wire layouts
are supported:

* ``DD``        -- one chunk fingerprint, no deviation.
* ``GD_VANILLA``-- one basis fingerprint of the same length plus deviation.
* ``GD_REDUCED``-- basis fingerprint shortened by the transform's fixed
                   deviation footprint, so fingerprint + deviation costs as
                   much as the DD fingerprint alone.
* ``GD_DUAL``   -- half-length chunk fingerprint paired with a half-length
                   basis fingerprint (floor/ceil split of the DD length).
"""

from __future__ import annotations

import enum
import hashlib
import zlib
from dataclasses import dataclass

from .ecc import BasisDeviation
from .errors import ConfigError

_DIGEST_SIZES = {"crc32": 4, "sha1": 20, "sha256": 32}


class Scheme(enum.IntEnum):
    DD = 0
    GD_VANILLA = 1
    GD_REDUCED = 2
    GD_DUAL = 3

    @property
    def label(self) -> str:
        return _SCHEME_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        try:
            return _SCHEME_BY_LABEL[text.strip().lower()]
        except KeyError:
            raise ConfigError(f"unknown scheme: {text!r}") from None


_SCHEME_LABELS = {
    Scheme.DD: "dd",
    Scheme.GD_VANILLA: "gd-vanilla",
    Scheme.GD_REDUCED: "gd-reduced",
    Scheme.GD_DUAL: "gd-dual",
}
_SCHEME_BY_LABEL = {v: k for k, v in _SCHEME_LABELS.items()}

GD_SCHEMES = (Scheme.GD_VANILLA, Scheme.GD_REDUCED, Scheme.GD_DUAL)


@dataclass(frozen=True)
class FingerprintConfig:
    algorithm: str = "sha1"
    length: int = 6

    def __post_init__(self):
        algo = self.algorithm.lower()
        if algo not in _DIGEST_SIZES:
            raise ConfigError(f"unknown fingerprint algorithm: {self.algorithm!r}")
        object.__setattr__(self, "algorithm", algo)
        if not 1 <= self.length <= _DIGEST_SIZES[algo]:
            raise ConfigError(
                f"fingerprint length {self.length} outside 1..{_DIGEST_SIZES[algo]}"
                f" for {algo}"
            )

    @classmethod
    def parse(cls, text: str) -> "FingerprintConfig":
        """Parse a CLI spec such as ``crc32:4`` or ``sha1:6``."""
        name, _, arg = text.partition(":")
        if not arg:
            raise ConfigError(f"fingerprint spec needs a length: {text!r}")
        try:
            return cls(name, int(arg))
        except ValueError:
            raise ConfigError(f"bad fingerprint spec: {text!r}") from None

    def spec(self) -> str:
        return f"{self.algorithm}:{self.length}"


def fingerprint(data: bytes, cfg: FingerprintConfig) -> bytes:
    """Digest truncated to the configured number of leading bytes."""
    if cfg.algorithm == "crc32":
        digest = zlib.crc32(data).to_bytes(4, "big")
    else:
        digest = hashlib.new(cfg.algorithm, data).digest()
    return digest[: cfg.length]


def dual_lengths(h_b: int) -> tuple[int, int]:
    """(chunk fp bytes, basis fp bytes) for the dual layout: floor/ceil halves."""
    return h_b // 2, (h_b + 1) // 2


def reduced_fp_len(cfg: FingerprintConfig, fixed_dev_bytes: int) -> int:
    """Basis fingerprint length under the reduced layout."""
    fp_len = cfg.length - fixed_dev_bytes
    if fp_len < 1:
        raise ConfigError(
            f"deviation footprint {fixed_dev_bytes} leaves no room in a "
            f"{cfg.length}-byte fingerprint"
        )
    return fp_len


@dataclass(frozen=True)
class SchemeIdentifiers:
    scheme: Scheme
    primary_fp: bytes
    secondary_fp: bytes | None = None
    deviation: bytes | None = None

    @property
    def total_fp_bytes(self) -> int:
        return len(self.primary_fp) + len(self.secondary_fp or b"")


def derive_identifiers(
    chunk: bytes,
    bd: BasisDeviation,
    scheme: Scheme,
    cfg: FingerprintConfig,
    fixed_dev_bytes: int = 0,
) -> SchemeIdentifiers:
    """Compute the wire identifiers a chunk travels under."""
    if scheme is Scheme.DD:
        return SchemeIdentifiers(scheme, fingerprint(chunk, cfg))
    if scheme is Scheme.GD_VANILLA:
        return SchemeIdentifiers(
            scheme, fingerprint(bd.basis, cfg), deviation=bd.deviation
        )
    if scheme is Scheme.GD_REDUCED:
        fp_len = reduced_fp_len(cfg, fixed_dev_bytes)
        return SchemeIdentifiers(
            scheme, fingerprint(bd.basis, cfg)[:fp_len], deviation=bd.deviation
        )
    if scheme is Scheme.GD_DUAL:
        c_len, b_len = dual_lengths(cfg.length)
        return SchemeIdentifiers(
            scheme,
            fingerprint(chunk, cfg)[:c_len],
            secondary_fp=fingerprint(bd.basis, cfg)[:b_len],
            deviation=bd.deviation,
        )
    raise ConfigError(f"unknown scheme: {scheme!r}")
