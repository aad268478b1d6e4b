"""gdkit: generalized-deduplication toolkit.

Maps fixed-size chunks onto (basis, deviation) pairs with error-correcting
code transforms, deduplicates bases across many sources against a shared
sink store, and ships the result over a compact request/response wire
protocol.  Includes an analytic transmission-cost model, a reproducible
synthetic dataset generator, and a CLI (``gdkit``) for offline analysis and
socket benchmarks.
"""

from .ecc import (
    BasisDeviation,
    HammingConfig,
    RsConfig,
    hamming_params,
    hamming_reconstruct,
    hamming_transform,
    make_transform,
    rs_params,
    rs_reconstruct,
    rs_transform,
)
from .engine import (
    ChunkingConfig,
    FingerprintStore,
    StreamDecoder,
    StreamEncoder,
    split_into_chunks,
    store_capacity,
)
from .fingerprint import FingerprintConfig, Scheme, fingerprint
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "BasisDeviation",
    "ChunkingConfig",
    "FingerprintConfig",
    "FingerprintStore",
    "HammingConfig",
    "KERNEL_BACKEND",
    "RsConfig",
    "Scheme",
    "StreamDecoder",
    "StreamEncoder",
    "fingerprint",
    "hamming_params",
    "hamming_reconstruct",
    "hamming_transform",
    "make_transform",
    "rs_params",
    "rs_reconstruct",
    "rs_transform",
    "split_into_chunks",
    "store_capacity",
    "__version__",
]
