"""Analytic transmission costs and outperformance thresholds.

For a stream of ``C`` chunks of ``n_B`` bytes, with ``B`` distinct payloads
and per-chunk deviation footprints ``d_i``, the per-scheme byte costs are

* raw:        ``C * n_B``
* DD:         ``B_DD * n_B + C * h``
* GD-vanilla: ``B_GD * k_B + C * h + sum(d_i)``
* GD-reduced: ``B_GD * k_B + C * (h - d_fixed) + sum(d_i)``; when the fixed
  deviation footprint is not supplied, the layout identity
  ``fp + deviation == h`` collapses this to ``B_GD * k_B + C * h``.
* GD-dual:    ``B_GD * n_B + sum over Q of d_i + C * h`` where Q holds the
  chunks resolved via a known basis (no exact chunk match); ``|Q|`` equals
  ``B_DD - B_GD``.

All quantities are exact integers; thresholds are computed with rational
arithmetic and only then rounded outward.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .fingerprint import Scheme

__all__ = [
    "CostParams",
    "DominanceReport",
    "transmission_cost",
    "raw_cost",
    "compression_ratio",
    "dd_outperformance",
    "gd_vanilla_outperformance",
    "dominance_check",
    "params_from_stats",
    "cost_table",
    "emit_cost_csv",
]


@dataclass
class CostParams:
    chunks: int
    chunk_bytes: int
    basis_bytes: int
    fp_bytes: int
    bases_dd: int | None = None
    bases_gd: int | None = None
    dev_bytes: int | list[int] = 0
    dev_fixed: int | None = None
    q_dev_bytes: list[int] | None = None

    def __post_init__(self):
        if self.chunks < 0 or self.chunk_bytes < 1 or self.fp_bytes < 1:
            raise ValueError("chunk/fingerprint quantities must be positive")
        if self.basis_bytes < 1 or self.basis_bytes > self.chunk_bytes:
            raise ValueError("basis bytes must satisfy 1 <= k_B <= n_B")
        for name in ("bases_dd", "bases_gd"):
            value = getattr(self, name)
            if value is not None and not 0 <= value <= self.chunks:
                raise ValueError(f"{name} outside 0..chunks")
        if (
            self.bases_dd is not None
            and self.bases_gd is not None
            and self.bases_gd > self.bases_dd
        ):
            raise ValueError("bases_gd cannot exceed bases_dd")

    @property
    def dev_sum(self) -> int:
        if isinstance(self.dev_bytes, int):
            return self.dev_bytes * self.chunks
        if len(self.dev_bytes) != self.chunks:
            raise ValueError("per-chunk deviation list length != chunks")
        return sum(self.dev_bytes)

    def _require(self, name: str):
        value = getattr(self, name)
        if value is None:
            raise ValueError(f"{name} is required for this scheme")
        return value


def raw_cost(params: CostParams) -> int:
    return params.chunks * params.chunk_bytes


def transmission_cost(scheme: Scheme, params: CostParams) -> int:
    """Exact byte cost of transmitting the stream under one scheme."""
    c = params.chunks
    h = params.fp_bytes
    if scheme is Scheme.DD:
        return params._require("bases_dd") * params.chunk_bytes + c * h
    if scheme is Scheme.GD_VANILLA:
        return params._require("bases_gd") * params.basis_bytes + c * h + params.dev_sum
    if scheme is Scheme.GD_REDUCED:
        base = params._require("bases_gd") * params.basis_bytes
        if params.dev_fixed is None:
            return base + c * h
        return base + c * (h - params.dev_fixed) + params.dev_sum
    if scheme is Scheme.GD_DUAL:
        b_gd = params._require("bases_gd")
        if params.q_dev_bytes is not None:
            q_sum = sum(params.q_dev_bytes)
        else:
            if not isinstance(params.dev_bytes, int):
                raise ValueError("dual layout needs q_dev_bytes or a scalar dev_bytes")
            q_sum = (params._require("bases_dd") - b_gd) * params.dev_bytes
        return b_gd * params.chunk_bytes + q_sum + c * h
    raise ValueError(f"unknown scheme: {scheme!r}")


def compression_ratio(params: CostParams, cost: int) -> Fraction:
    if cost <= 0:
        raise ValueError("cost must be positive")
    return Fraction(raw_cost(params), cost)


def dd_outperformance(params: CostParams) -> Fraction:
    """Match count above which DD transmits less than raw: M_DD > C*h/n_B."""
    return Fraction(params.chunks * params.fp_bytes, params.chunk_bytes)


def gd_vanilla_outperformance(params: CostParams, m_dd: int) -> tuple[int, int]:
    """Smallest integer match count for GD-vanilla to beat DD.

    Returns ``(min_m_gd, extra)`` where ``extra = min_m_gd - m_dd``: the
    strict bound is ``M_GD > (sum(d) + C*(k_B - n_B) + M_DD*n_B) / k_B``.
    """
    bound = Fraction(
        params.dev_sum
        + params.chunks * (params.basis_bytes - params.chunk_bytes)
        + m_dd * params.chunk_bytes,
        params.basis_bytes,
    )
    min_m_gd = bound.numerator // bound.denominator + 1  # strictly above the bound
    return min_m_gd, min_m_gd - m_dd


@dataclass
class DominanceReport:
    t_dd: int
    t_gd_reduced: int
    t_gd_dual: int
    margin_reduced: int = field(init=False)
    margin_dual: int = field(init=False)

    def __post_init__(self):
        self.margin_reduced = self.t_dd - self.t_gd_reduced
        self.margin_dual = self.t_dd - self.t_gd_dual

    @property
    def holds(self) -> bool:
        return self.margin_reduced >= 0 and self.margin_dual >= 0


def dominance_check(params: CostParams) -> DominanceReport:
    """Costs of the two never-worse layouts next to DD, with margins."""
    return DominanceReport(
        t_dd=transmission_cost(Scheme.DD, params),
        t_gd_reduced=transmission_cost(Scheme.GD_REDUCED, params),
        t_gd_dual=transmission_cost(Scheme.GD_DUAL, params),
    )


def params_from_stats(stats) -> CostParams:
    """Map one engine run onto model parameters.

    Basis counts are the payloads actually sent, which equal the distinct
    counts whenever the run started against a cold store.
    """
    scheme = stats.scheme
    return CostParams(
        chunks=stats.chunks,
        chunk_bytes=stats.chunk_bytes,
        basis_bytes=stats.basis_bytes,
        fp_bytes=stats.fp_bytes,
        bases_dd=stats.payload_count if scheme is Scheme.DD else (stats.distinct_chunks or None),
        bases_gd=stats.payload_count if scheme is not Scheme.DD else None,
        dev_bytes=list(stats.dev_list),
        dev_fixed=stats.dev_fixed if scheme is Scheme.GD_REDUCED else None,
        q_dev_bytes=list(stats.q_dev_list) if scheme is Scheme.GD_DUAL else None,
    )


def cost_table(params: CostParams) -> list[tuple[str, int, Fraction]]:
    """(label, bytes, ratio) rows for raw plus every applicable scheme."""
    rows = [("raw", raw_cost(params), Fraction(1))]
    for scheme in Scheme:
        try:
            cost = transmission_cost(scheme, params)
        except ValueError:
            continue
        rows.append((scheme.label, cost, compression_ratio(params, cost)))
    return rows


def emit_cost_csv(params: CostParams) -> str:
    lines = ["scheme,bytes,compression_ratio"]
    for label, cost, ratio in cost_table(params):
        lines.append(f"{label},{cost},{float(ratio):.6f}")
    return "\n".join(lines) + "\n"
