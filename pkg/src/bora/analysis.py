"""Singular-value reports for materialized adapter updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .adapters import AdapterConfig, AdapterParams, materialize

__all__ = [
    "DEFAULT_THRESHOLD",
    "SPECTRUM_COLUMNS",
    "SpectrumReport",
    "spectrum",
    "adapter_spectrum",
    "compare_spectra",
]

DEFAULT_THRESHOLD = 0.005
SPECTRUM_COLUMNS = ("label", "variant", "r", "b", "threshold", "count_above", "sum_squared", "fro_norm")


@dataclass(frozen=True)
class SpectrumReport:
    label: str
    singular_values: np.ndarray
    threshold: float
    count_above: int
    sum_squared: float
    fro_norm: float
    variant: str = ""
    r: int | None = None
    b: int | None = None
    alpha: float | None = None

    def row(self) -> dict:
        return {
            "label": self.label,
            "variant": self.variant,
            "r": "" if self.r is None else self.r,
            "b": "" if self.b is None else self.b,
            "threshold": repr(self.threshold),
            "count_above": self.count_above,
            "sum_squared": repr(self.sum_squared),
            "fro_norm": repr(self.fro_norm),
        }


def spectrum(delta, threshold: float = DEFAULT_THRESHOLD, label: str = "", **meta) -> SpectrumReport:
    """Full spectrum of ``delta`` with the count above an absolute threshold.

    ``sum_squared`` is the sum of squared singular values; ``fro_norm`` is
    computed directly from the entries so the two can be cross-checked.
    """
    if not threshold > 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    delta = linalg.check_matrix(delta, "delta")
    s = linalg.svd(delta).singular_values
    return SpectrumReport(
        label=label,
        singular_values=s,
        threshold=float(threshold),
        count_above=int(np.count_nonzero(s > threshold)),
        sum_squared=float(np.sum(s * s)),
        fro_norm=linalg.frobenius_norm(delta),
        **meta,
    )


def adapter_spectrum(
    params: AdapterParams,
    config: AdapterConfig,
    threshold: float = DEFAULT_THRESHOLD,
    label: str = "",
    relative: bool = False,
) -> SpectrumReport:
    """Spectrum of the scaled update ``(alpha/r) dW``.

    With ``relative=True`` the threshold is multiplied by ``||(alpha/r) dW||_F``.
    """
    delta = config.scale * materialize(params, config)
    if relative:
        threshold = threshold * linalg.frobenius_norm(delta)
        if threshold == 0.0:
            # an all-zero update has nothing above any positive threshold
            threshold = np.finfo(float).tiny
    return spectrum(
        delta,
        threshold,
        label=label,
        variant=config.variant.value,
        r=config.r,
        b=config.b,
        alpha=config.alpha,
    )


def compare_spectra(reports) -> list[dict]:
    """One CSV-ready row per report, in input order."""
    reports = list(reports)
    if not reports:
        raise ValueError("compare_spectra needs at least one report")
    return [rep.row() for rep in reports]
