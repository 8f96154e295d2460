import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bora.adapters import AdapterConfig, init_params
from bora.analysis import SPECTRUM_COLUMNS, adapter_spectrum, compare_spectra, spectrum
from bora.grad import random_params


def test_zero_matrix():
    rep = spectrum(np.zeros((6, 4)))
    assert rep.count_above == 0 and rep.sum_squared == 0.0 and rep.threshold == 0.005


def test_bad_threshold():
    with pytest.raises(ValueError):
        spectrum(np.eye(2), 0.0)


def test_lora_count():
    cfg = AdapterConfig(64, 64, 8, variant="lora")
    assert adapter_spectrum(random_params(cfg, 0), cfg, 1e-9, relative=True).count_above == 8


def test_bora_count():
    cfg = AdapterConfig(64, 64, 8, 4)
    assert adapter_spectrum(random_params(cfg, 0), cfg, 1e-9, relative=True).count_above == 32


def test_fresh_adapter_counts_zero():
    cfg = AdapterConfig(16, 16, 2, 2)
    assert adapter_spectrum(init_params(cfg, 0), cfg, 1e-9, relative=True).count_above == 0


def test_rows_and_ranks():
    reports = []
    for r in (8, 16, 32):
        cfg = AdapterConfig(64, 64, r, variant="lora")
        reports.append(adapter_spectrum(random_params(cfg, r), cfg, 1e-9, label=f"r{r}", relative=True))
    rows = compare_spectra(reports)
    assert [row["count_above"] for row in rows] == [8, 16, 32]
    assert all(list(row) == list(SPECTRUM_COLUMNS) for row in rows)
    assert len(compare_spectra(reports[:1])) == 1


def test_compare_needs_reports():
    with pytest.raises(ValueError):
        compare_spectra([])


def test_scaled_update_is_analyzed():
    cfg = AdapterConfig(16, 16, 2, 2, alpha=6.0)
    params = random_params(cfg, 1)
    base = adapter_spectrum(params, AdapterConfig(16, 16, 2, 2), 1e-3)
    scaled = adapter_spectrum(params, cfg, 1e-3)
    assert scaled.fro_norm == pytest.approx(3.0 * base.fro_norm)
    assert scaled.alpha == 6.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), r=st.integers(1, 4), b=st.sampled_from([1, 2, 4, 8]))
def test_parseval_and_ceiling(seed, r, b):
    cfg = AdapterConfig(16, 16, r, b)
    rep = adapter_spectrum(random_params(cfg, seed), cfg, 1e-9, relative=True)
    assert abs(rep.sum_squared - rep.fro_norm**2) <= 1e-9 * rep.fro_norm**2
    assert rep.count_above <= min(16, b * r)
    assert rep.count_above == int(np.sum(rep.singular_values > rep.threshold))
