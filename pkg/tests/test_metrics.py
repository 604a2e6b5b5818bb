import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsgcc_tde.metrics import (Accumulator, TdeRecord, default_guard, is_anomalous, peak_snr,
                               summarize)


def rec(err, tc=12.0, rho=10.0):
    return TdeRecord(true_tdoa=5, estimated_tdoa=5 + err, peak_snr_db=rho, correlation_time=tc)


def test_anomaly_threshold_is_strict():
    assert not is_anomalous(rec(0, tc=1.0))
    assert is_anomalous(rec(7))
    assert is_anomalous(rec(-7))
    assert not is_anomalous(rec(6))


def test_record_validation():
    with pytest.raises(ValueError):
        rec(0, tc=0.0)
    with pytest.raises(ValueError):
        TdeRecord(0, 0, 1.0, 10.0, method_tag="music")


def test_peak_snr_examples():
    v = np.zeros(64)
    v[32] = 1.0
    assert peak_snr(v, 0, 3) == math.inf
    v = np.full(64, 0.1)
    v[32 + 4] = 1.0
    assert peak_snr(v, 4, 2) == pytest.approx(20.0)
    assert peak_snr(np.full(64, 0.7), -10, 2) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        peak_snr(v, 40, 2)


def test_peak_snr_guard_excludes_the_neighbourhood():
    v = np.full(64, 0.1)
    v[30:35] = 0.9
    v[32] = 1.0
    assert peak_snr(v, 0, 2) == pytest.approx(20.0)
    assert peak_snr(v, 0, 1) < 20.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_peak_snr_is_scale_invariant(seed, alpha):
    v = np.abs(np.random.default_rng(seed).standard_normal(64))
    lag = int(np.argmax(v)) - 32
    assert peak_snr(alpha * v, lag, 3) == pytest.approx(peak_snr(v, lag, 3), abs=1e-9)


def test_default_guard():
    assert default_guard(12.0) == 6
    assert default_guard(12.5) == 7


def test_summary_examples():
    s = summarize([rec(0)] * 5)
    assert (s.anomalous_pct, s.mae_na, s.sdae_na) == (0.0, 0.0, 0.0)
    s = summarize([rec(0), rec(1), rec(-2), rec(40)])
    assert s.anomalous_pct == 25.0 and s.count_anomalous == 1 and s.count_total == 4
    s = summarize([rec(1), rec(-1), rec(3)])
    assert s.mae_na == pytest.approx(5 / 3)
    assert s.sdae_na == pytest.approx(math.sqrt(8 / 9))


def test_all_anomalous_leaves_moments_undefined():
    s = summarize([rec(30), rec(-30)])
    assert s.anomalous_pct == 100.0
    assert math.isnan(s.mae_na) and math.isnan(s.sdae_na) and math.isnan(s.mean_peak_snr)
    assert not s.defined
    with pytest.raises(ValueError):
        summarize([])


errors = st.lists(st.tuples(st.integers(-20, 20), st.floats(-10, 60)), min_size=1, max_size=40)


@settings(max_examples=60, deadline=None)
@given(errors, st.randoms(use_true_random=False))
def test_summary_matches_direct_moments_and_ignores_order(pairs, shuffler):
    records = [rec(e, rho=r) for e, r in pairs]
    s = summarize(records)
    shuffled = list(records)
    shuffler.shuffle(shuffled)
    t = summarize(shuffled)
    assert t.anomalous_pct == s.anomalous_pct
    ok = [(abs(e), r) for e, r in pairs if abs(e) <= 6]
    assert s.anomalous_pct == pytest.approx(100.0 * (len(pairs) - len(ok)) / len(pairs))
    if ok:
        e = np.array([x for x, _ in ok], dtype=float)
        assert s.mae_na == pytest.approx(e.mean(), abs=1e-9) == t.mae_na
        assert s.sdae_na == pytest.approx(e.std(), abs=1e-6)
        assert s.mean_peak_snr == pytest.approx(np.mean([r for _, r in ok]), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(errors)
def test_adding_an_exact_estimate_never_hurts(pairs):
    records = [rec(e, rho=r) for e, r in pairs]
    before = summarize(records)
    after = summarize(records + [rec(0)])
    assert after.anomalous_pct <= before.anomalous_pct
    if before.defined:
        assert after.mae_na <= before.mae_na + 1e-12


@settings(max_examples=40, deadline=None)
@given(errors, errors)
def test_accumulators_merge(a, b):
    ra = [rec(e, rho=r) for e, r in a]
    rb = [rec(e, rho=r) for e, r in b]
    acc_a, acc_b = Accumulator(), Accumulator()
    for r in ra:
        acc_a.add(r)
    for r in rb:
        acc_b.add(r)
    merged = acc_a.merge(acc_b).summary()
    whole = summarize(ra + rb)
    assert merged.count_total == whole.count_total
    assert merged.anomalous_pct == whole.anomalous_pct
    if whole.defined:
        assert merged.mae_na == pytest.approx(whole.mae_na)
