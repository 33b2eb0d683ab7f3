import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icsim.telemetry import EmaState, Sample, aggregate, detect, ema_update, grid_windows, make_window

rts = st.floats(min_value=0, max_value=1e3, allow_nan=False, allow_infinity=False)


def _ema(values, alpha=0.02, init=None):
    s = EmaState(alpha) if init is None else EmaState(alpha, init, True, 1)
    for v in values:
        s = ema_update(s, v)
    return s


def test_ema_examples():
    assert ema_update(EmaState(0.02, 2.0, True, 1), 2.0).value == 2.0
    assert ema_update(EmaState(0.02, 1.0, True, 1), 6.0).value == pytest.approx(1.1, abs=1e-12)
    assert _ema([5.0] * 100, init=0.0).value == pytest.approx(5 * (1 - 0.98 ** 100), abs=1e-12)
    assert _ema([5.0] * 100, init=0.0).value == pytest.approx(4.3369, abs=1e-4)


def test_ema_first_value_initializes():
    s = ema_update(EmaState(0.02), 2.5)
    assert s.initialized and s.value == 2.5 and s.count == 1


def test_ema_rejects_bad_input():
    with pytest.raises(ValueError):
        ema_update(EmaState(), -0.1)
    with pytest.raises(ValueError):
        EmaState(alpha=1.0)


def test_detect_examples():
    def st_(v):
        return EmaState(0.02, v, True, 10)

    assert detect(st_(3.2), 3, 1, 50).direction == "upper"
    assert detect(st_(2.0), 3, 1, 50) is None
    assert detect(st_(0.8), 3, 1, 100, suppressed_until=130) is None
    assert detect(st_(0.8), 3, 1, 130, suppressed_until=130).direction == "lower"
    assert detect(st_(3.0), 3, 1, 50) is None  # strict comparison
    assert detect(EmaState(0.02, 9.0, True, 4), 3, 1, 50) is None  # min_requests
    assert detect(EmaState(0.02), 3, 1, 50) is None


def _samples(spans):
    """One sample per second; ``spans`` is [(start, end, rt)]."""
    out = []
    for a, b, rt in spans:
        for t in range(a, b):
            out.append(Sample(float(t), [rt], {"p": {"cpu_utilization": rt / 10}}, {}, {"S1-S2": {"utilization": 0.5}}))
    return out


def test_aggregate_example():
    agg = aggregate(_samples([(0, 10, 1.0), (10, 20, 1.5), (20, 30, 3.5)]), 10.0, 2, 30.0)
    assert [w.avg_rt for w in agg.pre_windows] == [1.0, 1.5]
    assert agg.violation_window.avg_rt == 3.5
    assert not agg.short_history


def test_aggregate_short_history():
    agg = aggregate(_samples([(0, 10, 2.0)]), 10.0, 3, 10.0, history_start=0.0)
    assert agg.pre_windows == [] and agg.short_history
    assert agg.violation_window.avg_rt == 2.0


def test_aggregate_constant():
    agg = aggregate(_samples([(0, 40, 2.25)]), 10.0, 3, 40.0)
    assert all(w.avg_rt == 2.25 for w in agg.pre_windows + [agg.violation_window])
    assert agg.violation_window.pods["p"]["cpu_utilization"] == pytest.approx(0.225)


def test_utilization_cap():
    s = [Sample(0.0, [], {}, {}, {"L": {"utilization": 7.0}})]
    assert make_window(0, 0, 1, s).links["L"]["utilization"] == 2.0


def test_grid_windows_partial_tail():
    ws = grid_windows(_samples([(0, 25, 1.0)]), 10.0, 25.0)
    assert [(w.start, w.end) for w in ws] == [(0, 10), (10, 20), (20, 25)]
    assert [w.request_count for w in ws] == [10, 10, 5]


@settings(max_examples=300, deadline=None)
@given(seq=st.lists(rts, min_size=1, max_size=60), init=rts, c=st.floats(0.001, 100))
def test_ema_linearity(seq, init, c):
    a = _ema([c * x for x in seq], init=c * init).value
    b = c * _ema(seq, init=init).value
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(seq=st.lists(rts, min_size=1, max_size=60), init=rts)
def test_ema_bounds(seq, init):
    v = _ema(seq, init=init).value
    lo, hi = min(seq + [init]), max(seq + [init])
    assert lo - 1e-9 <= v <= hi + 1e-9


@settings(max_examples=200, deadline=None)
@given(t=st.floats(40, 500), w=st.floats(1, 30), k=st.integers(0, 5))
def test_windows_tile_without_gaps(t, w, k):
    agg = aggregate([], w, k, t, history_start=0.0)
    spans = [(x.start, x.end) for x in agg.pre_windows] + [(agg.violation_window.start, agg.violation_window.end)]
    assert spans[-1][1] == t
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        assert a1 == pytest.approx(b0, abs=1e-9)
    assert all(b - a == pytest.approx(w) for a, b in spans)


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0, 10), now=st.floats(0, 1000), sup=st.floats(0, 1000))
def test_detect_is_pure(v, now, sup):
    s = EmaState(0.02, v, True, 10)
    assert detect(s, 3, 1, now, sup) == detect(s, 3, 1, now, sup)
