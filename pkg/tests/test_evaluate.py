import csv
import json

import numpy as np
import pytest

from ppstl.evaluate import (ConfusionMatrix, classify_trace, compute_metrics, curve, evaluate, first_positions,
                            preemptiveness, verdict_rows, write_curve_csv)
from ppstl.parser import parse
from ppstl.synth import synth_generate
from ppstl.trace import Dataset, NormalizationParams, Trace
from ppstl.trainer import PoolEntry

PLANTED = parse("O(x0 >= 0.85 & x1 >= 0.7)")
NAMES = ("x0", "x1", "x2")


def test_metrics_example():
    m = compute_metrics(ConfusionMatrix(tp=3, fp=1, tn=5, fn=1))
    assert m.precision == pytest.approx(0.75, abs=1e-9)
    assert m.recall == pytest.approx(0.75, abs=1e-9)
    assert m.f1 == pytest.approx(0.75, abs=1e-9)
    assert m.far == pytest.approx(1 / 6, abs=1e-9)
    assert m.mcc == pytest.approx(7 / 12, abs=1e-9)


def test_metrics_zero_denominators():
    m = compute_metrics(ConfusionMatrix())
    assert (m.precision, m.recall, m.f1, m.far, m.mcc) == (0.0, 0.0, 0.0, 0.0, 0.0)
    only_tn = compute_metrics(ConfusionMatrix(tn=4))
    assert only_tn.far == 0.0 and only_tn.mcc == 0.0
    with pytest.raises(ValueError):
        ConfusionMatrix(tp=-1)


def test_metrics_ranges():
    rng = np.random.default_rng(0)
    for _ in range(500):
        m = compute_metrics(ConfusionMatrix(*rng.integers(0, 20, size=4).tolist()))
        for v in (m.precision, m.recall, m.f1, m.far):
            assert 0.0 <= v <= 1.0
        assert -1.0 <= m.mcc <= 1.0


def _pool(*bodies, **meta):
    return [PoolEntry.learned(parse(b), **meta) for b in bodies]


def test_classify_and_preemptiveness():
    t = Trace("f", np.arange(10.0), True)
    pool = _pool("x > 6.5", "x > 2.5")
    assert classify_trace(pool, t, ("x",)) == (True, 3)
    assert preemptiveness(t, 3) == 6
    assert classify_trace(_pool("x > 100"), t, ("x",)) == (False, None)
    assert classify_trace([], t, ("x",)) == (False, None)
    with pytest.raises(ValueError):
        preemptiveness(t, None)
    with pytest.raises(ValueError):
        preemptiveness(Trace("g", np.arange(3.0)), 1)


def test_first_positions_grid():
    traces = [Trace("a", np.arange(10.0)), Trace("b", np.zeros(4))]
    got = first_positions(_pool("x > 6.5", "x > 2.5"), traces, ("x",))
    assert got.tolist() == [[7, -1], [3, -1]]


@pytest.fixture(scope="module")
def planted_test_set():
    return synth_generate(PLANTED, 20, 10, 60, np.random.default_rng(11), names=NAMES)


def test_planted_pool_is_perfect(planted_test_set):
    rep = evaluate(_pool(str(PLANTED)), planted_test_set, None)
    assert rep.confusion == ConfusionMatrix(tp=10, fp=0, tn=20, fn=0)
    assert rep.metrics.f1 == 1.0 and rep.metrics.far == 0.0
    assert rep.mean_preemptiveness > 0
    assert rep.unit == "step"
    for r in rep.traces:
        if r.is_failure:
            assert r.preemptiveness == 59 - r.first_bot


def test_empty_pool_predicts_nothing(planted_test_set):
    rep = evaluate([], planted_test_set, None)
    assert rep.confusion == ConfusionMatrix(tp=0, fp=0, tn=20, fn=10)
    assert rep.mean_preemptiveness is None


def test_evaluate_applies_normalization():
    data = Dataset((Trace("f", [[0.0], [10.0]], True), Trace("g", [[0.0], [4.0]])), ("x",))
    norm = NormalizationParams((0.0,), (10.0,))
    rep = evaluate(_pool("x > 0.5"), data, norm)
    assert rep.confusion == ConfusionMatrix(tp=1, fp=0, tn=1, fn=0)
    assert evaluate(_pool("x > 0.5"), data, None).confusion == ConfusionMatrix(tp=1, fp=1, tn=0, fn=0)


def test_report_serialization(tmp_path, planted_test_set):
    rep = evaluate(_pool(str(PLANTED)), planted_test_set, None)
    rep.write(tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["confusion"] == {"tp": 10, "fp": 0, "tn": 20, "fn": 0}
    assert len(d["traces"]) == 30


def test_curve_checkpoints(tmp_path):
    t = Trace("f", np.arange(10.0), True)
    data = Dataset((t, Trace("g", np.zeros(10))), ("x",))
    pool = (_pool("x > 100")  # hand-written, no provenance
            + _pool("x > 6.5", epoch=1, batch=0) + _pool("x > 8.5", epoch=1, batch=0)
            + _pool("x > 2.5", epoch=2, batch=0))
    pts = curve(pool, data, None)
    assert [(p.epoch, p.batch, p.pool_size) for p in pts] == [(None, None, 1), (1, 0, 3), (2, 0, 4)]
    assert [p.recall for p in pts] == [0.0, 1.0, 1.0]
    assert [p.mean_preemptiveness for p in pts] == [None, 2.0, 6.0]
    write_curve_csv(pts, tmp_path / "c.csv")
    rows = list(csv.DictReader((tmp_path / "c.csv").open()))
    assert len(rows) == 3 and rows[0]["mean_preemptiveness"] == ""


def test_verdict_rows_stop_at_first_alarm():
    data = Dataset((Trace("f", np.arange(5.0), True), Trace("g", np.zeros(3))), ("x",))
    rows = list(verdict_rows(_pool("x > 1.5"), data, None))
    assert rows == [("f", 0, "Unknown"), ("f", 1, "Unknown"), ("f", 2, "Bot"),
                    ("g", 0, "Unknown"), ("g", 1, "Unknown"), ("g", 2, "Unknown")]
