import json

import numpy as np
import pytest

from ppstl.engine import robustness_of
from ppstl.errors import FragmentError, SynthesisError, TraceFormatError
from ppstl.parser import parse
from ppstl.synth import atom_polarity, synth_generate, write_metadata
from ppstl.trace import (AugmentedPair, Dataset, NormalizationParams, Trace, augment, batch, cut, derived_rng,
                         load_csv, normalize_apply, normalize_fit, unbatch, write_csv)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_csv_sorts_interleaved_rows(tmp_path):
    p = _write(tmp_path / "d.csv", "trace_id,t,a,b,is_failure\n"
               "s1,1,2.0,3.0,1\n"
               "s0,0,0.0,1.0,0\n"
               "s1,0,1.0,2.0,1\n"
               "\n")
    d = load_csv(p)
    assert d.names == ("a", "b")
    s1 = [t for t in d.traces if t.id == "s1"][0]
    assert s1.is_failure
    assert s1.values.tolist() == [[1.0, 2.0], [2.0, 3.0]]
    assert len(d.failures) == 1 and len(d.good) == 1


@pytest.mark.parametrize("body,match", [
    ("trace_id,t,a\ns,0,1\n", "is_failure"),
    ("trace_id,t,a,is_failure\ns,0,x,0\n", "non-numeric"),
    ("trace_id,t,a,is_failure\ns,0,1,2\n", "0 or 1"),
    ("trace_id,t,a,is_failure\ns,0,1,0\ns,0,2,0\n", "non-monotone"),
    ("trace_id,t,a,is_failure\ns,0,1,0\ns,1,2,1\n", "inconsistent"),
    ("trace_id,t,a,is_failure\ns,0,nan,0\n", "non-finite"),
    ("trace_id,t,a,is_failure\ns,0,1\n", "fields"),
    ("", "empty"),
])
def test_load_csv_errors(tmp_path, body, match):
    with pytest.raises(TraceFormatError, match=match):
        load_csv(_write(tmp_path / "bad.csv", body))


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    traces = tuple(Trace(f"t{k}", rng.normal(size=(5 + k, 2)), k % 2 == 1) for k in range(4))
    d = Dataset(traces, ("u", "v"))
    write_csv(d, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv")
    assert back == d


def test_dataset_rejects_bad_arity_and_duplicates():
    with pytest.raises(TraceFormatError):
        Dataset((Trace("a", np.zeros((3, 2))),), ("x",))
    with pytest.raises(TraceFormatError):
        Dataset((Trace("a", np.zeros(3)), Trace("a", np.ones(3))), ("x",))


def test_trace_rejects_empty_and_is_immutable():
    with pytest.raises(TraceFormatError):
        Trace("e", np.zeros((0, 2)))
    t = Trace("t", [1.0, 2.0])
    assert t.values.shape == (2, 1)
    with pytest.raises(ValueError):
        t.values[0, 0] = 5.0


def test_normalization_maps_train_range_to_unit_interval():
    d = Dataset((Trace("a", [[0.0, 5.0], [10.0, 5.0]]), Trace("b", [[5.0, 5.0]])), ("x", "y"))
    p = normalize_fit(d)
    assert p.lo == (0.0, 5.0) and p.hi == (10.0, 5.0)
    nd = normalize_apply(p, d)
    assert nd.traces[0].values.tolist() == [[0.0, 0.5], [1.0, 0.5]]
    out = normalize_apply(p, Dataset((Trace("c", [[20.0, 7.0]]),), ("x", "y")))
    assert out.traces[0].values.tolist() == [[2.0, 0.5]]  # no clipping, constant column -> 0.5
    assert NormalizationParams.from_dict(p.to_dict()) == p


def test_augment_is_seeded_and_clipped():
    t = Trace("f", np.full((20, 2), 0.999), True)
    a = augment(t, 3, 0.05, derived_rng(0, "x"))
    b = augment(t, 3, 0.05, derived_rng(0, "x"))
    assert [x.values.tolist() for x in a] == [x.values.tolist() for x in b]
    assert all(x.values.max() <= 1.0 and x.values.min() >= 0.0 for x in a)
    assert [x.id for x in a] == ["f#aug0", "f#aug1", "f#aug2"]
    assert all(x.is_failure for x in a)
    with pytest.raises(ValueError):
        augment(t, 1, -1.0, derived_rng(0))


def test_batch_pads_and_unbatch_restores():
    ts = [Trace("a", np.ones((3, 2))), Trace("b", np.zeros((5, 2)))]
    b = batch(ts, ("x", "y"))
    assert b.shape == (2, 5, 2)
    assert b.lengths.tolist() == [3, 5]
    assert [u.tolist() for u in unbatch(b)] == [t.values.tolist() for t in ts]
    with pytest.raises(ValueError):
        batch([])


def test_cut_and_augmented_pair():
    t = Trace("f", np.arange(10.0), True)
    assert cut(t, 4).values[:, 0].tolist() == [0.0, 1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        cut(t, 0)
    p = AugmentedPair(t, augment(t, 2, 0.01, derived_rng(1)))
    c = p.cut(3)
    assert len(c) == 3 and all(len(a) == 3 for a in c.augmentations)
    with pytest.raises(TraceFormatError):
        AugmentedPair(t, (Trace("x", np.zeros(4)),))


def test_derived_rng_keys_are_independent():
    a = derived_rng(0, "learn", 1, 0).random(4)
    assert np.array_equal(a, derived_rng(0, "learn", 1, 0).random(4))
    assert not np.array_equal(a, derived_rng(0, "learn", 1, 1).random(4))
    assert not np.array_equal(a, derived_rng(1, "learn", 1, 0).random(4))


PLANTED = parse("O(x0 >= 0.85 & x1 >= 0.7)")


def test_synth_labels_follow_planted_detector():
    d = synth_generate(PLANTED, 10, 6, 40, np.random.default_rng(0), names=("x0", "x1", "x2"))
    assert len(d.good) == 10 and len(d.failures) == 6
    for t in d.traces:
        assert len(t) == 40
        rob = robustness_of(PLANTED, t, d.names)
        if t.is_failure:
            assert rob[0] < 0 and (rob > 0).any()
        else:
            assert (rob < 0).all()
        assert t.values.min() >= 0.0 and t.values.max() <= 1.0


def test_synth_failure_onset_in_middle_third():
    d = synth_generate(PLANTED, 0, 20, 60, np.random.default_rng(3), names=("x0", "x1"))
    for t in d.failures:
        first = int(np.argmax(robustness_of(PLANTED, t, d.names) > 0))
        assert first >= 60 // 3


def test_synth_is_seeded():
    a = synth_generate(PLANTED, 3, 3, 30, np.random.default_rng(5))
    b = synth_generate(PLANTED, 3, 3, 30, np.random.default_rng(5))
    assert a == b


def test_synth_errors():
    with pytest.raises(FragmentError):
        synth_generate(parse("F(x >= 0.5)"), 1, 1, 10, np.random.default_rng(0))
    with pytest.raises(SynthesisError):
        synth_generate(parse("O(x >= -1)"), 1, 0, 10, np.random.default_rng(0), max_tries=100)
    with pytest.raises(ValueError):
        synth_generate(PLANTED, 0, 0, 10, np.random.default_rng(0))
    assert len(synth_generate(PLANTED, 0, 0, 10, np.random.default_rng(0), allow_empty=True)) == 0


def test_atom_polarity():
    assert atom_polarity(PLANTED, ("x0", "x1", "x2")).tolist() == [1.0, 1.0, 0.0]
    assert atom_polarity(parse("!(a >= 0.5) & b < 0.2"), ("a", "b")).tolist() == [-1.0, -1.0]


def test_write_metadata(tmp_path):
    p = write_metadata(tmp_path / "d.csv", PLANTED, 7, n_good=1)
    meta = json.loads(p.read_text())
    assert meta == {"planted": str(PLANTED), "seed": 7, "n_good": 1}


def test_augment_edge_cases_and_noise_level():
    t = Trace("f", np.full((200, 5), 0.5), True)
    assert augment(t, 0, 0.1, derived_rng(0)) == []
    exact = augment(t, 2, 0.0, derived_rng(0))
    assert all(np.array_equal(a.values, t.values) for a in exact)
    noisy = augment(t, 4, 0.02, derived_rng(1))
    dev = np.mean([np.abs(a.values - t.values).mean() for a in noisy])
    expected = 0.02 * np.sqrt(2 / np.pi)
    assert abs(dev - expected) <= 0.2 * expected


def test_cut_composition_and_full_length():
    t = Trace("f", np.arange(10.0))
    assert cut(cut(t, 6), 4) == cut(t, 4)
    assert cut(t, 10) == t


def test_single_row_trace_is_valid(tmp_path):
    d = load_csv(_write(tmp_path / "one.csv", "trace_id,t,a,is_failure\ns,0,1.5,0\n"))
    assert len(d.traces[0]) == 1


def test_batch_round_trip_random():
    rng = np.random.default_rng(4)
    ts = [Trace(f"t{k}", rng.normal(size=(int(rng.integers(1, 30)), 3))) for k in range(100)]
    b = batch(ts)
    assert b.names == ("x0", "x1", "x2")
    assert all(np.array_equal(u, t.values) for u, t in zip(unbatch(b), ts))
