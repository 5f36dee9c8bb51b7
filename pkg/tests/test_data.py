import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsfc.data import (DataFormatError, Dataset, Sample, SynthSpec, load_csv_long, load_dataset,
                       load_multichannel_dir, save_csv_long, save_multichannel_dir, stratified_kfold, synth_generate)


def write_dims(root, rows_per_dim, name="Toy", split="TRAIN", newline="\n"):
    root.mkdir(exist_ok=True)
    for k, rows in enumerate(rows_per_dim, start=1):
        (root / f"{name}_dim{k}_{split}.txt").write_bytes(newline.join(rows).encode() + newline.encode())


def test_load_dir_basic(tmp_path):
    write_dims(tmp_path / "d", [
        ["1 1 2 3 4", "2 5 6 7 8", "1 0 0 0 1"],
        ["1 4 3 2 1", "2 1 1 1 1", "1 9 9 9 9"],
    ])
    ds = load_multichannel_dir(tmp_path / "d")
    assert len(ds) == 3 and ds.num_channels == 2
    assert all(len(c) == 4 for s in ds.samples for c in s.channels)
    assert ds.labels.tolist() == [0, 1, 0]
    np.testing.assert_array_equal(ds.samples[1].channels[1], [1, 1, 1, 1])


def test_load_dir_crlf_and_float_labels(tmp_path):
    write_dims(tmp_path / "d", [["1.0 1 2", "-1 3 4"], ["1 5 6", "-1.0 7 8"]], newline="\r\n")
    ds = load_multichannel_dir(tmp_path / "d")
    assert ds.class_names == ["-1", "1"]
    assert ds.labels.tolist() == [1, 0]


def test_load_dir_label_mismatch(tmp_path):
    write_dims(tmp_path / "d", [["1 1 2", "1 3 4"], ["1 1 2", "2 3 4"]])
    with pytest.raises(DataFormatError) as exc:
        load_multichannel_dir(tmp_path / "d")
    assert exc.value.line == 2 and "Toy_dim2_TRAIN.txt" in str(exc.value)


def test_load_dir_empty_file(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "Toy_dim1_TRAIN.txt").write_text("")
    with pytest.raises(DataFormatError):
        load_multichannel_dir(d)


def test_load_dir_non_numeric(tmp_path):
    write_dims(tmp_path / "d", [["1 1 2 x 4"]])
    with pytest.raises(DataFormatError) as exc:
        load_multichannel_dir(tmp_path / "d")
    assert (exc.value.line, exc.value.column) == (1, 4)


def test_load_dir_unequal_line_counts(tmp_path):
    write_dims(tmp_path / "d", [["1 1 2", "1 3 4"], ["1 1 2"]])
    with pytest.raises(DataFormatError):
        load_multichannel_dir(tmp_path / "d")


def test_load_dir_pools_splits_and_strips_nan_padding(tmp_path):
    d = tmp_path / "d"
    write_dims(d, [["1 1 2 3"], ["1 3 2 1"]], split="TRAIN")
    write_dims(d, [["2 1 2 NaN"], ["2 5 5 NaN"]], split="TEST")
    ds = load_multichannel_dir(d)
    assert len(ds) == 2
    assert [len(c) for c in ds.samples[0].channels] == [2, 2]  # TEST sorts first


def test_load_dir_missing(tmp_path):
    with pytest.raises(DataFormatError):
        load_multichannel_dir(tmp_path / "nope")


def test_dir_round_trip(tmp_path):
    ds = synth_generate(SynthSpec(num_channels=3, length=20, per_class=4), seed=2)
    save_multichannel_dir(ds, tmp_path / "rt")
    back = load_multichannel_dir(tmp_path / "rt")
    assert back.labels.tolist() == ds.labels.tolist()
    for a, b in zip(ds.samples, back.samples):
        for x, y in zip(a.channels, b.channels):
            np.testing.assert_array_equal(x, y)


CSV = """sample_id,label,channel,t,value
p1,HF,hr,2,3.0
p1,HF,hr,0,1.0
p1,HF,vo2,0,10
p1,HF,hr,1,2.0
p1,HF,vo2,1,11
p1,HF,vo2,2,12
"""


def test_load_csv_long(tmp_path):
    f = tmp_path / "cpx.csv"
    f.write_text(CSV)
    ds = load_csv_long(f)
    assert len(ds) == 1 and ds.channel_names == ["hr", "vo2"]
    np.testing.assert_array_equal(ds.samples[0].channels[0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(ds.samples[0].channels[1], [10, 11, 12])


def test_load_csv_duplicate_timestamp(tmp_path):
    f = tmp_path / "cpx.csv"
    f.write_text(CSV + "p1,HF,hr,1,5.0\n")
    with pytest.raises(DataFormatError) as exc:
        load_csv_long(f)
    assert exc.value.line == 8


def test_load_csv_missing_channel(tmp_path):
    f = tmp_path / "cpx.csv"
    f.write_text(CSV + "p2,MS,hr,0,1\n")
    with pytest.raises(DataFormatError):
        load_csv_long(f)


def test_load_csv_bad_header(tmp_path):
    f = tmp_path / "cpx.csv"
    f.write_text("id,label,channel,t,value\n")
    with pytest.raises(DataFormatError):
        load_csv_long(f)


def test_csv_round_trip(tmp_path):
    ds = synth_generate(SynthSpec(num_channels=2, length=10, per_class=3), seed=1)
    back = load_dataset(save_csv_long(ds, tmp_path / "x.csv"))
    assert back.labels.tolist() == ds.labels.tolist()
    for a, b in zip(ds.samples, back.samples):
        for x, y in zip(a.channels, b.channels):
            np.testing.assert_array_equal(x, y)


def test_kfold_balanced_example():
    plan = stratified_kfold([0] * 5 + [1] * 5, 5, seed=0)
    for f in range(5):
        members = plan.fold(f)
        assert sorted(np.array([0] * 5 + [1] * 5)[members].tolist()) == [0, 1]


def test_kfold_deterministic_and_partition():
    y = np.array([0] * 13 + [1] * 9 + [2] * 7)
    a, b = stratified_kfold(y, 5, 7), stratified_kfold(y, 5, 7)
    assert a == b
    folds = [set(a.fold(f)) for f in range(5)]
    assert set().union(*folds) == set(range(y.size))
    assert sum(len(f) for f in folds) == y.size
    assert stratified_kfold(y, 5, 8) != a


def test_kfold_roles():
    plan = stratified_kfold([0] * 10 + [1] * 10, 5, 0)
    for f in range(5):
        tr, va, te = plan.roles(f)
        assert not set(tr) & set(va) and not set(tr) & set(te) and not set(va) & set(te)
        assert len(tr) + len(va) + len(te) == 20
        np.testing.assert_array_equal(va, plan.fold((f + 1) % 5))


def test_kfold_too_few_members():
    with pytest.raises(ValueError):
        stratified_kfold([0, 0, 0, 1, 1, 1, 1, 1], 5, 0)


@given(st.lists(st.integers(5, 30), min_size=2, max_size=4), st.integers(2, 5), st.integers(0, 1000))
@settings(max_examples=40)
def test_kfold_stratification_bound(class_sizes, n_folds, seed):
    y = np.concatenate([np.full(n, c) for c, n in enumerate(class_sizes)])
    plan = stratified_kfold(y, n_folds, seed)
    for f in range(n_folds):
        members = plan.fold(f)
        for c, n in enumerate(class_sizes):
            expected = len(members) * n / y.size
            assert abs(np.sum(y[members] == c) - expected) <= 1 + 1e-9


def test_synth_reproducible_and_seeded():
    a = synth_generate(SynthSpec(), seed=4)
    b = synth_generate(SynthSpec(), seed=4)
    c = synth_generate(SynthSpec(), seed=5)
    assert len(a) == 80 and a.num_channels == 2 and len(a.samples[0].channels[0]) == 128
    assert all(np.array_equal(x, y) for s, t in zip(a.samples, b.samples) for x, y in zip(s.channels, t.channels))
    assert not np.array_equal(a.samples[0].channels[0], c.samples[0].channels[0])


def test_synth_second_half_slope_margin():
    spec = SynthSpec()
    ds = synth_generate(spec, seed=0)
    half = spec.length // 2
    t = np.arange(spec.length - half)

    def mean_slope(label):
        sl = [np.polyfit(t, c[half:], 1)[0] for s in ds.samples if s.label == label for c in s.channels]
        return np.mean(sl)

    assert mean_slope(1) - mean_slope(0) == pytest.approx(spec.slope_margin, rel=0.05)


def test_dataset_rejects_bad_label():
    with pytest.raises(DataFormatError):
        Dataset([Sample([np.zeros(3)], 2)], 2, ["a"])


def test_kfold_bound_when_fold_sizes_differ():
    # global round-robin puts 7 of the 25-sample class into a 16-sample fold here
    y = np.concatenate([np.full(n, c) for c, n in enumerate([5, 18, 25, 19])])
    plan = stratified_kfold(y, 4, 0)
    for f in range(4):
        m = plan.fold(f)
        for c, n in enumerate([5, 18, 25, 19]):
            assert abs(np.sum(y[m] == c) - len(m) * n / y.size) < 1
