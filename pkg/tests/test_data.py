import struct

import numpy as np
import pytest

from energy_align.data import (
    LabeledDataset,
    balanced_holdout,
    load_csv_dataset,
    load_int_list,
    load_logit_file,
    long_tail_profile,
    make_incremental_splits,
    make_long_tailed,
    save_csv_dataset,
    save_logit_file,
    synth_gaussians,
)
from energy_align.errors import ContractError, ParseError


def test_long_tail_profile_default():
    assert long_tail_profile(500, 10, 100).tolist() == [500, 300, 180, 108, 65, 39, 23, 14, 8, 5]


def test_long_tail_profile_rounds_half_up_and_floors_at_one():
    # 5 * 4**-0.5 = 2.5 exactly
    assert long_tail_profile(5, 3, 4.0).tolist() == [5, 3, 1]
    assert long_tail_profile(2, 3, 1000.0).tolist() == [2, 1, 1]
    assert long_tail_profile(7, 4, 1.0).tolist() == [7, 7, 7, 7]
    with pytest.raises(ContractError):
        long_tail_profile(10, 3, 0.5)


def test_synth_is_seeded_with_equal_norm_means():
    a = synth_gaussians(4, 3, spread=5.0, sigma=0.01, n_per_class=200, seed=1)
    b = synth_gaussians(4, 3, spread=5.0, sigma=0.01, n_per_class=200, seed=1)
    assert np.array_equal(a.features, b.features)
    assert a.counts.tolist() == [200] * 4
    means = np.array([a.features[a.labels == c].mean(0) for c in range(4)])
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), 5.0, rtol=1e-2)


def test_balanced_holdout_is_disjoint_and_balanced():
    ds = synth_gaussians(3, 2, 1.0, 1.0, 20, seed=0)
    tr, te = balanced_holdout(ds, 5, seed=1)
    assert te.counts.tolist() == [5, 5, 5] and tr.counts.tolist() == [15, 15, 15]
    rows = {tuple(r) for r in tr.features} & {tuple(r) for r in te.features}
    assert not rows
    with pytest.raises(ContractError):
        balanced_holdout(ds, 20, seed=1)


def test_make_long_tailed_counts_and_rows():
    ds = synth_gaussians(10, 2, 1.0, 1.0, 500, seed=0)
    lt = make_long_tailed(ds, 100, seed=3)
    assert lt.counts.tolist() == long_tail_profile(500, 10, 100).tolist()
    original = {tuple(r) for r in ds.features}
    assert all(tuple(r) in original for r in lt.features)
    assert make_long_tailed(ds, 1, seed=3) is ds


def test_incremental_splits():
    groups = make_incremental_splits(10, 5, seed=4)
    flat = np.concatenate(groups)
    assert sorted(flat.tolist()) == list(range(10))
    assert all(len(g) == 2 for g in groups)
    assert [g.tolist() for g in groups] == [g.tolist() for g in make_incremental_splits(10, 5, seed=4)]
    with pytest.raises(ContractError):
        make_incremental_splits(10, 3, seed=0)
    with pytest.raises(ContractError):
        make_incremental_splits(10, 2, seed=0, classes_per_step=4)


def test_dataset_validation():
    with pytest.raises(ContractError):
        LabeledDataset(np.zeros((3, 2)), [0, 1], 2)
    with pytest.raises(ContractError):
        LabeledDataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ContractError):
        LabeledDataset(np.array([[np.inf, 0.0]]), [0], 1)


def test_csv_round_trip(tmp_path):
    ds = synth_gaussians(3, 4, 1.0, 1.0, 5, seed=0)
    p = tmp_path / "d.csv"
    save_csv_dataset(ds, p)
    back = load_csv_dataset(p)
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)
    assert back.num_classes == 3
    assert p.read_text().splitlines()[0] == "f0,f1,f2,f3,label"


@pytest.mark.parametrize(
    "text",
    ["", "a,b\n1,0\n", "f0,label\n", "f0,label\n1.0\n", "f0,label\nx,0\n", "f0,label\nnan,0\n", "f0,label\n1,-1\n"],
)
def test_csv_parse_errors(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ParseError):
        load_csv_dataset(p)


def test_csv_label_beyond_declared_classes(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,label\n1.0,3\n")
    with pytest.raises(ParseError):
        load_csv_dataset(p, num_classes=2)


def test_logit_file_layout(tmp_path):
    z = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    p = tmp_path / "z.ealg"
    save_logit_file(p, z, labels=[2, 0])
    data = p.read_bytes()
    assert data[:4] == b"EALG"
    version, s, c, flags = struct.unpack_from("<IQQB", data, 4)
    assert (version, s, c, flags) == (1, 2, 3, 1)
    body = np.frombuffer(data, "<f4", 6, 25)
    assert body.tolist() == [1, 2, 3, 4, 5, 6]
    assert np.frombuffer(data, "<i8", 2, 49).tolist() == [2, 0]
    assert len(data) == 25 + 24 + 16


def test_logit_file_round_trip(tmp_path):
    z = np.random.default_rng(0).normal(size=(7, 4)).astype(np.float32)
    p = tmp_path / "z.ealg"
    save_logit_file(p, z)
    lm = load_logit_file(p)
    assert lm.labels is None and np.array_equal(lm.values, z.astype(np.float64))
    save_logit_file(p, z, np.arange(7) % 4)
    assert load_logit_file(p).labels.tolist() == [0, 1, 2, 3, 0, 1, 2]


def test_logit_file_errors(tmp_path):
    p = tmp_path / "z.ealg"
    p.write_bytes(b"EAL")
    with pytest.raises(ParseError):
        load_logit_file(p)
    save_logit_file(p, np.zeros((2, 2)))
    good = p.read_bytes()
    p.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(ParseError):
        load_logit_file(p)
    p.write_bytes(good[:4] + struct.pack("<I", 2) + good[8:])
    with pytest.raises(ParseError):
        load_logit_file(p)
    p.write_bytes(good[:-1])
    with pytest.raises(ParseError):
        load_logit_file(p)
    save_logit_file(p, np.zeros((2, 2)), [0, 5])
    with pytest.raises(ParseError):
        load_logit_file(p)
    save_logit_file(p, np.array([[np.inf, 0.0]]))
    with pytest.raises(ParseError):
        load_logit_file(p)
    with pytest.raises(ContractError):
        save_logit_file(p, np.zeros(3))


@pytest.mark.parametrize("text", ["1,2,3", "1 2 3\n", "[1, 2, 3]", "1\n2\n3\n"])
def test_int_list_formats(tmp_path, text):
    p = tmp_path / "c.txt"
    p.write_text(text)
    assert load_int_list(p).tolist() == [1, 2, 3]


def test_int_list_errors(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("")
    with pytest.raises(ParseError):
        load_int_list(p)
    p.write_text("1, two")
    with pytest.raises(ParseError):
        load_int_list(p)
