import numpy as np
import numpy.testing as npt
import pytest

from protogen.embeddings import (
    Dataset,
    SyntheticSpec,
    compute_global_prototypes,
    generate_synthetic,
    load_embeddings,
    save_embeddings,
    split_classes,
)
from protogen.errors import ParseError, UsageError


def test_zero_contamination_leaves_samples_gaussian():
    spec = SyntheticSpec(4, 8, 500, within_std=0.5, outlier_fraction=0.0, outlier_shift=100.0, seed=1)
    ds, means = generate_synthetic(spec, return_means=True)
    for c in range(4):
        dev = ds.features[ds.labels == c] - means[c]
        # a 100-std displacement would stand out immediately
        assert np.linalg.norm(dev, axis=1).max() < 0.5 * 8
        npt.assert_allclose(dev.std(), 0.5, rtol=0.05)


def test_full_contamination_displaces_every_sample_by_shift():
    # same seed, shift switched off: the rng stream is identical, so the
    # difference is exactly the outlier displacement
    moved = generate_synthetic(SyntheticSpec(3, 6, 40, within_std=0.7, outlier_fraction=1.0,
                                             outlier_shift=4.0, seed=2))
    still = generate_synthetic(SyntheticSpec(3, 6, 40, within_std=0.7, outlier_fraction=1.0,
                                             outlier_shift=0.0, seed=2))
    disp = moved.features - still.features
    npt.assert_allclose(np.linalg.norm(disp, axis=1), 4.0 * 0.7, rtol=1e-12)


def test_generation_is_deterministic():
    spec = SyntheticSpec(5, 16, 100, outlier_fraction=0.1, outlier_shift=3.0, seed=7)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()


def test_outlier_count_is_floor_of_fraction():
    a = generate_synthetic(SyntheticSpec(2, 4, 10, outlier_fraction=0.35, outlier_shift=1.0, seed=3))
    b = generate_synthetic(SyntheticSpec(2, 4, 10, outlier_fraction=0.35, outlier_shift=0.0, seed=3))
    moved = np.linalg.norm(a.features - b.features, axis=1) > 1e-9
    for c in range(2):
        assert moved[a.labels == c].sum() == 3


def test_class_means_are_standardised():
    spec = SyntheticSpec(6, 12, 5, mean_scale=2.0, seed=4, mean_rank=3)
    _, means = generate_synthetic(spec, return_means=True)
    npt.assert_allclose(means.mean(axis=1), 0.0, atol=1e-12)
    npt.assert_allclose(means.std(axis=1), 2.0, rtol=1e-12)


def test_low_rank_means_share_a_subspace():
    spec = SyntheticSpec(20, 16, 2, seed=5, mean_rank=4)
    _, means = generate_synthetic(spec, return_means=True)
    # rank-4 subspace plus the removed all-ones direction
    s = np.linalg.svd(means, compute_uv=False)
    assert s[5] < 1e-10 * s[0]


@pytest.mark.parametrize("kwargs", [
    dict(n_classes=1, dim=4, samples_per_class=3),
    dict(n_classes=2, dim=4, samples_per_class=0),
    dict(n_classes=2, dim=4, samples_per_class=3, outlier_fraction=1.5),
    dict(n_classes=2, dim=4, samples_per_class=3, outlier_shift=-1.0),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SyntheticSpec(**kwargs)


def test_load_single_row(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("class_id,f0,f1\n0,1.0,2.0\n")
    ds = load_embeddings(p)
    assert len(ds) == 1
    assert ds[0].class_id == 0
    npt.assert_array_equal(ds[0].features, [1.0, 2.0])


def test_load_header_only(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("class_id,f0,f1,f2\n")
    ds = load_embeddings(p)
    assert len(ds) == 0
    assert ds.dim == 3


def test_wrong_arity_cites_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("class_id,f0,f1\n0,1.0,2.0\n1,3.0\n")
    with pytest.raises(ParseError, match=":3:") as info:
        load_embeddings(p)
    assert info.value.line == 3


@pytest.mark.parametrize("row", ["0,nan,1", "0,inf,1", "x,1,1", "0,1,abc", "-1,1,1"])
def test_bad_values_rejected(tmp_path, row):
    p = tmp_path / "bad.csv"
    p.write_text(f"class_id,f0,f1\n{row}\n")
    with pytest.raises(ParseError) as info:
        load_embeddings(p)
    assert info.value.line == 2


def test_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("label,f0\n0,1\n")
    with pytest.raises(ParseError):
        load_embeddings(p)


def test_round_trip_is_exact(tmp_path, rng):
    ds = Dataset(rng.integers(0, 5, size=50), rng.normal(size=(50, 7)) * 10.0 ** rng.integers(-8, 8, size=(50, 1)))
    p = tmp_path / "rt.csv"
    save_embeddings(ds, p)
    back = load_embeddings(p)
    assert back == ds
    assert back.features.tobytes() == ds.features.tobytes()
    raw = p.read_bytes()
    assert b"\r" not in raw and b'"' not in raw


def test_prototype_single_sample():
    table = compute_global_prototypes(Dataset([3], [[1.5, -2.0]]))
    npt.assert_array_equal(table[3], [1.5, -2.0])
    assert table.counts[3] == 1


def test_prototype_midpoint():
    table = compute_global_prototypes(Dataset([0, 0], [[0.0, 0.0], [2.0, 2.0]]))
    npt.assert_array_equal(table[0], [1.0, 1.0])


def test_prototype_hand_arithmetic():
    table = compute_global_prototypes(Dataset([1, 1, 1], [[1, 2], [3, 4], [5, 6]]))
    npt.assert_array_equal(table[1], [3.0, 4.0])


def test_prototype_ragged_classes():
    ds = Dataset([0, 1, 1, 0, 1], [[1.0], [2.0], [4.0], [3.0], [6.0]])
    table = compute_global_prototypes(ds)
    assert table.counts == {0: 2, 1: 3}
    npt.assert_array_equal(table.stack([1, 0]), [[4.0], [2.0]])


def test_prototype_empty_dataset():
    with pytest.raises(UsageError):
        compute_global_prototypes(Dataset([], np.zeros((0, 3))))


def test_missing_class_lookup():
    table = compute_global_prototypes(Dataset([0], [[1.0]]))
    with pytest.raises(UsageError):
        table[9]


def test_prototypes_permutation_invariant(rng):
    ds = generate_synthetic(SyntheticSpec(6, 10, 50, outlier_fraction=0.2, outlier_shift=5.0, seed=8))
    perm = rng.permutation(len(ds))
    shuffled = Dataset(ds.labels[perm], ds.features[perm])
    a, b = compute_global_prototypes(ds), compute_global_prototypes(shuffled)
    for c in a.class_ids:
        npt.assert_allclose(a[c], b[c], atol=1e-9, rtol=0)


def test_prototype_error_shrinks_with_m():
    errs = []
    for m in (5, 20, 80, 320):
        e = []
        for seed in range(20):
            ds, means = generate_synthetic(SyntheticSpec(3, 8, m, seed=seed), return_means=True)
            table = compute_global_prototypes(ds)
            e.extend(np.linalg.norm(table[c] - means[c]) for c in range(3))
        errs.append(np.mean(e))
    assert all(x > y for x, y in zip(errs, errs[1:]))


def test_split_classes_is_disjoint():
    ds = generate_synthetic(SyntheticSpec(10, 4, 3, seed=1))
    a, b, c = split_classes(ds, [5, 3, 2])
    assert list(a.classes) == [0, 1, 2, 3, 4]
    assert list(b.classes) == [5, 6, 7]
    assert list(c.classes) == [8, 9]
    with pytest.raises(UsageError):
        split_classes(ds, [8, 8])


def test_dataset_is_read_only():
    ds = Dataset([0], [[1.0, 2.0]])
    with pytest.raises(ValueError):
        ds.features[0, 0] = 5.0
