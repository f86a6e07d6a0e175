import numpy as np
import pytest

from fedpoison import (
    DataLoadError,
    Federation,
    FederationSource,
    LossKind,
    NodeDataset,
    SolverConfig,
    SourceKind,
    ValidationError,
    load_csv_federation,
    solve_lower,
    split_train_test,
    synthesize_federation,
    write_csv_federation,
)


def _source(kind=SourceKind.SYNTHETIC_CLASSIFICATION, **kw):
    base = dict(d=8, m=4, per_node_n=(20, 30), correlation=0.5,
                noise_sigma=0.1, test_fraction=0.25, seed=0)
    base.update(kw)
    return FederationSource(kind=kind, **base)


def test_synth_shapes_and_label_domain():
    fed = synthesize_federation(_source())
    assert fed.m == 4 and fed.dim == 8
    for train, test in zip(fed.train, fed.test):
        assert 20 <= train.n + test.n <= 30
        assert set(np.unique(train.labels)) <= {-1.0, 1.0}
    reg = synthesize_federation(_source(kind=SourceKind.SYNTHETIC_REGRESSION))
    assert reg.loss is LossKind.LEAST_SQUARES


def test_synth_full_correlation_identical_weights():
    fed = synthesize_federation(_source(correlation=1.0, noise_sigma=0.0))
    W = fed.true_weights
    for l in range(1, fed.m):
        assert np.allclose(W[:, 0], W[:, l])


def test_synth_zero_correlation_near_orthogonal_weights():
    # |cos| between per-node weights stays small at d >= 16
    worst = 0.0
    for seed in range(50):
        fed = synthesize_federation(_source(d=16, m=3, correlation=0.0, seed=seed))
        W = fed.true_weights
        for i in range(3):
            for j in range(i + 1, 3):
                cos = abs(float(W[:, i] @ W[:, j]))
                worst = max(worst, cos)
    assert worst < 0.8  # individual pairs fluctuate; mean is far smaller


def test_synth_determinism():
    a = synthesize_federation(_source(seed=3))
    b = synthesize_federation(_source(seed=3))
    for x, y in zip(a.train, b.train):
        assert np.array_equal(x.features, y.features)
        assert np.array_equal(x.labels, y.labels)


def test_split_sizes_disjoint_exhaustive():
    rng = np.random.default_rng(0)
    node = NodeDataset(0, rng.standard_normal((10, 2)), rng.standard_normal(10))
    train, test = split_train_test(node, 0.2, seed=1)
    assert train.n == 8 and test.n == 2
    joined = np.vstack([train.features, test.features])
    assert sorted(map(tuple, joined)) == sorted(map(tuple, node.features))


def test_split_determinism_and_validation():
    rng = np.random.default_rng(1)
    node = NodeDataset(0, rng.standard_normal((10, 2)), rng.standard_normal(10))
    a = split_train_test(node, 0.3, seed=5)
    b = split_train_test(node, 0.3, seed=5)
    assert np.array_equal(a[0].features, b[0].features)
    with pytest.raises(ValidationError):
        split_train_test(node, 0.0, seed=1)
    tiny = NodeDataset(0, np.ones((1, 2)), np.ones(1))
    with pytest.raises(ValidationError):
        split_train_test(tiny, 0.5, seed=1)


def test_split_stratified_ratios():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((40, 3))
    y = np.array([1.0] * 30 + [-1.0] * 10)
    node = NodeDataset(0, X, y)
    train, test = split_train_test(node, 0.25, seed=7)
    # per-class train counts within +-1 of the overall ratio
    for cls, total in ((1.0, 30), (-1.0, 10)):
        expect = 0.75 * total
        got = int(np.sum(train.labels == cls))
        assert abs(got - expect) <= 1


def test_csv_round_trip_bit_exact(tmp_path):
    fed = synthesize_federation(_source(m=2, per_node_n=(6, 6)))
    write_csv_federation(fed, tmp_path)
    loaded = load_csv_federation(tmp_path, LossKind.HINGE, standardize=False)
    for l in range(2):
        assert np.array_equal(loaded.train[l].features, fed.train[l].features)
        assert np.array_equal(loaded.train[l].labels, fed.train[l].labels)
        assert np.array_equal(loaded.test[l].features, fed.test[l].features)
    # second write is byte-identical
    second = tmp_path / "again"
    write_csv_federation(loaded, second)
    for l in range(2):
        a = (tmp_path / f"node_{l}.csv").read_bytes()
        b = (second / f"node_{l}.csv").read_bytes()
        assert a == b


def test_csv_structure(tmp_path):
    (tmp_path / "node_0.csv").write_text(
        "feature_0,feature_1,label\n1.0,2.0,1\n0.5,-1.0,-1\n3.0,0.0,1\n"
    )
    (tmp_path / "node_1.csv").write_text(
        "feature_0,feature_1,label\n0.1,0.2,-1\n0.3,0.4,1\n0.5,0.6,-1\n"
    )
    fed = load_csv_federation(tmp_path, LossKind.HINGE, standardize=False)
    assert fed.m == 2 and fed.dim == 2
    assert [node.n for node in fed.train] == [3, 3]


def test_csv_standardization_uses_train_rows_only(tmp_path):
    fed = synthesize_federation(_source(m=2, per_node_n=(30, 30)))
    # shift features so raw mean is clearly nonzero
    for node in fed.train + fed.test:
        node.features = node.features + 5.0
    write_csv_federation(fed, tmp_path)
    loaded = load_csv_federation(tmp_path, LossKind.HINGE, standardize=True)
    for l in range(2):
        mean, std = loaded.scalers[l]
        tr = loaded.train[l]
        assert np.allclose(tr.features.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(tr.features.std(axis=0), 1.0, atol=1e-12)
        # test rows use the train transform, not their own statistics
        raw = fed.test[l].features
        assert np.allclose(loaded.test[l].features, (raw - mean) / std)


def test_csv_error_reporting(tmp_path):
    (tmp_path / "node_0.csv").write_text(
        "feature_0,feature_1,label\n1.0,2.0,0.5\n"
    )
    with pytest.raises(DataLoadError, match="row 2"):
        load_csv_federation(tmp_path, LossKind.HINGE)
    (tmp_path / "node_0.csv").write_text(
        "feature_0,feature_1,label\n1.0,2.0\n"
    )
    with pytest.raises(DataLoadError, match="row 2"):
        load_csv_federation(tmp_path, LossKind.HINGE)
    (tmp_path / "node_0.csv").write_text(
        "feature_0,feature_1,label\n1.0,nan,1\n"
    )
    with pytest.raises(DataLoadError, match="non-finite"):
        load_csv_federation(tmp_path, LossKind.HINGE)
    (tmp_path / "node_0.csv").write_text("feature_0,label\n")
    with pytest.raises(DataLoadError, match="no data rows"):
        load_csv_federation(tmp_path, LossKind.LEAST_SQUARES)


def test_csv_ragged_dimension_across_nodes(tmp_path):
    (tmp_path / "node_0.csv").write_text("feature_0,label\n1.0,1\n2.0,-1\n")
    (tmp_path / "node_1.csv").write_text(
        "feature_0,feature_1,label\n1.0,2.0,1\n0.0,1.0,-1\n"
    )
    with pytest.raises(DataLoadError, match="dimension"):
        load_csv_federation(tmp_path, LossKind.HINGE)


def test_csv_ids_must_be_contiguous(tmp_path):
    (tmp_path / "node_0.csv").write_text("feature_0,label\n1.0,1\n")
    (tmp_path / "node_2.csv").write_text("feature_0,label\n1.0,1\n")
    with pytest.raises(DataLoadError, match="contiguous"):
        load_csv_federation(tmp_path, LossKind.HINGE)


def test_trained_omega_offdiagonal_grows_with_correlation():
    # end-to-end: higher generator correlation -> more off-diagonal mass in
    # the trained relationship matrix
    masses = []
    for corr in (0.0, 0.5, 1.0):
        fed = synthesize_federation(
            _source(kind=SourceKind.SYNTHETIC_REGRESSION, d=8, m=4,
                    per_node_n=(40, 40), correlation=corr, seed=11)
        )
        cfg = SolverConfig(lambda1=0.01, lambda2=0.01, rounds=60, seed=1)
        state = solve_lower(fed.train, None, fed.loss, cfg)
        off = state.Omega - np.diag(np.diag(state.Omega))
        masses.append(float(np.sum(np.abs(off))))
    assert masses[0] < masses[1] < masses[2]
