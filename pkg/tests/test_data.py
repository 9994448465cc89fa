import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import categorical, make_dataset, numeric
from forestsel.data import (
    CATEGORICAL,
    MAX_LEVELS,
    NUMERIC_CONTINUOUS,
    NUMERIC_DISCRETE,
    Column,
    DataError,
    Dataset,
    FoldPlan,
    add_pairwise_interactions,
    infer_kind,
    ingest_csv,
    make_folds,
    quartile_classes,
    read_schema,
    split_by_fold,
    write_csv,
    write_schema,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------- types


def test_column_rejects_out_of_range_level():
    with pytest.raises(DataError):
        Column("c", CATEGORICAL, np.array([0, 2]), ("a", "b"))


def test_column_level_cap():
    Column("h", CATEGORICAL, np.arange(MAX_LEVELS), tuple(map(str, range(MAX_LEVELS))))
    with pytest.raises(DataError, match="max 41"):
        Column("h", CATEGORICAL, np.arange(MAX_LEVELS + 1), tuple(map(str, range(MAX_LEVELS + 1))))


def test_dataset_invariants():
    with pytest.raises(DataError, match="length"):
        make_dataset([numeric("a", [1, 2, 3])], [1, 2])
    with pytest.raises(DataError, match="non-negative"):
        make_dataset([numeric("a", [1, 2])], [1, -1])
    with pytest.raises(DataError, match="integer"):
        make_dataset([numeric("a", [1, 2])], [1.0, 2.5])
    with pytest.raises(DataError, match="truth_mask"):
        make_dataset([numeric("a", [1, 2])], [1, 2], truth_mask=[True, False])


def test_dataset_select_and_take_keep_levels():
    d = make_dataset([numeric("a", [1, 2, 3]), categorical("c", [0, 1, 0])], [1, 2, 3], truth_mask=[True, False])
    sub = d.take([2, 0])
    assert sub.column("c").levels == d.column("c").levels
    assert sub.row_ids.tolist() == [2, 0]
    s = d.select(["c"])
    assert s.names == ["c"] and s.truth_mask.tolist() == [False]
    with pytest.raises(DataError):
        d.select(["nope"])


# ---------------------------------------------------------------- CSV


def test_ingest_three_rows(tmp_path):
    f = write(tmp_path / "d.csv", "season,rain,anopheles\ndry,1.5,3\nwet,2.0,0\ndry,0.5,7\n")
    d = ingest_csv(f, {"season": "cat", "rain": "num"}, "anopheles")
    assert d.n == 3 and d.q == 2
    assert d.column("season").levels == ("dry", "wet")
    assert d.column("season").values.tolist() == [0, 1, 0]
    assert d.target.tolist() == [3, 0, 7]


def test_ingest_fractional_target_names_row(tmp_path):
    f = write(tmp_path / "d.csv", "x,y\n1,2\n2,2.5\n")
    with pytest.raises(DataError, match="row 2"):
        ingest_csv(f, {"x": "num"}, "y")


def test_ingest_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        ingest_csv(write(tmp_path / "a.csv", "x,y\n1,2\n"), None, "z")
    with pytest.raises(DataError, match="non-numeric"):
        ingest_csv(write(tmp_path / "b.csv", "x,y\n1,2\nabc,3\n"), {"x": "num"}, "y")
    with pytest.raises(DataError, match="empty"):
        ingest_csv(write(tmp_path / "c.csv", ""), None, "y")
    with pytest.raises(DataError, match="missing value"):
        ingest_csv(write(tmp_path / "d.csv", "x,y\n1,2\nNA,3\n"), None, "y")
    with pytest.raises(DataError, match="row 1"):
        ingest_csv(write(tmp_path / "e.csv", "x,y\n1,-2\n"), None, "y")


def test_inference_recorded(tmp_path):
    rows = "\n".join(f"{i % 3},{i * 0.5},{i},{i}" for i in range(20))
    f = write(tmp_path / "d.csv", "a,b,c,y\n" + rows + "\n")
    d = ingest_csv(f, None, "y")
    assert d.meta["inferred_kinds"] == {"a": CATEGORICAL, "b": NUMERIC_CONTINUOUS, "c": NUMERIC_DISCRETE}
    assert infer_kind(["x", "1"]) == CATEGORICAL


def test_group_column_not_a_predictor(tmp_path):
    f = write(tmp_path / "d.csv", "v,x,y\nA,1,2\nB,2,3\nA,3,4\n")
    d = ingest_csv(f, {"x": "num"}, "y", group_name="v")
    assert d.names == ["x"]
    assert d.group.tolist() == ["A", "B", "A"]
    d2 = ingest_csv(f, {"x": "num", "v": "cat"}, "y", group_name="v", group_as_predictor=True)
    assert d2.names == ["v", "x"]


TABLE4 = [
    ("repellent", "cat", ["yes", "no"]),
    ("bed_net", "cat", ["yes", "no"]),
    ("roof", "cat", ["sheet", "straw"]),
    ("utensils", "cat", ["yes", "no"]),
    ("constructions", "cat", ["yes", "no"]),
    ("soil", "cat", ["humid", "dry"]),
    ("water_course", "cat", ["yes", "no"]),
    ("majority_class", "cat", ["1", "2", "3"]),
    ("season", "cat", ["1", "2", "3", "4"]),
    ("village", "cat", [f"v{i}" for i in range(9)]),
    ("house", "cat", [f"h{i}" for i in range(41)]),
    ("rain_before", "cat", ["Q1", "Q2", "Q3"]),
    ("rain_during", "discrete", ["0", "1", "2", "3"]),
    ("fragmentation", "cat", ["Q1", "Q2", "Q3", "Q4"]),
    ("openings", "cat", ["Q1", "Q2", "Q3", "Q4"]),
    ("inhabitants", "cat", ["Q1", "Q2", "Q3"]),
    ("mean_rainfall", "cat", ["Q1", "Q2", "Q3", "Q4"]),
    ("vegetation", "cat", ["Q1", "Q2", "Q3", "Q4"]),
    ("total_mosquitoes", "discrete", [str(i) for i in range(0, 482, 7)]),
    ("total_anopheles", "discrete", [str(i) for i in range(88)]),
    ("anopheles_infected", "discrete", [str(i) for i in range(10)]),
]


def test_reference_layout_gives_19_predictors(tmp_path):
    rng = np.random.default_rng(0)
    n = 120
    header = [name for name, _, _ in TABLE4]
    cols = []
    for name, _, levels in TABLE4:
        if name == "house":
            cols.append([levels[i % 41] for i in range(n)])
        else:
            cols.append([levels[i] for i in rng.integers(0, len(levels), n)])
    text = ",".join(header) + "\n" + "\n".join(",".join(r) for r in zip(*cols)) + "\n"
    f = write(tmp_path / "malaria.csv", text)
    schema = write(tmp_path / "schema.map", "".join(f"{n}={k}\n" for n, k, _ in TABLE4))
    d = ingest_csv(f, schema, "total_anopheles", exclude=["anopheles_infected"])
    assert d.q == 19
    assert len(d.column("house").levels) == 41
    assert d.column("village").kind == CATEGORICAL
    assert d.column("rain_during").kind == NUMERIC_DISCRETE


def test_schema_roundtrip(tmp_path):
    s = {"a": CATEGORICAL, "b": NUMERIC_CONTINUOUS}
    write_schema(s, tmp_path / "s.map")
    assert read_schema(tmp_path / "s.map") == s


def test_csv_roundtrip_simulated(tmp_path, small_sim):
    write_csv(small_sim, tmp_path / "d.csv", group_name=None)
    back = ingest_csv(tmp_path / "d.csv", small_sim.kinds, "y")
    assert back.names == small_sim.names
    for a, b in zip(small_sim.columns, back.columns):
        assert a.kind == b.kind
        assert a.levels == b.levels
        np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(back.target, small_sim.target)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=15),
    st.lists(st.sampled_from(["a", "b", "c d", "é"]), min_size=1, max_size=15),
)
def test_csv_roundtrip_property(tmp_path_factory, nums, labels):
    n = min(len(nums), len(labels))
    d = make_dataset(
        [numeric("x", nums[:n]), Column("c", CATEGORICAL, *_codes(labels[:n]))], np.arange(n)
    )
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(d, path, target_name="t")
    back = ingest_csv(path, d.kinds, "t")
    np.testing.assert_array_equal(back.column("x").values, d.column("x").values)
    assert back.column("c").labels() == d.column("c").labels()
    assert back.column("c").levels == d.column("c").levels


def _codes(labels):
    index = {}
    codes = np.array([index.setdefault(v, len(index)) for v in labels])
    return codes, tuple(index)


def test_interactions_optional():
    d = make_dataset([categorical("a", [0, 1, 0, 1]), categorical("b", [0, 0, 1, 1]), numeric("x", [1, 2, 3, 4])], [1, 2, 3, 4])
    out = add_pairwise_interactions(d)
    assert out.names == ["a", "b", "x", "a:b"]
    assert len(out.column("a:b").levels) == 4


def test_quartile_classes():
    assert quartile_classes([1, 2, 3, 4])[0] == ["Q1", "Q2", "Q3", "Q4"]
    classes, bounds = quartile_classes([7, 7, 7])
    assert set(classes) == {"Q1"} and bounds == (7.0, 7.0, 7.0)


# ---------------------------------------------------------------- folds


def _data(n, groups=None):
    return make_dataset([numeric("x", np.arange(n))], np.zeros(n, int), group=groups)


def test_loo_folds():
    plan = make_folds(_data(10), 10)
    assert plan.sizes().tolist() == [1] * 10
    train, test = split_by_fold(_data(10), plan, 4)
    assert (train.n, test.n) == (9, 1)


def test_folds_deterministic_and_balanced():
    a = make_folds(_data(7), 3, seed=5)
    b = make_folds(_data(7), 3, seed=5)
    np.testing.assert_array_equal(a.assignments, b.assignments)
    assert a.sizes().max() - a.sizes().min() <= 1


def test_nine_villages_one_per_fold():
    groups = np.repeat([f"v{i}" for i in range(9)], [5, 8, 3, 9, 4, 6, 7, 2, 10])
    d = _data(groups.size, groups)
    plan = make_folds(d, 9, grouped=True, seed=1)
    for k in range(9):
        train, test = split_by_fold(d, plan, k)
        assert len(set(test.group)) == 1
        assert not set(test.group) & set(train.group)


def test_fold_errors():
    with pytest.raises(DataError):
        make_folds(_data(3), 4)
    with pytest.raises(DataError):
        make_folds(_data(4, np.array(list("aabb"))), 3, grouped=True)
    with pytest.raises(DataError):
        make_folds(_data(4), 2, grouped=True)
    with pytest.raises(DataError):
        split_by_fold(_data(4), make_folds(_data(4), 2), 2)
    with pytest.raises(DataError):
        FoldPlan(np.array([0, 0, 0]), 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 60), st.integers(2, 12), st.integers(0, 2**32), st.booleans())
def test_partition_property(n, n_folds, seed, grouped):
    rng = np.random.default_rng(seed)
    groups = np.array([f"g{i}" for i in rng.integers(0, max(2, n // 3), n)], dtype=object)
    d = _data(n, groups)
    n_groups = len(set(groups))
    if n_folds > (n_groups if grouped else n):
        with pytest.raises(DataError):
            make_folds(d, n_folds, grouped, seed)
        return
    plan = make_folds(d, n_folds, grouped, seed)
    seen = np.concatenate([split_by_fold(d, plan, k)[1].row_ids for k in range(n_folds)])
    assert sorted(seen.tolist()) == list(range(n))
    for k in range(n_folds):
        train, test = split_by_fold(d, plan, k)
        assert not set(train.row_ids) & set(test.row_ids)
        assert train.row_ids.tolist() == sorted(train.row_ids.tolist())
        if grouped:
            assert not set(train.group) & set(test.group)
    if not grouped:
        assert plan.sizes().max() - plan.sizes().min() <= 1
