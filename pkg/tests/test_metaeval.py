import math

import pytest
from hypothesis import given, strategies as st

from batchgemba.metaeval import (
    ExampleResult,
    ReportRow,
    RunRecord,
    UndefinedCorrelation,
    aggregate,
    degradation_csv,
    error_rate,
    format_csv,
    format_text,
    metric_table,
    pearson,
    read_run_records,
    relative_degradation,
    write_run_records,
)


def test_pearson_fixture():
    assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)


def test_pearson_perfect_and_inverse():
    assert pearson([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson([1, 2, 3], [3, 2, 1]) == -1.0


@pytest.mark.parametrize("xs, ys", [([1], [1]), ([1, 1, 1], [1, 2, 3]), ([], [])])
def test_pearson_undefined(xs, ys):
    with pytest.raises(UndefinedCorrelation):
        pearson(xs, ys)


def test_pearson_length_mismatch():
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=2, max_size=40))
def test_pearson_symmetric_and_bounded(pts):
    xs, ys = zip(*pts)
    try:
        r = pearson(xs, ys)
    except UndefinedCorrelation:
        return
    assert -1 <= r <= 1
    assert r == pytest.approx(pearson(ys, xs), abs=1e-12)


def rec(model="m", comp=False, bs=1, lp=("en", "de"), pairs=(), malformed=0, tokens=(0, 0)):
    examples = [ExampleResult(f"{lp}{i}", h, l, False) for i, (h, l) in enumerate(pairs)]
    examples += [ExampleResult(f"{lp}bad{i}", -1.0, None, True) for i in range(malformed)]
    return RunRecord(model, comp, bs, lp, tuple(examples), tokens[0], tokens[1])


def test_example_result_invariant():
    with pytest.raises(ValueError):
        ExampleResult("x", 0.0, None, False)
    with pytest.raises(ValueError):
        ExampleResult("x", 0.0, 1.0, True)


def test_error_rate():
    assert error_rate(rec(pairs=[(0, 0)] * 3, malformed=1)) == 0.25
    with pytest.raises(ValueError):
        error_rate([])


def test_tokens_averaged_across_language_pairs():
    rows = aggregate([
        rec(lp=("en", "de"), pairs=[(0, 0), (1, 1)], tokens=(3_000_000, 1_000_000)),
        rec(lp=("zh", "en"), pairs=[(0, 0), (1, 1)], tokens=(1_500_000, 500_000)),
    ])
    assert rows[0].total_tokens == 3_000_000


def test_error_rate_averaged_across_language_pairs():
    rows = aggregate([
        rec(lp=("en", "de"), pairs=[(0, 0)] * 3, malformed=1),
        rec(lp=("zh", "en"), pairs=[(0, 0)] * 9, malformed=1),
    ])
    assert rows[0].error_rate == pytest.approx((0.25 + 0.1) / 2)
    assert rows[0].n_malformed == 2 and rows[0].n_examples == 14


def test_pearson_pooled_vs_per_pair():
    a = rec(lp=("en", "de"), pairs=[(1, 1), (2, 2), (3, 4)])
    b = rec(lp=("zh", "en"), pairs=[(1, 3), (2, 2), (3, 1)])
    pooled = aggregate([a, b])[0].pearson_r
    per = aggregate([a, b], "per-pair")[0].pearson_r
    assert per == pytest.approx((0.98198 - 1.0) / 2, abs=1e-5)
    assert pooled != per
    with pytest.raises(ValueError):
        aggregate([a], "median")


def test_malformed_excluded_from_pearson():
    row = aggregate([rec(pairs=[(1, 1), (2, 2), (3, 4)], malformed=5)])[0]
    assert row.pearson_r == pytest.approx(0.98198, abs=1e-5)


def test_undefined_pearson_becomes_none():
    assert aggregate([rec(pairs=[(1, 1)])])[0].pearson_r is None


def grid():
    values = {False: [0.613, 0.340, 0.384, 0.269, 0.015], True: [0.603, 0.498, 0.548, 0.189, 0.028]}
    return [ReportRow("gpt-4o", c, bs, r, 10, 0, 1000.0 / bs, 0.0)
            for c, rs in values.items() for bs, r in zip([1, 2, 4, 8, 16], rs)]


def test_degradation():
    series = {(d.compressed, d.batch_size): d.ratio for d in relative_degradation(grid())}
    assert series[(False, 1)] == 1.0 and series[(True, 1)] == 1.0
    assert series[(False, 2)] == pytest.approx(0.340 / 0.613)
    assert round(series[(False, 2)], 3) == 0.555
    assert series[(True, 4)] == pytest.approx(0.9088, abs=1e-4)
    assert len(series) == 10


def test_degradation_without_baseline():
    rows = [r for r in grid() if r.batch_size != 1]
    assert relative_degradation(rows) == []


def test_metric_table_shape():
    header, body = metric_table(grid(), "pearson")
    assert header == ["Model", "Comp.", "1", "2", "4", "8", "16"]
    assert body[0] == ["gpt-4o", "-", "0.613", "0.340", "0.384", "0.269", "0.015"]
    assert body[1][1] == "+"
    text = format_text(header, body, "Pearson r")
    assert text.splitlines()[0] == "Pearson r"
    assert format_csv(header, body).splitlines()[1] == "gpt-4o,-,0.613,0.340,0.384,0.269,0.015"
    assert metric_table(grid(), "tokens")[1][0][2] == "1.0K"
    assert degradation_csv(relative_degradation(grid())).splitlines()[2] == "gpt-4o,-,2,0.554649"


def test_run_record_roundtrip(tmp_path):
    records = [rec(pairs=[(1, 2)], malformed=1, tokens=(5, 6)), rec(lp=("zh", "en"), comp=True, bs=4)]
    path = tmp_path / "bs1.jsonl"
    write_run_records(records, path)
    assert read_run_records(path) == records


def test_read_rejects_foreign_rows(tmp_path):
    path = tmp_path / "rows.jsonl"
    path.write_text('{"model_id": "m"}\n')
    with pytest.raises(ValueError, match="not a run record"):
        read_run_records(path)


def test_nan_free_fsum():
    rows = aggregate([rec(pairs=[(float(i), float(i) ** 2) for i in range(50)])])
    assert math.isfinite(rows[0].pearson_r)


def test_grid_aggregates_to_ten_rows():
    records = [rec(comp=c, bs=bs, pairs=[(1, 1), (2, 3), (3, 2)]) for c in (False, True) for bs in (1, 2, 4, 8, 16)]
    rows = aggregate(records)
    assert len(rows) == 10
    assert {(r.compressed, r.batch_size) for r in rows} == {(c, b) for c in (False, True) for b in (1, 2, 4, 8, 16)}
    # hand-computed: x=(1,2,3), y=(1,3,2) gives r = 0.5
    assert all(r.pearson_r == pytest.approx(0.5) for r in rows)
