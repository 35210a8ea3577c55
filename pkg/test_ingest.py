#!/usr/bin/env python3
"""
Tests for CSV price ingestion.
"""

import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath('.'))

from dprisk.errors import IngestError, InputError
from dprisk.ingest import PriceParser, ingest_csv
from dprisk.market import compute_log_returns


def write_csv(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def parser():
    return PriceParser(enable_logging=False, verbose=False)


def test_two_row_file(tmp_path):
    path = write_csv(tmp_path / "p.csv", ["date,price", "2020-01-01,100", "2020-01-02,110"])
    series = ingest_csv(path)
    assert [s.asset_id for s in series] == ["price"]
    lr = compute_log_returns(series[0])
    assert lr.returns.tolist() == pytest.approx([math.log(1.1)])


def test_year_of_prices_gives_one_return_less(tmp_path, parser):
    dates = np.arange(np.datetime64("2021-01-01"), np.datetime64("2021-01-01") + 246)
    prices = 100 * np.exp(np.cumsum(np.full(246, 0.001)))
    lines = ["Date,Close"] + [f"{d},{p:.6f}" for d, p in zip(dates, prices)]
    parser.from_file(write_csv(tmp_path / "year.csv", lines))
    returns = parser.log_returns()
    assert len(returns) == 1
    assert len(returns[0]) == 245


def test_missing_cell_drops_one_price(tmp_path, parser):
    lines = ["date,A,B", "2020-01-01,1,10", "2020-01-02,2,", "2020-01-03,3,12", "2020-01-04,4,NA", "2020-01-05,5,14"]
    a, b = parser.from_file(write_csv(tmp_path / "m.csv", lines)).to_series()
    assert len(a) == 5
    assert len(b) == 3
    assert parser.missing_counts == {"A": 0, "B": 2}
    assert b.prices.tolist() == [10.0, 12.0, 14.0]


def test_column_mapping_and_date_detection(tmp_path, parser):
    lines = ["Volume,TradeDate,Close", '500,03/01/2020,"1,234.5"', "600,03/02/2020,1240"]
    parser.from_file(write_csv(tmp_path / "c.csv", lines), price_columns={"Close": "IBM"})
    assert parser.date_column == "TradeDate"
    (series,) = parser.to_series()
    assert series.asset_id == "IBM"
    assert series.prices.tolist() == [1234.5, 1240.0]


def test_rows_are_sorted_and_duplicate_dates_keep_last(tmp_path, parser):
    lines = ["date,x", "2020-01-03,3", "2020-01-01,1", "2020-01-02,2", "2020-01-02,2.5"]
    frame = parser.from_file(write_csv(tmp_path / "d.csv", lines)).normalize()
    assert frame["x"].tolist() == [1.0, 2.5, 3.0]
    assert parser.duplicate_dates == 1


def test_few_bad_rows_are_dropped(tmp_path, parser):
    lines = ["date,x"] + [f"2020-01-{d:02d},{d}" for d in range(1, 26)]
    lines[10] = "2020-01-10,oops"
    frame = parser.from_file(write_csv(tmp_path / "b.csv", lines)).normalize()
    assert len(frame) == 24
    assert parser.bad_lines == [11]


def test_too_many_bad_rows_reports_line_numbers(tmp_path, parser):
    lines = ["date,x"] + [f"2020-01-{d:02d},{d}" for d in range(1, 21)]
    lines[3] = "not a date,3"
    lines[7] = "2020-01-07,seven"
    with pytest.raises(IngestError) as e:
        parser.from_file(write_csv(tmp_path / "bad.csv", lines)).normalize()
    assert e.value.line_numbers == [4, 8]
    assert "lines [4, 8]" in str(e.value)


def test_file_errors(tmp_path, parser):
    with pytest.raises(IngestError):
        parser.from_file(tmp_path / "absent.csv")
    path = write_csv(tmp_path / "h.csv", ["date,x", "2020-01-01,1"])
    with pytest.raises(IngestError):
        parser.from_file(path, price_columns=["y"])
    with pytest.raises(IngestError):
        parser.from_file(path, date_column="when")
    with pytest.raises(InputError):
        PriceParser(enable_logging=False).normalize()


def test_non_positive_price_is_rejected(tmp_path):
    path = write_csv(tmp_path / "z.csv", ["date,x", "2020-01-01,1", "2020-01-02,0"])
    with pytest.raises(InputError):
        ingest_csv(path)


def test_from_folder_reads_every_csv(tmp_path, parser):
    write_csv(tmp_path / "a.csv", ["date,A", "2020-01-01,1", "2020-01-02,2"])
    write_csv(tmp_path / "b.csv", ["date,B", "2020-01-01,3", "2020-01-02,4"])
    (tmp_path / "notes.txt").write_text("ignored")
    series = parser.from_folder(tmp_path)
    assert [s.asset_id for s in series] == ["A", "B"]
    with pytest.raises(IngestError):
        parser.from_folder(tmp_path / "missing")
