"""Ingestion tests: validation messages, sorting, design matrices, IO."""

import logging
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from ngmix.data import ingest, subjects_to_frame, write_table
from ngmix.errors import DataError


def formulas(fixed=("1", "time"), random=("1",)):
    return SimpleNamespace(fixed=list(fixed), random=list(random))


def write_csv(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestIngestBasics:
    def test_two_subjects_three_rows(self, tmp_path):
        path = write_csv(tmp_path,
                         "subject_id,time,y\na,0.5,1.0\na,1.5,2.0\nb,0.2,3.0\n")
        subs = ingest(path, formulas())
        assert [s.id for s in subs] == ["a", "b"]
        assert [s.n for s in subs] == [2, 1]
        np.testing.assert_allclose(subs[0].times, [0.5, 1.5])
        np.testing.assert_allclose(subs[1].y, [3.0])

    def test_shuffled_rows_identical_to_sorted(self, tmp_path):
        sorted_path = write_csv(
            tmp_path,
            "subject_id,time,y,age\na,0.5,1.0,60\na,1.5,2.0,60\nb,0.2,3.0,45\n",
            "sorted.csv")
        shuffled_path = write_csv(
            tmp_path,
            "subject_id,time,y,age\nb,0.2,3.0,45\na,1.5,2.0,60\na,0.5,1.0,60\n",
            "shuffled.csv")
        spec = formulas(fixed=("1", "time", "age"))
        a = ingest(sorted_path, spec)
        b = ingest(shuffled_path, spec)
        assert [s.id for s in a] == [s.id for s in b]
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.times, sb.times)
            np.testing.assert_array_equal(sa.y, sb.y)
            np.testing.assert_array_equal(sa.x, sb.x)
            np.testing.assert_array_equal(sa.d, sb.d)

    def test_design_matrices(self, tmp_path):
        path = write_csv(
            tmp_path,
            "subject_id,time,y,age\na,0.5,1.0,60\na,1.5,2.0,61\n")
        sub, = ingest(path, formulas(fixed=("1", "time", "age"),
                                     random=("1", "time")))
        np.testing.assert_allclose(sub.x, [[1.0, 0.5, 60.0],
                                           [1.0, 1.5, 61.0]])
        np.testing.assert_allclose(sub.d, [[1.0, 0.5], [1.0, 1.5]])

    def test_empty_random_design(self, tmp_path):
        path = write_csv(tmp_path, "subject_id,time,y\na,0.5,1.0\n")
        sub, = ingest(path, formulas(random=()))
        assert sub.d.shape == (1, 0)

    def test_single_measurement_logged_not_dropped(self, tmp_path, caplog):
        path = write_csv(tmp_path,
                         "subject_id,time,y\na,0.5,1.0\nb,0.2,3.0\nb,0.9,1.0\n")
        with caplog.at_level(logging.INFO, logger="ngmix.data"):
            subs = ingest(path, formulas())
        assert len(subs) == 2
        assert "1 with a single measurement" in caplog.text


class TestIngestErrors:
    def test_missing_column_named(self, tmp_path):
        path = write_csv(tmp_path, "subject_id,time\na,0.5\n")
        with pytest.raises(DataError, match="'y'"):
            ingest(path, formulas())

    def test_missing_covariate_named(self, tmp_path):
        path = write_csv(tmp_path, "subject_id,time,y\na,0.5,1.0\n")
        with pytest.raises(DataError, match="'age'"):
            ingest(path, formulas(fixed=("1", "age")))

    def test_non_numeric_cell_has_line_number(self, tmp_path):
        path = write_csv(tmp_path,
                         "subject_id,time,y\na,0.5,1.0\na,1.5,oops\n")
        with pytest.raises(DataError, match=r"'oops' in column 'y' at line 3"):
            ingest(path, formulas())

    def test_duplicate_times_listed(self, tmp_path):
        path = write_csv(
            tmp_path,
            "subject_id,time,y\na,0.5,1.0\na,0.5,2.0\nb,1.0,0.1\n")
        with pytest.raises(DataError, match=r"\(a, 0.5\)"):
            ingest(path, formulas())

    def test_missing_time_is_an_error(self, tmp_path):
        path = write_csv(tmp_path, "subject_id,time,y\na,,1.0\n")
        with pytest.raises(DataError, match="missing value in column 'time'"):
            ingest(path, formulas())

    def test_empty_subject_id(self, tmp_path):
        path = write_csv(tmp_path, "subject_id,time,y\n,0.5,1.0\n")
        with pytest.raises(DataError, match="line 2"):
            ingest(path, formulas())

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(DataError, match="could not read"):
            ingest(tmp_path / "nope.csv", formulas())

    def test_all_outcomes_missing(self, tmp_path):
        path = write_csv(tmp_path, "subject_id,time,y\na,0.5,\na,1.0,\n")
        with pytest.raises(DataError, match="no usable rows"):
            ingest(path, formulas())


class TestMissingOutcomes:
    def test_rows_dropped_and_logged(self, tmp_path, caplog):
        path = write_csv(
            tmp_path,
            "subject_id,time,y\na,0.5,1.0\na,1.0,\na,1.5,2.0\n")
        with caplog.at_level(logging.INFO, logger="ngmix.data"):
            sub, = ingest(path, formulas())
        assert sub.n == 2
        np.testing.assert_allclose(sub.times, [0.5, 1.5])
        assert "dropped 1 row(s) with missing y" in caplog.text

    def test_subject_with_no_outcomes_disappears(self, tmp_path):
        path = write_csv(
            tmp_path,
            "subject_id,time,y\na,0.5,\nb,0.2,3.0\n")
        subs = ingest(path, formulas())
        assert [s.id for s in subs] == ["b"]


class TestRoundTrip:
    def test_float64_values_survive_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        y = rng.standard_normal(8) * np.exp(rng.uniform(-8, 8, 8))
        times = np.sort(rng.uniform(0, 3, 8))
        frame = pd.DataFrame({"subject_id": ["s"] * 8, "time": times, "y": y})
        path = tmp_path / "rt.csv"
        write_table(frame, path)
        sub, = ingest(path, formulas())
        np.testing.assert_array_equal(sub.y, y)
        np.testing.assert_array_equal(sub.times, times)

    def test_subjects_to_frame_inverts_ingest(self, tmp_path):
        path = write_csv(
            tmp_path,
            "subject_id,time,y,age\na,0.5,1.25,60\na,1.5,-2.0,60\nb,0.2,3.5,45\n")
        spec = formulas(fixed=("1", "time", "age"))
        subs = ingest(path, spec)
        frame = subjects_to_frame(subs, [("age", "x", 2)])
        assert list(frame.columns) == ["subject_id", "time", "y", "age"]
        out = tmp_path / "again.csv"
        write_table(frame, out)
        again = ingest(out, spec)
        for sa, sb in zip(subs, again):
            np.testing.assert_array_equal(sa.y, sb.y)
            np.testing.assert_array_equal(sa.x, sb.x)
