import csv
import io

import numpy as np
import pytest

from conset.core import OptionSpace
from conset.errors import DataError
from conset.ingest import (
    BinarizationScheme,
    assemble_dataset,
    binarize,
    parse_survey_csv,
    parse_survey_rows,
    write_survey_csv,
)

PARTIES = OptionSpace(("Left", "Green", "SPD", "CDU/CSU", "FDP", "AfD"))
REGION = BinarizationScheme.from_dict(
    {"region": {"type": "indicator", "one_levels": ["West"], "name": "former_west_germany"}})


def write(tmp_path, text):
    path = tmp_path / "survey.csv"
    path.write_text(text, encoding="utf-8")
    return path


class TestParse:
    def test_set_literal_row(self, tmp_path):
        t = parse_survey_csv(write(tmp_path, "consideration_set,age,region\nSPD+Green,1,West\n"), PARTIES)
        assert t.sets[0].labels(PARTIES) == ["Green", "SPD"]
        assert t.covariates == ("age", "region") and t.rows[0] == ("1", "West")

    @pytest.mark.parametrize("row,needle", [
        ("SPD+SPD,1,West", "duplicate"),
        ("XYZ,1,West", "XYZ"),
        (",1,West", "empty"),
    ])
    def test_bad_literal(self, tmp_path, row, needle):
        path = write(tmp_path, f"consideration_set,age,region\nSPD,1,East\n{row}\n")
        with pytest.raises(DataError) as err:
            parse_survey_csv(path, PARTIES)
        assert needle in str(err.value) and "line 3" in str(err.value)
        assert err.value.rows == [1]

    def test_ragged_row(self, tmp_path):
        with pytest.raises(DataError, match="fields"):
            parse_survey_csv(write(tmp_path, "consideration_set,a\nSPD,1,2\n"), PARTIES)

    def test_header_checks(self, tmp_path):
        with pytest.raises(DataError):
            parse_survey_csv(write(tmp_path, "set,a\nSPD,1\n"), PARTIES)
        with pytest.raises(DataError):
            parse_survey_csv(write(tmp_path, "consideration_set,a,a\nSPD,1,2\n"), PARTIES)


class TestBinarize:
    def table(self, levels):
        return parse_survey_rows(["consideration_set", "region"], [["SPD", lv] for lv in levels], PARTIES)

    def test_indicator(self):
        X = binarize(self.table(["West", "East"]), REGION)
        assert X.tolist() == [[1.0, 1.0], [1.0, 0.0]]

    def test_uncovered_level(self):
        scheme = BinarizationScheme.from_dict({"region": {
            "type": "indicator", "one_levels": ["West"], "zero_levels": ["East"], "name": "w"}})
        with pytest.raises(DataError) as err:
            binarize(self.table(["West", "North"]), scheme)
        msg = str(err.value)
        assert "region" in msg and "North" in msg and "row 1" in msg

    def test_missing_is_error(self):
        with pytest.raises(DataError):
            binarize(self.table(["West", ""]), REGION)

    def test_numeric(self):
        t = parse_survey_rows(["consideration_set", "age"], [["SPD", "41.5"]], PARTIES)
        X = binarize(t, BinarizationScheme.from_dict({"age": {"type": "numeric"}}))
        assert X.tolist() == [[1.0, 41.5]]

    def test_eleven_covariates_give_p12(self):
        header = ["consideration_set"] + [f"c{j}" for j in range(11)]
        t = parse_survey_rows(header, [["SPD"] + ["y"] * 11, ["Left"] + ["n"] * 11], PARTIES)
        scheme = BinarizationScheme.from_dict(
            {f"c{j}": {"type": "indicator", "one_levels": ["y"], "name": f"b{j}"} for j in range(11)})
        X = binarize(t, scheme)
        assert X.shape == (2, 12)
        assert set(np.unique(X[:, 1:])) == {0.0, 1.0}

    def test_scheme_round_trip(self):
        d = {"region": {"type": "indicator", "one_levels": ["West"], "zero_levels": ["East"], "name": "w"},
             "age": {"type": "numeric", "name": "age"}}
        assert BinarizationScheme.from_dict(d).to_dict() == d

    @pytest.mark.parametrize("bad", [
        {"r": {"type": "weird"}},
        {"r": {"type": "indicator", "one_levels": []}},
        {"r": {"type": "numeric", "name": "x"}, "s": {"type": "numeric", "name": "x"}},
    ])
    def test_scheme_rejects(self, bad):
        with pytest.raises(ValueError):
            BinarizationScheme.from_dict(bad)

    def test_deterministic_csv_export(self):
        t = self.table(["West", "East", "West"])

        def export():
            buf = io.StringIO()
            csv.writer(buf).writerows(binarize(t, REGION).tolist())
            return buf.getvalue()

        assert export() == export()


class TestAssemble:
    def table_100(self):
        rows = [["SPD", "West"]] * 60 + [["Green+SPD", "East"]] * 36
        rows += [["Left+AfD", "West"], ["Green+FDP", "East"], ["SPD+FDP", "West"], ["Left+SPD", "East"]]
        return parse_survey_rows(["consideration_set", "region"], rows, PARTIES)

    def test_drop(self):
        data, report = assemble_dataset(self.table_100(), REGION, min_count=2)
        assert data.n == 96 and report.drops == 4
        assert report.dropped_rows == (96, 97, 98, 99)
        assert data.covariate_names == ("(Intercept)", "former_west_germany")
        assert data.y.max() < data.K

    def test_error(self):
        with pytest.raises(DataError) as err:
            assemble_dataset(self.table_100(), REGION, min_count=2, drop_policy="error")
        assert list(err.value.rows) == [96, 97, 98, 99]

    @pytest.mark.parametrize("min_count", [1, 5, 1000])
    def test_all_singletons_never_drop(self, min_count):
        rows = [[lab, "West"] for lab in PARTIES.labels] * 3
        t = parse_survey_rows(["consideration_set", "region"], rows, PARTIES)
        data, report = assemble_dataset(t, REGION, min_count=min_count)
        assert report.drops == 0 and data.n == 18

    def test_csv_round_trip(self, tmp_path):
        t = self.table_100()
        path = tmp_path / "out.csv"
        write_survey_csv(path, PARTIES, t.sets, t.covariates, t.rows)
        back = parse_survey_csv(path, PARTIES)
        assert back.sets == t.sets and back.rows == t.rows
