import math

import numpy as np
import pytest

from carssm.data import (
    COVARIATE_NAMES,
    Dataset,
    FacilityRecord,
    JoinError,
    ParseError,
    ValidationError,
    ZctaRecord,
    join_zcta,
    load_dataset,
    load_facility_table,
    load_zcta_table,
    screen_missingness,
    write_facility_table,
    write_zcta_table,
)
from carssm.simulate import simulate_dataset

FACILITY_HEADER = ("facility_id,zcta_id,latitude,longitude,pct_diabetes_primary,"
                   "pct_hypertension_primary,pct_african_american,staff_count,"
                   "pct_septicemia,pct_female,shr")
ZCTA_HEADER = "zcta_id,centroid_latitude,centroid_longitude,population,fpl_score"


def write(path, *lines):
    path.write_text("\n".join(lines) + "\n")
    return path


def make_facility(fid="F1", zcta="Z1", n_missing=0, shr=1.0):
    covs = [50.0] * len(COVARIATE_NAMES)
    for i in range(n_missing):
        covs[i] = None
    return FacilityRecord(fid, zcta, 28.0, -82.0, tuple(covs), shr)


class TestLoadFacilities:
    def test_example_row(self, tmp_path):
        path = write(tmp_path / "f.csv", FACILITY_HEADER,
                     "F001,33101,25.77,-80.19,45.2,,60.1,12,8.3,47.0,1.30")
        (rec,) = load_facility_table(path)
        assert rec.facility_id == "F001"
        assert rec.zcta_id == "33101"
        assert rec.covariates[0] == 45.2
        assert rec.covariates[1] is None  # pct_hypertension empty cell
        assert rec.shr == 1.30

    def test_latitude_out_of_range(self, tmp_path):
        path = write(tmp_path / "f.csv", FACILITY_HEADER,
                     "F001,33101,100.0,-80.19,45.2,,60.1,12,8.3,47.0,1.30")
        with pytest.raises(ValidationError, match="latitude out of range"):
            load_facility_table(path)

    def test_paper_scale_449_rows(self, tmp_path):
        rows = [FACILITY_HEADER]
        for i in range(449):
            rows.append(f"F{i:03d},Z{i % 325:03d},27.0,-81.0,10,20,30,40,50,60,1.1")
        path = write(tmp_path / "f.csv", *rows)
        assert len(load_facility_table(path)) == 449

    def test_na_sentinel_case_insensitive(self, tmp_path):
        path = write(tmp_path / "f.csv", FACILITY_HEADER,
                     "F001,Z1,25.0,-80.0,na,NA,Na,12,8.3,47.0,")
        (rec,) = load_facility_table(path)
        assert rec.covariates[:3] == (None, None, None)
        assert rec.shr is None

    def test_parse_error_names_line(self, tmp_path):
        path = write(tmp_path / "f.csv", FACILITY_HEADER,
                     "F001,Z1,25.0,-80.0,45.2,1,60.1,12,8.3,47.0,1.3",
                     "F002,Z1,25.0,-80.0,oops,1,60.1,12,8.3,47.0,1.3")
        with pytest.raises(ParseError, match="line 3"):
            load_facility_table(path)

    def test_wrong_field_count(self, tmp_path):
        path = write(tmp_path / "f.csv", FACILITY_HEADER, "F001,Z1,25.0")
        with pytest.raises(ParseError, match="expected 11 fields"):
            load_facility_table(path)

    def test_bad_header(self, tmp_path):
        path = write(tmp_path / "f.csv", "a,b,c", "1,2,3")
        with pytest.raises(ParseError, match="expected header"):
            load_facility_table(path)

    def test_duplicate_facility_id_rejected(self, tmp_path):
        row = "F001,Z1,25.0,-80.0,45.2,1,60.1,12,8.3,47.0,1.3"
        path = write(tmp_path / "f.csv", FACILITY_HEADER, row, row)
        with pytest.raises(ValidationError, match="duplicate facility_id"):
            load_facility_table(path)

    def test_negative_shr_rejected(self, tmp_path):
        path = write(tmp_path / "f.csv", FACILITY_HEADER,
                     "F001,Z1,25.0,-80.0,45.2,1,60.1,12,8.3,47.0,-0.5")
        with pytest.raises(ValidationError, match="shr"):
            load_facility_table(path)


class TestLoadZctas:
    def test_basic(self, tmp_path):
        path = write(tmp_path / "z.csv", ZCTA_HEADER, "Z1,28.1,-81.5,20000,18.5")
        (rec,) = load_zcta_table(path)
        assert rec.population == 20000
        assert rec.fpl_score == 18.5

    def test_duplicate_id(self, tmp_path):
        path = write(tmp_path / "z.csv", ZCTA_HEADER,
                     "Z1,28.1,-81.5,20000,18.5", "Z1,28.2,-81.4,500,")
        with pytest.raises(ValidationError, match="duplicate"):
            load_zcta_table(path)

    def test_population_floor(self, tmp_path):
        path = write(tmp_path / "z.csv", ZCTA_HEADER, "Z1,28.1,-81.5,0,18.5")
        with pytest.raises(ValidationError, match="population"):
            load_zcta_table(path)


class TestScreen:
    def test_over_threshold_removed(self):
        ds = Dataset([make_facility(n_missing=5)], [ZctaRecord("Z1", 28, -81, 100, 1.0)])
        res = screen_missingness(ds, 0.8)  # 5/6 = 0.833 > 0.8
        assert res.n_removed == 1 and res.n_kept == 0
        assert res.removed_ids == ["F1"]
        assert res.empty_result

    def test_complete_facility_kept(self):
        ds = Dataset([make_facility()], [ZctaRecord("Z1", 28, -81, 100, 1.0)])
        res = screen_missingness(ds, 0.8)
        assert res.n_kept == 1 and res.n_removed == 0

    def test_threshold_zero_removes_any_missing(self):
        ds = Dataset(
            [make_facility("F1", n_missing=1), make_facility("F2", n_missing=0)],
            [ZctaRecord("Z1", 28, -81, 100, 1.0)],
        )
        res = screen_missingness(ds, 0.0)
        assert res.removed_ids == ["F1"]

    def test_exactly_at_threshold_kept(self):
        ds = Dataset([make_facility(n_missing=3)], [ZctaRecord("Z1", 28, -81, 100, 1.0)])
        assert screen_missingness(ds, 0.5).n_kept == 1  # 0.5 not > 0.5

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        facs = [make_facility(f"F{i}", n_missing=int(rng.integers(0, 7))) for i in range(40)]
        ds = Dataset(facs, [ZctaRecord("Z1", 28, -81, 100, 1.0)])
        once = screen_missingness(ds, 0.6).dataset
        twice = screen_missingness(once, 0.6).dataset
        assert once == twice


class TestJoin:
    def make_dataset(self):
        facs = [
            make_facility("F1", "Z1"),
            make_facility("F2", "Z1"),
            make_facility("F3", "Z2"),
            make_facility("F4", "Z1"),
        ]
        zctas = [
            ZctaRecord("Z1", 28.0, -81.0, 20000, 18.5),
            ZctaRecord("Z2", 27.0, -80.5, 300, None),
        ]
        return Dataset(facs, zctas)

    def test_offset_and_broadcast(self):
        table = join_zcta(self.make_dataset())
        assert table.facility_ids == ["F1", "F2", "F3", "F4"]
        expected = math.log(20000)
        for i in (0, 1, 3):
            assert table.offset[i] == pytest.approx(expected, abs=1e-12)
            assert table.columns["fpl_score"][i] == 18.5
        assert np.isnan(table.columns["fpl_score"][2])
        assert table.offset[0] == pytest.approx(9.9035, abs=5e-5)

    def test_unresolvable_zcta(self):
        ds = self.make_dataset()
        ds.facilities.append(make_facility("F9", "NOPE"))
        with pytest.raises(JoinError, match="F9"):
            join_zcta(ds)

    def test_preserves_count_and_order(self):
        table = join_zcta(self.make_dataset())
        assert table.n_rows == 4
        assert table.zcta_of_row == ["Z1", "Z1", "Z2", "Z1"]
        np.testing.assert_array_equal(table.zcta_index, [0, 0, 1, 0])


class TestRoundTrip:
    def test_dataset_round_trip(self, tmp_path):
        ds, _, _ = simulate_dataset(k=12, seed=99, cov_missing_rate=0.3,
                                    shr_missing_rate=0.1)
        write_facility_table(ds.facilities, tmp_path / "f.csv")
        write_zcta_table(ds.zctas, tmp_path / "z.csv")
        back = load_dataset(tmp_path / "f.csv", tmp_path / "z.csv")
        assert back == ds
        # and a second pass is byte-identical
        write_facility_table(back.facilities, tmp_path / "f2.csv")
        assert (tmp_path / "f2.csv").read_bytes() == (tmp_path / "f.csv").read_bytes()

    def test_validate_passes_on_simulated(self):
        ds, _, _ = simulate_dataset(k=8, seed=3)
        ds.validate()
