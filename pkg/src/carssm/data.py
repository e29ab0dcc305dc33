"""Facility and ZCTA tables: loading, validation, screening and joining.

Input files are plain CSV with fixed headers (see FACILITY_COLUMNS and
ZCTA_COLUMNS). An empty cell or a literal "NA" (any case) marks a missing
value.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np


class DataError(Exception):
    """Base class for table loading/validation problems."""


class ParseError(DataError):
    """Malformed CSV (bad header, wrong field count, unparseable number)."""


class ValidationError(DataError):
    """A record violates a declared invariant."""


class JoinError(DataError):
    """A facility references a ZCTA that is not in the ZCTA table."""


COVARIATE_NAMES = (
    "pct_diabetes_primary",
    "pct_hypertension_primary",
    "pct_african_american",
    "staff_count",
    "pct_septicemia",
    "pct_female",
)

#: Covariates constrained to [0, 100]; staff_count is only required to be >= 0.
PERCENT_COVARIATES = frozenset(n for n in COVARIATE_NAMES if n != "staff_count")

FACILITY_COLUMNS = ("facility_id", "zcta_id", "latitude", "longitude") + COVARIATE_NAMES + ("shr",)
ZCTA_COLUMNS = ("zcta_id", "centroid_latitude", "centroid_longitude", "population", "fpl_score")

#: Name the ZCTA-level covariate gets after the join.
FPL_NAME = "fpl_score"

#: Covariate order of the fitted model: six facility-level plus the FPL score.
MODEL_COVARIATES = COVARIATE_NAMES + (FPL_NAME,)


def _is_missing(cell: str) -> bool:
    return cell.strip() == "" or cell.strip().upper() == "NA"


@dataclass(frozen=True)
class FacilityRecord:
    facility_id: str
    zcta_id: str
    latitude: float
    longitude: float
    covariates: tuple  # optional floats, aligned with Dataset.covariate_names
    shr: float | None

    def validate(self, covariate_names=COVARIATE_NAMES, context: str = "") -> None:
        where = f"{context}facility {self.facility_id!r}"
        if not -90.0 <= self.latitude <= 90.0:
            raise ValidationError(f"{where}: latitude out of range")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValidationError(f"{where}: longitude out of range")
        if len(self.covariates) != len(covariate_names):
            raise ValidationError(f"{where}: expected {len(covariate_names)} covariates")
        for name, value in zip(covariate_names, self.covariates):
            if value is None:
                continue
            if name in PERCENT_COVARIATES and not 0.0 <= value <= 100.0:
                raise ValidationError(f"{where}: {name} out of range [0, 100]")
            if name == "staff_count" and value < 0:
                raise ValidationError(f"{where}: staff_count negative")
        if self.shr is not None and not self.shr > 0:
            raise ValidationError(f"{where}: shr must be positive")

    def missing_covariate_fraction(self) -> float:
        if not self.covariates:
            return 0.0
        return sum(v is None for v in self.covariates) / len(self.covariates)


@dataclass(frozen=True)
class ZctaRecord:
    zcta_id: str
    centroid_latitude: float
    centroid_longitude: float
    population: int
    fpl_score: float | None

    def validate(self, context: str = "") -> None:
        where = f"{context}zcta {self.zcta_id!r}"
        if not -90.0 <= self.centroid_latitude <= 90.0:
            raise ValidationError(f"{where}: centroid_latitude out of range")
        if not -180.0 <= self.centroid_longitude <= 180.0:
            raise ValidationError(f"{where}: centroid_longitude out of range")
        if self.population < 1:
            raise ValidationError(f"{where}: population must be >= 1")
        if self.fpl_score is not None and self.fpl_score < 0:
            raise ValidationError(f"{where}: fpl_score negative")


@dataclass
class Dataset:
    facilities: list
    zctas: list
    covariate_names: tuple = COVARIATE_NAMES

    def zcta_by_id(self) -> dict:
        return {z.zcta_id: z for z in self.zctas}

    def validate(self) -> None:
        seen = set()
        for z in self.zctas:
            z.validate()
            if z.zcta_id in seen:
                raise ValidationError(f"duplicate zcta_id {z.zcta_id!r}")
            seen.add(z.zcta_id)
        for f in self.facilities:
            f.validate(self.covariate_names)
        unresolved = sorted({f.zcta_id for f in self.facilities} - seen)
        if unresolved:
            raise ValidationError(f"facility zcta_ids not in zcta table: {unresolved}")


def _parse_float(cell: str, line: int, fieldname: str, path) -> float:
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"{path} line {line}: cannot parse {fieldname}={cell!r} as a number") from None


def _parse_optional_float(cell: str, line: int, fieldname: str, path):
    if _is_missing(cell):
        return None
    return _parse_float(cell, line, fieldname, path)


def _read_rows(path, expected_header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != expected_header:
            raise ParseError(
                f"{path} line 1: expected header {','.join(expected_header)}"
            )
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise ParseError(
                    f"{path} line {line}: expected {len(expected_header)} fields, got {len(row)}"
                )
            yield line, row


def load_facility_table(path) -> list:
    """Load facilities.csv into validated FacilityRecord rows (ids unique)."""
    records = []
    seen = set()
    for line, row in _read_rows(path, FACILITY_COLUMNS):
        facility_id, zcta_id = row[0].strip(), row[1].strip()
        if not facility_id or not zcta_id:
            raise ValidationError(f"{path} line {line}: facility_id and zcta_id are required")
        if facility_id in seen:
            raise ValidationError(f"{path} line {line}: duplicate facility_id {facility_id!r}")
        seen.add(facility_id)
        lat = _parse_float(row[2], line, "latitude", path)
        lon = _parse_float(row[3], line, "longitude", path)
        covs = tuple(
            _parse_optional_float(cell, line, name, path)
            for name, cell in zip(COVARIATE_NAMES, row[4:10])
        )
        shr = _parse_optional_float(row[10], line, "shr", path)
        rec = FacilityRecord(facility_id, zcta_id, lat, lon, covs, shr)
        rec.validate(context=f"{path} line {line}: ")
        records.append(rec)
    return records


def load_zcta_table(path) -> list:
    """Load zctas.csv into validated ZctaRecord rows (ids must be unique)."""
    records = []
    seen = set()
    for line, row in _read_rows(path, ZCTA_COLUMNS):
        zcta_id = row[0].strip()
        if not zcta_id:
            raise ValidationError(f"{path} line {line}: zcta_id is required")
        if zcta_id in seen:
            raise ValidationError(f"{path} line {line}: duplicate zcta_id {zcta_id!r}")
        seen.add(zcta_id)
        lat = _parse_float(row[1], line, "centroid_latitude", path)
        lon = _parse_float(row[2], line, "centroid_longitude", path)
        pop_raw = _parse_float(row[3], line, "population", path)
        if not pop_raw.is_integer():
            raise ParseError(f"{path} line {line}: population must be an integer")
        fpl = _parse_optional_float(row[4], line, "fpl_score", path)
        rec = ZctaRecord(zcta_id, lat, lon, int(pop_raw), fpl)
        rec.validate(context=f"{path} line {line}: ")
        records.append(rec)
    return records


def load_dataset(facilities_path, zctas_path) -> Dataset:
    return Dataset(
        facilities=load_facility_table(facilities_path),
        zctas=load_zcta_table(zctas_path),
    )


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_facility_table(facilities, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FACILITY_COLUMNS)
        for f in facilities:
            writer.writerow(
                [f.facility_id, f.zcta_id, repr(f.latitude), repr(f.longitude)]
                + [_format_cell(v) for v in f.covariates]
                + [_format_cell(f.shr)]
            )


def write_zcta_table(zctas, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ZCTA_COLUMNS)
        for z in zctas:
            writer.writerow(
                [z.zcta_id, repr(z.centroid_latitude), repr(z.centroid_longitude),
                 str(z.population), _format_cell(z.fpl_score)]
            )


@dataclass
class ScreenResult:
    """Outcome of the missingness screen."""

    dataset: Dataset
    n_removed: int
    n_kept: int
    removed_ids: list
    empty_result: bool = False


def screen_missingness(ds: Dataset, threshold: float) -> ScreenResult:
    """Drop facilities whose missing-covariate fraction strictly exceeds threshold.

    Only the facility-level covariates count; the response and any ZCTA-level
    covariate are ignored. Idempotent.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    kept, removed = [], []
    for f in ds.facilities:
        if f.missing_covariate_fraction() > threshold:
            removed.append(f.facility_id)
        else:
            kept.append(f)
    out = replace(ds, facilities=kept)
    return ScreenResult(
        dataset=out,
        n_removed=len(removed),
        n_kept=len(kept),
        removed_ids=removed,
        empty_result=not kept,
    )


@dataclass
class DesignTable:
    """Facility rows with ZCTA covariate and offset joined on.

    ``columns`` maps variable name -> float array with NaN for missing; it
    contains the six facility covariates, the joined FPL score and the raw
    SHR. ``offset`` is log(ZCTA population), shared by facilities in the
    same ZCTA. ``zcta_index`` maps each row to its position in ``zcta_ids``.
    """

    facility_ids: list
    zcta_of_row: list
    latitude: np.ndarray
    longitude: np.ndarray
    columns: dict
    offset: np.ndarray
    zcta_ids: list
    zcta_index: np.ndarray
    zcta_lat: np.ndarray
    zcta_lon: np.ndarray
    covariate_names: tuple = MODEL_COVARIATES

    @property
    def n_rows(self) -> int:
        return len(self.facility_ids)

    @property
    def n_zctas(self) -> int:
        return len(self.zcta_ids)


def join_zcta(ds: Dataset) -> DesignTable:
    """Broadcast ZCTA-level fields onto facility rows.

    Preserves facility count and order. Raises JoinError listing every
    facility whose zcta_id cannot be resolved.
    """
    by_id = ds.zcta_by_id()
    bad = [f.facility_id for f in ds.facilities if f.zcta_id not in by_id]
    if bad:
        raise JoinError(f"facilities with unresolvable zcta_id: {bad}")

    zcta_ids = sorted({f.zcta_id for f in ds.facilities})
    zpos = {z: i for i, z in enumerate(zcta_ids)}
    n = len(ds.facilities)

    columns = {name: np.full(n, np.nan) for name in ds.covariate_names}
    columns[FPL_NAME] = np.full(n, np.nan)
    columns["shr"] = np.full(n, np.nan)
    lat = np.empty(n)
    lon = np.empty(n)
    offset = np.empty(n)
    zcta_index = np.empty(n, dtype=np.intp)

    for i, f in enumerate(ds.facilities):
        z = by_id[f.zcta_id]
        lat[i], lon[i] = f.latitude, f.longitude
        for name, value in zip(ds.covariate_names, f.covariates):
            if value is not None:
                columns[name][i] = value
        if z.fpl_score is not None:
            columns[FPL_NAME][i] = z.fpl_score
        if f.shr is not None:
            columns["shr"][i] = f.shr
        offset[i] = math.log(z.population)
        zcta_index[i] = zpos[f.zcta_id]

    return DesignTable(
        facility_ids=[f.facility_id for f in ds.facilities],
        zcta_of_row=[f.zcta_id for f in ds.facilities],
        latitude=lat,
        longitude=lon,
        columns=columns,
        offset=offset,
        zcta_ids=zcta_ids,
        zcta_index=zcta_index,
        zcta_lat=np.array([by_id[z].centroid_latitude for z in zcta_ids]),
        zcta_lon=np.array([by_id[z].centroid_longitude for z in zcta_ids]),
    )
