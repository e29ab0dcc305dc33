"""Great-circle distances and distance-ordered series construction.

Sites are ranked by their distance from a single reference centroid. The
ordering must be strict for the state-space recursions downstream, so exact
ties (e.g. several facilities sharing one ZCTA centroid) are broken by adding
a tiny jitter that is far below geodesic precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import asin, cos, radians, sin, sqrt

import numpy as np

EARTH_RADIUS_KM = 6371.0088

#: Default reference point: published geographic center of Florida.
DEFAULT_CENTROID = (28.6305, -82.4497)

#: Jitter added to duplicated distances, in km.
DEFAULT_TIE_EPSILON_KM = 1e-6


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance between two points, in kilometres.

    Accepts scalars or numpy arrays (broadcast as usual). Symmetric and
    nonnegative; uses a mean Earth radius of 6371.0088 km.
    """
    scalar = np.isscalar(lat1) and np.isscalar(lon1) and np.isscalar(lat2) and np.isscalar(lon2)
    if scalar:
        p1, l1, p2, l2 = radians(lat1), radians(lon1), radians(lat2), radians(lon2)
        s_lat = sin((p2 - p1) / 2.0)
        s_lon = sin((l2 - l1) / 2.0)
        h = s_lat * s_lat + cos(p1) * cos(p2) * s_lon * s_lon
        return 2.0 * EARTH_RADIUS_KM * asin(min(1.0, sqrt(h)))
    p1, l1 = np.radians(lat1), np.radians(lon1)
    p2, l2 = np.radians(lat2), np.radians(lon2)
    h = np.sin((p2 - p1) / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def strictify(distances, tie_epsilon_km: float = DEFAULT_TIE_EPSILON_KM) -> np.ndarray:
    """Turn a nondecreasing distance vector into a strictly increasing one.

    Within each group of exact duplicates the j-th occurrence (0-indexed, in
    stable original order) receives ``+ j * tie_epsilon_km``. Values that are
    already unique are returned unchanged.

    Raises
    ------
    ValueError
        If the input is not sorted nondecreasing, or if the jitter collides
        with a neighbouring value so strictness cannot be achieved.
    """
    d = np.asarray(distances, dtype=float)
    if d.ndim != 1:
        raise ValueError("distances must be one-dimensional")
    if d.size and np.any(np.diff(d) < 0):
        raise ValueError("distances must be sorted nondecreasing")
    out = d.copy()
    i = 0
    n = d.size
    while i < n:
        j = i + 1
        while j < n and d[j] == d[i]:
            j += 1
        for r in range(i + 1, j):
            out[r] = d[i] + (r - i) * tie_epsilon_km
        i = j
    if out.size and np.any(np.diff(out) <= 0):
        raise ValueError(
            "tie jitter collided with a neighbouring distance; "
            "inputs are closer together than tie_epsilon_km"
        )
    return out


@dataclass
class OrderedSeries:
    """One variable's values sorted by strictly increasing centroid distance.

    ``gaps[i] = distances[i] - distances[i-1]`` with an implicit origin
    ``d_0 = 0``, so ``gaps[0] = distances[0]``. Missing values are NaN.
    """

    site_ids: list[str]
    distances: np.ndarray
    gaps: np.ndarray
    values: np.ndarray
    _observed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.distances = np.asarray(self.distances, dtype=float)
        self.gaps = np.asarray(self.gaps, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.site_ids)
        if not (self.distances.size == self.gaps.size == self.values.size == n):
            raise ValueError("site_ids, distances, gaps and values must have equal length")
        if n:
            if self.distances[0] <= 0 or np.any(np.diff(self.distances) <= 0):
                raise ValueError("distances must be strictly increasing and positive")
            expected = np.diff(self.distances, prepend=0.0)
            if not np.allclose(self.gaps, expected, rtol=0, atol=1e-12):
                raise ValueError("gaps inconsistent with distances (d_0 = 0)")
        self._observed = np.isfinite(self.values)

    @property
    def n_sites(self) -> int:
        return len(self.site_ids)

    @property
    def observed_mask(self) -> np.ndarray:
        return self._observed

    @property
    def n_observed(self) -> int:
        return int(self._observed.sum())

    def with_values(self, values) -> "OrderedSeries":
        """Same ordering, different value vector."""
        return OrderedSeries(self.site_ids, self.distances, self.gaps, values)


def ordered_series(
    site_ids,
    latitudes,
    longitudes,
    values,
    centroid=DEFAULT_CENTROID,
    tie_epsilon_km: float = DEFAULT_TIE_EPSILON_KM,
) -> OrderedSeries:
    """Order arbitrary sites by strictified distance from ``centroid``.

    Sorting is stable, so exact ties keep their input order before the jitter
    is applied. A site exactly at the centroid gets distance
    ``tie_epsilon_km`` (distances must stay strictly positive).
    """
    lat_c, lon_c = centroid
    if not (-90.0 <= lat_c <= 90.0 and -180.0 <= lon_c <= 180.0):
        raise ValueError("centroid out of range")
    site_ids = list(site_ids)
    d = np.asarray(haversine_km(np.asarray(latitudes, float), np.asarray(longitudes, float),
                                lat_c, lon_c), dtype=float)
    if d.ndim == 0:
        d = d.reshape(1)
    values = np.asarray(values, dtype=float)
    order = np.argsort(d, kind="stable")
    d_sorted = d[order]
    d_sorted[d_sorted == 0.0] = tie_epsilon_km
    # the zero->epsilon fix can leapfrog a sub-epsilon neighbour; re-clamp monotone
    d_strict = strictify(np.maximum.accumulate(d_sorted), tie_epsilon_km)
    gaps = np.diff(d_strict, prepend=0.0)
    return OrderedSeries(
        site_ids=[site_ids[i] for i in order],
        distances=d_strict,
        gaps=gaps,
        values=values[order],
    )


def make_ordered_series(
    table,
    variable: str,
    centroid=DEFAULT_CENTROID,
    tie_epsilon_km: float = DEFAULT_TIE_EPSILON_KM,
) -> OrderedSeries:
    """Build an :class:`OrderedSeries` for one column of a design table."""
    if variable not in table.columns:
        raise KeyError(f"unknown variable {variable!r}")
    return ordered_series(
        table.facility_ids,
        table.latitude,
        table.longitude,
        table.columns[variable],
        centroid=centroid,
        tie_epsilon_km=tie_epsilon_km,
    )
