"""City grid, crime records, ingestion, labeling and splitting.

Positions are carried in degrees (lat/lon) on disk and converted to a local
equirectangular kilometre frame anchored at the grid's south-west corner for
all modelling work.  Times are absolute days since the dataset epoch:
``t = day + tod`` with ``tod`` the fraction of the day in ``[0, 1)``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import EmptyDatasetError, FormatError, InvalidArgument, OutOfRange

log = logging.getLogger(__name__)

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON_EQUATOR = 111.320
EVENT_COLUMNS = ("type", "datetime", "lat", "lon")
POI_COLUMNS = ("venue", "category", "lat", "lon")


def km_per_deg_lon(lat: float) -> float:
    return KM_PER_DEG_LON_EQUATOR * math.cos(math.radians(lat))


def bbox_from_km(lat_min: float, lon_min: float, height_km: float, width_km: float):
    """Bounding box with the given extents in kilometres, anchored at (lat_min, lon_min)."""
    lat_max = lat_min + height_km / KM_PER_DEG_LAT
    lat_mid = 0.5 * (lat_min + lat_max)
    lon_max = lon_min + width_km / km_per_deg_lon(lat_mid)
    return (lat_min, lat_max, lon_min, lon_max)


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CityGrid:
    """``rows x cols`` equal cells tiling a bounding box.

    Cell ids are row-major with row 0 at the southern edge.  ``embeddings`` is
    ``poi_features @ embed_weight``; both stay zero until :func:`region_embedding`.
    """

    bbox: tuple[float, float, float, float]
    cell_size_km: float
    rows: int
    cols: int
    embed_dim: int
    poi_features: np.ndarray = field(repr=False)
    embed_weight: np.ndarray = field(repr=False)
    categories: tuple[str, ...] = ()

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def lat_mid(self) -> float:
        return 0.5 * (self.bbox[0] + self.bbox[1])

    @property
    def height_km(self) -> float:
        return (self.bbox[1] - self.bbox[0]) * KM_PER_DEG_LAT

    @property
    def width_km(self) -> float:
        return (self.bbox[3] - self.bbox[2]) * km_per_deg_lon(self.lat_mid)

    @property
    def cell_height_km(self) -> float:
        return self.height_km / self.rows

    @property
    def cell_width_km(self) -> float:
        return self.width_km / self.cols

    @property
    def cell_area_km2(self) -> float:
        return self.cell_height_km * self.cell_width_km

    @property
    def area_km2(self) -> float:
        return self.height_km * self.width_km

    @property
    def embeddings(self) -> np.ndarray:
        return self.poi_features @ self.embed_weight

    def to_km(self, lat, lon):
        """Map degrees to the local (x east, y north) kilometre frame."""
        lat = np.asarray(lat, dtype=np.float64)
        lon = np.asarray(lon, dtype=np.float64)
        x = (lon - self.bbox[2]) * km_per_deg_lon(self.lat_mid)
        y = (lat - self.bbox[0]) * KM_PER_DEG_LAT
        return x, y

    def to_deg(self, x, y):
        lat = self.bbox[0] + np.asarray(y, dtype=np.float64) / KM_PER_DEG_LAT
        lon = self.bbox[2] + np.asarray(x, dtype=np.float64) / km_per_deg_lon(self.lat_mid)
        return lat, lon

    def centers_km(self) -> np.ndarray:
        """Cell centres as an ``(n_cells, 2)`` array of (x, y) kilometres."""
        ids = np.arange(self.n_cells)
        r, c = np.divmod(ids, self.cols)
        x = (c + 0.5) * self.cell_width_km
        y = (r + 0.5) * self.cell_height_km
        return np.stack([x, y], axis=1)

    def centers(self) -> np.ndarray:
        """Cell centres as an ``(n_cells, 2)`` array of (lat, lon) degrees."""
        ckm = self.centers_km()
        lat, lon = self.to_deg(ckm[:, 0], ckm[:, 1])
        return np.stack([lat, lon], axis=1)

    def contains(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat, dtype=np.float64)
        lon = np.asarray(lon, dtype=np.float64)
        return (lat >= self.bbox[0]) & (lat <= self.bbox[1]) & (lon >= self.bbox[2]) & (lon <= self.bbox[3])

    def map_to_grid(self, lat, lon):
        """Cell id of each location; the bbox max edges belong to the last row/column."""
        scalar = np.ndim(lat) == 0 and np.ndim(lon) == 0
        lat = np.atleast_1d(np.asarray(lat, dtype=np.float64))
        lon = np.atleast_1d(np.asarray(lon, dtype=np.float64))
        inside = self.contains(lat, lon)
        if not inside.all():
            bad = int(np.flatnonzero(~inside)[0])
            raise OutOfRange(f"location ({lat[bad]}, {lon[bad]}) outside grid bbox {self.bbox}")
        row = np.floor((lat - self.bbox[0]) / (self.bbox[1] - self.bbox[0]) * self.rows).astype(np.int64)
        col = np.floor((lon - self.bbox[2]) / (self.bbox[3] - self.bbox[2]) * self.cols).astype(np.int64)
        ids = np.minimum(row, self.rows - 1) * self.cols + np.minimum(col, self.cols - 1)
        return int(ids[0]) if scalar else ids

    def as_matrix(self, values) -> np.ndarray:
        return np.asarray(values).reshape(self.rows, self.cols)

    def to_dict(self) -> dict:
        return {
            "bbox": list(self.bbox),
            "cell_size_km": self.cell_size_km,
            "rows": self.rows,
            "cols": self.cols,
            "embed_dim": self.embed_dim,
            "categories": list(self.categories),
            "poi_features": self.poi_features.tolist(),
            "embed_weight": self.embed_weight.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CityGrid":
        return cls(
            bbox=tuple(d["bbox"]),
            cell_size_km=float(d["cell_size_km"]),
            rows=int(d["rows"]),
            cols=int(d["cols"]),
            embed_dim=int(d["embed_dim"]),
            poi_features=np.asarray(d["poi_features"], dtype=np.float64).reshape(int(d["rows"]) * int(d["cols"]), -1),
            embed_weight=np.asarray(d["embed_weight"], dtype=np.float64).reshape(-1, int(d["embed_dim"])),
            categories=tuple(d["categories"]),
        )


def build_grid(bbox, cell_size_km: float, embed_dim: int) -> CityGrid:
    """Tile ``bbox`` with ``ceil(extent / cell_size_km)`` equal cells per axis."""
    lat_min, lat_max, lon_min, lon_max = (float(v) for v in bbox)
    if not (lat_max > lat_min and lon_max > lon_min):
        raise InvalidArgument(f"degenerate bbox {bbox}")
    if not cell_size_km > 0:
        raise InvalidArgument("cell_size_km must be positive")
    if embed_dim <= 0 or embed_dim % 2:
        raise InvalidArgument(f"embed_dim must be a positive even integer, got {embed_dim}")
    probe = CityGrid((lat_min, lat_max, lon_min, lon_max), cell_size_km, 1, 1, embed_dim,
                     np.zeros((1, 1)), np.zeros((1, embed_dim)))
    # relative slack so an exact 2.0 km extent does not round up to 3 cells
    rows = max(1, math.ceil(probe.height_km / cell_size_km - 1e-9))
    cols = max(1, math.ceil(probe.width_km / cell_size_km - 1e-9))
    return CityGrid(
        bbox=(lat_min, lat_max, lon_min, lon_max),
        cell_size_km=float(cell_size_km),
        rows=rows,
        cols=cols,
        embed_dim=embed_dim,
        poi_features=np.zeros((rows * cols, 1)),
        embed_weight=np.zeros((1, embed_dim)),
    )


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrimeRecord:
    day: int
    tod: float
    lon: float
    lat: float
    type: int
    grid_id: int = -1

    @property
    def t(self) -> float:
        return self.day + self.tod


@dataclass
class CrimeDataset:
    """Columnar crime records sorted by absolute time ``day + tod``."""

    day: np.ndarray
    tod: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    type: np.ndarray
    types: tuple[str, ...]
    epoch: date
    grid_id: np.ndarray | None = None
    n_malformed: int = 0
    n_outside: int = 0

    def __post_init__(self):
        self.day = np.asarray(self.day, dtype=np.int64)
        self.tod = np.asarray(self.tod, dtype=np.float64)
        self.lat = np.asarray(self.lat, dtype=np.float64)
        self.lon = np.asarray(self.lon, dtype=np.float64)
        self.type = np.asarray(self.type, dtype=np.int64)
        if self.grid_id is not None:
            self.grid_id = np.asarray(self.grid_id, dtype=np.int64)
        n = len(self.day)
        if not all(len(a) == n for a in (self.tod, self.lat, self.lon, self.type)):
            raise InvalidArgument("record columns differ in length")
        if n and (self.tod.min() < 0 or self.tod.max() >= 1):
            raise InvalidArgument("time of day must lie in [0, 1)")
        if n and (self.type.min() < 0 or self.type.max() >= len(self.types)):
            raise InvalidArgument("type id outside the type vocabulary")

    def __len__(self) -> int:
        return len(self.day)

    @property
    def t(self) -> np.ndarray:
        return self.day + self.tod

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def day_first(self) -> int:
        return int(self.day.min())

    @property
    def day_last(self) -> int:
        return int(self.day.max())

    @property
    def span(self) -> tuple[int, int]:
        return self.day_first, self.day_last

    def records(self) -> Iterator[CrimeRecord]:
        gid = self.grid_id if self.grid_id is not None else np.full(len(self), -1)
        for i in range(len(self)):
            yield CrimeRecord(int(self.day[i]), float(self.tod[i]), float(self.lon[i]),
                              float(self.lat[i]), int(self.type[i]), int(gid[i]))

    def subset(self, mask_or_idx) -> "CrimeDataset":
        idx = np.asarray(mask_or_idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return dataclasses.replace(
            self,
            day=self.day[idx], tod=self.tod[idx], lat=self.lat[idx], lon=self.lon[idx],
            type=self.type[idx],
            grid_id=None if self.grid_id is None else self.grid_id[idx],
            n_malformed=0, n_outside=0,
        )

    def by_type(self, c: int) -> "CrimeDataset":
        """The per-type view R_c."""
        return self.subset(self.type == c)

    def type_id(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= int(name) < self.n_types:
                raise InvalidArgument(f"type id {name} outside 0..{self.n_types - 1}")
            return int(name)
        try:
            return self.types.index(str(name))
        except ValueError:
            raise InvalidArgument(f"unknown crime type {name!r}; known: {list(self.types)}") from None

    def with_grid(self, grid: CityGrid) -> "CrimeDataset":
        """Attach cell ids; records outside the grid are dropped and counted."""
        inside = grid.contains(self.lat, self.lon)
        out = self.subset(inside)
        out.grid_id = grid.map_to_grid(out.lat, out.lon) if len(out) else np.zeros(0, np.int64)
        out.n_malformed = self.n_malformed
        out.n_outside = self.n_outside + int((~inside).sum())
        if out.n_outside:
            log.warning("dropped %d records outside the grid bbox", out.n_outside)
        return out

    def datetime_of(self, t: float) -> datetime:
        return datetime.combine(self.epoch, datetime.min.time()) + timedelta(days=float(t))

    def time_of(self, when: datetime) -> float:
        """Absolute day coordinate of a datetime relative to the dataset epoch."""
        delta = when - datetime.combine(self.epoch, datetime.min.time())
        return delta.total_seconds() / 86400.0


def make_dataset(day, tod, lat, lon, type_, types, epoch=date(2000, 1, 1), grid=None) -> CrimeDataset:
    """Build a dataset sorted by absolute time (stable on input order)."""
    day = np.asarray(day, dtype=np.int64)
    tod = np.asarray(tod, dtype=np.float64)
    order = np.lexsort((np.arange(len(day)), tod, day))
    ds = CrimeDataset(day[order], tod[order], np.asarray(lat, float)[order], np.asarray(lon, float)[order],
                      np.asarray(type_, np.int64)[order], tuple(types), epoch)
    return ds.with_grid(grid) if grid is not None else ds


def _parse_minutes(text: str) -> datetime:
    return datetime.fromisoformat(text.strip()).replace(second=0, microsecond=0, tzinfo=None)


def ingest_events(path, grid: CityGrid | None = None, types: Sequence[str] | None = None,
                  epoch: date | None = None) -> CrimeDataset:
    """Read an events CSV with header ``type,datetime,lat,lon``.

    Rows with unparseable fields are skipped and counted in ``n_malformed``.
    With a grid, records outside its bbox are dropped and counted in ``n_outside``.
    """
    rows = []
    n_bad = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in EVENT_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        for row in reader:
            try:
                when = _parse_minutes(row["datetime"])
                lat, lon = float(row["lat"]), float(row["lon"])
                if not (math.isfinite(lat) and math.isfinite(lon)):
                    raise ValueError
                name = row["type"].strip()
                if not name:
                    raise ValueError
            except (ValueError, TypeError, AttributeError):
                n_bad += 1
                continue
            rows.append((name, when, lat, lon))
    if n_bad:
        log.warning("%s: skipped %d malformed rows", path, n_bad)
    if types is not None:
        vocab = tuple(types)
        kept = [r for r in rows if r[0] in vocab]
        n_bad += len(rows) - len(kept)
        rows = kept
    else:
        vocab = tuple(sorted({r[0] for r in rows}))
    if not rows:
        raise EmptyDatasetError(f"{path}: no valid event rows")
    if epoch is None:
        epoch = min(r[1] for r in rows).date()
    base = datetime.combine(epoch, datetime.min.time())
    day, tod = [], []
    for _, when, _, _ in rows:
        delta = when - base
        day.append(delta.days)
        tod.append(delta.seconds / 86400.0)
    ds = make_dataset(day, tod, [r[2] for r in rows], [r[3] for r in rows],
                      [vocab.index(r[0]) for r in rows], vocab, epoch, grid)
    ds.n_malformed += n_bad
    if not len(ds):
        raise EmptyDatasetError(f"{path}: no events inside the grid")
    return ds


def write_events(dataset: CrimeDataset, path) -> None:
    base = datetime.combine(dataset.epoch, datetime.min.time())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_COLUMNS)
        for i in range(len(dataset)):
            minutes = int(round(dataset.tod[i] * 1440))
            when = base + timedelta(days=int(dataset.day[i]), minutes=minutes)
            w.writerow([dataset.types[dataset.type[i]], when.strftime("%Y-%m-%dT%H:%M"),
                        f"{dataset.lat[i]:.7f}", f"{dataset.lon[i]:.7f}"])


# ---------------------------------------------------------------------------
# Points of interest and region embeddings
# ---------------------------------------------------------------------------


@dataclass
class PoiTable:
    venue: list[str]
    category: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    categories: tuple[str, ...]
    n_malformed: int = 0
    n_outside: int = 0

    def __len__(self) -> int:
        return len(self.venue)


def ingest_pois(path, grid: CityGrid | None = None) -> PoiTable:
    """Read a PoI CSV with header ``venue,category,lat,lon``; out-of-bbox rows are excluded."""
    rows = []
    n_bad = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in POI_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing columns {missing}")
        for row in reader:
            try:
                lat, lon = float(row["lat"]), float(row["lon"])
                cat = row["category"].strip()
                if not cat or not (math.isfinite(lat) and math.isfinite(lon)):
                    raise ValueError
            except (ValueError, TypeError, AttributeError):
                n_bad += 1
                continue
            rows.append((row["venue"], cat, lat, lon))
    n_out = 0
    if grid is not None:
        inside = [r for r in rows if grid.contains(r[2], r[3])]
        n_out = len(rows) - len(inside)
        rows = inside
        if n_out:
            log.warning("%s: excluded %d PoIs outside the grid bbox", path, n_out)
    cats = tuple(sorted({r[1] for r in rows}))
    return PoiTable(
        venue=[r[0] for r in rows],
        category=np.array([cats.index(r[1]) for r in rows], dtype=np.int64),
        lat=np.array([r[2] for r in rows], dtype=np.float64),
        lon=np.array([r[3] for r in rows], dtype=np.float64),
        categories=cats,
        n_malformed=n_bad,
        n_outside=n_out,
    )


def write_pois(pois: PoiTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POI_COLUMNS)
        for i in range(len(pois)):
            w.writerow([pois.venue[i], pois.categories[pois.category[i]], f"{pois.lat[i]:.7f}", f"{pois.lon[i]:.7f}"])


def poi_counts(grid: CityGrid, pois: PoiTable) -> np.ndarray:
    """Per-cell PoI counts, shape ``(n_cells, n_categories)``."""
    counts = np.zeros((grid.n_cells, max(len(pois.categories), 1)))
    if len(pois):
        inside = grid.contains(pois.lat, pois.lon)
        ids = grid.map_to_grid(pois.lat[inside], pois.lon[inside])
        np.add.at(counts, (ids, pois.category[inside]), 1.0)
    return counts


def region_embedding(grid: CityGrid, pois: PoiTable, seed: int = 0) -> CityGrid:
    """Attach log-count PoI features and a seeded initial projection to ``embed_dim``.

    The projection is the starting point of a learnable layer; the grid's
    ``embeddings`` property evaluates it with a zero bias.
    """
    if not len(pois):
        log.warning("empty PoI table: region features are all zero")
    counts = poi_counts(grid, pois)
    n_cat = counts.shape[1]
    rng = np.random.default_rng(seed)
    weight = rng.normal(0.0, 1.0 / math.sqrt(n_cat), size=(n_cat, grid.embed_dim))
    return dataclasses.replace(grid, poi_features=np.log1p(counts), embed_weight=weight,
                               categories=tuple(pois.categories))


# ---------------------------------------------------------------------------
# Packing, labels, splits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackedEvents:
    """All records folded onto one day, sorted by time of day.

    ``order`` indexes the source dataset so the packing can be undone.
    """

    tod: np.ndarray
    day: np.ndarray
    type: np.ndarray
    order: np.ndarray
    target_type: int

    def __len__(self) -> int:
        return len(self.tod)


def pack_events(dataset: CrimeDataset, c: int) -> PackedEvents:
    """Sort every record by time of day; ties go to the earlier day, then input order."""
    if not np.any(dataset.type == c):
        raise EmptyDatasetError(f"no records of type {c}")
    order = np.lexsort((np.arange(len(dataset)), dataset.day, dataset.tod))
    return PackedEvents(dataset.tod[order], dataset.day[order], dataset.type[order], order, int(c))


@dataclass(frozen=True)
class IntervalLabel:
    start: float  # absolute days
    hours: float
    type: int
    matrix: np.ndarray  # (rows, cols) of {0, 1}

    @property
    def end(self) -> float:
        return self.start + self.hours / 24.0


def label_interval(dataset: CrimeDataset, grid: CityGrid, start: float, hours: float, c: int) -> IntervalLabel:
    """Binary cell matrix: 1 where a type-``c`` record falls in ``[start, start + hours)``."""
    if dataset.grid_id is None:
        raise InvalidArgument("dataset has no grid ids; call with_grid first")
    if hours <= 0:
        raise InvalidArgument("interval length must be positive")
    end = start + hours / 24.0
    lo, hi = dataset.day_first, dataset.day_last + 1
    if start < lo or end > hi + 1e-9:
        raise OutOfRange(f"interval [{start}, {end}) outside dataset span [{lo}, {hi})")
    t = dataset.t
    mask = (dataset.type == c) & (t >= start) & (t < end)
    hit = np.bincount(dataset.grid_id[mask], minlength=grid.n_cells) > 0
    return IntervalLabel(float(start), float(hours), int(c), grid.as_matrix(hit.astype(np.int64)))


def split_dataset(dataset: CrimeDataset, ratio=(7, 1)) -> tuple[CrimeDataset, CrimeDataset]:
    """Chronological split: the first days go to training in proportion ``ratio``."""
    a, b = ratio
    if a <= 0 or b <= 0:
        raise InvalidArgument(f"bad split ratio {ratio}")
    if not len(dataset):
        raise EmptyDatasetError("cannot split an empty dataset")
    n_days = dataset.day_last - dataset.day_first + 1
    if n_days < 8:
        raise InvalidArgument(f"dataset spans {n_days} days; at least 8 are required")
    n_train = int(round(n_days * a / (a + b)))
    n_train = min(max(n_train, 1), n_days - 1)
    cut = dataset.day_first + n_train
    train = dataset.subset(dataset.day < cut)
    test = dataset.subset(dataset.day >= cut)
    return train, test


def split_day(dataset: CrimeDataset, ratio=(7, 1)) -> int:
    """First day index of the test period for :func:`split_dataset`."""
    a, b = ratio
    n_days = dataset.day_last - dataset.day_first + 1
    n_train = min(max(int(round(n_days * a / (a + b))), 1), n_days - 1)
    return dataset.day_first + n_train
