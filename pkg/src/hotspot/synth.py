"""Synthetic event generators (homogeneous Poisson, self-exciting, planted
clusters) and the PoI tables that go with them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from datetime import date

import numpy as np

from .data import CityGrid, CrimeDataset, PoiTable, bbox_from_km, build_grid, make_dataset
from .errors import ConfigError, InvalidArgument, NumericalError

KINDS = ("homogeneous-poisson", "self-exciting", "planted-clusters")


@dataclass(frozen=True)
class Cluster:
    center_km: tuple[float, float]  # (x, y) in the bbox kilometre frame
    radius_km: float
    hours: tuple[float, float]      # active window [start, end) in hours of day
    rate: float                     # expected events per day
    type: str = "theft"

    def contains(self, x, y, hour) -> np.ndarray:
        d = np.hypot(np.asarray(x) - self.center_km[0], np.asarray(y) - self.center_km[1])
        h = np.asarray(hour)
        return (d <= self.radius_km + 1e-9) & (h >= self.hours[0]) & (h < self.hours[1])


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "homogeneous-poisson"
    base_rate: float = 50.0           # background events per day over the whole box
    days: int = 100
    height_km: float = 6.0
    width_km: float = 6.0
    origin: tuple[float, float] = (40.70, -74.02)  # (lat, lon) of the south-west corner
    types: tuple[str, ...] = ("theft",)
    type_weights: tuple[float, ...] | None = None
    alpha: float = 0.0                # branching ratio
    beta: float = 24.0                # excitation decay rate, 1/day
    sigma_km: float = 0.3             # offspring spatial spread
    clusters: tuple[Cluster, ...] = ()
    n_pois: int = 400
    poi_categories: tuple[str, ...] = ("food", "retail", "nightlife", "transit", "office", "park")
    start_date: date = date(2018, 1, 1)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown generator kind {self.kind!r}")
        if not self.base_rate > 0:
            raise InvalidArgument("base_rate must be positive")
        if self.days < 1:
            raise InvalidArgument("days must be >= 1")
        if not 0 <= self.alpha < 1:
            raise InvalidArgument(f"branching ratio {self.alpha} is not subcritical")
        if self.alpha > 0 and not self.beta > 0:
            raise InvalidArgument("decay rate beta must be positive")
        if self.type_weights is not None and len(self.type_weights) != len(self.types):
            raise InvalidArgument("type_weights must match types")
        for c in self.clusters:
            if c.rate <= 0 or c.radius_km <= 0 or not 0 <= c.hours[0] < c.hours[1] <= 24:
                raise InvalidArgument(f"bad cluster {c}")
            if not (0 <= c.center_km[0] <= self.width_km and 0 <= c.center_km[1] <= self.height_km):
                raise InvalidArgument(f"cluster centre {c.center_km} lies outside the box")

    @property
    def bbox(self):
        return bbox_from_km(self.origin[0], self.origin[1], self.height_km, self.width_km)

    @property
    def all_types(self) -> tuple[str, ...]:
        extra = [c.type for c in self.clusters if c.type not in self.types]
        return tuple(self.types) + tuple(dict.fromkeys(extra))

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown generator keys {sorted(unknown)}")
        d = dict(d)
        if "clusters" in d:
            d["clusters"] = tuple(Cluster(center_km=tuple(c["center_km"]), radius_km=float(c["radius_km"]),
                                          hours=tuple(c["hours"]), rate=float(c["rate"]),
                                          type=c.get("type", "theft")) for c in d["clusters"])
        for key in ("types", "type_weights", "poi_categories", "origin"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if isinstance(d.get("start_date"), str):
            d["start_date"] = date.fromisoformat(d["start_date"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "clusters":
                v = [{"center_km": list(c.center_km), "radius_km": c.radius_km, "hours": list(c.hours),
                      "rate": c.rate, "type": c.type} for c in v]
            elif isinstance(v, tuple):
                v = list(v)
            elif isinstance(v, date):
                v = v.isoformat()
            out[f.name] = v
        return out


def _frame(spec: GeneratorSpec, bbox=None) -> CityGrid:
    return build_grid(bbox or spec.bbox, 1.0, 2)


def _type_draw(spec: GeneratorSpec, n: int, rng) -> np.ndarray:
    w = np.ones(len(spec.types)) if spec.type_weights is None else np.asarray(spec.type_weights, float)
    return rng.choice(len(spec.types), size=n, p=w / w.sum())


def _assemble(spec, frame, t, x, y, type_idx) -> CrimeDataset:
    t = np.asarray(t, dtype=np.float64)
    day = np.floor(t).astype(np.int64)
    # minute resolution, as in the CSV format; keeps write/read round trips exact
    tod = np.minimum(np.round((t - day) * 1440) / 1440, 1439 / 1440)
    lat, lon = frame.to_deg(np.asarray(x), np.asarray(y))
    return make_dataset(day, tod, lat, lon, type_idx, spec.all_types, spec.start_date)


def generate_poisson(spec: GeneratorSpec, days: int | None = None, bbox=None) -> CrimeDataset:
    """Homogeneous Poisson events, uniform in time and over the box."""
    days = spec.days if days is None else days
    frame = _frame(spec, bbox)
    rng = np.random.default_rng(spec.seed)
    n = rng.poisson(spec.base_rate * days)
    t = np.sort(rng.uniform(0, days, n))
    x = rng.uniform(0, frame.width_km, n)
    y = rng.uniform(0, frame.height_km, n)
    return _assemble(spec, frame, t, x, y, _type_draw(spec, n, rng))


def generate_self_exciting(spec: GeneratorSpec, days: int | None = None, bbox=None) -> CrimeDataset:
    """Exponential-kernel self-exciting events by Ogata thinning.

    Intensity ``mu + alpha * beta * sum exp(-beta (t - t_i))``; offspring land
    at a Gaussian offset from the parent they are attributed to.
    """
    days = spec.days if days is None else days
    frame = _frame(spec, bbox)
    rng = np.random.default_rng(spec.seed)
    mu, a, b = spec.base_rate, spec.alpha, spec.beta
    W, H = frame.width_km, frame.height_km
    ts, xs, ys, cs = [], [], [], []
    t, excite = 0.0, 0.0
    horizon_back = 40.0 / b if b > 0 else 0.0
    lo = 0
    while True:
        lam_bar = mu + a * b * excite
        w = rng.exponential(1.0 / lam_bar)
        t += w
        if t >= days:
            break
        excite *= math.exp(-b * w)
        lam_t = mu + a * b * excite
        if rng.random() * lam_bar > lam_t:
            continue
        if ts and rng.random() * lam_t >= mu:
            while lo < len(ts) and ts[lo] < t - horizon_back:
                lo += 1
            wts = np.exp(-b * (t - np.asarray(ts[lo:])))
            parent = lo + rng.choice(len(wts), p=wts / wts.sum())
            for _ in range(100):
                x = xs[parent] + rng.normal(0, spec.sigma_km)
                y = ys[parent] + rng.normal(0, spec.sigma_km)
                if 0 <= x <= W and 0 <= y <= H:
                    break
            else:
                x, y = rng.uniform(0, W), rng.uniform(0, H)
            c = cs[parent]
        else:
            x, y = rng.uniform(0, W), rng.uniform(0, H)
            c = int(_type_draw(spec, 1, rng)[0])
        ts.append(t)
        xs.append(x)
        ys.append(y)
        cs.append(c)
        excite += 1.0
    return _assemble(spec, frame, ts, xs, ys, np.asarray(cs, dtype=np.int64))


def _disk_points(cl: Cluster, frame: CityGrid, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform points in the part of the cluster disk that lies inside the box (rejection)."""
    xs, ys = [], []
    need = n
    while need > 0:
        m = max(2 * need, 16)
        r = cl.radius_km * np.sqrt(rng.uniform(0, 1, m))
        th = rng.uniform(0, 2 * np.pi, m)
        x = cl.center_km[0] + r * np.cos(th)
        y = cl.center_km[1] + r * np.sin(th)
        ok = (x >= 0) & (x <= frame.width_km) & (y >= 0) & (y <= frame.height_km)
        xs.append(x[ok][:need])
        ys.append(y[ok][:need])
        need -= len(xs[-1])
    return np.concatenate(xs) if xs else np.zeros(0), np.concatenate(ys) if ys else np.zeros(0)


def generate_planted(spec: GeneratorSpec, days: int | None = None, bbox=None) -> CrimeDataset:
    """Uniform background plus clusters active in fixed disks during fixed hours each day."""
    days = spec.days if days is None else days
    frame = _frame(spec, bbox)
    rng = np.random.default_rng(spec.seed)
    types = spec.all_types
    n = rng.poisson(spec.base_rate * days)
    t = [rng.uniform(0, days, n)]
    x = [rng.uniform(0, frame.width_km, n)]
    y = [rng.uniform(0, frame.height_km, n)]
    c = [_type_draw(spec, n, rng)]
    for cl in spec.clusters:
        counts = rng.poisson(cl.rate, size=days)
        total = int(counts.sum())
        d = np.repeat(np.arange(days), counts)
        hour = rng.uniform(cl.hours[0], cl.hours[1], total)
        cx, cy = _disk_points(cl, frame, total, rng)
        if total and not cl.contains(cx, cy, hour).all():
            raise NumericalError("planted events fell outside their cluster region")
        t.append(d + hour / 24.0)
        x.append(cx)
        y.append(cy)
        c.append(np.full(total, types.index(cl.type)))
    return _assemble(spec, frame, np.concatenate(t), np.concatenate(x), np.concatenate(y), np.concatenate(c))


def generate(spec: GeneratorSpec) -> CrimeDataset:
    if spec.kind == "homogeneous-poisson":
        return generate_poisson(spec)
    if spec.kind == "self-exciting":
        return generate_self_exciting(spec)
    return generate_planted(spec)


def generate_pois(spec: GeneratorSpec) -> PoiTable:
    """Uniform venues plus extra venues around cluster centres (one category each)."""
    frame = _frame(spec)
    rng = np.random.default_rng(spec.seed + 7919)
    n_cat = len(spec.poi_categories)
    n_bg = spec.n_pois
    x = list(rng.uniform(0, frame.width_km, n_bg))
    y = list(rng.uniform(0, frame.height_km, n_bg))
    cat = list(rng.integers(0, n_cat, n_bg))
    for i, cl in enumerate(spec.clusters):
        k = max(spec.n_pois // 10, 1)
        r = cl.radius_km * np.sqrt(rng.uniform(0, 1, k))
        th = rng.uniform(0, 2 * np.pi, k)
        x += list(np.clip(cl.center_km[0] + r * np.cos(th), 0, frame.width_km))
        y += list(np.clip(cl.center_km[1] + r * np.sin(th), 0, frame.height_km))
        cat += [i % n_cat] * k
    lat, lon = frame.to_deg(np.asarray(x), np.asarray(y))
    return PoiTable(
        venue=[f"venue_{i}" for i in range(len(x))],
        category=np.asarray(cat, dtype=np.int64),
        lat=lat, lon=lon,
        categories=tuple(spec.poi_categories),
    )


def cluster_coverage(spec: GeneratorSpec, dataset: CrimeDataset) -> float:
    """Fraction of cluster-type records that fall inside some declared (disk, hours) region."""
    frame = _frame(spec)
    x, y = frame.to_km(dataset.lat, dataset.lon)
    hour = dataset.tod * 24
    names = {cl.type for cl in spec.clusters}
    sel = np.isin(np.asarray(dataset.types)[dataset.type], list(names))
    inside = np.zeros(len(dataset), bool)
    for cl in spec.clusters:
        inside |= cl.contains(x, y, hour) & (np.asarray(dataset.types)[dataset.type] == cl.type)
    return float(inside[sel].mean()) if sel.any() else 1.0
