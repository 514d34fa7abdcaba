import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotspot.data import (CrimeDataset, PoiTable, bbox_from_km, build_grid, ingest_events, ingest_pois,
                          label_interval, make_dataset, pack_events, poi_counts, region_embedding, split_dataset,
                          write_events)
from hotspot.errors import EmptyDatasetError, FormatError, InvalidArgument, OutOfRange

from conftest import brute_cell

ORIGIN = (40.70, -74.02)


def grid_km(h, w, cell=1.0, dim=4):
    return build_grid(bbox_from_km(*ORIGIN, h, w), cell, dim)


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


# -- build_grid ----------------------------------------------------------------


def test_grid_exact_tiling():
    g = grid_km(2.0, 2.0)
    assert (g.rows, g.cols, g.n_cells) == (2, 2, 4)


def test_grid_ceiling_rule():
    g = grid_km(2.5, 1.0)
    assert (g.rows, g.cols) == (3, 1)


def test_grid_invariants():
    g = grid_km(3.0, 5.0, dim=6)
    lat, lon = g.centers().T
    assert g.contains(lat, lon).all()
    assert g.embeddings.shape == (g.n_cells, 6)


def test_grid_rejects_odd_dim_and_bad_bbox():
    with pytest.raises(InvalidArgument):
        grid_km(2, 2, dim=3)
    with pytest.raises(InvalidArgument):
        build_grid((1.0, 0.0, 0.0, 1.0), 1.0, 4)
    with pytest.raises(InvalidArgument):
        build_grid((0.0, 1.0, 0.0, 1.0), 0.0, 4)


def test_generated_file_maps_in_bounds(tmp_path):
    from hotspot.synth import GeneratorSpec, generate_poisson

    spec = GeneratorSpec(base_rate=40, days=5, height_km=7.3, width_km=9.1, seed=2)
    write_events(generate_poisson(spec), tmp_path / "e.csv")
    grid = build_grid(spec.bbox, 1.0, 4)
    ds = ingest_events(tmp_path / "e.csv", grid)
    assert ds.n_outside == 0 and len(ds) > 0
    assert ((ds.grid_id >= 0) & (ds.grid_id < grid.n_cells)).all()


# -- map_to_grid ---------------------------------------------------------------


def test_cell_center_maps_to_its_cell():
    g = grid_km(3.0, 4.0)
    lat, lon = g.centers().T
    assert list(g.map_to_grid(lat, lon)) == list(range(g.n_cells))


def test_max_corner_maps_to_last_cell():
    g = grid_km(3.0, 4.0)
    eps = 1e-12
    assert g.map_to_grid(g.bbox[1] - eps, g.bbox[3] - eps) == g.n_cells - 1
    assert g.map_to_grid(g.bbox[1], g.bbox[3]) == g.n_cells - 1


def test_outside_point_raises():
    g = grid_km(2.0, 2.0)
    with pytest.raises(OutOfRange):
        g.map_to_grid(g.bbox[1] + 0.01, g.bbox[2])


def test_map_to_grid_matches_bruteforce():
    g = grid_km(3.3, 2.7, cell=0.5)
    rng = np.random.default_rng(0)
    lat = rng.uniform(g.bbox[0], g.bbox[1], 1000)
    lon = rng.uniform(g.bbox[2], g.bbox[3], 1000)
    got = g.map_to_grid(lat, lon)
    assert all(int(a) == brute_cell(g, la, lo) for a, la, lo in zip(got, lat, lon))


# -- ingest_events -------------------------------------------------------------


def test_ingest_three_rows(tmp_path):
    p = write_csv(tmp_path / "e.csv", ["type", "datetime", "lat", "lon"],
                  [["theft", "2018-01-01T10:00", 40.71, -74.0],
                   ["theft", "2018-01-02T11:30", 40.72, -74.0],
                   ["assault", "2018-01-01T09:15", 40.71, -74.01]])
    ds = ingest_events(p)
    assert len(ds) == 3
    assert sum(len(ds.by_type(c)) for c in range(ds.n_types)) == 3
    assert ds.types == ("assault", "theft")


def test_ingest_sorts_shuffled_input(tmp_path):
    rows = [["theft", f"2018-01-{d:02d}T{h:02d}:00", 40.71, -74.0] for d in (3, 1, 2) for h in (20, 5)]
    ds = ingest_events(write_csv(tmp_path / "e.csv", ["type", "datetime", "lat", "lon"], rows))
    t = ds.t
    assert np.all(np.diff(t) >= 0)
    assert ds.day_first == 0 and ds.day_last == 2
    assert ds.tod[0] == pytest.approx(5 / 24)


def test_ingest_counts_malformed_and_rejects_missing_columns(tmp_path):
    p = write_csv(tmp_path / "e.csv", ["type", "datetime", "lat", "lon"],
                  [["theft", "2018-01-01T10:00", 40.71, -74.0], ["theft", "not a date", 40.7, -74.0],
                   ["theft", "2018-01-01T10:00", "nan", -74.0]])
    ds = ingest_events(p)
    assert len(ds) == 1 and ds.n_malformed == 2
    with pytest.raises(FormatError):
        ingest_events(write_csv(tmp_path / "bad.csv", ["type", "when", "lat", "lon"], []))
    with pytest.raises(EmptyDatasetError):
        ingest_events(write_csv(tmp_path / "empty.csv", ["type", "datetime", "lat", "lon"], []))


def test_ingest_drops_outside_and_uses_epoch(tmp_path):
    g = grid_km(2.0, 2.0)
    p = write_csv(tmp_path / "e.csv", ["type", "datetime", "lat", "lon"],
                  [["theft", "2018-01-05T06:00", 40.705, -74.015], ["theft", "2018-01-05T06:00", 41.5, -74.0]])
    ds = ingest_events(p, g, epoch=date(2018, 1, 1))
    assert len(ds) == 1 and ds.n_outside == 1
    assert ds.day[0] == 4 and ds.tod[0] == pytest.approx(0.25)


def test_events_write_read_round_trip(tmp_path, tiny_world):
    _, ds, grid = tiny_world
    write_events(ds, tmp_path / "e.csv")
    back = ingest_events(tmp_path / "e.csv", grid, ds.types, ds.epoch)
    assert len(back) == len(ds)
    np.testing.assert_array_equal(back.day, ds.day)
    np.testing.assert_allclose(back.tod, ds.tod, atol=1e-12)
    np.testing.assert_array_equal(back.grid_id, ds.grid_id)


# -- PoIs and region embeddings -----------------------------------------------


def test_ingest_pois_vocab_and_filter(tmp_path):
    g = grid_km(2.0, 2.0)
    p = write_csv(tmp_path / "p.csv", ["venue", "category", "lat", "lon"],
                  [["a", "food", 40.705, -74.015], ["b", "park", 40.71, -74.01], ["c", "food", 45.0, -74.0]])
    assert len(ingest_pois(p).categories) == 2
    pois = ingest_pois(p, g)
    assert pois.n_outside == 1 and len(pois) == 2


def test_poi_counts_match_recount():
    g = grid_km(3.0, 3.0)
    rng = np.random.default_rng(1)
    n = 500
    lat = rng.uniform(g.bbox[0], g.bbox[1], n)
    lon = rng.uniform(g.bbox[2], g.bbox[3], n)
    cat = rng.integers(0, 4, n)
    pois = PoiTable([str(i) for i in range(n)], cat, lat, lon, ("a", "b", "c", "d"))
    counts = poi_counts(g, pois)
    brute = np.zeros_like(counts)
    for la, lo, c in zip(lat, lon, cat):
        brute[brute_cell(g, la, lo), c] += 1
    np.testing.assert_array_equal(counts, brute)


def _pois_at(g, cells_and_counts, n_cat=2):
    centers = g.centers()
    lat, lon, cat = [], [], []
    for cell, counts in cells_and_counts:
        for c, k in enumerate(counts):
            lat += [centers[cell, 0]] * k
            lon += [centers[cell, 1]] * k
            cat += [c] * k
    return PoiTable([str(i) for i in range(len(lat))], np.array(cat, dtype=np.int64), np.array(lat), np.array(lon),
                    tuple("abcdefgh"[:n_cat]))


def test_region_embedding_zero_identical_and_bounded():
    g = grid_km(2.0, 2.0)
    pois = _pois_at(g, [(1, (3, 1)), (2, (3, 1))])
    emb = region_embedding(g, pois, seed=0).embeddings
    np.testing.assert_array_equal(emb[0], 0.0)
    np.testing.assert_array_equal(emb[1], emb[2])
    big = PoiTable(["v"], np.array([0]), np.array([g.centers()[3, 0]]), np.array([g.centers()[3, 1]]), ("a",))
    g2 = region_embedding(g, big, seed=0)
    feats = g2.poi_features.copy()
    feats[3, 0] = math.log1p(1e6)
    assert np.isfinite(feats @ g2.embed_weight).all()


# -- packing, labels, split ---------------------------------------------------


def test_pack_orders_by_time_of_day():
    ds = make_dataset([0, 1], [0.9, 0.1], [40.71, 40.71], [-74.0, -74.0], [0, 0], ("theft",))
    p = pack_events(ds, 0)
    np.testing.assert_allclose(p.tod, [0.1, 0.9])


def test_pack_tie_goes_to_earlier_day_and_round_trips():
    ds = make_dataset([2, 0, 1], [0.5, 0.5, 0.2], [40.71] * 3, [-74.0] * 3, [0, 0, 0], ("theft",))
    p = pack_events(ds, 0)
    assert list(p.day) == [1, 0, 2]
    assert sorted(zip(ds.day[p.order], ds.tod[p.order])) == sorted(zip(ds.day, ds.tod))


def test_label_interval_cases(tiny_world):
    _, ds, grid = tiny_world
    empty = label_interval(ds, grid, 3.0, 0.001, 1)
    assert empty.matrix.sum() in (0, 1)
    g = grid_km(2.0, 2.0)
    centers = g.centers()
    one = make_dataset([0, 1], [0.5, 0.5], [centers[3, 0], centers[0, 0]], [centers[3, 1], centers[0, 1]], [0, 0],
                       ("theft",), grid=g)
    m = label_interval(one, g, 0.0, 24.0, 0).matrix.ravel()
    assert m[3] == 1 and m.sum() == 1
    assert label_interval(one, g, 0.75, 6.0, 0).matrix.sum() == 0


def test_label_interval_half_open():
    g = grid_km(2.0, 2.0)
    c = g.centers()[0]
    ds = make_dataset([0, 1], [0.25, 0.0], [c[0], c[0]], [c[1], c[1]], [0, 0], ("theft",), grid=g)
    assert label_interval(ds, g, 0.25, 6.0, 0).matrix.sum() == 1   # start included
    assert label_interval(ds, g, 0.0, 6.0, 0).matrix.sum() == 0    # end (t = 0.25) excluded


def test_label_interval_matches_bruteforce_and_is_idempotent(tiny_world):
    _, ds, grid = tiny_world
    rng = np.random.default_rng(4)
    for _ in range(20):
        start = rng.uniform(ds.day_first, ds.day_last - 1)
        hours = float(rng.choice([6, 12, 24]))
        c = int(rng.integers(0, 2))
        lab = label_interval(ds, grid, start, hours, c)
        brute = np.zeros(grid.n_cells, dtype=np.int64)
        for t, typ, g in zip(ds.t, ds.type, ds.grid_id):
            if typ == c and start <= t < start + hours / 24:
                brute[g] = 1
        np.testing.assert_array_equal(lab.matrix.ravel(), brute)
        np.testing.assert_array_equal(label_interval(ds, grid, start, hours, c).matrix, lab.matrix)


def test_label_interval_out_of_span(tiny_world):
    _, ds, grid = tiny_world
    with pytest.raises(OutOfRange):
        label_interval(ds, grid, ds.day_last + 0.5, 24.0, 0)


def _days_dataset(n_days, per_day=3):
    day = np.repeat(np.arange(n_days), per_day)
    tod = np.tile(np.linspace(0.1, 0.9, per_day), n_days)
    return make_dataset(day, tod, np.full(len(day), 40.71), np.full(len(day), -74.0), np.zeros(len(day), int),
                        ("theft",))


def test_split_eight_days():
    train, test = split_dataset(_days_dataset(8))
    assert set(train.day) == set(range(7)) and set(test.day) == {7}
    assert len(train) + len(test) == 24


def test_split_sixteen_days():
    train, test = split_dataset(_days_dataset(16))
    assert len(set(train.day)) == 14 and len(set(test.day)) == 2
    assert train.t.max() < test.t.min()


def test_split_rejects_short_span():
    with pytest.raises(InvalidArgument):
        split_dataset(_days_dataset(5))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.floats(0, 0.999), st.integers(0, 2)), min_size=1, max_size=60))
def test_partition_and_sort_properties(rows):
    day, tod, typ = (np.array(v) for v in zip(*rows))
    ds = make_dataset(day, tod, np.full(len(day), 40.71), np.full(len(day), -74.0), typ, ("a", "b", "c"))
    assert sum(len(ds.by_type(c)) for c in range(3)) == len(ds)
    assert np.all(np.diff(ds.t) >= 0)
    assert isinstance(ds, CrimeDataset)
