import csv
import math

import numpy as np
import pytest

from omnisal import gaze
from omnisal.gaze import Fixation, GazeSample
from omnisal.sphere import SphericalCoord, angular_distance, erp_pixel_centers, to_unit

from conftest import two_cluster_trace


def static_trace(lat_deg, lon_deg, seconds, rate):
    n = int(round(seconds * rate)) + 1
    p = SphericalCoord.from_degrees(lat_deg, lon_deg)
    return [GazeSample(i / rate, p) for i in range(n)]


def random_walk(seed, n=600, rate=120.0, step_deg=0.15, jump_prob=0.03):
    rng = np.random.default_rng(seed)
    lat, lon = rng.uniform(-60, 60), rng.uniform(-180, 180)
    out = []
    for i in range(n):
        if rng.random() < jump_prob:
            lat, lon = rng.uniform(-60, 60), rng.uniform(-180, 180)
        lat = float(np.clip(lat + rng.normal(0, step_deg), -89, 89))
        lon += rng.normal(0, step_deg)
        out.append(GazeSample(i / rate, SphericalCoord.from_degrees(lat, lon)))
    return out


def sep_deg(a: SphericalCoord, lat_deg, lon_deg):
    b = SphericalCoord.from_degrees(lat_deg, lon_deg)
    return math.degrees(float(angular_distance(to_unit(a.lat, a.lon), to_unit(b.lat, b.lon))))


# -------------------------------------------------------------------- I-DT --


def test_defaults():
    assert gaze.MAX_DISPERSION_DEG == 1.5 and gaze.MIN_DURATION_S == 0.1


def test_static_trace_one_fixation():
    fx = gaze.idt_fixations(static_trace(20.0, 50.0, 0.5, 100))
    assert len(fx) == 1
    assert fx[0].start == 0.0
    assert abs(fx[0].duration - 0.5) < 1e-12
    assert sep_deg(fx[0].centroid, 20.0, 50.0) < 1e-9


def test_two_clusters():
    trace, centers = two_cluster_trace()
    fx = gaze.idt_fixations(trace)
    assert len(fx) == 2
    for f, (lat, lon) in zip(fx, centers):
        assert sep_deg(f.centroid, lat, lon) < 0.01
    assert fx[0].start + fx[0].duration < fx[1].start


def test_empty_and_short_traces():
    assert gaze.idt_fixations([]) == []
    assert gaze.idt_fixations(static_trace(0, 0, 0.05, 100)) == []


def test_unsorted_trace_rejected():
    trace = static_trace(0, 0, 0.2, 100)
    with pytest.raises(ValueError):
        gaze.idt_fixations(trace[::-1])


@pytest.mark.parametrize("seed", range(6))
def test_every_fixation_within_dispersion(seed):
    trace = random_walk(seed)
    times = np.array([s.timestamp for s in trace])
    fx = gaze.idt_fixations(trace)
    assert fx
    prev_end = -1.0
    for f in fx:
        i = int(np.argmin(np.abs(times - f.start)))
        j = int(np.argmin(np.abs(times - (f.start + f.duration))))
        assert math.degrees(gaze.window_dispersion(trace[i : j + 1])) <= 1.5 + 1e-9
        assert f.duration >= 0.1 - 1e-9
        assert f.start > prev_end
        prev_end = f.start + f.duration


@pytest.mark.parametrize("seed", range(4))
def test_min_duration_monotone(seed):
    trace = random_walk(seed + 10)
    counts = [len(gaze.idt_fixations(trace, min_duration=d)) for d in (0.05, 0.1, 0.2, 0.4, 0.8)]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_temporal_resampling_invariance():
    a = gaze.idt_fixations(static_trace(-33.0, 170.0, 1.0, 60))
    b = gaze.idt_fixations(static_trace(-33.0, 170.0, 1.0, 250))
    assert len(a) == len(b) == 1
    assert abs(a[0].centroid.lat - b[0].centroid.lat) < 1e-9
    assert abs(a[0].centroid.lon - b[0].centroid.lon) < 1e-9


def test_window_dispersion_brute_force():
    trace = random_walk(3, n=20)
    xyz = np.array([to_unit(s.direction.lat, s.direction.lon) for s in trace])
    worst = max(math.acos(max(-1.0, min(1.0, float(a @ b)))) for a in xyz for b in xyz)
    assert abs(gaze.window_dispersion(trace) - worst) < 1e-7


# ------------------------------------------------------------------ maps --


def test_density_single_fixation_argmax_and_law():
    h, w = 32, 64
    lat, lon = erp_pixel_centers(h, w)
    f = Fixation(0.0, 0.2, SphericalCoord(float(lat[16]), float(lon[10])))
    # sigma equal to the angle to the neighbouring pixel center
    sigma = float(angular_distance(to_unit(lat[16], lon[10]), to_unit(lat[16], lon[11])))
    m = gaze.density_map([f], h, w, sigma_deg=math.degrees(sigma))
    assert np.unravel_index(np.argmax(m), m.shape) == (16, 10)
    assert abs(m[16, 11] / m[16, 10] - math.exp(-0.5)) < 1e-12
    assert abs(m.sum() - 1) < 1e-12 and m.min() >= 0


def test_density_reflection_symmetry():
    h, w = 32, 64
    fx = [Fixation(0, 0.2, SphericalCoord.from_degrees(25.0, 40.0)),
          Fixation(0, 0.2, SphericalCoord.from_degrees(-25.0, 40.0))]
    m = gaze.density_map(fx, h, w)
    assert np.max(np.abs(m - m[::-1])) < 1e-12


def test_density_errors():
    f = [Fixation(0, 0.2, SphericalCoord(0, 0))]
    with pytest.raises(ValueError):
        gaze.density_map([], 8, 16)
    with pytest.raises(ValueError):
        gaze.density_map(f, 8, 8)
    with pytest.raises(ValueError):
        gaze.density_map(f, 8, 16, sigma_deg=0)


def test_fixation_map_counts_and_convention():
    h, w = 16, 32
    lat, lon = erp_pixel_centers(h, w)
    pix = [(0, 0), (5, 9), (15, 31), (8, 16)]
    fx = [Fixation(0, 0.2, SphericalCoord(float(lat[i]), float(lon[j]))) for i, j in pix]
    m = gaze.fixation_map(fx, h, w)
    assert m.sum() == 4
    for i, j in pix:
        assert m[i, j] == 1
        assert gaze.pixel_of(SphericalCoord(float(lat[i]), float(lon[j])), h, w) == (i, j)
    assert not gaze.fixation_map([], h, w).any()


# ----------------------------------------------------------- consistency --


def test_consistency_identical_subjects():
    rng = np.random.default_rng(0)
    fx = [Fixation(float(t), 0.2, SphericalCoord.from_degrees(rng.uniform(-60, 60), rng.uniform(-180, 180)))
          for t in np.arange(0.0, 6.0, 0.5)]
    res = gaze.inter_subject_consistency({"a": fx, "b": fx, "c": fx}, height=16, width=32)
    assert [w for w, _ in res] == [0.0, 2.0, 4.0]
    assert all(abs(s - 1.0) < 1e-12 for _, s in res)


def test_consistency_null_near_zero():
    rng = np.random.default_rng(1)

    def uniform_points(n, t0):
        z = rng.uniform(-1, 1, n)
        lon = rng.uniform(-math.pi, math.pi, n)
        return [Fixation(t0 + 0.1 * k, 0.2, SphericalCoord(float(math.asin(z[k])), float(lon[k])))
                for k in range(n)]

    subjects = {f"s{k}": [f for w in range(20) for f in uniform_points(8, 2.0 * w)] for k in range(5)}
    res = gaze.inter_subject_consistency(subjects, height=64, width=128)
    assert len(res) == 20
    assert abs(np.mean([s for _, s in res])) < 0.1


def test_consistency_needs_three_subjects():
    with pytest.raises(ValueError):
        gaze.inter_subject_consistency({"a": [], "b": []})


# ------------------------------------------------------------------- I/O --


def test_fixation_csv_roundtrip(tmp_path):
    rows = [("s2", Fixation(1.0, 0.25, SphericalCoord.from_degrees(10.0, -20.0))),
            ("s1", Fixation(0.5, 0.125, SphericalCoord.from_degrees(-5.5, 170.0)))]
    path = tmp_path / "fix.csv"
    gaze.write_fixation_csv(path, rows)
    raw = path.read_bytes()
    assert raw.startswith(b"subject_id,start_s,duration_s,lat_deg,lon_deg\n") and b"\r" not in raw
    back = gaze.read_fixation_csv(path)
    assert list(back) == ["s1", "s2"]
    f = back["s2"][0]
    assert (f.start, f.duration) == (1.0, 0.25)
    assert abs(f.centroid.degrees()[0] - 10.0) < 1e-12


def test_gaze_csv_reader(tmp_path):
    path = tmp_path / "g.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["timestamp_s", "lat_deg", "lon_deg"])
        wr.writerows([[0.0, 1.0, 2.0], [0.01, 1.0, 2.0]])
    trace = gaze.read_gaze_csv(path)
    assert len(trace) == 2 and trace[1].timestamp == 0.01
    bad = tmp_path / "bad.csv"
    bad.write_text("t,lat\n0,1\n")
    with pytest.raises(ValueError):
        gaze.read_gaze_csv(bad)
    with pytest.raises(ValueError):
        gaze.read_fixation_csv(path)
