import math

import numpy as np
import pytest

from ctp_planner.validation import (
    ClusterReport,
    TrajectoryRecord,
    TurnPoint,
    ValidationError,
    cluster_turn_points,
    detect_turn_points,
    ingest_trajectories,
    isometry_score,
    kmeans,
    synthetic_corpus,
    validate_isometry,
    write_trajectories,
)


def straight_then_circle(straight=10.0, radius=10.0, ds=0.1):
    n_line = int(round(straight / ds))
    n_arc = int(round(0.5 * math.pi * radius / ds))
    xs, ys, hs = [], [], []
    for i in range(n_line + 1):
        xs.append(0.0), ys.append(i * ds), hs.append(0.5 * math.pi)
    for j in range(1, n_arc + 1):
        phi = j * ds / radius
        xs.append(-radius + radius * math.cos(phi))
        ys.append(straight + radius * math.sin(phi))
        hs.append(0.5 * math.pi + phi)
    n = len(xs)
    return TrajectoryRecord("v", np.arange(n) * 0.1, np.array(xs), np.array(ys), np.ones(n), np.array(hs)), n_line


def test_ingest_roundtrip(tmp_path):
    rec, _ = straight_then_circle()
    p = tmp_path / "c.csv"
    write_trajectories([rec], p)
    (back,) = ingest_trajectories(p)
    assert back.vehicle_id == "v"
    assert np.array_equal(back.x, rec.x) and np.array_equal(back.heading, rec.heading)


def test_ingest_derives_missing_heading(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("id,t,x,y,speed,heading\na,0,0,0,1,\na,1,1,1,1,\na,2,2,2,1,\n")
    (rec,) = ingest_trajectories(p)
    assert rec.heading == pytest.approx([math.pi / 4] * 3)


@pytest.mark.parametrize("text, msg", [
    ("id,t,x,y,speed,headng\n", "malformed header"),
    ("id,t,x,y,speed,heading\na,0,0,0,1,0\na,0,1,1,1,0\n", "strictly increasing"),
    ("id,t,x,y,speed,heading\na,0,0,0,1\n", "expected 6 fields"),
    ("id,t,x,y,speed,heading\na,0,zero,0,1,0\n", "row 2"),
    ("id,t,x,y,speed,heading\na,0,nan,0,1,0\n", "non-finite"),
])
def test_ingest_errors(tmp_path, text, msg):
    p = tmp_path / "c.csv"
    p.write_text(text)
    with pytest.raises(ValidationError, match=msg):
        ingest_trajectories(p)


def test_straight_line_has_no_turn_point():
    n = 100
    rec = TrajectoryRecord("s", np.arange(n) * 0.1, np.zeros(n), np.arange(n) * 0.1, np.ones(n),
                           np.full(n, 0.5 * math.pi))
    assert detect_turn_points(rec) is None


def test_turn_onset_within_two_samples():
    rec, true_idx = straight_then_circle()
    tp = detect_turn_points(rec, curvature_threshold=0.05, window=5)
    idx = int(np.argmin(np.abs(rec.t - tp.onset_time)))
    assert abs(idx - true_idx) <= 2
    assert tp.arc_distance == pytest.approx(10.0, abs=0.2 + 1e-9)


def test_turn_detection_rejects_short_records():
    rec, _ = straight_then_circle(straight=0.2, radius=0.1)
    with pytest.raises(ValidationError):
        detect_turn_points(rec, window=50)


def _report(gaps, k=3):
    proj = [0.0]
    for g in gaps:
        proj.append(proj[-1] + g)
    mean = sum(gaps) / len(gaps) if gaps else 0.0
    return ClusterReport(k, tuple((0.0, p) for p in proj), (1,) * k, tuple(proj), tuple(gaps),
                         tuple(g - mean for g in gaps), isometry_score(gaps), 0.0, 1)


def test_isometry_tolerance_examples():
    assert isometry_score([4.0, 6.0]) == pytest.approx(0.2)
    assert validate_isometry(_report([4.0, 6.0]), 0.2)
    assert isometry_score([2.0, 8.0]) == pytest.approx(0.6)
    assert not validate_isometry(_report([2.0, 8.0]), 0.2)


def test_single_cluster_has_null_score():
    pts = [TurnPoint(str(i), 0.0, float(i), 0.0, 0.0) for i in range(4)]
    rep = cluster_turn_points(pts, k=1)
    assert rep.isometry_score is None and rep.gaps == ()
    with pytest.raises(ValidationError):
        validate_isometry(rep)


def test_kmeans_separated_blobs():
    rng = np.random.default_rng(0)
    centres = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    data = np.concatenate([c + rng.normal(0, 0.1, (30, 2)) for c in centres])
    got, labels, inertia, _ = kmeans(data, 3, seed=1)
    for c in centres:
        assert np.min(np.linalg.norm(got - c, axis=1)) < 0.1
    assert len(set(labels.tolist())) == 3
    assert inertia < 90 * 0.1


def test_kmeans_needs_enough_points():
    with pytest.raises(ValidationError):
        kmeans(np.zeros((2, 2)), 3)


def test_synthetic_corpus_recovers_ctp_spacing():
    corpus = synthetic_corpus(n=200, sigma=0.3, seed=0)
    points = [tp for tp in (detect_turn_points(r) for r in corpus) if tp is not None]
    assert len(points) >= 190
    rep = cluster_turn_points(points, k=3, seed=0)
    assert rep.projected == pytest.approx([5.0, 10.0, 15.0], abs=1.0)
    assert validate_isometry(rep, 0.2)
