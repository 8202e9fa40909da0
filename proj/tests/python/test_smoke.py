import numpy as np
import pytest

import tmagrade as tg


def test_fusion_votes():
    a = np.full((4, 5), 2, np.uint8)
    b = np.full((4, 5), 3, np.uint8)
    p = tg.fuse_annotations([a, a, a, a, b, b])
    assert p.shape == (4, 5, 6)
    assert p.dtype == np.float32
    np.testing.assert_array_equal(p[0, 0], np.float32([0, 0, 4 / 6, 2 / 6, 0, 0]))
    assert np.all(p.sum(axis=2) == 1.0)


def test_median_filter_removes_a_speck():
    m = np.zeros((9, 9), np.uint8)
    m[4, 4] = 3
    assert not tg.median_filter(m, 3).any()
    with pytest.raises(tg.TmaError):
        tg.median_filter(m, 4)


def test_metrics_worked_example():
    pred = np.array([[0, 0, 1, 1]], np.uint8)
    ref = np.array([[0, 1, 1, 1]], np.uint8)
    r = tg.evaluate([(pred, ref)])
    assert r["kappa"] == pytest.approx(0.5)
    assert r["f1_micro"] == pytest.approx(0.75)
    assert r["score"] == pytest.approx(1.2416667, abs=1e-6)
    assert r["confusion"].shape == (5, 6)
    assert tg.challenge_score(1, 1, 1) == 2.0


def test_gleason_label():
    m = np.zeros((10, 10), np.uint8)
    m[:6] = 2
    m[6:9] = 3
    assert tg.gleason_score(m)["label"] == "3+4=7"


def test_geometry_round_trip():
    g = tg.plan_geometry(4608, 4700)
    assert g["rows"]["resampled"] == 461
    labels = np.full((448, 448), 2, np.uint8)
    full = tg.restore_full_resolution(labels, g)
    assert full.shape == (4608, 4700)


def test_synth_and_network():
    c = tg.synth_case(64, 64, seed=3)
    assert c["image"].shape == (64, 64, 3)
    assert all((a == c["truth"]).all() for a in c["annotations"])
    net = tg.UNet([4, 4, 8, 8], [8, 4, 4], seed=1)
    p = net.predict(np.zeros((32, 32, 3), np.float32))
    assert p.shape == (32, 32, 6)
    np.testing.assert_allclose(p.sum(axis=2), 1.0, atol=1e-5)
    assert [t[1] for t in net.trace] == [32, 16, 8, 4, 8, 16, 32]
