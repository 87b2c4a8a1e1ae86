import numpy as np
import pytest

from geoseg.keypoints import KeypointSet, SimilarityMap, default_radius, extract_keypoints


def sim(values):
    arr = np.asarray(values, dtype=np.float64)
    return SimilarityMap(width=arr.shape[1], height=arr.shape[0], values=tuple(arr.reshape(-1)))


def brute_force_reference(values, crop_w, crop_h, k, tau, radius):
    """Independent greedy reference: sort all cells, scan, suppress."""
    h = len(values)
    w = len(values[0])
    mn = min(min(row) for row in values)
    mx = max(max(row) for row in values)
    if mx == mn:
        return []
    cells = []
    for i in range(h):
        for j in range(w):
            cells.append(((values[i][j] - mn) / (mx - mn), i, j))
    cells.sort(key=lambda c: (-c[0], c[1] * w + c[2]))
    picked = []
    suppressed = set()
    for score, i, j in cells:
        if score < tau or len(picked) == k:
            break
        if (i, j) in suppressed:
            continue
        picked.append((score, i, j))
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                suppressed.add((i + di, j + dj))
    return [
        (((j + 0.5) * crop_w / w, (i + 0.5) * crop_h / h), score, (i, j))
        for score, i, j in picked
    ]


class TestExamples:
    def test_single_center_peak(self):
        m = sim([[0.1, 0.2, 0.1], [0.2, 1.0, 0.2], [0.1, 0.2, 0.1]])
        out = extract_keypoints(m, 30, 30, k=5, tau=0.3, radius=1)
        assert out.points == ((15.0, 15.0),)
        assert out.scores == (1.0,)

    def test_constant_map_is_empty(self):
        m = sim([[0.7, 0.7], [0.7, 0.7]])
        assert extract_keypoints(m, 10, 10, k=5, tau=0.3, radius=1) == KeypointSet()

    def test_row_map_two_peaks(self):
        m = sim([[1.0, 0.2, 0.0, 0.2, 0.9]])
        out = extract_keypoints(m, 50, 10, k=5, tau=0.3, radius=1)
        assert out.points == ((5.0, 5.0), (45.0, 5.0))

    def test_tie_breaks_by_row_major_index(self):
        m = sim([[0.0, 1.0], [1.0, 0.0]])
        out = extract_keypoints(m, 20, 20, k=1, tau=0.3, radius=1)
        assert out.cells == ((0, 1),)


def test_matches_brute_force_on_random_maps():
    rng = np.random.default_rng(997)
    for _ in range(400):
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        values = rng.random((h, w))
        if rng.random() < 0.1:
            values = np.full((h, w), float(rng.random()))  # constant maps too
        k = int(rng.integers(1, 8))
        tau = float(rng.uniform(0, 1))
        radius = int(rng.integers(1, 5))
        crop_w = int(rng.integers(1, 100))
        crop_h = int(rng.integers(1, 100))
        got = extract_keypoints(sim(values), crop_w, crop_h, k=k, tau=tau, radius=radius)
        ref = brute_force_reference(values.tolist(), crop_w, crop_h, k, tau, radius)
        assert got.cells == tuple(c for _, _, c in ref)
        assert got.points == tuple(p for p, _, _ in ref)
        assert got.scores == tuple(s for _, s, _ in ref)


def test_invariants_random():
    rng = np.random.default_rng(31)
    for _ in range(300):
        h = int(rng.integers(1, 17))
        w = int(rng.integers(1, 17))
        k = int(rng.integers(1, 7))
        tau = float(rng.uniform(0, 1))
        radius = int(rng.integers(1, 4))
        out = extract_keypoints(sim(rng.random((h, w))), 64, 64, k=k, tau=tau, radius=radius)
        assert len(out) <= k
        assert all(s >= tau for s in out.scores)
        assert all(a >= b for a, b in zip(out.scores, out.scores[1:]))
        for a in range(len(out.cells)):
            for b in range(a + 1, len(out.cells)):
                (i1, j1), (i2, j2) = out.cells[a], out.cells[b]
                assert max(abs(i1 - i2), abs(j1 - j2)) > radius


def test_selection_invariant_under_positive_affine_rescale():
    # dyadic values and power-of-two scales keep the arithmetic exact
    rng = np.random.default_rng(47)
    for _ in range(100):
        h = int(rng.integers(2, 13))
        w = int(rng.integers(2, 13))
        values = rng.integers(0, 1024, size=(h, w)).astype(np.float64) / 1024.0
        base = extract_keypoints(sim(values), 32, 32, k=5, tau=0.3, radius=1)
        scaled = extract_keypoints(sim(values * 4.0 + 0.5), 32, 32, k=5, tau=0.3, radius=1)
        assert base.cells == scaled.cells
        assert base.scores == scaled.scores


def test_default_radius_policy():
    assert default_radius(3, 3) == 1
    assert default_radius(48, 43) == 4
    assert default_radius(100, 200) == 10
    assert default_radius(15, 40) == 2  # round half up on 1.5


def test_validation():
    with pytest.raises(ValueError):
        SimilarityMap(width=2, height=2, values=(1.0, 2.0))
    with pytest.raises(ValueError):
        SimilarityMap(width=1, height=1, values=(float("nan"),))
    m = sim([[0.1, 0.9]])
    with pytest.raises(ValueError):
        extract_keypoints(m, 10, 10, k=0)
    with pytest.raises(ValueError):
        extract_keypoints(m, 10, 10, tau=1.5)
    with pytest.raises(ValueError):
        extract_keypoints(m, 10, 10, radius=0)
