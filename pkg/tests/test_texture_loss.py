import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from texsplat.features import cosine_distance
from texsplat.texture_bank import TextureBank, angle_grid
from texsplat.texture_loss import (NONE, PROPAGATED, PSEUDO, PriorMap, TargetState, build_target_map,
                                   gt2_loss, nearest_grid_angle, propagate_prior, weighted_gt2_loss,
                                   weighted_gt2_loss_and_grad)
from texsplat.scene import pinhole
from texsplat.view_geometry import compute_correspondence


def make_bank(features, k=None, theta=None):
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    k = np.zeros(n, np.int64) if k is None else np.asarray(k)
    theta = np.zeros(n) if theta is None else np.asarray(theta, dtype=np.float64)
    angles = np.unique(theta)
    scales = np.ones(int(k.max()) + 1)
    return TextureBank(features, k, theta, angles, scales, np.ones((len(scales), len(angles)), bool))


def random_bank(rng, n=40, c=6, step=45.0):
    grid = angle_grid(step)
    theta = np.sort(rng.choice(grid, n))
    return make_bank(rng.normal(size=(n, c)), theta=theta)


def brute_force_nn(F, bank):
    h, w, c = F.shape
    out = np.empty((h, w), np.int64)
    for i in range(h):
        for j in range(w):
            best, arg = np.inf, -1
            for e, f in enumerate(bank.features):
                a, b = F[i, j], f
                d = 1 - a @ b / ((np.linalg.norm(a) + 1e-8) * (np.linalg.norm(b) + 1e-8))
                if d < best - 1e-15:
                    best, arg = d, e
            out[i, j] = arg
    return out


def test_zero_penalty_is_plain_nearest_neighbour(rng):
    bank = random_bank(rng)
    F = rng.normal(size=(5, 4, 6))
    prior = PriorMap.pseudo((5, 4), 30.0)
    t = build_target_map(F, bank, prior, lambda_p=0.0)
    np.testing.assert_array_equal(t.index, brute_force_nn(F, bank))


def test_self_match_gives_zero_loss(rng):
    F = rng.normal(size=(3, 3, 5))
    bank = make_bank(F.reshape(-1, 5))
    t = build_target_map(F, bank)
    np.testing.assert_array_equal(t.features, F)
    assert gt2_loss(F, t) == pytest.approx(0.0, abs=1e-7)


def test_prior_breaks_tie_towards_nearby_angle():
    f = np.array([1.0, 0.0, 0.0])
    bank = make_bank([f, f], theta=[0.0, 90.0])
    F = np.array([[[0.0, 1.0, 0.0]]])
    t = build_target_map(F, bank, PriorMap.pseudo((1, 1), 85.0), betas=np.zeros((1, 1)), lambda_p=0.5)
    assert t.theta[0, 0] == 90.0
    # without a prior the first entry wins the tie
    assert build_target_map(F, bank).theta[0, 0] == 0.0


def test_target_features_are_exact_bank_copies(rng):
    bank = random_bank(rng)
    t = build_target_map(rng.normal(size=(4, 4, 6)), bank, PriorMap.pseudo((4, 4), 100.0))
    for i in range(4):
        for j in range(4):
            assert t.features[i, j].tobytes() == bank.features[t.index[i, j]].tobytes()
            assert (t.k[i, j], t.theta[i, j]) in bank.cells()


def test_empty_bank_and_channel_mismatch_raise(rng):
    with pytest.raises(ValueError):
        build_target_map(rng.normal(size=(2, 2, 3)), make_bank(np.zeros((0, 3))))
    with pytest.raises(ValueError):
        build_target_map(rng.normal(size=(2, 2, 3)), make_bank(np.ones((2, 4))))


def _strong_prior_case(seed, prior, beta, lam):
    rng = np.random.default_rng(seed)
    grid = angle_grid(45.0)
    # every angle populated so the nearest grid angle is always available
    theta = np.repeat(grid, 3)
    bank = make_bank(rng.normal(size=(len(theta), 4)), theta=theta)
    F = rng.normal(size=(3, 3, 4))
    t = build_target_map(F, bank, PriorMap.pseudo((3, 3), prior), betas=np.full((3, 3), beta), lambda_p=lam)
    return t.theta, nearest_grid_angle(grid, (prior + beta) % 360.0)[0]


@given(seed=st.integers(0, 10_000), prior=st.floats(0, 360, exclude_max=True), beta=st.floats(-90, 90))
def test_strong_prior_picks_nearest_grid_angle(seed, prior, beta):
    # cosine distance spans [0, 2], so the penalty gap to the runner-up angle must exceed 2
    lam = 10.0
    d = np.sort(np.abs(((prior + beta - angle_grid(45.0)) + 180) % 360 - 180))
    assume(lam * (d[1] - d[0]) / 180 > 2)
    got, want = _strong_prior_case(seed, prior, beta, lam)
    assert np.all(got == want)


@given(seed=st.integers(0, 10_000), prior=st.floats(0, 360, exclude_max=True), beta=st.floats(-90, 90))
def test_overwhelming_prior_picks_nearest_grid_angle(seed, prior, beta):
    d = np.sort(np.abs(((prior + beta - angle_grid(45.0)) + 180) % 360 - 180))
    assume(d[1] - d[0] > 1e-3)
    got, want = _strong_prior_case(seed, prior, beta, 1e7)
    assert np.all(got == want)


def test_moderate_prior_can_be_outvoted_by_appearance():
    f0, f45 = np.array([1.0, 0.0]), np.array([-1.0, 0.0])
    bank = make_bank([f0, f45], theta=[0.0, 45.0])
    F = np.array([[[-1.0, 0.0]]])
    # prior 17 deg: penalty gap 10 * 11 / 180 < cosine gap 2, so appearance wins
    t = build_target_map(F, bank, PriorMap.pseudo((1, 1), 17.0), lambda_p=10.0)
    assert t.theta[0, 0] == 45.0


def test_selection_is_deterministic(rng):
    bank = random_bank(rng)
    F = rng.normal(size=(4, 5, 6))
    a = build_target_map(F, bank, PriorMap.pseudo((4, 5), 10.0))
    b = build_target_map(F, bank, PriorMap.pseudo((4, 5), 10.0), chunk=3)
    np.testing.assert_array_equal(a.index, b.index)


def _target(features):
    f = np.asarray(features, dtype=np.float64)
    h, w, _ = f.shape
    z = np.zeros((h, w))
    return TargetState(f, z.astype(np.int64), z.astype(np.int64), z)


def test_loss_examples(rng):
    F = rng.normal(size=(2, 3, 4))
    assert gt2_loss(F, _target(F)) == pytest.approx(0.0, abs=1e-7)
    assert gt2_loss(F, _target(-F)) == pytest.approx(2.0, abs=1e-7)
    e = np.eye(3)
    F = np.array([[e[0], e[0]], [e[0], e[0]]])
    T = np.array([[e[0], e[1]], [e[2], -e[0]]])
    assert gt2_loss(F, _target(T)) == pytest.approx(1.0, abs=1e-7)


def test_weighted_loss_examples(rng):
    F = rng.normal(size=(2, 2, 4))
    T = rng.normal(size=(2, 2, 4))
    assert weighted_gt2_loss(F, _target(T), np.ones((2, 2))) == pytest.approx(gt2_loss(F, _target(T)))
    assert weighted_gt2_loss(F, _target(T), np.zeros((2, 2))) == 0.0
    e = np.eye(3)
    F = np.array([[e[0], e[0]], [e[0], e[0]]])
    T = np.array([[e[1], e[0]], [e[0], e[0]]])
    W = np.ones((2, 2))
    W[0, 0] = 2.0
    assert weighted_gt2_loss(F, _target(T), W) == pytest.approx(0.5, abs=1e-7)


def test_shape_mismatches_raise(rng):
    F = rng.normal(size=(2, 2, 4))
    with pytest.raises(ValueError):
        gt2_loss(F, _target(rng.normal(size=(2, 3, 4))))
    with pytest.raises(ValueError):
        weighted_gt2_loss(F, _target(F), np.ones((3, 2)))


@given(seed=st.integers(0, 10_000))
def test_loss_bounds(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(3, 3, 4))
    T = _target(rng.normal(size=(3, 3, 4)))
    W = rng.uniform(0, 3, (3, 3))
    assert 0 <= gt2_loss(F, T) <= 2
    assert 0 <= weighted_gt2_loss(F, T, W) <= 2 * W.max()


def test_gradient_matches_finite_differences(rng):
    F = rng.normal(size=(3, 2, 5))
    T = _target(rng.normal(size=(3, 2, 5)))
    W = rng.uniform(0.5, 2, (3, 2))
    _, g = weighted_gt2_loss_and_grad(F, T, W)
    num = np.zeros_like(F)
    h = 1e-6
    for idx in np.ndindex(F.shape):
        Fp, Fm = F.copy(), F.copy()
        Fp[idx] += h
        Fm[idx] -= h
        num[idx] = (weighted_gt2_loss(Fp, T, W) - weighted_gt2_loss(Fm, T, W)) / (2 * h)
    np.testing.assert_allclose(g, num, rtol=1e-4, atol=1e-9)


def _corr_identity(shape=(8, 8)):
    cam = pinhole(4 * shape[1], 4 * shape[0])
    d = np.full((cam.height, cam.width), 3.0)
    return compute_correspondence(d, cam, d, cam, shape)


def test_identity_propagation_copies_selection(rng):
    prev = _target(rng.normal(size=(8, 8, 3)))
    prev.theta = rng.choice(angle_grid(22.5), (8, 8))
    prev.k = rng.integers(0, 4, (8, 8))
    p = propagate_prior(prev, _corr_identity())
    np.testing.assert_array_equal(p.theta, prev.theta)
    np.testing.assert_array_equal(p.k, prev.k)
    assert p.source == PROPAGATED


def test_fully_occluded_propagation_is_absent(rng):
    prev = _target(rng.normal(size=(8, 8, 3)))
    corr = _corr_identity()
    corr.occluded[:] = True
    p = propagate_prior(prev, corr)
    assert not p.present.any() and p.source == NONE
    bank = random_bank(rng, c=3)
    F = rng.normal(size=(8, 8, 3))
    np.testing.assert_array_equal(build_target_map(F, bank, p, corr.beta).index, build_target_map(F, bank).index)


def test_pseudo_prior():
    p = PriorMap.pseudo((3, 4), 45.0)
    assert np.all(p.theta == 45.0) and p.source == PSEUDO
    assert not PriorMap.absent((3, 4)).present.any()


def test_nearest_grid_angle_wraps():
    grid = angle_grid(90.0)
    np.testing.assert_array_equal(nearest_grid_angle(grid, [350.0, 44.0, 46.0, 45.0]), [0.0, 0.0, 90.0, 0.0])
