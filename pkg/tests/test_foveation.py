import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fovex.foveation import (
    Fixation,
    FovexConfig,
    accumulate_state,
    clamp_unit,
    foveate,
    render_candidate,
    state_gradient_wrt_fixation,
)
from fovex.imaging import blur, pixel_to_fixation


def scalar_foveate(image, blurred, fx, fy, sigma):
    h, w, c = image.shape
    out = np.zeros_like(image)
    for r in range(h):
        for col in range(w):
            px, py = fx * w - 0.5, fy * h - 0.5
            wgt = math.exp(-((r - py) ** 2 + (col - px) ** 2) / (2 * sigma * sigma))
            for ch in range(c):
                out[r, col, ch] = wgt * image[r, col, ch] + (1 - wgt) * blurred[r, col, ch]
    return out


def scalar_state(image, blurred, fixations, sigma, beta):
    h, w, c = image.shape
    n = len(fixations)
    out = np.zeros_like(image)
    acuity = np.zeros((h, w))
    for r in range(h):
        for col in range(w):
            a = 0.0
            for j, (fx, fy) in enumerate(fixations):
                px, py = fx * w - 0.5, fy * h - 0.5
                a += beta ** (n - 1 - j) * math.exp(-((r - py) ** 2 + (col - px) ** 2) / (2 * sigma * sigma))
            a = min(max(a, 0.0), 1.0)
            acuity[r, col] = a
            for ch in range(c):
                out[r, col, ch] = a * image[r, col, ch] + (1 - a) * blurred[r, col, ch]
    return acuity, out


@pytest.fixture
def pair(rng):
    img = rng.uniform(size=(8, 8, 3))
    return img, blur(img, FovexConfig(sigma_blur=1.5, blur_filter_size=5).blur_kernel())


def test_foveate_equal_terms(rng):
    img = rng.uniform(size=(6, 6, 1))
    np.testing.assert_allclose(foveate(img, img, Fixation(0.3, 0.9), 2.0), img, atol=1e-15)


def test_foveate_exact_at_peak(pair):
    img, bl = pair
    f = Fixation(pixel_to_fixation(2, 8), pixel_to_fixation(5, 8))
    out = foveate(img, bl, f, 2.0)
    np.testing.assert_array_equal(out[5, 2], img[5, 2])


def test_foveate_scalar_oracle(pair):
    img, bl = pair
    np.testing.assert_allclose(foveate(img, bl, Fixation(0.25, 0.25), 2.0), scalar_foveate(img, bl, 0.25, 0.25, 2.0), atol=1e-12)


def test_foveate_shape_mismatch():
    with pytest.raises(ValueError):
        foveate(np.zeros((4, 4, 1)), np.zeros((4, 5, 1)), Fixation(0.5, 0.5), 1.0)


def test_single_fixation_state_equals_foveate(pair):
    img, bl = pair
    cfg = FovexConfig(sigma_fovea=2.0)
    st_ = accumulate_state(None, img, bl, Fixation(0.6, 0.4), cfg)
    np.testing.assert_allclose(st_.rendered, foveate(img, bl, Fixation(0.6, 0.4), 2.0), atol=1e-15)
    assert st_.fixation_history == (Fixation(0.6, 0.4),)


def test_beta_zero_keeps_newest_only(pair):
    img, bl = pair
    cfg = FovexConfig(sigma_fovea=1.5, forgetting=0.0)
    s = accumulate_state(None, img, bl, Fixation(0.2, 0.2), cfg)
    s = accumulate_state(s, img, bl, Fixation(0.8, 0.7), cfg)
    only = accumulate_state(None, img, bl, Fixation(0.8, 0.7), cfg)
    np.testing.assert_array_equal(s.acuity, only.acuity)


def test_beta_one_duplicate_fixation_saturates(rng):
    img = rng.uniform(size=(6, 6, 1))
    bl = np.full_like(img, 0.5)
    cfg = FovexConfig(sigma_fovea=1.5, forgetting=1.0)
    f = Fixation(0.5, 0.5)
    s = accumulate_state(accumulate_state(None, img, bl, f, cfg), img, bl, f, cfg)
    acuity, rendered = scalar_state(img, bl, [(0.5, 0.5)] * 2, 1.5, 1.0)
    np.testing.assert_allclose(s.acuity, acuity, atol=1e-12)
    np.testing.assert_allclose(s.rendered, rendered, atol=1e-12)
    # clamp(2 * blob) = 1 where blob >= 1/2, i.e. within sigma * sqrt(2 ln 2) of the center
    disk = acuity >= 1.0
    assert disk[2:4, 2:4].all()
    np.testing.assert_array_equal(s.rendered[disk], img[disk])


@pytest.mark.parametrize("beta", [0.0, 0.3, 1.0])
def test_state_matches_scalar_oracle(rng, beta):
    img = rng.uniform(size=(8, 8, 3))
    bl = rng.uniform(size=(8, 8, 3))
    fx = [tuple(v) for v in rng.uniform(size=(4, 2))]
    cfg = FovexConfig(sigma_fovea=1.6, forgetting=beta)
    s = None
    for f in fx:
        s = accumulate_state(s, img, bl, Fixation(*f), cfg)
    acuity, rendered = scalar_state(img, bl, fx, 1.6, beta)
    np.testing.assert_allclose(s.acuity, acuity, atol=1e-9)
    np.testing.assert_allclose(s.rendered, rendered, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=5),
    st.floats(0, 1),
    st.integers(0, 2**32 - 1),
)
def test_convex_and_monotone(fixations, beta, seed):
    r = np.random.default_rng(seed)
    img, bl = r.uniform(size=(2, 7, 6, 3))
    cfg = FovexConfig(sigma_fovea=1.3, forgetting=beta)
    cfg1 = replace(cfg, forgetting=1.0)
    s = s1 = None
    for f in fixations:
        prev = s1
        s = accumulate_state(s, img, bl, Fixation(*f), cfg)
        s1 = accumulate_state(s1, img, bl, Fixation(*f), cfg1)
        lo, hi = np.minimum(img, bl), np.maximum(img, bl)
        assert np.all(s.rendered >= lo - 1e-12) and np.all(s.rendered <= hi + 1e-12)
        assert np.all((s.acuity >= 0) & (s.acuity <= 1))
        np.testing.assert_allclose(s.rendered, s.acuity[:, :, None] * img + (1 - s.acuity[:, :, None]) * bl, atol=1e-12)
        if prev is not None:
            assert np.all(s1.acuity >= prev.acuity)


def test_permutation_invariant_beta_one(rng):
    img, bl = rng.uniform(size=(2, 6, 6, 1))
    fx = [Fixation(*rng.uniform(size=2)) for _ in range(4)]
    cfg = FovexConfig(sigma_fovea=1.2)

    def run(order):
        s = None
        for f in order:
            s = accumulate_state(s, img, bl, f, cfg)
        return s.acuity

    np.testing.assert_allclose(run(fx), run(fx[::-1]), atol=1e-12)


def test_clamp_unit():
    assert clamp_unit(-0.2, 1.4) == (0.0, 1.0)
    assert clamp_unit(0.3, 0.7) == (0.3, 0.7)


# -- analytic state gradient -----------------------------------------------------


def _fd_state(img, bl, history, cand, cfg, h=1e-4):
    cfg = cfg.resolved(*img.shape[:2])
    plus_x = render_candidate(img, bl, history, (cand[0] + h, cand[1]), cfg)[0]
    minus_x = render_candidate(img, bl, history, (cand[0] - h, cand[1]), cfg)[0]
    plus_y = render_candidate(img, bl, history, (cand[0], cand[1] + h), cfg)[0]
    minus_y = render_candidate(img, bl, history, (cand[0], cand[1] - h), cfg)[0]
    return (plus_x - minus_x) / (2 * h), (plus_y - minus_y) / (2 * h)


def test_state_gradient_zero_without_contrast(rng):
    img = rng.uniform(size=(5, 5, 3))
    cfg = FovexConfig(sigma_fovea=1.0, gradient_mode="analytic")
    gx, gy = state_gradient_wrt_fixation(img, img, [], Fixation(0.4, 0.6), cfg)
    assert not gx.any() and not gy.any()


def test_state_gradient_zero_at_blob_center(rng):
    img, bl = rng.uniform(size=(2, 5, 5, 1))
    cfg = FovexConfig(sigma_fovea=1.0, gradient_mode="analytic")
    c = (pixel_to_fixation(1, 5), pixel_to_fixation(3, 5))
    gx, gy = state_gradient_wrt_fixation(img, bl, [], c, cfg)
    assert gx[3, 1, 0] == 0.0 and gy[3, 1, 0] == 0.0


def test_state_gradient_matches_fd(rng):
    img, bl = rng.uniform(size=(2, 5, 5, 3))
    cfg = FovexConfig(sigma_fovea=1.2, gradient_mode="analytic")
    worst = 0.0
    for cx in np.linspace(0.15, 0.85, 5):
        for cy in np.linspace(0.15, 0.85, 5):
            gx, gy = state_gradient_wrt_fixation(img, bl, [], (cx, cy), cfg)
            fx, fy = _fd_state(img, bl, [], (cx, cy), cfg)
            for a, b in ((gx, fx), (gy, fy)):
                err = np.abs(a - b) / np.maximum(np.abs(b), 1e-8)
                worst = max(worst, float(np.max(np.where(np.abs(b) > 1e-8, err, np.abs(a - b)))))
    assert worst <= 1e-4


def test_state_gradient_zero_where_saturated(rng):
    img, bl = rng.uniform(size=(2, 6, 6, 1))
    cfg = FovexConfig(sigma_fovea=1.5, gradient_mode="analytic")
    history = [(0.5, 0.5)]
    gx, gy = state_gradient_wrt_fixation(img, bl, history, (0.55, 0.5), cfg)
    raw_sat = render_candidate(img, bl, history, (0.55, 0.5), cfg.resolved(6, 6))[1] >= 1.0
    assert raw_sat.any()
    assert not gx[raw_sat].any() and not gy[raw_sat].any()


def test_state_gradient_requires_analytic_mode(rng):
    img = rng.uniform(size=(4, 4, 1))
    with pytest.raises(ValueError):
        state_gradient_wrt_fixation(img, img, [], (0.5, 0.5), FovexConfig())


# -- config --------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"sigma_blur": 0},
        {"blur_filter_size": 4},
        {"sigma_fovea": -1.0},
        {"forgetting": 1.5},
        {"step_size": -0.1},
        {"optimization_steps": 0},
        {"restart_patience": 0},
        {"scanpath_length": 0},
        {"alpha_mode": "max"},
        {"gradient_mode": "sgd"},
        {"fd_step": 0.0},
        {"seed": 2**64},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        FovexConfig(**kwargs)


def test_config_resolution_and_roundtrip():
    cfg = FovexConfig()
    r = cfg.resolved(64, 32)
    assert r.sigma_fovea == pytest.approx(3.2) and r.fd_step == pytest.approx(1 / 64)
    assert FovexConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        FovexConfig.from_dict({"bogus": 1})
