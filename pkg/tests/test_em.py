import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import exact_relation_plane, kernel_to_full, neighbor_prediction
from convtrace.em import (
    ConvolutionalTrace,
    EmConfig,
    e_step,
    estimate_sigma,
    extract_ct,
    m_step,
    neighbor_offsets,
    residual_map,
    run_em,
    trace_length,
)
from convtrace.errors import (
    DegenerateInputError,
    DimensionError,
    ExtractionError,
    ValidationError,
)
from convtrace.imageio import Plane, RgbImage
from convtrace.synth import gen_noise_image, upsample_linear


def random_plane(seed, h=32, w=32):
    return Plane(np.random.default_rng(seed).random((h, w)))


# -- config -----------------------------------------------------------------

def test_config_rejects_bad_alpha():
    with pytest.raises(ValidationError):
        EmConfig(alpha=4)


def test_config_rejects_bad_prior():
    with pytest.raises(ValidationError):
        EmConfig(prior_m1=1.0)


def test_offsets_are_row_major_without_center():
    offs = neighbor_offsets(1)
    assert len(offs) == 8
    assert (0, 0) not in offs
    assert offs[0] == (-1, -1) and offs[-1] == (1, 1)


# -- residual_map ------------------------------------------------------------

def test_residuals_equal_plane_for_zero_kernel():
    plane = random_plane(0)
    r = residual_map(plane, np.zeros(8))
    assert np.array_equal(r, plane.data[1:-1, 1:-1])


def test_residuals_vanish_on_exact_relation_plane():
    plane, coeffs = exact_relation_plane(seed=3, height=48, width=40)
    r = residual_map(plane, coeffs)
    assert r.max() < 1e-12


def test_residuals_vanish_on_constant_plane_with_unit_sum_kernel():
    plane = Plane(np.full((16, 16), 0.5))
    coeffs = np.full(8, 1.0 / 8.0)
    r = residual_map(plane, coeffs)
    assert np.allclose(r, 0.0, atol=1e-15)


def test_residuals_match_direct_sum_oracle():
    plane = random_plane(7, 20, 24)
    coeffs = np.random.default_rng(8).normal(size=8) * 0.2
    expected = np.abs(plane.data[1:-1, 1:-1] - neighbor_prediction(plane.data, coeffs))
    assert np.allclose(residual_map(plane, coeffs), expected, atol=1e-14)


def test_residuals_reject_small_plane():
    with pytest.raises(DimensionError):
        residual_map(Plane(np.zeros((2, 2))), np.zeros(8))


# -- e_step ------------------------------------------------------------------

def test_posterior_closed_form_at_zero_residual():
    # 0.5 * N(0; 0, 0.1^2) / (0.5 * N + 0.5 * 1), N = 1 / (0.1 * sqrt(2*pi))
    peak = 1.0 / (0.1 * np.sqrt(2.0 * np.pi))
    expected = 0.5 * peak / (0.5 * peak + 0.5)
    assert expected == pytest.approx(0.79957601524660682, abs=1e-15)
    post = e_step(np.zeros((2, 2)), sigma_sq=0.01, prior_m1=0.5, uniform_density=1.0)
    assert post.data == pytest.approx(expected, abs=1e-12)


def test_posterior_vanishes_in_gaussian_tail():
    post = e_step(np.full((2, 2), 10 * 0.1), sigma_sq=0.01)
    assert post.data.max() < 1e-5


def test_posterior_is_half_when_uniform_matches_peak():
    peak = 1.0 / (0.05 * np.sqrt(2.0 * np.pi))
    post = e_step(np.zeros((3, 3)), sigma_sq=0.05 ** 2, prior_m1=0.5, uniform_density=peak)
    assert post.data == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    r=st.floats(min_value=0.0, max_value=2.0),
    sigma=st.floats(min_value=1e-4, max_value=1.0),
    prior=st.floats(min_value=1e-6, max_value=1.0 - 1e-6),
)
def test_posterior_stays_in_open_interval(r, sigma, prior):
    post = e_step(np.array([[r]]), sigma_sq=sigma * sigma, prior_m1=prior)
    assert 0.0 < post.data[0, 0] < 1.0


# -- estimate_sigma ----------------------------------------------------------

def test_sigma_is_weighted_mean_square():
    assert estimate_sigma(np.full(10, 0.1), np.ones(10)) == pytest.approx(0.01)


def test_sigma_floor_applies_on_zero_residuals():
    assert estimate_sigma(np.zeros(5), np.ones(5), sigma_floor=1e-4) == 1e-8


def test_zero_weight_excludes_residual():
    r = np.array([0.2, 5.0])
    w = np.array([1.0, 0.0])
    assert estimate_sigma(r, w) == pytest.approx(0.04)


def test_vanishing_weight_mass_hits_floor():
    assert estimate_sigma(np.array([1.0]), np.array([1e-13]), sigma_floor=1e-4) == 1e-8


# -- m_step ------------------------------------------------------------------

def test_m_step_recovers_generating_kernel():
    plane, coeffs = exact_relation_plane(seed=11, height=64, width=64)
    weights = np.ones((62, 62))
    got = m_step(plane, weights)
    assert np.max(np.abs(got - coeffs)) < 1e-8


def test_m_step_constant_plane_is_degenerate():
    with pytest.raises(DegenerateInputError):
        m_step(Plane(np.full((16, 16), 0.25)), np.ones((14, 14)))


def test_m_step_single_pixel_weight_uses_ridge():
    plane = random_plane(13, 16, 16)
    weights = np.zeros((14, 14))
    weights[3, 4] = 1.0
    got = m_step(plane, weights)
    assert np.all(np.isfinite(got))


def test_m_step_normal_matrix_is_symmetric_under_debug_checks():
    # run_em with debug_checks asserts symmetry before each solve
    plane = random_plane(17, 24, 24)
    run_em(plane, EmConfig(max_iters=5), debug_checks=True)


# -- run_em ------------------------------------------------------------------

def test_upsampled_noise_lights_up_interpolated_lattice():
    up = upsample_linear(gen_noise_image(5, 32, 32))
    estimate, posterior = run_em(up.r)
    assert estimate.converged
    h, w = up.r.data.shape
    ys, xs = np.mgrid[1:h - 1, 1:w - 1]
    interp = (ys % 2 == 1) | (xs % 2 == 1)
    assert posterior.data[interp].mean() > 0.9
    assert posterior.data[~interp].mean() < 0.5


def test_iid_noise_converges_without_spurious_fit():
    estimate, _ = run_em(random_plane(19, 64, 64))
    assert estimate.converged
    assert estimate.sigma_sq > 1e-3


def test_constant_plane_is_degenerate():
    with pytest.raises(DegenerateInputError):
        run_em(Plane(np.full((16, 16), 0.7)))


def test_exact_relation_recovery_with_sigma_at_floor():
    config = EmConfig()
    plane, coeffs = exact_relation_plane(seed=23)
    estimate, posterior = run_em(plane, config)
    assert np.max(np.abs(estimate.coeffs - coeffs)) < 1e-6
    assert estimate.sigma_sq == config.sigma_floor ** 2
    assert 0.0 < posterior.data.min() and posterior.data.max() < 1.0


def test_run_em_is_bit_deterministic():
    plane = random_plane(29, 48, 48)
    first, post_a = run_em(plane)
    second, post_b = run_em(plane)
    assert np.array_equal(first.coeffs, second.coeffs)
    assert first.sigma_sq == second.sigma_sq
    assert first.iterations == second.iterations
    assert np.array_equal(post_a.data, post_b.data)


def test_energy_never_increases_under_debug_checks():
    up = upsample_linear(gen_noise_image(31, 24, 24))
    run_em(up.g, debug_checks=True)
    run_em(random_plane(37, 40, 40), debug_checks=True)


def test_crop_by_one_pixel_keeps_recovered_kernel():
    plane, coeffs = exact_relation_plane(seed=41, height=96, width=96)
    cropped = Plane(plane.data[1:-1, 1:-1])
    full_est, _ = run_em(plane)
    crop_est, _ = run_em(cropped)
    assert np.max(np.abs(full_est.coeffs - coeffs)) < 1e-6
    assert np.max(np.abs(crop_est.coeffs - coeffs)) < 1e-6


def test_kernel_starts_uniform_and_iterations_counted():
    # a single iteration must already leave the uniform initialization
    plane = random_plane(43, 32, 32)
    estimate, _ = run_em(plane, EmConfig(max_iters=1))
    assert estimate.iterations == 1
    assert not estimate.converged


# -- extract_ct ---------------------------------------------------------------

@pytest.mark.parametrize("alpha,length", [(1, 24), (2, 72), (3, 144)])
def test_trace_lengths(alpha, length):
    assert trace_length(alpha) == length
    img = gen_noise_image(47, 48, 48)
    trace = extract_ct(img, EmConfig(alpha=alpha))
    assert trace.features.shape == (length,)
    assert trace.degenerate_channels == ()


def test_equal_channels_give_equal_subvectors():
    data = np.random.default_rng(53).random((24, 24))
    img = RgbImage(Plane(data), Plane(data.copy()), Plane(data.copy()))
    trace = extract_ct(img)
    kr, kg, kb = np.split(trace.features, 3)
    assert np.array_equal(kr, kg) and np.array_equal(kg, kb)


def test_constant_channel_is_flagged_and_zeroed():
    rng = np.random.default_rng(59)
    img = RgbImage(Plane(np.full((24, 24), 0.5)), Plane(rng.random((24, 24))),
                   Plane(rng.random((24, 24))))
    trace = extract_ct(img)
    assert trace.degenerate_channels == ("R",)
    kr, kg, kb = np.split(trace.features, 3)
    assert np.array_equal(kr, np.zeros(8))
    assert not np.array_equal(kg, np.zeros(8))


def test_all_channels_degenerate_is_extraction_error():
    img = RgbImage(Plane(np.zeros((16, 16))), Plane(np.ones((16, 16))),
                   Plane(np.full((16, 16), 0.5)))
    with pytest.raises(ExtractionError):
        extract_ct(img)


def test_trace_type_carries_alpha():
    trace = extract_ct(gen_noise_image(61, 20, 20), EmConfig(alpha=1))
    assert isinstance(trace, ConvolutionalTrace)
    assert trace.alpha == 1
