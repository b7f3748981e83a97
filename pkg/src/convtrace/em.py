"""Expectation-Maximization extraction of the convolutional trace.

Each pixel of a channel is modeled as either predictable from its
neighborhood through a single linear kernel (residuals Gaussian with zero
mean) or not (residuals uniform).  Alternating the Bayes posterior over
those two models with a posterior-weighted least-squares kernel update
yields, per channel, the prediction kernel and a per-pixel posterior map.
The concatenated per-channel kernels form the image fingerprint.

Conventions used throughout:

* a plane is indexed ``data[x, y]`` with ``x`` the row;
* neighborhood offsets ``(s, t)`` range over ``[-alpha, alpha]^2`` in
  row-major order with ``(0, 0)`` skipped - the center tap is structurally
  absent, never merely zeroed;
* only interior pixels (at least ``alpha`` away from every border) enter
  any sum, so no padding artifacts are fabricated at the edges.

All accumulation is float64; single precision visibly corrupts the 7x7
normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from .errors import DegenerateInputError, DimensionError, ExtractionError, ValidationError
from .imageio import Plane, RgbImage

__all__ = [
    "EmConfig",
    "KernelEstimate",
    "PosteriorMap",
    "ConvolutionalTrace",
    "neighbor_offsets",
    "residual_map",
    "e_step",
    "estimate_sigma",
    "m_step",
    "run_em",
    "extract_ct",
    "trace_length",
]

_RIDGE = 1e-8  # diagonal loading used when the plain factorization fails
_WEIGHT_EPS = 1e-12  # weight mass below this is treated as absent


@dataclass(frozen=True)
class EmConfig:
    """Parameters of the two-model EM estimator.

    alpha           neighborhood half-width; the kernel is (2a+1) x (2a+1)
    max_iters       iteration cap
    tol             stop when the max-norm kernel change drops below this
    sigma_init      initial residual standard deviation
    sigma_floor     smallest allowed standard deviation (keeps the Gaussian
                    density finite on exact-fit pixels)
    prior_m1        prior probability that a pixel follows the kernel model
    uniform_density constant density of the outlier model on the unit
                    intensity scale
    """

    alpha: int = 1
    max_iters: int = 100
    tol: float = 1e-4
    sigma_init: float = 0.1
    sigma_floor: float = 1e-4
    prior_m1: float = 0.5
    uniform_density: float = 1.0

    def __post_init__(self):
        if self.alpha not in (1, 2, 3):
            raise ValidationError(f"alpha must be 1, 2 or 3, got {self.alpha}")
        if not 0.0 < self.prior_m1 < 1.0:
            raise ValidationError("prior_m1 must lie strictly between 0 and 1")
        if self.sigma_floor <= 0.0:
            raise ValidationError("sigma_floor must be positive")
        if self.sigma_init < self.sigma_floor:
            raise ValidationError("sigma_init must be at least sigma_floor")
        if self.tol <= 0.0:
            raise ValidationError("tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")
        if self.uniform_density <= 0.0:
            raise ValidationError("uniform_density must be positive")

    @property
    def n_coeffs(self) -> int:
        return (2 * self.alpha + 1) ** 2 - 1


@dataclass(frozen=True, eq=False)
class KernelEstimate:
    """Converged kernel for one channel.

    coeffs holds the (2a+1)^2 - 1 taps in row-major offset order with the
    center skipped; sigma_sq is the fitted residual variance (never below
    the squared floor).
    """

    alpha: int
    coeffs: np.ndarray
    sigma_sq: float
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class PosteriorMap:
    """Per-pixel probability of the kernel model, on the interior grid."""

    data: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class ConvolutionalTrace:
    """Fingerprint of one image: per-channel kernels concatenated R, G, B.

    degenerate_channels lists channels (as 'R'/'G'/'B') whose kernel could
    not be estimated (constant plane); their slot holds zeros.
    """

    alpha: int
    features: np.ndarray
    degenerate_channels: tuple[str, ...] = ()


def trace_length(alpha: int) -> int:
    """Feature count for a given half-width: 3 channels x ((2a+1)^2 - 1)."""
    return 3 * ((2 * alpha + 1) ** 2 - 1)


def neighbor_offsets(alpha: int) -> list[tuple[int, int]]:
    """Row-major (s, t) offsets over [-alpha, alpha]^2 with (0, 0) skipped."""
    return [
        (s, t)
        for s in range(-alpha, alpha + 1)
        for t in range(-alpha, alpha + 1)
        if (s, t) != (0, 0)
    ]


def _alpha_for(coeffs) -> int:
    n = len(coeffs)
    for alpha in (1, 2, 3):
        if n == (2 * alpha + 1) ** 2 - 1:
            return alpha
    raise ValidationError(f"coefficient vector of length {n} matches no supported kernel size")


def _design_matrix(data: np.ndarray, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    """Neighborhood matrix X (one row per interior pixel, one column per
    offset in row-major order) and the center-pixel vector."""
    k = 2 * alpha + 1
    if data.shape[0] < k or data.shape[1] < k:
        raise DimensionError(
            f"plane {data.shape} smaller than the {k}x{k} neighborhood"
        )
    windows = sliding_window_view(data, (k, k))
    n = windows.shape[0] * windows.shape[1]
    flat = windows.reshape(n, k * k)
    center = (k * k - 1) // 2
    target = flat[:, center].copy()
    neighbors = np.ascontiguousarray(np.delete(flat, center, axis=1))
    return neighbors, target


def residual_map(plane: Plane, coeffs) -> np.ndarray:
    """Absolute prediction errors |center - kernel-weighted neighbor sum|
    over the interior grid."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    alpha = _alpha_for(coeffs)
    neighbors, target = _design_matrix(plane.data, alpha)
    r = np.abs(target - neighbors @ coeffs)
    h, w = plane.data.shape
    return r.reshape(h - 2 * alpha, w - 2 * alpha)


def _gaussian_density(residuals: np.ndarray, sigma_sq: float) -> np.ndarray:
    return np.exp(-(residuals * residuals) / (2.0 * sigma_sq)) / np.sqrt(2.0 * np.pi * sigma_sq)


def _posterior(residuals, sigma_sq, prior_m1, uniform_density):
    kern = prior_m1 * _gaussian_density(residuals, sigma_sq)
    w = kern / (kern + (1.0 - prior_m1) * uniform_density)
    # exp underflow can reach exactly 0; keep the posterior in the open
    # interval so downstream ratios never divide by zero
    return np.clip(w, 1e-300, 1.0 - 1e-16)


def e_step(residuals: np.ndarray, sigma_sq: float, prior_m1: float = 0.5,
           uniform_density: float = 1.0) -> PosteriorMap:
    """Bayes posterior that each pixel follows the kernel model.

    Gaussian zero-mean density with variance sigma_sq against a constant
    outlier density, mixed by prior_m1.
    """
    if sigma_sq <= 0.0:
        raise ValidationError("sigma_sq must be positive")
    return PosteriorMap(_posterior(np.asarray(residuals, dtype=np.float64),
                                   sigma_sq, prior_m1, uniform_density))


def estimate_sigma(residuals, weights, sigma_floor: float = 1e-4) -> float:
    """Posterior-weighted residual variance, floored at sigma_floor^2."""
    residuals = np.asarray(residuals, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if residuals.shape != weights.shape:
        raise ValidationError(
            f"residuals {residuals.shape} and weights {weights.shape} must conform"
        )
    total = float(weights.sum())
    if total < _WEIGHT_EPS:
        return sigma_floor * sigma_floor
    value = float((weights * residuals * residuals).sum() / total)
    return max(sigma_floor * sigma_floor, value)


def _normal_equations(neighbors, target, weights_flat):
    weighted = neighbors * weights_flat[:, None]
    a = neighbors.T @ weighted
    a = 0.5 * (a + a.T)  # symmetrize away GEMM rounding
    b = weighted.T @ target
    return a, b


def _solve_spd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        c, low = linalg.cho_factor(a, check_finite=False)
        return linalg.cho_solve((c, low), b, check_finite=False)
    except linalg.LinAlgError:
        pass
    ridged = a + _RIDGE * np.eye(a.shape[0])
    try:
        c, low = linalg.cho_factor(ridged, check_finite=False)
        return linalg.cho_solve((c, low), b, check_finite=False)
    except linalg.LinAlgError:
        raise DegenerateInputError("normal equations singular even after ridge") from None


def m_step(plane: Plane, weights) -> np.ndarray:
    """Weighted least-squares kernel update.

    Solves the square normal-equation system built from posterior-weighted
    neighbor products.  A Cholesky factorization is attempted first; if it
    fails, 1e-8 diagonal loading is added.  A constant plane carries no
    signal to regress on and raises DegenerateInputError.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if np.ptp(plane.data) == 0.0:
        raise DegenerateInputError("constant plane: prediction kernel is unidentifiable")
    alpha = _infer_alpha_from_interior(plane, weights.shape)
    neighbors, target = _design_matrix(plane.data, alpha)
    a, b = _normal_equations(neighbors, target, weights.reshape(-1))
    return _solve_spd(a, b)


def _infer_alpha_from_interior(plane: Plane, interior_shape) -> int:
    h, w = plane.data.shape
    for alpha in (1, 2, 3):
        if interior_shape == (h - 2 * alpha, w - 2 * alpha):
            return alpha
    raise ValidationError(
        f"weights shape {interior_shape} is not an interior grid of plane {plane.data.shape}"
    )


def _weighted_energy(neighbors, target, weights_flat, coeffs):
    d = target - neighbors @ coeffs
    return float((weights_flat * d * d).sum())


def run_em(plane: Plane, config: EmConfig = EmConfig(), *,
           debug_checks: bool = False) -> tuple[KernelEstimate, PosteriorMap]:
    """Alternate posterior and kernel updates until the kernel settles.

    The kernel starts uniform at 1/n_coeffs and sigma at sigma_init, so the
    whole procedure is deterministic: two runs on the same plane and config
    produce bit-identical results.  The returned posterior map is evaluated
    under the final kernel.

    With debug_checks the weighted energy is asserted non-increasing across
    each kernel update (the normal equations minimize it exactly) and the
    system matrix is asserted symmetric before solving.
    """
    data = plane.data
    alpha = config.alpha
    if np.ptp(data) == 0.0:
        raise DegenerateInputError("constant plane: prediction kernel is unidentifiable")
    neighbors, target = _design_matrix(data, alpha)
    d = config.n_coeffs
    coeffs = np.full(d, 1.0 / d)
    sigma_sq = config.sigma_init ** 2
    floor_sq = config.sigma_floor ** 2
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        residuals = np.abs(target - neighbors @ coeffs)
        weights = _posterior(residuals, sigma_sq, config.prior_m1, config.uniform_density)
        total = float(weights.sum())
        if total < _WEIGHT_EPS:
            sigma_sq = floor_sq
        else:
            sigma_sq = max(floor_sq, float((weights * residuals * residuals).sum() / total))
        a, b = _normal_equations(neighbors, target, weights)
        if debug_checks:
            asym = np.max(np.abs(a - a.T))
            if asym >= 1e-10:
                raise AssertionError(f"normal-equation matrix asymmetry {asym}")
        new_coeffs = _solve_spd(a, b)
        if debug_checks:
            e_old = _weighted_energy(neighbors, target, weights, coeffs)
            e_new = _weighted_energy(neighbors, target, weights, new_coeffs)
            if e_new > e_old + 1e-10:
                raise AssertionError(f"energy increased: {e_old} -> {e_new}")
        delta = float(np.max(np.abs(new_coeffs - coeffs)))
        coeffs = new_coeffs
        if delta < config.tol:
            converged = True
            break
    residuals = np.abs(target - neighbors @ coeffs)
    weights = _posterior(residuals, sigma_sq, config.prior_m1, config.uniform_density)
    h, w = data.shape
    posterior = PosteriorMap(weights.reshape(h - 2 * alpha, w - 2 * alpha))
    estimate = KernelEstimate(
        alpha=alpha,
        coeffs=coeffs,
        sigma_sq=sigma_sq,
        iterations=iterations,
        converged=converged,
    )
    return estimate, posterior


def extract_ct(image: RgbImage, config: EmConfig = EmConfig()) -> ConvolutionalTrace:
    """Run the estimator on each channel and concatenate the kernels.

    A constant channel cannot be fitted; its slot is zero-filled and the
    channel is recorded in degenerate_channels.  If all three channels are
    degenerate there is no trace to extract.
    """
    d = config.n_coeffs
    parts = []
    degenerate = []
    for name, plane in zip("RGB", image.planes):
        try:
            estimate, _ = run_em(plane, config)
            parts.append(estimate.coeffs)
        except DegenerateInputError:
            parts.append(np.zeros(d))
            degenerate.append(name)
    if len(degenerate) == 3:
        raise ExtractionError("all three channels are degenerate (constant image)")
    return ConvolutionalTrace(
        alpha=config.alpha,
        features=np.concatenate(parts),
        degenerate_channels=tuple(degenerate),
    )
