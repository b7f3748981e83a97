"""Shared oracle helpers, kept independent of the library internals."""

import numpy as np
from scipy import ndimage

from convtrace.imageio import Plane


def random_contraction_kernel(rng, alpha=1):
    """Random positive kernel with L1 norm 0.9 (center tap absent)."""
    d = (2 * alpha + 1) ** 2 - 1
    k = rng.uniform(0.1, 1.0, d)
    k *= 0.9 / k.sum()
    return k


def kernel_to_full(coeffs, alpha=1):
    """Insert the zero center tap and reshape to (2a+1, 2a+1)."""
    d = len(coeffs)
    return np.insert(coeffs, d // 2, 0.0).reshape(2 * alpha + 1, 2 * alpha + 1)


def exact_relation_plane(seed, height=128, width=128, alpha=1, iters=400):
    """Plane whose interior pixels equal their kernel-weighted neighbor sum.

    Starts from a random field with a fixed random boundary and fills the
    interior by repeated substitution; since the kernel's L1 norm is below
    one the substitution is a contraction and converges to the unique
    solution, staying inside [0, 1] (positive taps, sum 0.9).
    """
    rng = np.random.default_rng(seed)
    coeffs = random_contraction_kernel(rng, alpha)
    full = kernel_to_full(coeffs, alpha)
    img = rng.uniform(0.0, 1.0, (height, width))
    for _ in range(iters):
        pred = ndimage.correlate(img, full, mode="constant")
        img[alpha:-alpha, alpha:-alpha] = pred[alpha:-alpha, alpha:-alpha]
    return Plane(img), coeffs


def neighbor_prediction(data, coeffs, alpha=1):
    """Direct-sum prediction over the interior; independent of the library's
    design-matrix implementation."""
    h, w = data.shape
    offsets = [(s, t) for s in range(-alpha, alpha + 1)
               for t in range(-alpha, alpha + 1) if (s, t) != (0, 0)]
    pred = np.zeros((h - 2 * alpha, w - 2 * alpha))
    for c, (s, t) in zip(coeffs, offsets):
        pred += c * data[alpha + s:h - alpha + s, alpha + t:w - alpha + t]
    return pred


def psnr(a, b):
    mse = np.mean((np.asarray(a) - np.asarray(b)) ** 2)
    return 10.0 * np.log10(1.0 / mse)
