"""Image perturbations applied before trace extraction.

Five families: a random filled rectangle, separable Gaussian blur
(3/9/15), rotation (45/90/180 degrees), bilinear scaling (+-50%) and a
baseline JPEG round-trip at quality 50.  Every attack is a pure function
of (image, spec): the same spec and seed always produce a bit-identical
result.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import DimensionError, ValidationError
from .imageio import (
    DatasetManifest,
    ManifestEntry,
    RgbImage,
    load_image,
    save_image,
    write_manifest,
)

__all__ = [
    "AttackSpec",
    "parse_attack_token",
    "apply_attack",
    "apply_attack_corpus",
]

_BLUR_SIZES = (3, 9, 15)
_ROTATIONS = (45, 90, 180)
_SCALES = (50, -50)
_JPEG_QUALITY = 50
# baseline JPEG without chroma subsampling: the quality factor alone
# controls the information loss
_JPEG_SUBSAMPLING = 0


@dataclass(frozen=True)
class AttackSpec:
    """One perturbation; seed matters only for random_square."""

    kind: str
    ksize: int | None = None
    degrees: int | None = None
    percent: int | None = None
    quality: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind == "random_square":
            pass
        elif self.kind == "gaussian_blur":
            if self.ksize not in _BLUR_SIZES:
                raise ValidationError(f"blur kernel size must be one of {_BLUR_SIZES}")
        elif self.kind == "rotate":
            if self.degrees not in _ROTATIONS:
                raise ValidationError(f"rotation must be one of {_ROTATIONS} degrees")
        elif self.kind == "scale":
            if self.percent not in _SCALES:
                raise ValidationError(f"scale percent must be one of {_SCALES}")
        elif self.kind == "jpeg":
            if self.quality != _JPEG_QUALITY:
                raise ValidationError(f"jpeg quality must be {_JPEG_QUALITY}")
        else:
            raise ValidationError(f"unknown attack kind {self.kind!r}")

    def token(self) -> str:
        """CLI spelling of this attack."""
        if self.kind == "random_square":
            return "random-square"
        if self.kind == "gaussian_blur":
            return f"blur:{self.ksize}"
        if self.kind == "rotate":
            return f"rotate:{self.degrees}"
        if self.kind == "scale":
            return f"scale:{self.percent:+d}"
        return f"jpeg:{self.quality}"


def parse_attack_token(token: str, seed: int = 0) -> AttackSpec:
    """Parse CLI attack names: random-square, blur:K, rotate:D, scale:+-50, jpeg:50."""
    if token == "random-square":
        return AttackSpec(kind="random_square", seed=seed)
    head, _, arg = token.partition(":")
    try:
        if head == "blur" and arg:
            return AttackSpec(kind="gaussian_blur", ksize=int(arg), seed=seed)
        if head == "rotate" and arg:
            return AttackSpec(kind="rotate", degrees=int(arg), seed=seed)
        if head == "scale" and arg:
            return AttackSpec(kind="scale", percent=int(arg), seed=seed)
        if head == "jpeg" and arg:
            return AttackSpec(kind="jpeg", quality=int(arg), seed=seed)
    except ValueError:
        raise ValidationError(f"malformed attack token {token!r}") from None
    raise ValidationError(f"unknown attack token {token!r}")


def _random_square(image: RgbImage, seed: int) -> RgbImage:
    arr = image.to_array().copy()
    h, w = arr.shape[1:]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    # draw order: width, height, x0, y0, color
    base = min(w, h)
    rw = max(1, int(round(rng.uniform(0.1, 0.5) * base)))
    rh = max(1, int(round(rng.uniform(0.1, 0.5) * base)))
    x0 = int(rng.integers(0, w - rw + 1))
    y0 = int(rng.integers(0, h - rh + 1))
    color = rng.random(3)
    arr[:, y0:y0 + rh, x0:x0 + rw] = color[:, None, None]
    return RgbImage.from_array(arr)


def blur_sigma(ksize: int) -> float:
    """Conventional sigma for a given odd kernel size."""
    return 0.3 * ((ksize - 1) / 2 - 1) + 0.8


def _gaussian_blur(image: RgbImage, ksize: int) -> RgbImage:
    sigma = blur_sigma(ksize)
    radius = (ksize - 1) // 2
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()  # unit sum: interior mean intensity is preserved
    arr = image.to_array()
    out = np.empty_like(arr)
    for c in range(3):
        tmp = ndimage.correlate1d(arr[c], kernel, axis=0, mode="reflect")
        out[c] = ndimage.correlate1d(tmp, kernel, axis=1, mode="reflect")
    return RgbImage.from_array(np.clip(out, 0.0, 1.0))


def _rotate_exact(image: RgbImage, degrees: int) -> RgbImage:
    k = 1 if degrees == 90 else 2
    arr = image.to_array()
    return RgbImage.from_array(np.ascontiguousarray(np.rot90(arr, k=k, axes=(1, 2))))


def _rotate_45(image: RgbImage) -> RgbImage:
    h, w = image.height, image.width
    # largest axis-aligned rectangle inscribed in a 45-degree rotated WxH
    # rectangle is a square of side min(W, H) / sqrt(2)
    side = int(min(w, h) / np.sqrt(2.0))
    if side < 8:
        raise DimensionError(f"{w}x{h} leaves a {side}x{side} crop after 45-degree rotation")
    theta = np.deg2rad(45.0)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    jj, ii = np.meshgrid(np.arange(side), np.arange(side))
    u = jj - (side - 1) / 2.0
    v = ii - (side - 1) / 2.0
    src_col = (w - 1) / 2.0 + cos_t * u + sin_t * v
    src_row = (h - 1) / 2.0 - sin_t * u + cos_t * v
    arr = image.to_array()
    out = np.stack([
        ndimage.map_coordinates(arr[c], [src_row, src_col], order=1, mode="nearest")
        for c in range(3)
    ])
    return RgbImage.from_array(np.clip(out, 0.0, 1.0))


def scaled_size(n: int, percent: int) -> int:
    """Rounding rule for scaled dimensions: round half up."""
    return int(np.floor(n * (1.0 + percent / 100.0) + 0.5))


def _scale(image: RgbImage, percent: int) -> RgbImage:
    h, w = image.height, image.width
    nh, nw = scaled_size(h, percent), scaled_size(w, percent)
    ii = (np.arange(nh) + 0.5) * (h / nh) - 0.5
    jj = (np.arange(nw) + 0.5) * (w / nw) - 0.5
    src_row, src_col = np.meshgrid(ii, jj, indexing="ij")
    arr = image.to_array()
    out = np.stack([
        ndimage.map_coordinates(arr[c], [src_row, src_col], order=1, mode="nearest")
        for c in range(3)
    ])
    return RgbImage.from_array(np.clip(out, 0.0, 1.0))


def _jpeg_roundtrip(image: RgbImage, quality: int) -> RgbImage:
    arr = np.stack([image.r.data, image.g.data, image.b.data], axis=-1)
    quantized = np.round(arr * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(
        buf, format="JPEG", quality=quality, subsampling=_JPEG_SUBSAMPLING
    )
    buf.seek(0)
    with Image.open(buf) as decoded:
        back = np.asarray(decoded.convert("RGB"), dtype=np.uint8)
    return RgbImage.from_array(np.moveaxis(back.astype(np.float64) / 255.0, 2, 0))


def apply_attack(image: RgbImage, spec: AttackSpec) -> RgbImage:
    if spec.kind == "random_square":
        return _random_square(image, spec.seed)
    if spec.kind == "gaussian_blur":
        return _gaussian_blur(image, spec.ksize)
    if spec.kind == "rotate":
        if spec.degrees in (90, 180):
            return _rotate_exact(image, spec.degrees)
        return _rotate_45(image)
    if spec.kind == "scale":
        return _scale(image, spec.percent)
    return _jpeg_roundtrip(image, spec.quality)


def apply_attack_corpus(manifest: DatasetManifest, spec: AttackSpec, out_dir) -> DatasetManifest:
    """Attack every image of a corpus and write the derived corpus.

    Output PNGs keep their base names; the derived manifest carries the
    attack token.  Image i uses seed spec.seed ^ i so runs parallelize
    without changing results.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, entry in enumerate(manifest):
        per_image = AttackSpec(
            kind=spec.kind, ksize=spec.ksize, degrees=spec.degrees,
            percent=spec.percent, quality=spec.quality, seed=spec.seed ^ i,
        )
        attacked = apply_attack(load_image(entry.path), per_image)
        dest = out_dir / Path(entry.path).name
        save_image(attacked, dest)
        entries.append(
            ManifestEntry(path=str(dest), label=entry.label, source=entry.source,
                          attack=spec.token())
        )
    derived = DatasetManifest(tuple(entries))
    write_manifest(derived, out_dir / "manifest.csv")
    return derived
