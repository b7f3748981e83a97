"""Image decoding, normalization and dataset manifests.

Every image entering the pipeline is converted to the same in-memory
representation: three float64 planes with intensities in [0, 1].
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ParseError, ValidationError

__all__ = [
    "Plane",
    "RgbImage",
    "ManifestEntry",
    "DatasetManifest",
    "load_image",
    "save_image",
    "read_manifest",
    "write_manifest",
]


@dataclass(frozen=True, eq=False)
class Plane:
    """One channel: a (height, width) float64 matrix with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValidationError(f"plane data must be 2-D, got shape {data.shape}")
        if data.size == 0:
            raise ValidationError("plane must contain at least one pixel")
        if not np.isfinite(data).all():
            raise ValidationError("plane contains non-finite values")
        lo, hi = float(data.min()), float(data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"plane values outside [0, 1]: min={lo}, max={hi}")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class RgbImage:
    """Three planes of identical size, in R, G, B order."""

    r: Plane
    g: Plane
    b: Plane

    def __post_init__(self):
        shapes = {self.r.data.shape, self.g.data.shape, self.b.data.shape}
        if len(shapes) != 1:
            raise ValidationError(f"channel planes disagree in size: {shapes}")

    @property
    def height(self) -> int:
        return self.r.height

    @property
    def width(self) -> int:
        return self.r.width

    @property
    def planes(self) -> tuple[Plane, Plane, Plane]:
        return (self.r, self.g, self.b)

    def to_array(self) -> np.ndarray:
        """Stack channels into a (3, height, width) array."""
        return np.stack([self.r.data, self.g.data, self.b.data])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RgbImage":
        """Build from a (3, height, width) array of intensities in [0, 1]."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValidationError(f"expected (3, H, W) array, got shape {arr.shape}")
        return cls(Plane(arr[0]), Plane(arr[1]), Plane(arr[2]))


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    source: str
    attack: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered list of (path, label, source) rows describing a corpus."""

    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            dupes = sorted({p for p in paths if paths.count(p) > 1})
            raise ValidationError(f"duplicate manifest paths: {dupes}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def load_image(path) -> RgbImage:
    """Decode an 8-bit PNG or JPEG into normalized planes.

    8-bit channel values map linearly to [0, 1] (c / 255).  Grayscale
    images are replicated into all three planes; a warning records the
    replication so mixed corpora stay auditable.  Unreadable files raise
    OSError, unsupported pixel formats raise FormatError.
    """
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L"):
            raise FormatError(
                f"{path}: unsupported pixel format {im.mode!r} (need 8-bit RGB or grayscale)"
            )
        arr = np.asarray(im, dtype=np.uint8)
    scaled = arr.astype(np.float64) / 255.0
    if scaled.ndim == 2:
        warnings.warn(f"{path}: grayscale input replicated into R, G, B", stacklevel=2)
        plane = Plane(scaled)
        return RgbImage(plane, Plane(scaled.copy()), Plane(scaled.copy()))
    return RgbImage(Plane(scaled[:, :, 0]), Plane(scaled[:, :, 1]), Plane(scaled[:, :, 2]))


def save_image(image: RgbImage, path) -> None:
    """Quantize to 8 bits and write a PNG (lossless round-trip)."""
    arr = np.stack([image.r.data, image.g.data, image.b.data], axis=-1)
    quantized = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


# Manifest files are deliberately naive CSV: header line, comma separated,
# no quoting, so paths must not contain commas.
_MANIFEST_HEADER = "path,label,source"
_MANIFEST_HEADER_ATTACK = "path,label,source,attack"


def read_manifest(path, label_set=frozenset({0, 1})) -> DatasetManifest:
    """Parse a `path,label,source[,attack]` CSV with a header line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty manifest (missing header)")
    header = lines[0].strip()
    if header == _MANIFEST_HEADER:
        ncols = 3
    elif header == _MANIFEST_HEADER_ATTACK:
        ncols = 4
    else:
        raise ParseError(f"{path}: unexpected manifest header {header!r}")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != ncols:
            raise ParseError(f"{path}:{lineno}: expected {ncols} fields, got {len(parts)}")
        try:
            label = int(parts[1])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: label {parts[1]!r} is not an integer") from None
        if label not in label_set:
            raise ParseError(f"{path}:{lineno}: label {label} outside declared set {sorted(label_set)}")
        attack = parts[3] if ncols == 4 else ""
        entries.append(ManifestEntry(path=parts[0], label=label, source=parts[2], attack=attack))
    return DatasetManifest(entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest CSV; the attack column appears only when used."""
    with_attack = any(e.attack for e in manifest.entries)
    lines = [_MANIFEST_HEADER_ATTACK if with_attack else _MANIFEST_HEADER]
    for e in manifest.entries:
        for fieldval in (e.path, e.source, e.attack):
            if "," in fieldval:
                raise ValidationError(f"manifest field contains a comma: {fieldval!r}")
        row = f"{e.path},{e.label},{e.source}"
        if with_attack:
            row += f",{e.attack}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
