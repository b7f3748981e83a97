"""Feature CSV format: one row per image, metadata plus the trace vector.

Columns: ``path,label,source,alpha,degenerate_channels,f_0,...,f_{D-1}``
with D = 3 * ((2*alpha+1)^2 - 1).  Floats are printed with 17 significant
digits so a write/read cycle reproduces them bit-exactly.  Rows whose
extraction failed keep their metadata, carry ``failed`` in the
degenerate_channels column and empty feature cells.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .em import trace_length
from .errors import ParseError, ValidationError

__all__ = ["FeatureRow", "write_features_csv", "read_features_csv"]

FAILED_MARKER = "failed"


@dataclass(frozen=True, eq=False)
class FeatureRow:
    path: str
    label: int
    source: str
    alpha: int
    degenerate_channels: str  # subset of "RGB", or FAILED_MARKER
    features: np.ndarray | None  # None iff extraction failed

    @property
    def failed(self) -> bool:
        return self.features is None


def _header(alpha: int) -> str:
    d = trace_length(alpha)
    cols = ["path", "label", "source", "alpha", "degenerate_channels"]
    cols += [f"f_{i}" for i in range(d)]
    return ",".join(cols)


def write_features_csv(rows, alpha: int, path) -> None:
    """Write rows in their given order; all rows must share alpha."""
    d = trace_length(alpha)
    lines = [_header(alpha)]
    for row in rows:
        if row.alpha != alpha:
            raise ValidationError(f"row alpha {row.alpha} differs from file alpha {alpha}")
        meta = f"{row.path},{row.label},{row.source},{row.alpha},{row.degenerate_channels}"
        if row.features is None:
            lines.append(meta + "," * d)
        else:
            if len(row.features) != d:
                raise ValidationError(f"{row.path}: expected {d} features, got {len(row.features)}")
            lines.append(meta + "," + ",".join(f"{v:.17g}" for v in row.features))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_features_csv(path) -> list[FeatureRow]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty feature file")
    header = lines[0].split(",")
    if header[:5] != ["path", "label", "source", "alpha", "degenerate_channels"]:
        raise ParseError(f"{path}: unexpected feature header")
    d = len(header) - 5
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != d + 5:
            raise ParseError(f"{path}:{lineno}: expected {d + 5} fields, got {len(parts)}")
        try:
            label = int(parts[1])
            alpha = int(parts[3])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if trace_length(alpha) != d:
            raise ParseError(f"{path}:{lineno}: alpha {alpha} does not match {d} feature columns")
        flag = parts[4]
        if flag == FAILED_MARKER:
            features = None
        else:
            try:
                features = np.array([float(v) for v in parts[5:]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unparseable feature value") from None
        rows.append(FeatureRow(parts[0], label, parts[2], alpha, flag, features))
    return rows
