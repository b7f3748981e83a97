"""Accuracy grids (classifier rows x kernel-size columns) as CSV and text."""

from __future__ import annotations

from pathlib import Path

from .errors import ParseError

__all__ = [
    "CLASSIFIER_TOKENS",
    "display_name",
    "kernel_label",
    "write_grid_csv",
    "read_grid_csv",
    "render_grid_text",
]

CLASSIFIER_TOKENS = (
    "knn:3", "knn:5", "knn:7", "knn:9", "knn:11", "knn:13", "lda", "svm", "rf",
)

_DISPLAY = {"lda": "LDA", "svm": "Linear SVM", "rf": "Random Forest"}


def display_name(token: str) -> str:
    if token.startswith("knn:"):
        return f"{token.split(':')[1]}-NN"
    return _DISPLAY.get(token, token)


def kernel_label(alpha: int) -> str:
    n = 2 * alpha + 1
    return f"{n}x{n}"


def write_grid_csv(grid: dict, classifiers, kernels, path) -> None:
    """grid maps (classifier_token, kernel_label) -> accuracy fraction."""
    lines = ["classifier," + ",".join(kernels)]
    for token in classifiers:
        cells = [f"{100.0 * grid[(token, kl)]:.2f}" for kl in kernels]
        lines.append(display_name(token) + "," + ",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_grid_csv(path):
    """Inverse of write_grid_csv: returns (row_names, kernels, rows)."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("classifier,"):
        raise ParseError(f"{path}: not an accuracy grid CSV")
    kernels = lines[0].split(",")[1:]
    names, rows = [], []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(kernels) + 1:
            raise ParseError(f"{path}: ragged grid row {line!r}")
        names.append(parts[0])
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError:
            raise ParseError(f"{path}: non-numeric cell in {line!r}") from None
    return names, kernels, rows


def render_grid_text(title: str, row_names, kernels, rows) -> str:
    """Fixed-width table; cells are accuracy percentages."""
    name_w = max([len(n) for n in row_names] + [len("classifier")])
    cell_w = max([len(k) for k in kernels] + [7])
    header = "classifier".ljust(name_w) + "".join(k.rjust(cell_w + 2) for k in kernels)
    sep = "-" * len(header)
    out = [title, sep, header, sep]
    for name, row in zip(row_names, rows):
        out.append(name.ljust(name_w) + "".join(f"{v:.2f}".rjust(cell_w + 2) for v in row))
    out.append(sep)
    return "\n".join(out) + "\n"
