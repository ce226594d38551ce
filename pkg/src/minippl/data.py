"""Reading benchmark datasets from CSV and generating synthetic ones."""
from __future__ import annotations

import csv
import operator
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from minippl.models import DataError, standardize


class ParseError(DataError):
    """A cell could not be read as a number."""

    def __init__(self, path, line: int, column: int, cell: str):
        super().__init__(f"{path}: line {line}, column {column}: cannot parse {cell!r} as a number")
        self.line = line
        self.column = column


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    true_weights: np.ndarray | None = None
    true_bias: float | None = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


_OPS = {"==": operator.eq, "!=": operator.ne, ">=": operator.ge, "<=": operator.le, ">": operator.gt, "<": operator.lt}
_RULE = re.compile(r"^\s*(==|!=|>=|<=|>|<)\s*(-?[0-9.eE+-]+)\s*$")


def parse_label_rule(rule: str):
    """``"identity"`` keeps 0/1 labels as they are; ``"==2"``, ``">0"`` and
    similar map a label to 1 when the comparison holds and to 0 otherwise."""
    if rule == "identity":
        return None
    m = _RULE.match(rule)
    if not m:
        raise ValueError(f"label rule {rule!r} must be 'identity' or a comparison such as '==2'")
    op, threshold = _OPS[m.group(1)], float(m.group(2))
    return lambda v: op(v, threshold)


def binarize(raw: np.ndarray, rule: str) -> np.ndarray:
    test = parse_label_rule(rule)
    if test is None:
        if not np.all((raw == 0) | (raw == 1)):
            raise DataError("labels are not all 0 or 1; pass a label rule such as '==2'")
        return raw.astype(int)
    return np.array([1 if test(v) else 0 for v in raw], dtype=int)


def load_csv(
    path,
    label_column: int = -1,
    label_rule: str = "identity",
    has_header: bool = False,
    standardize_features: bool = True,
) -> Dataset:
    """Read numeric rows; one column holds the label, the rest are features.

    Line and column numbers in errors are 1-based and count the header line.
    """
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {width}")
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(path, lineno, col, cell) from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows)
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a label column")
    label_idx = label_column % width
    raw_labels = table[:, label_idx]
    features = np.delete(table, label_idx, axis=1)
    if standardize_features:
        features = standardize(features)
    return Dataset(features, binarize(raw_labels, label_rule))


def synth_data(n: int, d: int, seed: int = 0, weight_scale: float = 1.0, bias: float = 0.0) -> Dataset:
    """Covertype-shaped stand-in: x ~ N(0, 1), w* ~ N(0, weight_scale^2 / d),
    y ~ Bernoulli(sigmoid(x w* + b*))."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be at least 1")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, d))
    weights = rng.standard_normal(d) * (weight_scale / np.sqrt(d))
    logits = features @ weights + bias
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(int)
    return Dataset(features, labels, weights, float(bias))
