"""Samples and candidate model terms."""

from __future__ import annotations

from dataclasses import dataclass, field
import re

import numpy as np

from .errors import ConfigError, DataError

__all__ = ["Sample", "Term", "parse_term", "parse_terms"]


@dataclass(frozen=True)
class Sample:
    """Response plus raw covariates on their original scales.

    ``missing`` flags NaN cells of ``[response, covariates...]`` row by row.
    """

    response: np.ndarray
    covariates: np.ndarray
    names: tuple
    labels: np.ndarray | None = None
    missing: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.response, dtype=float).ravel()
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != y.size:
            raise DataError(f"response has {y.size} rows, covariates {X.shape[0]}")
        names = tuple(str(n) for n in self.names)
        if len(names) != X.shape[1]:
            raise DataError("one name per covariate column required")
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names")
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "names", names)
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels))
        object.__setattr__(
            self, "missing", np.column_stack([np.isnan(y), np.isnan(X)])
        )

    @property
    def n(self) -> int:
        return self.response.size

    def column(self, name: str) -> np.ndarray:
        try:
            return self.covariates[:, self.names.index(name)]
        except ValueError:
            raise DataError(f"unknown covariate {name!r}") from None

    def take(self, idx) -> "Sample":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return Sample(self.response[idx], self.covariates[idx], self.names, labels)

    def complete_rows(self, columns=None) -> np.ndarray:
        """Boolean mask of rows with no missing value in the given columns."""
        if columns is None:
            return ~self.missing.any(axis=1)
        cols = [0] + [1 + self.names.index(c) for c in columns]
        return ~self.missing[:, cols].any(axis=1)

    def with_columns(self, extra: dict) -> "Sample":
        names = self.names + tuple(extra)
        X = np.column_stack([self.covariates] + [np.asarray(v, float) for v in extra.values()])
        return Sample(self.response, X, names, self.labels)


@dataclass(frozen=True, order=True)
class Term:
    """One candidate design column.

    kinds: ``main`` (a), ``square`` (a^2), ``inter`` (a*b), ``indicator``
    (the precipitation indicator of column a) and ``precip`` (indicator of
    column b times covariate a).
    """

    kind: str
    a: str
    b: str | None = None

    @property
    def name(self) -> str:
        if self.kind == "main":
            return self.a
        if self.kind == "square":
            return f"{self.a}^2"
        if self.kind == "inter":
            return f"{self.a}*{self.b}"
        if self.kind == "indicator":
            return f"I({self.a})"
        if self.kind == "precip":
            return f"I({self.b})*{self.a}"
        raise ValueError(self.kind)

    @property
    def factors(self) -> tuple:
        if self.kind in ("main", "square", "indicator"):
            return (self.a,)
        return (self.a, self.b)

    @property
    def is_continuous(self) -> bool:
        return self.kind in ("main", "square", "inter")

    def __str__(self):
        return self.name


_IND = re.compile(r"^I\((?P<p>[^()]+)\)$")
_PRECIP = re.compile(r"^I\((?P<p>[^()]+)\)\*(?P<a>.+)$")


def parse_term(text: str) -> Term:
    s = text.strip()
    if not s:
        raise ConfigError("empty term")
    m = _IND.match(s)
    if m:
        return Term("indicator", m["p"].strip())
    m = _PRECIP.match(s)
    if m:
        return Term("precip", m["a"].strip(), m["p"].strip())
    if s.endswith("^2"):
        return Term("square", s[:-2].strip())
    if "*" in s:
        a, _, b = s.partition("*")
        a, b = a.strip(), b.strip()
        if a == b:
            return Term("square", a)
        return Term("inter", a, b)
    return Term("main", s)


def parse_terms(items) -> list:
    if isinstance(items, str):
        items = [t for t in items.split(",") if t.strip()]
    return [t if isinstance(t, Term) else parse_term(t) for t in items]
