"""Categorical datasets: schema, CSV ingestion, exposure binning and counts.

Categories are held as dense integer indices into per-covariate label
tables; every solver-facing routine works on the ``(n, P)`` index matrix.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DataError",
    "Covariate",
    "CovariateSchema",
    "SchemaConfig",
    "Unit",
    "Dataset",
    "CategoryCounts",
    "load_schema_config",
    "load_csv",
    "write_csv",
    "bin_continuous",
    "category_counts",
]


class DataError(ValueError):
    """Raised for malformed input files or schema violations."""


@dataclass(frozen=True)
class Covariate:
    name: str
    categories: tuple[str, ...]
    missing: str | None = None
    missing_values: tuple[str, ...] = ("",)

    def __post_init__(self):
        if not self.categories:
            raise DataError(f"covariate {self.name!r} has no categories")
        if len(set(self.categories)) != len(self.categories):
            raise DataError(f"covariate {self.name!r} has duplicate category labels")
        if self.missing is not None and self.missing not in self.categories:
            raise DataError(
                f"covariate {self.name!r}: missing category {self.missing!r} "
                "is not among its categories"
            )

    @property
    def K(self) -> int:
        return len(self.categories)


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariates with ordered category labels."""

    covariates: tuple[Covariate, ...]

    def __post_init__(self):
        if not self.covariates:
            raise DataError("schema needs at least one covariate")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise DataError("duplicate covariate names in schema")

    @classmethod
    def from_sizes(cls, sizes: Sequence[int], prefix: str = "x") -> "CovariateSchema":
        """Anonymous schema with ``sizes[p]`` categories labelled ``k1..kK``."""
        return cls(tuple(
            Covariate(f"{prefix}{p + 1}", tuple(f"k{k + 1}" for k in range(int(K))))
            for p, K in enumerate(sizes)
        ))

    @property
    def P(self) -> int:
        return len(self.covariates)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.K for c in self.covariates], dtype=int)

    @property
    def offsets(self) -> np.ndarray:
        """Start of each covariate's block in the flattened (p, k) layout."""
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int)

    @property
    def total_categories(self) -> int:
        return int(self.sizes.sum())

    def flat_index(self, p: int, k: int) -> int:
        return int(self.offsets[p]) + k

    def indicator_labels(self) -> list[tuple[str, str]]:
        return [(c.name, lab) for c in self.covariates for lab in c.categories]

    def validate(self, x: np.ndarray) -> None:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.P:
            raise DataError(f"covariate matrix must have shape (n, {self.P}), got {x.shape}")
        if x.size == 0:
            return
        if (x.min(axis=0) < 0).any() or (x.max(axis=0) >= self.sizes).any():
            raise DataError("covariate index out of range for schema")

    def flat_codes(self, x: np.ndarray) -> np.ndarray:
        """Map each ``x[i, p]`` to its flattened (p, k) position."""
        return np.asarray(x, dtype=np.int64) + self.offsets[None, :]

    def indicators(self, x: np.ndarray, dtype=np.float64) -> np.ndarray:
        """One-hot expansion, shape ``(n, sum K_p)``."""
        x = np.asarray(x)
        out = np.zeros((x.shape[0], self.total_categories), dtype=dtype)
        rows = np.repeat(np.arange(x.shape[0]), self.P)
        out[rows, self.flat_codes(x).ravel()] = 1
        return out


@dataclass(frozen=True)
class SchemaConfig:
    """Everything needed to read a study CSV.

    The JSON document looks like::

        {"id": "id", "exposure": "exposure", "levels": ["1", "2", "3"],
         "outcomes": ["attendance", "psu"], "auto_extend": false,
         "covariates": [{"name": "gender", "categories": ["Male", "Female"]},
                        {"name": "mother_edu", "categories": ["Primary", "Missing"],
                         "missing": "Missing", "missing_values": ["", "NA"]}]}
    """

    schema: CovariateSchema
    id_column: str | None = "id"
    exposure_column: str | None = "exposure"
    levels: tuple[str, ...] | None = None
    outcomes: tuple[str, ...] = ()
    auto_extend: bool = False

    @classmethod
    def from_dict(cls, doc: dict) -> "SchemaConfig":
        try:
            covs = tuple(
                Covariate(
                    name=c["name"],
                    categories=tuple(str(v) for v in c["categories"]),
                    missing=c.get("missing"),
                    missing_values=tuple(c.get("missing_values", [""])),
                )
                for c in doc["covariates"]
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"invalid schema config: {exc!r}") from exc
        levels = doc.get("levels")
        return cls(
            schema=CovariateSchema(covs),
            id_column=doc.get("id", "id"),
            exposure_column=doc.get("exposure", "exposure"),
            levels=tuple(str(v) for v in levels) if levels is not None else None,
            outcomes=tuple(doc.get("outcomes", ())),
            auto_extend=bool(doc.get("auto_extend", False)),
        )

    def to_dict(self) -> dict:
        doc = {
            "id": self.id_column,
            "exposure": self.exposure_column,
            "outcomes": list(self.outcomes),
            "auto_extend": self.auto_extend,
            "covariates": [],
        }
        if self.levels is not None:
            doc["levels"] = list(self.levels)
        for c in self.schema.covariates:
            entry = {"name": c.name, "categories": list(c.categories)}
            if c.missing is not None:
                entry["missing"] = c.missing
            if c.missing_values != ("",):
                entry["missing_values"] = list(c.missing_values)
            doc["covariates"].append(entry)
        return doc

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def load_schema_config(path: str | Path) -> SchemaConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    return SchemaConfig.from_dict(doc)


@dataclass(frozen=True)
class Unit:
    id: str
    x: tuple[int, ...]
    outcomes: dict[str, float] = field(default_factory=dict)
    exposure: str | None = None


class Dataset:
    """Units with categorical covariates, optional exposure labels and outcomes.

    Treat instances as immutable; the covariate matrix is flagged read-only.
    ``level_index`` maps each exposure label to the sorted indices of its
    units, in ``levels`` order.
    """

    def __init__(
        self,
        schema: CovariateSchema,
        x: np.ndarray,
        ids: Sequence[str] | None = None,
        exposure: Sequence[str | None] | None = None,
        outcomes: dict[str, np.ndarray] | None = None,
        levels: Sequence[str] | None = None,
    ):
        x = np.array(x, dtype=np.int64, copy=True)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(0, schema.P)
        schema.validate(x)
        x.setflags(write=False)
        n = x.shape[0]
        self.schema = schema
        self.x = x
        self.ids = [str(i) for i in (ids if ids is not None else range(n))]
        if len(self.ids) != n:
            raise DataError("ids length does not match number of units")
        if len(set(self.ids)) != n:
            raise DataError("unit ids must be unique")
        self.exposure = list(exposure) if exposure is not None else [None] * n
        if len(self.exposure) != n:
            raise DataError("exposure length does not match number of units")
        self.outcomes = {}
        for name, vals in (outcomes or {}).items():
            arr = np.array(vals, dtype=float)
            if arr.shape != (n,):
                raise DataError(f"outcome {name!r} has wrong length")
            arr.setflags(write=False)
            self.outcomes[name] = arr

        present = [e for e in self.exposure if e is not None]
        if levels is None:
            levels = _natural_sort(set(present))
        else:
            levels = [str(v) for v in levels]
            unknown = set(present) - set(levels)
            if unknown:
                raise DataError(f"exposure labels not in declared levels: {sorted(unknown)}")
        self.levels = [lv for lv in levels if lv in set(present)]
        labels = np.array([e if e is not None else "" for e in self.exposure], dtype=object)
        self.level_index = {}
        for lv in self.levels:
            idx = np.flatnonzero(labels == lv)
            idx.setflags(write=False)
            self.level_index[lv] = idx

    def __len__(self) -> int:
        return self.x.shape[0]

    def __repr__(self) -> str:
        return (f"Dataset(n={len(self)}, P={self.schema.P}, "
                f"levels={ {k: len(v) for k, v in self.level_index.items()} })")

    def unit(self, i: int) -> Unit:
        return Unit(
            id=self.ids[i],
            x=tuple(int(v) for v in self.x[i]),
            outcomes={k: float(v[i]) for k, v in self.outcomes.items() if not math.isnan(v[i])},
            exposure=self.exposure[i],
        )

    @property
    def units(self) -> list[Unit]:
        return [self.unit(i) for i in range(len(self))]

    def level(self, label: str) -> np.ndarray:
        try:
            return self.level_index[label]
        except KeyError:
            raise KeyError(f"no exposure level {label!r}; have {self.levels}") from None

    def subset(self, indices: Iterable[int]) -> "Dataset":
        idx = np.asarray(list(indices), dtype=np.int64)
        return Dataset(
            self.schema,
            self.x[idx],
            ids=[self.ids[i] for i in idx],
            exposure=[self.exposure[i] for i in idx],
            outcomes={k: v[idx] for k, v in self.outcomes.items()},
            levels=self.levels,
        )


def _natural_sort(labels: Iterable[str]) -> list[str]:
    def key(s):
        try:
            return (0, float(s), s)
        except ValueError:
            return (1, 0.0, s)
    return sorted(labels, key=key)


def load_csv(path: str | Path, config: SchemaConfig) -> Dataset:
    """Read a study CSV into a :class:`Dataset`.

    Blank (or configured) cells map to the covariate's declared missing
    category. Unknown labels are an error unless ``config.auto_extend`` is
    set, in which case they are appended to the category table in order of
    first appearance. Errors name the file line (header is line 1).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")

    col = {name: j for j, name in enumerate(header)}
    needed = [c.name for c in config.schema.covariates] + list(config.outcomes)
    for extra in (config.id_column, config.exposure_column):
        if extra is not None:
            needed.append(extra)
    missing_cols = [c for c in needed if c not in col]
    if missing_cols:
        raise DataError(f"{path}: header lacks columns {missing_cols}")

    covs = list(config.schema.covariates)
    tables = [{lab: k for k, lab in enumerate(c.categories)} for c in covs]
    extended = [list(c.categories) for c in covs]
    n = len(rows)
    x = np.empty((n, len(covs)), dtype=np.int64)
    ids: list[str] = []
    exposure: list[str | None] = []
    outcomes = {name: np.full(n, np.nan) for name in config.outcomes}

    for i, row in enumerate(rows):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        for p, cov in enumerate(covs):
            raw = row[col[cov.name]].strip()
            if raw in cov.missing_values:
                if cov.missing is None:
                    raise DataError(
                        f"{path}: line {line}, column {cov.name!r}: missing value but "
                        "no missing category declared"
                    )
                raw = cov.missing
            k = tables[p].get(raw)
            if k is None:
                if not config.auto_extend:
                    raise DataError(
                        f"{path}: line {line}, column {cov.name!r}: unknown category {raw!r}"
                    )
                k = len(extended[p])
                extended[p].append(raw)
                tables[p][raw] = k
            x[i, p] = k
        ids.append(row[col[config.id_column]] if config.id_column else str(i))
        if config.exposure_column:
            e = row[col[config.exposure_column]].strip()
            exposure.append(e if e else None)
        else:
            exposure.append(None)
        for name in config.outcomes:
            raw = row[col[name]].strip()
            if raw:
                try:
                    outcomes[name][i] = float(raw)
                except ValueError:
                    raise DataError(
                        f"{path}: line {line}, column {name!r}: not a number: {raw!r}"
                    ) from None

    schema = CovariateSchema(tuple(
        Covariate(c.name, tuple(ext), c.missing, c.missing_values)
        for c, ext in zip(covs, extended)
    ))
    return Dataset(schema, x, ids=ids, exposure=exposure, outcomes=outcomes, levels=config.levels)


def write_csv(dataset: Dataset, path: str | Path, config: SchemaConfig) -> None:
    """Write ``dataset`` in the layout :func:`load_csv` reads back."""
    id_col = config.id_column or "id"
    header = [id_col]
    if config.exposure_column:
        header.append(config.exposure_column)
    header += [c.name for c in dataset.schema.covariates]
    header += list(config.outcomes)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            row = [dataset.ids[i]]
            if config.exposure_column:
                row.append(dataset.exposure[i] or "")
            row += [c.categories[k] for c, k in zip(dataset.schema.covariates, dataset.x[i])]
            for name in config.outcomes:
                v = dataset.outcomes[name][i]
                row.append("" if math.isnan(v) else repr(float(v)))
            w.writerow(row)


def bin_continuous(
    values: Sequence[float],
    thresholds: Sequence[float] | None = None,
    quantiles: int | None = None,
) -> np.ndarray:
    """Discretise a continuous exposure into ordered bins.

    Exactly one of ``thresholds`` / ``quantiles`` must be given.

    With thresholds ``t_1 < ... < t_J`` bin ``j`` is ``[t_j, t_{j+1})``, so
    ``v < t_1`` is bin 0 and ``v >= t_J`` is bin J. With ``quantiles=q``
    the cut points are the empirical ``j/q`` quantiles (inverse-CDF
    definition) and a value equal to a cut point falls in the lower bin.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a non-empty 1-D sequence")
    if not np.isfinite(v).all():
        raise ValueError("values contain non-finite entries")
    if (thresholds is None) == (quantiles is None):
        raise ValueError("give exactly one of thresholds or quantiles")
    if thresholds is not None:
        t = np.asarray(thresholds, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        return np.searchsorted(t, v, side="right").astype(np.int64)
    q = int(quantiles)
    if q < 2:
        raise ValueError("quantile count must be at least 2")
    if q > np.unique(v).size:
        raise ValueError(f"quantile count {q} exceeds number of distinct values {np.unique(v).size}")
    cuts = np.quantile(v, np.arange(1, q) / q, method="inverted_cdf")
    return np.searchsorted(cuts, v, side="left").astype(np.int64)


class CategoryCounts:
    """Counts of units per (covariate, category) in flattened layout."""

    def __init__(self, schema: CovariateSchema, counts: np.ndarray):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (schema.total_categories,):
            raise ValueError("counts length must equal total number of categories")
        self.schema = schema
        self.counts = counts

    def __getitem__(self, pk: tuple[int, int]) -> int:
        p, k = pk
        if not 0 <= k < self.schema.covariates[p].K:
            raise IndexError(f"category {k} out of range for covariate {p}")
        return int(self.counts[self.schema.flat_index(p, k)])

    def __eq__(self, other) -> bool:
        return (isinstance(other, CategoryCounts) and self.schema == other.schema
                and np.array_equal(self.counts, other.counts))

    def __repr__(self) -> str:
        return f"CategoryCounts(total={self.total}, counts={self.counts.tolist()})"

    def covariate(self, p: int) -> np.ndarray:
        off = self.schema.offsets[p]
        return self.counts[off:off + self.schema.covariates[p].K]

    @property
    def total(self) -> int:
        """Number of units counted (read off the first covariate)."""
        return int(self.covariate(0).sum())

    def as_dict(self) -> dict[str, dict[str, int]]:
        return {
            c.name: {lab: int(n) for lab, n in zip(c.categories, self.covariate(p))}
            for p, c in enumerate(self.schema.covariates)
        }


def category_counts(
    x: np.ndarray, units: Iterable[int] | None, schema: CovariateSchema
) -> CategoryCounts:
    """Count ``units`` (indices into ``x``; ``None`` means all rows) per (p, k)."""
    x = np.asarray(x)
    if units is not None:
        idx = np.asarray(list(units) if not isinstance(units, np.ndarray) else units, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
            raise IndexError("unit index out of range")
        x = x[idx] if idx.size else x[:0]
    codes = schema.flat_codes(x.reshape(-1, schema.P)).ravel()
    return CategoryCounts(schema, np.bincount(codes, minlength=schema.total_categories))
