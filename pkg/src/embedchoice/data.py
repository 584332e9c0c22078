"""Canonical data model and CSV ingestion.

Products, choice observations and embedding matrices are immutable once
constructed. Product id is the join key everywhere; positions are never
used to link files.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

DATA_TYPES = ("image", "title", "description", "reviews", "attributes")

CHOICES_HEADER = ["individual_id", "task", "product_id", "offered", "price", "rank", "chosen"]
REVIEWS_HEADER = ["product_id", "review_index", "text"]
ATTR_PREFIX = "attr:"


@dataclass(frozen=True)
class Source:
    """Where an embedding came from: a data type and the model that produced it."""

    data_type: str
    model_name: str

    def __post_init__(self):
        if self.data_type not in DATA_TYPES:
            raise ValidationError(
                f"unknown data type {self.data_type!r}; expected one of {DATA_TYPES}"
            )
        if not self.model_name or "/" in self.model_name:
            raise ValidationError(f"invalid model name {self.model_name!r}")

    @property
    def descriptor(self) -> str:
        return f"{self.data_type}/{self.model_name}"

    @property
    def slug(self) -> str:
        return f"{self.data_type}__{self.model_name}"

    @classmethod
    def parse(cls, text: str) -> "Source":
        for sep in ("/", "__"):
            if sep in text:
                data_type, model_name = text.split(sep, 1)
                return cls(data_type, model_name)
        raise ValidationError(f"source descriptor {text!r} is not of the form type/model")

    def __str__(self) -> str:
        return self.descriptor


@dataclass(frozen=True)
class Product:
    id: str
    label: str = ""
    attributes: dict = field(default_factory=dict)
    title: str = ""
    description: str = ""
    reviews: tuple = ()

    def __post_init__(self):
        if not self.id:
            raise ValidationError("product id must be nonempty")
        for name, value in self.attributes.items():
            if not math.isfinite(value):
                raise ValidationError(f"product {self.id}: attribute {name!r} is not finite")
        object.__setattr__(self, "reviews", tuple(self.reviews))


@dataclass(frozen=True)
class ChoiceObservation:
    """One (individual, task) choice record."""

    individual_id: str
    task: int
    offered: tuple
    price: tuple
    chosen: str
    rank: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "offered", tuple(self.offered))
        object.__setattr__(self, "price", tuple(float(p) for p in self.price))
        if self.rank is not None:
            object.__setattr__(self, "rank", tuple(int(r) for r in self.rank))
        who = f"individual {self.individual_id!r} task {self.task}"
        if self.task not in (1, 2):
            raise ValidationError(f"{who}: task must be 1 or 2")
        if len(self.offered) == 0:
            raise ValidationError(f"{who}: empty offered set")
        if len(set(self.offered)) != len(self.offered):
            raise ValidationError(f"{who}: duplicate product in offered set")
        if len(self.price) != len(self.offered):
            raise ValidationError(f"{who}: one price per offered product required")
        if not all(math.isfinite(p) for p in self.price):
            raise ValidationError(f"{who}: non-finite price")
        if self.chosen not in self.offered:
            raise ValidationError(f"{who}: chosen product {self.chosen!r} was not offered")
        if self.rank is not None:
            if sorted(self.rank) != list(range(1, len(self.offered) + 1)):
                raise ValidationError(f"{who}: ranks are not a permutation of 1..{len(self.offered)}")

    @property
    def chosen_index(self) -> int:
        return self.offered.index(self.chosen)


@dataclass(frozen=True, eq=False)
class EmbeddingMatrix:
    """Product-by-dimension matrix tagged with its source.

    Row ``i`` belongs to product ``rows[i]``.
    """

    source: Source
    rows: tuple
    values: np.ndarray
    columns: tuple = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError("embedding values must be a 2-D matrix")
        object.__setattr__(self, "rows", tuple(self.rows))
        if values.shape[0] != len(self.rows):
            raise ValidationError("one embedding row per product required")
        if values.shape[1] < 1:
            raise ValidationError("embedding dimension must be at least 1")
        if len(set(self.rows)) != len(self.rows):
            raise ValidationError("duplicate product id in embedding rows")
        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            i, j = bad[0]
            raise ValidationError(f"non-finite embedding value at row {self.rows[i]!r}, column {j + 1}")
        columns = tuple(self.columns) or tuple(f"e{d + 1}" for d in range(values.shape[1]))
        if len(columns) != values.shape[1]:
            raise ValidationError("column names do not match embedding dimension")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", columns)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def aligned(self, product_ids: Sequence[str]) -> "EmbeddingMatrix":
        """Return a copy whose rows follow ``product_ids``."""
        index = {pid: i for i, pid in enumerate(self.rows)}
        missing = [pid for pid in product_ids if pid not in index]
        if missing:
            raise ValidationError(f"embedding {self.source} lacks rows for products: {missing}")
        extra = sorted(set(self.rows) - set(product_ids))
        if extra:
            raise ValidationError(f"embedding {self.source} has rows for unknown products: {extra}")
        order = [index[pid] for pid in product_ids]
        return EmbeddingMatrix(self.source, tuple(product_ids), self.values[order], self.columns)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.source == other.source
            and self.rows == other.rows
            and self.columns == other.columns
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    catalog: tuple
    observations: tuple = ()
    embeddings: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "catalog", tuple(self.catalog))
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "embeddings", tuple(self.embeddings))
        ids = [p.id for p in self.catalog]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate product ids in catalog: {dupes}")
        known = set(ids)
        for obs in self.observations:
            unknown = [pid for pid in obs.offered if pid not in known]
            if unknown:
                raise ValidationError(
                    f"individual {obs.individual_id!r} references unknown products {unknown}"
                )
        for emb in self.embeddings:
            if set(emb.rows) != known or len(emb.rows) != len(ids):
                raise ValidationError(f"embedding {emb.source} does not cover the catalog exactly")
        validate_task_pairs(self.observations)

    @property
    def product_ids(self) -> tuple:
        return tuple(p.id for p in self.catalog)

    def product(self, pid: str) -> Product:
        for p in self.catalog:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def embedding(self, source: Source | str) -> EmbeddingMatrix:
        if isinstance(source, str):
            source = Source.parse(source)
        for emb in self.embeddings:
            if emb.source == source:
                return emb
        raise KeyError(str(source))

    def first_choices(self) -> list:
        return [o for o in self.observations if o.task == 1]


def validate_task_pairs(observations: Iterable[ChoiceObservation]) -> None:
    """Check that every task-2 record offers the task-1 set minus the first choice."""
    first: dict = {}
    second: dict = {}
    for obs in observations:
        target = first if obs.task == 1 else second
        target.setdefault(obs.individual_id, []).append(obs)
    for ind, seconds in second.items():
        firsts = first.get(ind)
        if not firsts:
            continue
        if len(firsts) != 1 or len(seconds) != 1:
            raise ValidationError(
                f"individual {ind!r}: task pairing requires exactly one task-1 and one task-2 record"
            )
        o1, o2 = firsts[0], seconds[0]
        expected = set(o1.offered) - {o1.chosen}
        if set(o2.offered) != expected:
            raise ValidationError(
                f"individual {ind!r}: task-2 offered set must equal task-1 set minus {o1.chosen!r}"
            )


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(x: float) -> str:
    return repr(float(x))


def _open_csv(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    return open(path, newline="", encoding="utf-8")


def _parse_float(text: str, what: str, path, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not a number", str(path), line) from None
    return value


def _parse_int(text: str, what: str, path, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not an integer", str(path), line) from None


# ---------------------------------------------------------------------------
# choices.csv


def load_choices(path) -> list:
    """Read choices.csv into observations, in order of first appearance.

    Raises:
        ParseError: a row cannot be parsed; the message carries the line number.
        ValidationError: a record violates a choice invariant.
    """
    groups: dict = {}
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", str(path), 1) from None
        if [h.strip() for h in header] != CHOICES_HEADER:
            raise ParseError(f"header must be {','.join(CHOICES_HEADER)}", str(path), 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CHOICES_HEADER):
                raise ParseError(f"expected {len(CHOICES_HEADER)} fields, got {len(row)}", str(path), line)
            ind, task_s, pid, offered_s, price_s, rank_s, chosen_s = (c.strip() for c in row)
            if not ind:
                raise ParseError("empty individual_id", str(path), line)
            if not pid:
                raise ParseError("empty product_id", str(path), line)
            task = _parse_int(task_s, "task", path, line)
            if task not in (1, 2):
                raise ParseError(f"task must be 1 or 2, got {task}", str(path), line)
            offered = _parse_int(offered_s, "offered", path, line)
            chosen = _parse_int(chosen_s, "chosen", path, line)
            if offered not in (0, 1) or chosen not in (0, 1):
                raise ParseError("offered and chosen must be 0 or 1", str(path), line)
            price = _parse_float(price_s, "price", path, line)
            if not math.isfinite(price):
                raise ParseError(f"non-finite price {price_s!r}", str(path), line)
            rank = None
            if rank_s:
                rank = _parse_int(rank_s, "rank", path, line)
                if rank < 1:
                    raise ParseError("rank must be a positive integer", str(path), line)
            rows = groups.setdefault((ind, task), [])
            rows.append((pid, offered, price, rank, chosen, line))

    observations = []
    for (ind, task), rows in groups.items():
        offered_rows = [r for r in rows if r[1] == 1]
        if any(r[4] == 1 and r[1] == 0 for r in rows):
            raise ValidationError(f"individual {ind!r} task {task}: chosen product was not offered")
        chosen = [r[0] for r in offered_rows if r[4] == 1]
        if len(chosen) != 1:
            raise ValidationError(
                f"individual {ind!r} task {task}: exactly one chosen product required, found {len(chosen)}"
            )
        ids = [r[0] for r in offered_rows]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"individual {ind!r} task {task}: duplicate product rows")
        ranks = [r[3] for r in offered_rows]
        if any(r is None for r in ranks) and not all(r is None for r in ranks):
            raise ValidationError(f"individual {ind!r} task {task}: rank given for some products only")
        observations.append(
            ChoiceObservation(
                individual_id=ind,
                task=task,
                offered=tuple(ids),
                price=tuple(r[2] for r in offered_rows),
                chosen=chosen[0],
                rank=None if ranks[0] is None else tuple(ranks),
            )
        )
    validate_task_pairs(observations)
    return observations


def write_choices(path, observations: Iterable[ChoiceObservation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHOICES_HEADER)
        for obs in observations:
            for j, pid in enumerate(obs.offered):
                rank = "" if obs.rank is None else str(obs.rank[j])
                w.writerow(
                    [obs.individual_id, obs.task, pid, 1, _fmt(obs.price[j]), rank, int(pid == obs.chosen)]
                )


# ---------------------------------------------------------------------------
# embeddings.csv


def load_embeddings(path, source: Source | str, catalog: Sequence[str] | None = None) -> EmbeddingMatrix:
    """Read an embeddings.csv file.

    When ``catalog`` is given the rows are re-ordered to follow it, so the
    file's own row order never matters.
    """
    if isinstance(source, str):
        source = Source.parse(source)
    ids, rows = [], []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", str(path), 1) from None
        if len(header) < 2 or header[0] != "product_id":
            raise ParseError("header must start with product_id followed by dimensions", str(path), 1)
        seen = set()
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", str(path), line)
            pid = row[0].strip()
            if pid in seen:
                raise ParseError(f"duplicate product id {pid!r}", str(path), line)
            seen.add(pid)
            values = []
            for col, cell in zip(header[1:], row[1:]):
                v = _parse_float(cell, f"column {col}", path, line)
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value in column {col}", str(path), line)
                values.append(v)
            ids.append(pid)
            rows.append(values)
    if not rows:
        raise ParseError("no embedding rows", str(path), 2)
    emb = EmbeddingMatrix(source, tuple(ids), np.array(rows), tuple(header[1:]))
    if catalog is not None:
        emb = emb.aligned(catalog)
    return emb


def write_embeddings(path, emb: EmbeddingMatrix) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["product_id", *emb.columns])
        for pid, row in zip(emb.rows, emb.values):
            w.writerow([pid, *(_fmt(v) for v in row)])


# ---------------------------------------------------------------------------
# products.csv / reviews.csv


def load_products(path, reviews_path=None) -> list:
    """Read products.csv (and optionally reviews.csv) into a catalog.

    Non-numeric ``attr:`` columns are treated as categorical and one-hot
    encoded into ``name=value`` attributes.
    """
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", str(path), 1) from None
        base = ["product_id", "label", "title", "description"]
        if header[:4] != base:
            raise ParseError(f"header must start with {','.join(base)}", str(path), 1)
        attr_cols = header[4:]
        for col in attr_cols:
            if not col.startswith(ATTR_PREFIX) or len(col) == len(ATTR_PREFIX):
                raise ParseError(f"extra column {col!r} must be named attr:<name>", str(path), 1)
        records = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", str(path), line)
            if not row[0].strip():
                raise ParseError("empty product_id", str(path), line)
            records.append((line, row))

    numeric = {}
    for k, col in enumerate(attr_cols, start=4):
        cells = [row[k].strip() for _, row in records]
        try:
            [float(c) for c in cells]
            numeric[col] = True
        except ValueError:
            numeric[col] = False

    reviews = load_reviews(reviews_path) if reviews_path is not None else {}
    catalog = []
    for line, row in records:
        attrs = {}
        for k, col in enumerate(attr_cols, start=4):
            name = col[len(ATTR_PREFIX):]
            cell = row[k].strip()
            if not cell:
                raise ParseError(f"missing value for {col}", str(path), line)
            if numeric[col]:
                v = float(cell)
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value in {col}", str(path), line)
                attrs[name] = v
            else:
                levels = sorted({r[k].strip() for _, r in records})
                for level in levels:
                    attrs[f"{name}={level}"] = 1.0 if cell == level else 0.0
        pid = row[0].strip()
        catalog.append(
            Product(
                id=pid,
                label=row[1],
                attributes=attrs,
                title=row[2],
                description=row[3],
                reviews=tuple(reviews.get(pid, ())),
            )
        )
    ids = [p.id for p in catalog]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate product ids in products file")
    unknown = sorted(set(reviews) - set(ids))
    if unknown:
        raise ValidationError(f"reviews reference unknown products: {unknown}")
    return catalog


def load_reviews(path) -> dict:
    out: dict = {}
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", str(path), 1) from None
        if header != REVIEWS_HEADER:
            raise ParseError(f"header must be {','.join(REVIEWS_HEADER)}", str(path), 1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", str(path), line)
            idx = _parse_int(row[1], "review_index", path, line)
            out.setdefault(row[0].strip(), []).append((idx, row[2]))
    result = {}
    for pid, items in out.items():
        items.sort(key=lambda t: t[0])
        if len({i for i, _ in items}) != len(items):
            raise ValidationError(f"product {pid!r}: duplicate review_index")
        result[pid] = [text for _, text in items]
    return result


def write_products(path, catalog: Sequence[Product], reviews_path=None) -> None:
    names = sorted({name for p in catalog for name in p.attributes})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["product_id", "label", "title", "description", *(ATTR_PREFIX + n for n in names)])
        for p in catalog:
            w.writerow([p.id, p.label, p.title, p.description, *(_fmt(p.attributes[n]) for n in names)])
    if reviews_path is not None:
        with open(reviews_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REVIEWS_HEADER)
            for p in catalog:
                for i, text in enumerate(p.reviews):
                    w.writerow([p.id, i, text])


def attach_attributes_as_embedding(catalog: Sequence[Product]) -> EmbeddingMatrix:
    """Stack product attributes into an (attributes, raw) embedding, columns sorted by name."""
    if not catalog:
        raise ValidationError("empty catalog")
    names = sorted(catalog[0].attributes)
    reference = set(names)
    for p in catalog:
        keys = set(p.attributes)
        if keys != reference:
            missing = sorted(reference - keys)
            extra = sorted(keys - reference)
            raise ValidationError(
                f"product {p.id!r} attribute set differs: missing {missing}, unexpected {extra}"
            )
    if not names:
        raise ValidationError("products carry no attributes")
    values = np.array([[p.attributes[n] for n in names] for p in catalog])
    return EmbeddingMatrix(Source("attributes", "raw"), tuple(p.id for p in catalog), values, tuple(names))


# ---------------------------------------------------------------------------
# whole-dataset directories


def write_dataset(directory, dataset: Dataset) -> list:
    """Write a dataset directory and return the written paths."""
    directory = Path(directory)
    (directory / "embeddings").mkdir(parents=True, exist_ok=True)
    written = [directory / "products.csv", directory / "reviews.csv", directory / "choices.csv"]
    write_products(written[0], dataset.catalog, written[1])
    write_choices(written[2], dataset.observations)
    for emb in dataset.embeddings:
        path = directory / "embeddings" / f"{emb.source.slug}.csv"
        write_embeddings(path, emb)
        written.append(path)
    return written


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    reviews = directory / "reviews.csv"
    catalog = load_products(directory / "products.csv", reviews if reviews.exists() else None)
    ids = [p.id for p in catalog]
    observations = []
    if (directory / "choices.csv").exists():
        observations = load_choices(directory / "choices.csv")
    embeddings = []
    emb_dir = directory / "embeddings"
    if emb_dir.is_dir():
        for name in sorted(os.listdir(emb_dir)):
            if name.endswith(".csv"):
                source = Source.parse(name[:-4])
                embeddings.append(load_embeddings(emb_dir / name, source, catalog=ids))
    return Dataset(catalog, observations, embeddings)
