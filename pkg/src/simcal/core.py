"""Data model, CSV ingestion, seed derivation and data partitioning."""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

_MASK64 = (1 << 64) - 1
LONG_COLUMNS = ("point_id", "t", "channel", "value")


class DataError(ValueError):
    """Raised for malformed datasets, schema mismatches and bad splits."""


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class SeedStream:
    """A master seed plus a derivation path of ``(tag, index)`` pairs.

    The effective seed is a pure function of ``(master, path)``, so every
    stochastic element of a run can be addressed and replayed independently.
    """

    master: int
    path: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.master) <= _MASK64:
            raise ValueError(f"master seed must be an unsigned 64-bit integer, got {self.master}")

    def derive(self, tag: str, index: int = 0) -> SeedStream:
        if index < 0:
            raise ValueError("seed index must be non-negative")
        return SeedStream(self.master, self.path + ((str(tag), int(index)),))

    @cached_property
    def seed(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        for tag, index in self.path:
            raw = tag.encode("utf-8")
            h.update(struct.pack("<I", len(raw)))
            h.update(raw)
            h.update(struct.pack("<Q", index & _MASK64))
        path_hash = int.from_bytes(h.digest(), "little")
        return _splitmix64(_splitmix64(int(self.master)) ^ path_hash)

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))

    def __str__(self):
        tail = "/".join(f"{t}:{i}" for t, i in self.path)
        return f"{self.master}" + (f"/{tail}" if tail else "")


def derive_seed(stream: SeedStream, tag: str, index: int = 0) -> SeedStream:
    return stream.derive(tag, index)


def as_seed_stream(seed: SeedStream | int | None) -> SeedStream:
    if isinstance(seed, SeedStream):
        return seed
    return SeedStream(0 if seed is None else int(seed))


@dataclass(frozen=True)
class Channel:
    name: str
    arity: int | None = 1
    unit: str = ""


@dataclass(frozen=True)
class Schema:
    """Named input and output channels.

    ``arity=None`` marks a variable-length channel (e.g. a trajectory).
    """

    inputs: tuple[Channel, ...]
    outputs: tuple[Channel, ...]
    format: str = "wide"

    def __post_init__(self):
        names = [c.name for c in self.inputs + self.outputs]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate channel names in schema: {names}")
        if self.format not in ("wide", "long"):
            raise DataError(f"unknown dataset format {self.format!r}")

    @classmethod
    def from_dict(cls, spec: Mapping[str, Any]) -> Schema:
        def channels(entries):
            out = []
            for entry in entries or ():
                if isinstance(entry, str):
                    out.append(Channel(entry))
                else:
                    out.append(Channel(entry["name"], entry.get("arity", 1), entry.get("unit", "")))
            return tuple(out)

        return cls(channels(spec.get("inputs")), channels(spec.get("outputs")), spec.get("format", "wide"))

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.inputs)

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.outputs)

    @property
    def names(self) -> tuple[str, ...]:
        return self.input_names + self.output_names

    def channel(self, name: str) -> Channel:
        for c in self.inputs + self.outputs:
            if c.name == name:
                return c
        raise KeyError(name)


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DataPoint:
    x_obs: Mapping[str, np.ndarray]
    y_obs: Mapping[str, np.ndarray]
    unit_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_obs", {k: _frozen_array(v) for k, v in self.x_obs.items()})
        object.__setattr__(self, "y_obs", {k: _frozen_array(v) for k, v in self.y_obs.items()})


@dataclass(frozen=True)
class Dataset:
    """Ordered, immutable collection of data points sharing one schema.

    ``ids`` records each point's index in the dataset it was originally
    loaded or synthesized as, so partitions can be traced back.
    """

    schema: Schema
    points: tuple[DataPoint, ...]
    provenance: str = ""
    ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.ids:
            object.__setattr__(self, "ids", tuple(range(len(self.points))))
        elif len(self.ids) != len(self.points):
            raise DataError("ids and points differ in length")
        for i, p in enumerate(self.points):
            _check_point(self.schema, p, i)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[DataPoint]:
        return iter(self.points)

    def __getitem__(self, i: int) -> DataPoint:
        return self.points[i]

    def subset(self, indices: Iterable[int]) -> Dataset:
        idx = [int(i) for i in indices]
        return Dataset(self.schema, tuple(self.points[i] for i in idx), self.provenance,
                       tuple(self.ids[i] for i in idx) if idx else ())

    def concat(self, other: Dataset) -> Dataset:
        if other.schema != self.schema:
            raise DataError("cannot concatenate datasets with different schemas")
        return Dataset(self.schema, self.points + other.points, self.provenance, self.ids + other.ids)

    def channel_values(self, name: str) -> np.ndarray:
        """All values of one channel pooled across points."""
        if name in self.schema.input_names:
            parts = [p.x_obs[name] for p in self.points]
        elif name in self.schema.output_names:
            parts = [p.y_obs[name] for p in self.points]
        else:
            raise DataError(f"dataset has no channel {name!r}")
        return np.concatenate(parts) if parts else np.empty(0)


def _check_point(schema: Schema, point: DataPoint, row) -> None:
    for group, record in ((schema.inputs, point.x_obs), (schema.outputs, point.y_obs)):
        for ch in group:
            if ch.name not in record:
                raise DataError(f"point {row}: missing channel {ch.name!r}")
            value = record[ch.name]
            if ch.arity is not None and value.size != ch.arity:
                raise DataError(f"point {row}: channel {ch.name!r} has {value.size} values, "
                                f"schema declares {ch.arity}")
            if not np.all(np.isfinite(value)):
                raise DataError(f"point {row}: non-finite value in channel {ch.name!r}")


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}: column {column!r} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: non-finite value {text!r} in column {column!r}")
    return value


def load_dataset(path: str | Path, schema: Schema) -> Dataset:
    """Read a dataset from CSV.

    Wide format has one row per point and one column per scalar channel
    (plus an optional ``unit_id`` column).  Long format has the columns
    ``point_id, t, channel, value`` (plus optional ``unit_id``); values of
    a channel are ordered by ``t`` within each point.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if schema.format == "long":
        points = _read_long(header, rows, schema)
    else:
        points = _read_wide(header, rows, schema)
    if not points:
        raise DataError(f"{path}: no data rows")
    return Dataset(schema, tuple(points), provenance=str(path))


def _read_wide(header, rows, schema):
    expected = set(schema.names)
    got = set(header) - {"unit_id"}
    if got != expected:
        missing = sorted(expected - got)
        unknown = sorted(got - expected)
        raise DataError(f"schema mismatch: missing columns {missing}, unexpected columns {unknown}")
    for ch in schema.inputs + schema.outputs:
        if ch.arity not in (1, None):
            raise DataError(f"wide format holds scalar channels only; {ch.name!r} has arity {ch.arity}")
    col = {name: header.index(name) for name in header}
    points = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        x = {n: [_parse_float(row[col[n]], r, n)] for n in schema.input_names}
        y = {n: [_parse_float(row[col[n]], r, n)] for n in schema.output_names}
        unit = row[col["unit_id"]].strip() if "unit_id" in col else None
        points.append(DataPoint(x, y, unit))
    return points


def _read_long(header, rows, schema):
    if tuple(h for h in header if h != "unit_id") != LONG_COLUMNS:
        raise DataError(f"schema mismatch: long format needs columns {list(LONG_COLUMNS)}, got {header}")
    col = {name: header.index(name) for name in header}
    known = set(schema.names)
    grouped: dict[str, dict[str, list[tuple[float, float]]]] = {}
    units: dict[str, str | None] = {}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        pid = row[col["point_id"]].strip()
        channel = row[col["channel"]].strip()
        if channel not in known:
            raise DataError(f"schema mismatch: unknown channel {channel!r} in row {r}")
        t = _parse_float(row[col["t"]], r, "t")
        value = _parse_float(row[col["value"]], r, "value")
        grouped.setdefault(pid, {}).setdefault(channel, []).append((t, value))
        units[pid] = row[col["unit_id"]].strip() if "unit_id" in col else None
    points = []
    for pid, channels in grouped.items():
        missing = known - set(channels)
        if missing:
            raise DataError(f"point {pid!r}: missing channels {sorted(missing)}")
        series = {n: [v for _, v in sorted(s, key=lambda tv: tv[0])] for n, s in channels.items()}
        x = {n: series[n] for n in schema.input_names}
        y = {n: series[n] for n in schema.output_names}
        points.append(DataPoint(x, y, units[pid]))
    return points


def write_dataset(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` in the format declared by its schema."""
    path = Path(path)
    with_units = any(p.unit_id is not None for p in ds)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if ds.schema.format == "long":
            w.writerow(LONG_COLUMNS + (("unit_id",) if with_units else ()))
            for i, p in enumerate(ds):
                for name in ds.schema.names:
                    values = p.x_obs[name] if name in p.x_obs else p.y_obs[name]
                    for t, v in enumerate(values):
                        w.writerow([i, t, name, repr(float(v))] + ([p.unit_id] if with_units else []))
        else:
            w.writerow(list(ds.schema.names) + (["unit_id"] if with_units else []))
            for p in ds:
                row = [repr(float({**p.x_obs, **p.y_obs}[n][0])) for n in ds.schema.names]
                w.writerow(row + ([p.unit_id] if with_units else []))


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.2, 0.0)
    mode: str = "random"
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-12:
            raise DataError(f"split fractions must be three non-negative reals summing to 1, got {self.fractions}")
        if self.mode not in ("random", "contiguous"):
            raise DataError(f"split mode must be 'random' or 'contiguous', got {self.mode!r}")
        object.__setattr__(self, "fractions", fr)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    nonzero = sum(f > 0 for f in fractions)
    if n < nonzero:
        raise DataError(f"{n} points cannot fill {nonzero} non-empty parts")
    # every part with a positive fraction gets at least one point (possible since n >= nonzero)
    floor_val = 1 if fractions[1] > 0 else 0
    floor_te = 1 if fractions[2] > 0 else 0
    n_val = max(_round_half_up(n * fractions[1]), floor_val)
    n_te = max(_round_half_up(n * fractions[2]), floor_te)
    # rounding both parts up can oversubscribe; trim the part rounded up the most (test first on ties)
    reserve = 1 if fractions[0] > 0 else 0
    while n_val + n_te > n - reserve:
        excess_val = n_val - n * fractions[1] if n_val > floor_val else -math.inf
        excess_te = n_te - n * fractions[2] if n_te > floor_te else -math.inf
        if excess_te >= excess_val:
            n_te -= 1
        else:
            n_val -= 1
    n_tr = n - n_val - n_te
    if fractions[0] > 0 and n_tr < 1 or n_tr < 0:
        raise DataError(f"split {tuple(fractions)} of {n} points leaves no training data")
    return n_tr, n_val, n_te


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Partition into (train, val, test); remainders go to train."""
    n = len(ds)
    n_tr, n_val, _ = split_sizes(n, spec.fractions)
    if spec.mode == "random":
        order = SeedStream(spec.seed).derive("split").rng().permutation(n)
    else:
        order = np.arange(n)
    cuts = (order[:n_tr], order[n_tr:n_tr + n_val], order[n_tr + n_val:])
    if spec.mode == "random":
        cuts = tuple(np.sort(c) for c in cuts)
    return tuple(ds.subset(c) for c in cuts)


def k_fold(ds: Dataset, k: int, seed: int | SeedStream = 0) -> list[tuple[Dataset, Dataset]]:
    n = len(ds)
    if not 2 <= k <= n:
        raise DataError(f"k must satisfy 2 <= k <= N={n}, got k={k}")
    order = as_seed_stream(seed).derive("kfold").rng().permutation(n)
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    folds, start = [], 0
    for size in sizes:
        folds.append(np.sort(order[start:start + size]))
        start += size
    out = []
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        out.append((ds.subset(np.flatnonzero(mask)), ds.subset(fold)))
    return out


def parallel_map(fn: Callable, items: Sequence, n_jobs: int | None = 1) -> list:
    """Map ``fn`` over ``items``; results come back in input order."""
    items = list(items)
    if not n_jobs or n_jobs == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))
