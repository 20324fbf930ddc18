"""Grouped dataset model, manifest/feature I/O and the synthetic generators.

A dataset is a flat list of items (video frames or degraded image variants),
each tagged with the group it came from (the source video or the pristine
reference image). Everything downstream reasons about leakage in terms of
these groups.
"""

from __future__ import annotations

import csv
import io
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from leakbench.errors import ConfigError, FeatureFileError, ManifestError

VIDEO_FRAMES = "video-frames"
DEGRADED_VARIANTS = "degraded-variants"
STRUCTURES = (VIDEO_FRAMES, DEGRADED_VARIANTS)

PROVENANCES = ("raw", "last-layer", "all-layers")

MOS_MIN, MOS_MAX = 1.0, 5.0

MANIFEST_HEADER = ["item_id", "group_id", "seq_index", "mos"]

FEATURE_MAGIC = b"LBFS"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    group_id: str
    seq_index: int
    mos: float

    def __post_init__(self):
        if not self.item_id or not self.group_id:
            raise ValueError("item_id and group_id must be non-empty")
        if self.seq_index < 0:
            raise ValueError(f"negative seq_index for {self.item_id}")
        if not (math.isfinite(self.mos) and MOS_MIN <= self.mos <= MOS_MAX):
            raise ValueError(f"MOS out of range: {self.mos!r}")


class GroupedDataset:
    """Immutable, ordered collection of items partitioned by group.

    ``structure`` is inferred when not given: a dataset whose groups all carry
    a single MOS is treated as video frames, otherwise as degraded variants.
    Equality compares items only.
    """

    def __init__(self, items: Iterable[ItemRecord], structure: str | None = None):
        items = tuple(items)
        if not items:
            raise ValueError("dataset has no items")
        by_id: dict[str, ItemRecord] = {}
        groups: dict[str, list[ItemRecord]] = {}
        seen_keys: set[tuple[str, int]] = set()
        for rec in items:
            if rec.item_id in by_id:
                raise ValueError(f"duplicate item_id {rec.item_id!r}")
            key = (rec.group_id, rec.seq_index)
            if key in seen_keys:
                raise ValueError(f"duplicate (group_id, seq_index) {key!r}")
            seen_keys.add(key)
            by_id[rec.item_id] = rec
            groups.setdefault(rec.group_id, []).append(rec)

        constant = all(len({r.mos for r in g}) == 1 for g in groups.values())
        if structure is None:
            structure = VIDEO_FRAMES if constant else DEGRADED_VARIANTS
        if structure not in STRUCTURES:
            raise ValueError(f"unknown structure {structure!r}")
        if structure == VIDEO_FRAMES and not constant:
            raise ValueError("video-frames datasets need one MOS per group")

        self._items = items
        self._by_id = MappingProxyType(by_id)
        self._group_index = MappingProxyType(
            {
                g: tuple(r.item_id for r in sorted(recs, key=lambda r: r.seq_index))
                for g, recs in groups.items()
            }
        )
        self.structure = structure

    @property
    def items(self) -> tuple[ItemRecord, ...]:
        return self._items

    @property
    def group_index(self) -> Mapping[str, tuple[str, ...]]:
        return self._group_index

    @property
    def item_ids(self) -> tuple[str, ...]:
        return tuple(r.item_id for r in self._items)

    @property
    def group_ids(self) -> tuple[str, ...]:
        return tuple(self._group_index)

    def __len__(self):
        return len(self._items)

    def __eq__(self, other):
        if not isinstance(other, GroupedDataset):
            return NotImplemented
        return self._items == other._items

    def __hash__(self):
        return hash(self._items)

    def __repr__(self):
        return (
            f"GroupedDataset({len(self._items)} items, "
            f"{len(self._group_index)} groups, {self.structure})"
        )

    def record(self, item_id: str) -> ItemRecord:
        return self._by_id[item_id]

    def group_of(self, item_id: str) -> str:
        return self._by_id[item_id].group_id

    def mos(self, item_id: str) -> float:
        return self._by_id[item_id].mos

    def group_mos(self, group_id: str) -> float:
        return self._by_id[self._group_index[group_id][0]].mos


class FeatureSet:
    """Dense per-item feature vectors stored as one (n, dim) float64 array."""

    def __init__(self, ids: Sequence[str], data, provenance: str = "raw"):
        data = np.array(data, dtype=np.float64)
        if data.ndim != 2:
            raise FeatureFileError("feature data must be two-dimensional")
        if len(ids) != data.shape[0]:
            raise FeatureFileError("number of ids and vectors differ")
        if data.shape[1] < 1:
            raise FeatureFileError("feature dimension must be positive")
        if not np.all(np.isfinite(data)):
            raise FeatureFileError("non-finite feature entry")
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        self.ids = tuple(ids)
        self._index = {item_id: row for row, item_id in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise FeatureFileError("duplicate item id in feature set")
        data.setflags(write=False)
        self.data = data
        self.provenance = provenance

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def vectors(self) -> Mapping[str, np.ndarray]:
        return {item_id: self.data[row] for item_id, row in self._index.items()}

    def __len__(self):
        return len(self.ids)

    def __contains__(self, item_id):
        return item_id in self._index

    def __getitem__(self, item_id: str) -> np.ndarray:
        return self.data[self._index[item_id]]

    def stack(self, ids: Iterable[str]) -> np.ndarray:
        rows = [self._index[i] for i in ids]
        return self.data[rows]

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (
            self.provenance == other.provenance
            and self.ids == other.ids
            and np.array_equal(self.data, other.data)
        )

    def __repr__(self):
        return f"FeatureSet({len(self.ids)} x {self.dim}, {self.provenance})"

    def check_matches(self, dataset: GroupedDataset):
        if set(self.ids) != set(dataset.item_ids):
            raise FeatureFileError("feature ids do not match dataset items")


@dataclass(frozen=True)
class SynthConfig:
    """Parameters for :func:`generate_synthetic`.

    ``quality_signal`` is the correlation between the group embedding's
    first axis and the group's latent quality; 0 makes features carry no
    quality information at all.
    """

    n_groups: int = 200
    items_per_group: int = 30
    feature_dim: int = 16
    within_group_noise: float = 0.3
    label_noise: float = 0.15
    structure: Literal["video-frames", "degraded-variants"] = VIDEO_FRAMES
    n_distortions: int | None = None
    n_levels: int | None = None
    quality_signal: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for name in ("n_groups", "items_per_group", "feature_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        for name in ("within_group_noise", "label_noise"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be non-negative, got {value!r}")
        if not -1.0 <= self.quality_signal <= 1.0:
            raise ConfigError("quality_signal must lie in [-1, 1]")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"unknown structure {self.structure!r}")
        if self.structure == DEGRADED_VARIANTS:
            if not self.n_distortions or not self.n_levels:
                raise ConfigError("degraded-variants needs n_distortions and n_levels")
            if self.n_distortions < 1 or self.n_levels < 1:
                raise ConfigError("n_distortions and n_levels must be positive")
            if self.items_per_group != self.n_distortions * self.n_levels:
                raise ConfigError("items_per_group must equal n_distortions * n_levels")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def _group_embeddings(rng, n_groups, dim, quality, rho, center, width):
    """Unit-variance group embeddings whose first axis correlates with quality.

    ``quality`` is uniform on an interval of the given center and width; it is
    standardized with the nominal moments so that one group's embedding never
    depends on the other groups' draws.
    """
    z = rng.standard_normal((n_groups, dim))
    if rho:
        standardized = (quality - center) / (width / math.sqrt(12.0))
        z[:, 0] = math.sqrt(1.0 - rho * rho) * z[:, 0] + rho * standardized
    return z


def generate_synthetic(config: SynthConfig) -> tuple[GroupedDataset, FeatureSet]:
    rng = np.random.default_rng(int(config.seed))
    n, per, dim = config.n_groups, config.items_per_group, config.feature_dim
    width = len(str(n - 1))
    item_width = len(str(per - 1))

    records = []
    if config.structure == VIDEO_FRAMES:
        quality = rng.uniform(MOS_MIN, MOS_MAX, size=n)
        emb = _group_embeddings(rng, n, dim, quality, config.quality_signal, 3.0, 4.0)
        group_noise = rng.standard_normal(n)
        noise = rng.standard_normal((n, per, dim))
        features = emb[:, None, :] + config.within_group_noise * noise
        mos = np.clip(quality + config.label_noise * group_noise, MOS_MIN, MOS_MAX)
        for g in range(n):
            for i in range(per):
                records.append(
                    ItemRecord(f"g{g:0{width}d}_f{i:0{item_width}d}", f"g{g:0{width}d}", i, float(mos[g]))
                )
    else:
        n_dist, n_lev = config.n_distortions, config.n_levels
        base = rng.uniform(3.0, MOS_MAX, size=n)
        emb = _group_embeddings(rng, n, dim, base, config.quality_signal, 4.0, 2.0)
        directions = rng.standard_normal((n_dist, dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        severity = rng.uniform(0.1, 0.5, size=n_dist)
        levels = np.arange(1, n_lev + 1, dtype=np.float64)
        # feature[g, k, l] = e_g + level * d_k + noise
        shift = levels[None, :, None] * directions[:, None, :]
        noise = rng.standard_normal((n, n_dist, n_lev, dim))
        features = emb[:, None, None, :] + shift[None] + config.within_group_noise * noise
        label_noise = rng.standard_normal((n, n_dist, n_lev))
        mos = base[:, None, None] - severity[None, :, None] * levels[None, None, :]
        mos = np.clip(mos + config.label_noise * label_noise, MOS_MIN, MOS_MAX)
        features = features.reshape(n, per, dim)
        mos = mos.reshape(n, per)
        for g in range(n):
            for s in range(per):
                k, lev = divmod(s, n_lev)
                records.append(
                    ItemRecord(
                        f"r{g:0{width}d}_d{k:02d}_l{lev + 1}",
                        f"r{g:0{width}d}",
                        s,
                        float(mos[g, s]),
                    )
                )

    dataset = GroupedDataset(records, structure=config.structure)
    feats = FeatureSet([r.item_id for r in records], features.reshape(n * per, dim), "raw")
    return dataset, feats


# -- atomic file helpers ------------------------------------------------------


def write_atomic(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- manifest CSV -------------------------------------------------------------


def write_manifest(dataset: GroupedDataset, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for rec in dataset.items:
        writer.writerow([rec.item_id, rec.group_id, rec.seq_index, repr(rec.mos)])
    write_atomic(path, buf.getvalue())


def read_manifest(path) -> GroupedDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError("empty manifest", line=1) from None
        if header != MANIFEST_HEADER:
            raise ManifestError(f"bad header {header!r}", line=1)
        records = []
        seen_ids: set[str] = set()
        seen_keys: dict[tuple[str, int], int] = {}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"expected 4 fields, got {len(row)}", line=line)
            item_id, group_id, seq_raw, mos_raw = row
            try:
                seq_index = int(seq_raw)
                mos = float(mos_raw)
            except ValueError:
                raise ManifestError(f"malformed row {row!r}", line=line) from None
            if not item_id or not group_id or seq_index < 0:
                raise ManifestError(f"malformed row {row!r}", line=line)
            if not (math.isfinite(mos) and MOS_MIN <= mos <= MOS_MAX):
                raise ManifestError(f"MOS out of range: {mos_raw}", line=line)
            if item_id in seen_ids:
                raise ManifestError(f"duplicate item_id {item_id!r}", line=line)
            key = (group_id, seq_index)
            if key in seen_keys:
                raise ManifestError(
                    f"duplicate key (group_id, seq_index) = {key!r}, first seen at line {seen_keys[key]}",
                    line=line,
                )
            seen_ids.add(item_id)
            seen_keys[key] = line
            records.append(ItemRecord(item_id, group_id, seq_index, mos))
    if not records:
        raise ManifestError("manifest has no items")
    try:
        return GroupedDataset(records)
    except ValueError as exc:
        raise ManifestError(str(exc)) from None


# -- feature files ------------------------------------------------------------


def write_features(features: FeatureSet, path, fmt: str | None = None):
    """Write ``features`` as binary (``.lbfs``/``.bin``) or CSV (``.csv``)."""
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "binary")
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["item_id"] + [f"v{j}" for j in range(features.dim)])
        for item_id, vec in zip(features.ids, features.data):
            writer.writerow([item_id] + [repr(float(v)) for v in vec])
        write_atomic(path, buf.getvalue())
        return
    if fmt != "binary":
        raise ValueError(f"unknown feature format {fmt!r}")
    out = bytearray()
    out += FEATURE_MAGIC
    out += struct.pack("<IIQ", FEATURE_VERSION, features.dim, len(features))
    row = np.ascontiguousarray(features.data, dtype="<f8")
    for item_id, vec in zip(features.ids, row):
        raw_id = item_id.encode("utf-8")
        out += struct.pack("<H", len(raw_id))
        out += raw_id
        out += vec.tobytes()
    write_atomic(path, bytes(out))


def read_features(path, provenance: str = "raw", fmt: str | None = None) -> FeatureSet:
    fmt = fmt or ("csv" if str(path).endswith(".csv") else "binary")
    if fmt == "csv":
        return _read_features_csv(path, provenance)
    blob = Path(path).read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise FeatureFileError("bad magic, not a feature file")
    try:
        version, dim, count = struct.unpack_from("<IIQ", blob, 4)
    except struct.error:
        raise FeatureFileError("truncated feature header") from None
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"unsupported feature file version {version}")
    if dim < 1:
        raise FeatureFileError("feature dimension must be positive")
    pos = 20
    ids = []
    data = np.empty((count, dim), dtype=np.float64)
    width = 8 * dim
    for row in range(count):
        if pos + 2 > len(blob):
            raise FeatureFileError(f"truncated at item {row}")
        (id_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        ids.append(blob[pos : pos + id_len].decode("utf-8"))
        pos += id_len
        if pos + width > len(blob):
            raise FeatureFileError(f"dimension mismatch: item {ids[-1]!r} is short of {dim} values")
        data[row] = np.frombuffer(blob, dtype="<f8", count=dim, offset=pos)
        pos += width
    if pos != len(blob):
        raise FeatureFileError("trailing bytes after last item (dimension mismatch?)")
    if not np.all(np.isfinite(data)):
        raise FeatureFileError("non-finite feature entry")
    return FeatureSet(ids, data, provenance)


def _read_features_csv(path, provenance):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "item_id" or len(header) < 2:
            raise FeatureFileError("bad feature CSV header")
        dim = len(header) - 1
        if header[1:] != [f"v{j}" for j in range(dim)]:
            raise FeatureFileError("bad feature CSV header")
        ids, rows = [], []
        for row in reader:
            if not row:
                continue
            if len(row) - 1 != dim:
                raise FeatureFileError(
                    f"line {reader.line_num}: dimension mismatch, expected {dim} got {len(row) - 1}"
                )
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise FeatureFileError(f"line {reader.line_num}: malformed value") from None
            if not all(math.isfinite(v) for v in values):
                raise FeatureFileError(f"line {reader.line_num}: non-finite entry")
            ids.append(row[0])
            rows.append(values)
    return FeatureSet(ids, np.array(rows, dtype=np.float64).reshape(len(rows), dim), provenance)
