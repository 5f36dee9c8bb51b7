"""Dataset ingestion, stratified folds and synthetic data."""
from __future__ import annotations

import csv
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """Malformed input; carries the offending file, line and column when known."""

    def __init__(self, message: str, path=None, line: int | None = None, column: int | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.column = column


@dataclass
class Sample:
    channels: list[np.ndarray]
    label: int

    @property
    def num_channels(self) -> int:
        return len(self.channels)


@dataclass
class Dataset:
    samples: list[Sample]
    num_classes: int
    channel_names: list[str]
    provenance: str = ""
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.num_classes)]
        k = len(self.channel_names)
        for i, s in enumerate(self.samples):
            if s.num_channels != k:
                raise DataFormatError(f"sample {i} has {s.num_channels} channels, expected {k}")
            if not 0 <= s.label < self.num_classes:
                raise DataFormatError(f"sample {i} label {s.label} outside [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_channels(self) -> int:
        return len(self.channel_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def subset(self, indices) -> Dataset:
        return Dataset([self.samples[i] for i in indices], self.num_classes, list(self.channel_names),
                       self.provenance, list(self.class_names))

    def permute_channels(self, order) -> Dataset:
        order = list(order)
        samples = [Sample([s.channels[k] for k in order], s.label) for s in self.samples]
        return Dataset(samples, self.num_classes, [self.channel_names[k] for k in order],
                       self.provenance, list(self.class_names))


def _label_key(token: str):
    try:
        return (0, float(token), token)
    except ValueError:
        return (1, 0.0, token)


def _canonical_label(token: str) -> str:
    try:
        v = float(token)
    except ValueError:
        return token
    return str(int(v)) if v.is_integer() else repr(v)


def _map_labels(tokens: list[str]) -> tuple[list[int], list[str]]:
    canon = [_canonical_label(t) for t in tokens]
    names = sorted(set(canon), key=_label_key)
    index = {n: i for i, n in enumerate(names)}
    return [index[c] for c in canon], names


# ---------------------------------------------------------------- directory format

_DIM_FILE = re.compile(r"^(?P<name>.+)_dim(?P<dim>\d+)_(?P<split>[^_]+)\.txt$", re.IGNORECASE)


def _parse_dim_file(path: Path) -> list[tuple[str, np.ndarray, int]]:
    rows = []
    text = path.read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.replace(",", " ").split()
        if not tokens:
            continue
        values = []
        for col, tok in enumerate(tokens[1:], start=2):
            try:
                values.append(float(tok))
            except ValueError:
                raise DataFormatError(f"non-numeric token {tok!r}", path, lineno, col) from None
        arr = np.array(values)
        # unequal-length archives pad with trailing NaN
        finite = np.isfinite(arr)
        if arr.size and not finite.all():
            last = np.flatnonzero(finite)
            end = last[-1] + 1 if last.size else 0
            if not finite[:end].all():
                col = int(np.flatnonzero(~finite[:end])[0]) + 2
                raise DataFormatError("non-finite value inside series", path, lineno, col)
            arr = arr[:end]
        if arr.size == 0:
            raise DataFormatError("line has a label but no values", path, lineno, 1)
        rows.append((tokens[0], arr, lineno))
    if not rows:
        raise DataFormatError("file contains no samples", path)
    return rows


def load_multichannel_dir(path) -> Dataset:
    """Load ``<name>_dim<k>_<split>.txt`` files (one per channel and split).

    Each line is a class label followed by the series values; line i of every
    dim file of a split describes the same sample. All splits are pooled.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataFormatError("not a directory", root)
    groups: dict[str, dict[int, Path]] = defaultdict(dict)
    name = None
    for f in sorted(root.iterdir()):
        m = _DIM_FILE.match(f.name)
        if not m:
            continue
        name = name or m["name"]
        groups[m["split"].upper()][int(m["dim"])] = f
    if not groups:
        raise DataFormatError("no <dataset>_dim<k>_<split>.txt files found", root)
    dims = sorted(next(iter(groups.values())))
    label_tokens: list[str] = []
    channels: list[list[np.ndarray]] = []
    for split in sorted(groups):
        files = groups[split]
        if sorted(files) != dims:
            missing = sorted(set(dims) ^ set(files))
            raise DataFormatError(f"split {split} is missing dim file(s) {missing}", root)
        parsed = {d: _parse_dim_file(files[d]) for d in dims}
        ref = parsed[dims[0]]
        for d in dims[1:]:
            if len(parsed[d]) != len(ref):
                raise DataFormatError(
                    f"{len(parsed[d])} samples but {files[dims[0]].name} has {len(ref)}", files[d])
            for (la, _, _), (lb, _, line) in zip(ref, parsed[d]):
                if _canonical_label(la) != _canonical_label(lb):
                    raise DataFormatError(
                        f"label {lb!r} disagrees with {la!r} in {files[dims[0]].name}", files[d], line, 1)
        for i in range(len(ref)):
            label_tokens.append(ref[i][0])
            channels.append([parsed[d][i][1] for d in dims])
    ids, names = _map_labels(label_tokens)
    samples = [Sample(ch, y) for ch, y in zip(channels, ids)]
    return Dataset(samples, len(names), [f"dim{d}" for d in dims], f"dir:{root}", names)


def save_multichannel_dir(dataset: Dataset, path, name: str = "dataset", split: str = "TRAIN") -> list[Path]:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for k in range(dataset.num_channels):
        out = root / f"{name}_dim{k + 1}_{split}.txt"
        lines = []
        for s in dataset.samples:
            vals = " ".join(repr(float(v)) for v in s.channels[k])
            lines.append(f"{dataset.class_names[s.label]} {vals}")
        out.write_text("\n".join(lines) + "\n")
        written.append(out)
    return written


# ---------------------------------------------------------------- long CSV format

CSV_HEADER = ["sample_id", "label", "channel", "t", "value"]


def _sort_ids(ids):
    try:
        return sorted(ids, key=lambda s: (float(s), s))
    except ValueError:
        return sorted(ids)


def load_csv_long(path) -> Dataset:
    """Load a long-format CSV with columns sample_id,label,channel,t,value."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty file", path, 1) from None
        if header != CSV_HEADER:
            raise DataFormatError(f"header must be {','.join(CSV_HEADER)}, got {','.join(header)}", path, 1)
        points: dict[tuple[str, str], dict[float, float]] = defaultdict(dict)
        labels: dict[str, tuple[str, int]] = {}
        channel_names: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise DataFormatError(f"expected 5 fields, got {len(row)}", path, lineno)
            sid, label, chan, t_tok, v_tok = (c.strip() for c in row)
            try:
                t = float(t_tok)
            except ValueError:
                raise DataFormatError(f"non-numeric t {t_tok!r}", path, lineno, 4) from None
            try:
                v = float(v_tok)
            except ValueError:
                raise DataFormatError(f"non-numeric value {v_tok!r}", path, lineno, 5) from None
            if not np.isfinite(v):
                raise DataFormatError("non-finite value", path, lineno, 5)
            prev = labels.setdefault(sid, (label, lineno))
            if _canonical_label(prev[0]) != _canonical_label(label):
                raise DataFormatError(f"sample {sid} relabelled {label!r} (was {prev[0]!r} on line {prev[1]})",
                                      path, lineno, 2)
            series = points[(sid, chan)]
            if t in series:
                raise DataFormatError(f"duplicate t={t_tok} for sample {sid}, channel {chan}", path, lineno, 4)
            series[t] = v
            channel_names.add(chan)
    if not labels:
        raise DataFormatError("no data rows", path)
    chans = sorted(channel_names)
    sids = _sort_ids(labels)
    channels = []
    for sid in sids:
        per = []
        for c in chans:
            if (sid, c) not in points:
                raise DataFormatError(f"sample {sid} has no rows for channel {c}", path)
            series = points[(sid, c)]
            per.append(np.array([series[t] for t in sorted(series)]))
        channels.append(per)
    ids, names = _map_labels([labels[s][0] for s in sids])
    samples = [Sample(ch, y) for ch, y in zip(channels, ids)]
    return Dataset(samples, len(names), chans, f"csv:{path}", names)


def save_csv_long(dataset: Dataset, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for i, s in enumerate(dataset.samples):
            for name, series in zip(dataset.channel_names, s.channels):
                for t, v in enumerate(series):
                    w.writerow([i, dataset.class_names[s.label], name, t, repr(float(v))])
    return path


def load_dataset(path, fmt: str = "auto") -> Dataset:
    p = Path(path)
    if fmt == "auto":
        fmt = "dir" if p.is_dir() else "csv"
    if fmt == "dir":
        return load_multichannel_dir(p)
    if fmt == "csv":
        if not p.is_file():
            raise DataFormatError("file not found", p)
        return load_csv_long(p)
    raise ValueError(f"unknown dataset format {fmt!r}")


# ---------------------------------------------------------------- folds

@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    seed: int
    assignment: tuple[int, ...]  # sample index -> fold id

    def fold(self, f: int) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.assignment) == f)

    def roles(self, f: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(train, validation, test) indices for iteration f: fold f tests,
        the cyclically next fold validates, the rest train."""
        test = self.fold(f)
        val = self.fold((f + 1) % self.n_folds)
        a = np.asarray(self.assignment)
        train = np.flatnonzero((a != f) & (a != (f + 1) % self.n_folds))
        return train, val, test


def _fold_class_counts(class_sizes, n_folds: int) -> np.ndarray:
    """Integer [n_folds, n_classes] counts with row sums floor/ceil(N/F), column
    sums equal to the class sizes, and every entry the floor or ceiling of
    fold_size * class_size / N. Rounded by unit augmenting paths on the
    fractional cells, which always succeed because row and column sums are integral."""
    sizes = np.asarray(class_sizes, dtype=int)
    total = int(sizes.sum())
    fold_sizes = np.full(n_folds, total // n_folds)
    fold_sizes[: total % n_folds] += 1
    prod = np.outer(fold_sizes, sizes)
    counts = prod // total
    fractional = prod % total != 0
    row_need = fold_sizes - counts.sum(1)
    col_need = sizes - counts.sum(0)

    def augment(f, seen):
        # find an alternating path from fold f to a class with unmet need
        for c in np.flatnonzero(fractional[f] & (counts[f] == prod[f] // total)):
            if c in seen:
                continue
            seen.add(c)
            if col_need[c] > 0:
                col_need[c] -= 1
                counts[f, c] += 1
                return True
            for g in np.flatnonzero(counts[:, c] > prod[:, c] // total):
                if g != f and augment(g, seen):
                    counts[g, c] -= 1
                    counts[f, c] += 1
                    return True
        return False

    for f in range(n_folds):
        while row_need[f] > 0:
            if not augment(f, set()):
                raise RuntimeError("fold count rounding failed")  # unreachable for integral margins
            row_need[f] -= 1
    return counts


def stratified_kfold(labels, n_folds: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle each class and split it over the folds so that every fold's
    class count is within one sample of fold_size * class_share."""
    y = labels.labels if isinstance(labels, Dataset) else np.asarray(labels, dtype=int)
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    sizes = [int(np.sum(y == c)) for c in classes]
    for c, n in zip(classes, sizes):
        if n < n_folds:
            raise ValueError(f"class {c} has {n} samples, fewer than n_folds={n_folds}")
    counts = _fold_class_counts(sizes, n_folds)
    assignment = np.full(y.size, -1, dtype=int)
    for j, c in enumerate(classes):
        members = rng.permutation(np.flatnonzero(y == c))
        assignment[members] = np.repeat(np.arange(n_folds), counts[:, j])
    return FoldPlan(n_folds, seed, tuple(int(a) for a in assignment))


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SynthSpec:
    """Class 0: noise around a flat level. Class c > 0: the same plus a ramp
    over the second half whose height is c * ramp_height."""

    num_channels: int = 2
    length: int = 128
    per_class: int = 40
    num_classes: int = 2
    noise: float = 0.1
    ramp_height: float = 1.0

    @property
    def slope_margin(self) -> float:
        return self.ramp_height / (self.length - self.length // 2)


def synth_generate(spec: SynthSpec = SynthSpec(), seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    n = spec.length
    half = n // 2
    ramp = np.zeros(n)
    ramp[half:] = np.arange(1, n - half + 1) / (n - half)
    samples = []
    for c in range(spec.num_classes):
        for _ in range(spec.per_class):
            chans = []
            for _k in range(spec.num_channels):
                level = rng.uniform(-1.0, 1.0)
                x = level + spec.noise * rng.standard_normal(n) + c * spec.ramp_height * ramp
                chans.append(x)
            samples.append(Sample(chans, c))
    order = rng.permutation(len(samples))
    samples = [samples[i] for i in order]
    return Dataset(samples, spec.num_classes, [f"ch{k}" for k in range(spec.num_channels)],
                   f"synth:{spec}:seed={seed}")
