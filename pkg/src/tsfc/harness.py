"""Training loop, evaluation, repeated cross-validation and checkpoints."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, ShapeError, Tensor
from .data import Dataset, stratified_kfold
from .encoding import EncodingConfig, encode_sample
from .model import ArchDescriptor, ModelParams, arch_from_name, forward, init_params

log = logging.getLogger(__name__)

PROFILES = {
    "wafer": {"lr": 0.0023, "arch": "wafer"},
    "cpx": {"lr": 3e-4, "arch": "cpx"},
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 3e-4
    seed: int = 0
    method: str = "gadf"
    arch: str = "cpx"
    pooling: str = "attention"
    n_folds: int = 5
    n_runs: int = 20
    image_size: int = 64
    mtf_bins: int = 8
    range_tag: str = "symmetric"
    dtype: str = "float32"
    batch_size: int = 1

    def __post_init__(self):
        if self.batch_size != 1:
            raise ValueError("batch_size is fixed at 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")

    @classmethod
    def from_profile(cls, profile: str, **overrides) -> TrainConfig:
        base = dict(PROFILES.get(profile, {}))
        base.update(overrides)
        return cls(**base)

    @property
    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.image_size, self.mtf_bins, self.range_tag)


class EncodedDataset:
    """Lazily encoded images per sample, cached, with an access log."""

    def __init__(self, dataset: Dataset, method: str, config: EncodingConfig,
                 channel_order=None):
        self.dataset = dataset
        self.method = method
        self.config = config
        self.channel_order = list(channel_order) if channel_order is not None else None
        self._cache: dict[int, np.ndarray] = {}
        self.accessed: set[int] = set()

    def __len__(self) -> int:
        return len(self.dataset)

    @property
    def num_channels(self) -> int:
        return self.dataset.num_channels

    def label(self, i: int) -> int:
        return self.dataset.samples[i].label

    def images(self, i: int) -> np.ndarray:
        i = int(i)
        self.accessed.add(i)
        if i not in self._cache:
            self._cache[i] = encode_sample(self.dataset.samples[i].channels, self.method, self.config)
        imgs = self._cache[i]
        return imgs[self.channel_order] if self.channel_order is not None else imgs

    def with_channel_order(self, order) -> EncodedDataset:
        view = EncodedDataset(self.dataset, self.method, self.config, order)
        view._cache = self._cache
        view.accessed = self.accessed
        return view


@dataclass
class Checkpoint:
    config: TrainConfig
    params: ModelParams
    best_val_acc: float
    epoch: int
    train_losses: list[float] = field(default_factory=list)
    val_accs: list[float] = field(default_factory=list)


def _sample_loss(params: ModelParams, images: np.ndarray, label: int) -> Tensor:
    return ad.cross_entropy(forward(images, params).logits, label)


def accuracy(params: ModelParams, data: EncodedDataset, indices) -> float:
    indices = list(indices)
    if not indices:
        return 0.0
    hits = sum(int(np.argmax(forward(data.images(i), params).logits.data)) == data.label(i) for i in indices)
    return hits / len(indices)


def train(data: EncodedDataset, train_idx, val_idx, config: TrainConfig, init_seed: int | None = None) -> Checkpoint:
    """Adam with batch size 1; keeps the epoch with the best validation accuracy."""
    ds = data.dataset
    seed = config.seed if init_seed is None else init_seed
    params = init_params(arch_from_name(config.arch), config.pooling, ds.num_channels, ds.num_classes,
                         seed=seed, image_size=config.image_size, dtype=np.dtype(config.dtype))
    opt = ad.Adam(params.parameters(), lr=config.lr)
    train_idx = np.asarray(train_idx, dtype=int)
    best = params.copy()
    best_acc, best_epoch = -1.0, 0
    losses, accs = [], []
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([seed, epoch]).permutation(train_idx)
        total = 0.0
        for i in order:
            loss = _sample_loss(params, data.images(i), data.label(i))
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}, sample {int(i)}")
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            total += value
        losses.append(total / max(len(order), 1))
        acc = accuracy(params, data, val_idx)
        accs.append(acc)
        if acc > best_acc:
            best_acc, best_epoch = acc, epoch
            best = params.copy()
        log.debug("epoch %d loss %.4f val_acc %.3f", epoch, losses[-1], acc)
    return Checkpoint(config, best, best_acc, best_epoch, losses, accs)


def error_rate(predictions, labels) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.size == 0:
        raise ValueError("no samples to score")
    return 100.0 * float(np.mean(p != y))


def predict_all(params: ModelParams, data: EncodedDataset, indices) -> np.ndarray:
    return np.array([int(np.argmax(forward(data.images(i), params).logits.data)) for i in indices], dtype=int)


def evaluate(ckpt: Checkpoint, data: EncodedDataset, indices=None) -> float:
    """Test error in percent (argmax-logit decisions)."""
    if data.num_channels != ckpt.params.num_channels:
        raise ShapeError(f"checkpoint expects {ckpt.params.num_channels} channels, data has {data.num_channels}")
    indices = range(len(data)) if indices is None else indices
    indices = [int(i) for i in indices]
    preds = predict_all(ckpt.params, data, indices)
    return error_rate(preds, [data.label(i) for i in indices])


# ---------------------------------------------------------------- cross-validation

@dataclass(frozen=True)
class Cell:
    fold: int
    run: int
    error_pct: float
    best_epoch: int


@dataclass
class RunResult:
    cells: list[Cell]
    wall_time: float = 0.0
    checkpoints: dict[tuple[int, int], Checkpoint] = field(default_factory=dict)  # (fold, run) -> best model

    @property
    def errors(self) -> np.ndarray:
        return np.array([c.error_pct for c in self.cells])

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std(self) -> float:
        e = self.errors
        return float(np.std(e, ddof=1)) if e.size > 1 else 0.0

    @property
    def best_epochs(self) -> list[int]:
        return [c.best_epoch for c in self.cells]

    def summary(self) -> str:
        return f"mean error: {self.mean:.2f}% +- {self.std:.2f}% over {len(self.cells)} cells"

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "run", "error_pct", "best_epoch"])
            for c in self.cells:
                w.writerow([c.fold, c.run, repr(c.error_pct), c.best_epoch])
        return path


def cell_seeds(config: TrainConfig, run: int, fold: int) -> tuple[int, int]:
    """(fold-plan seed, init/shuffle seed) for one fold x run cell."""
    fold_seed = config.seed + run
    init_seed = int(np.random.SeedSequence([fold_seed, fold]).generate_state(1)[0])
    return fold_seed, init_seed


def cell_roles(dataset: Dataset, config: TrainConfig, run: int, fold: int):
    """(train, validation, test) indices of one cell."""
    fold_seed, _ = cell_seeds(config, run, fold)
    return stratified_kfold(dataset, config.n_folds, fold_seed).roles(fold)


def run_cell(dataset: Dataset, config: TrainConfig, run: int, fold: int,
             data: EncodedDataset | None = None) -> tuple[Cell, Checkpoint]:
    data = data or EncodedDataset(dataset, config.method, config.encoding)
    _, init_seed = cell_seeds(config, run, fold)
    tr, va, te = cell_roles(dataset, config, run, fold)
    ckpt = train(data, tr, va, config, init_seed=init_seed)
    err = evaluate(ckpt, data, te)
    return Cell(fold, run, err, ckpt.epoch), ckpt


def _cell_job(args):
    dataset, config, run, fold, keep = args
    cell, ck = run_cell(dataset, config, run, fold)
    return cell, (ck if keep else None)


def cross_validate(dataset: Dataset, config: TrainConfig, jobs: int = 1, progress=None,
                   keep_checkpoints: bool = False) -> RunResult:
    """Mean test error over n_runs x n_folds cells; run r refolds with seed+r."""
    start = time.perf_counter()
    keys = [(r, f) for r in range(config.n_runs) for f in range(config.n_folds)]
    kept = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_job, [(dataset, config, r, f, keep_checkpoints) for r, f in keys]))
        cells = [c for c, _ in results]
        kept = {(c.fold, c.run): ck for c, ck in results if ck is not None}
    else:
        data = EncodedDataset(dataset, config.method, config.encoding)
        cells = []
        for r, f in keys:
            cell, ck = run_cell(dataset, config, r, f, data)
            cells.append(cell)
            if keep_checkpoints:
                kept[(f, r)] = ck
            if progress:
                progress(cell)
    cells.sort(key=lambda c: (c.fold, c.run))
    return RunResult(cells, time.perf_counter() - start, kept)


# ---------------------------------------------------------------- checkpoint files

MAGIC = "TSFC-CHECKPOINT"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class UnsupportedVersionError(CheckpointFormatError):
    pass


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Magic/version line, one-line JSON manifest, then little-endian float32 payload."""
    p = ckpt.params
    entries, blobs, offset = [], [], 0
    for name, t in p.tensors.items():
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        blobs.append(arr.tobytes())
        offset += arr.size
    manifest = {
        "config": asdict(ckpt.config),
        "arch": asdict(p.arch),
        "pooling_mode": p.pooling_mode,
        "num_channels": p.num_channels,
        "num_classes": p.num_classes,
        "image_size": p.image_size,
        "best_val_acc": ckpt.best_val_acc,
        "epoch": ckpt.epoch,
        "tensors": entries,
    }
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(f"{MAGIC} {VERSION}\n".encode())
        fh.write(json.dumps(manifest, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    first = raw.find(b"\n")
    head = raw[:first].decode("ascii", errors="replace").split() if first >= 0 else []
    if len(head) != 2 or head[0] != MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file (bad magic)")
    try:
        version = int(head[1])
    except ValueError:
        raise CheckpointFormatError(f"{path}: bad version field {head[1]!r}") from None
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version} unsupported (expected {VERSION})")
    second = raw.find(b"\n", first + 1)
    if second < 0:
        raise CheckpointFormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[first + 1:second])
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"{path}: corrupt manifest ({exc})") from None
    payload = raw[second + 1:]
    entries = manifest["tensors"]
    total = sum(e["count"] for e in entries)
    if len(payload) != 4 * total:
        raise CheckpointFormatError(f"{path}: payload has {len(payload)} bytes, manifest needs {4 * total}")
    values = np.frombuffer(payload, dtype="<f4")
    tensors = {}
    for e in entries:
        shape = tuple(e["shape"])
        if int(np.prod(shape)) != e["count"]:
            raise CheckpointFormatError(f"{path}: tensor {e['name']} shape {shape} != count {e['count']}")
        arr = values[e["offset"]:e["offset"] + e["count"]].astype(np.float32).reshape(shape)
        tensors[e["name"]] = Tensor(arr, requires_grad=True)
    arch_d = manifest["arch"]
    arch = ArchDescriptor(**{**arch_d, "conv1": tuple(arch_d["conv1"]), "conv2": tuple(arch_d["conv2"])})
    params = ModelParams(arch, manifest["pooling_mode"], manifest["num_channels"], manifest["num_classes"],
                         manifest["image_size"], tensors)
    expected = init_params(arch, params.pooling_mode, params.num_channels, params.num_classes, 0,
                           params.image_size)
    for name, t in expected.tensors.items():
        if name not in tensors or tensors[name].shape != t.shape:
            got = tensors[name].shape if name in tensors else None
            raise CheckpointFormatError(f"{path}: tensor {name} has shape {got}, architecture needs {t.shape}")
    config = TrainConfig(**manifest["config"])
    return Checkpoint(config, params, manifest["best_val_acc"], manifest["epoch"])


def checkpoint_equal(a: Checkpoint, b: Checkpoint) -> bool:
    if a.params.tensors.keys() != b.params.tensors.keys():
        return False
    return all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params.tensors)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
