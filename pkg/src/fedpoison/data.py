"""Federation construction: synthetic generators, CSV ingestion, splits.

CSV layout: one UTF-8 file per node named ``node_<id>.csv`` with a header
row ``feature_0,...,feature_{d-1},label`` and an optional trailing
``split`` column holding ``train`` or ``test``.  Ids must be contiguous
from 0.  Features are standardised per node using statistics computed on
the train rows only (never on injected data, which does not exist at load
time anyway); the transform is recorded so test rows and later exports use
the same scaling.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataLoadError, DomainError, ValidationError
from .losses import LossKind, check_label
from .model import NodeDataset, Split


class SourceKind(Enum):
    CSV_DIRECTORY = "csv_directory"
    SYNTHETIC_CLASSIFICATION = "synthetic_classification"
    SYNTHETIC_REGRESSION = "synthetic_regression"


@dataclass
class FederationSource:
    """Recipe for a federation: either a CSV directory or a synthetic draw."""

    kind: SourceKind
    d: int = 16
    m: int = 10
    per_node_n: tuple = (100, 100)
    correlation: float = 0.9
    noise_sigma: float = 0.2
    test_fraction: float = 0.3
    seed: int = 0
    directory: str | None = None
    csv_loss: LossKind = LossKind.HINGE  # loss of a CSV-backed federation

    def __post_init__(self):
        if self.kind is SourceKind.CSV_DIRECTORY:
            if not self.directory:
                raise ValidationError("CSV source needs a directory")
            return
        if self.d < 1 or self.m < 1:
            raise ValidationError("d and m must be >= 1")
        lo, hi = self.per_node_n
        if lo < 2 or hi < lo:
            raise ValidationError("per_node_n must be a (lo, hi) range with lo >= 2")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValidationError("correlation must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValidationError("test_fraction must be in (0, 1)")

    @property
    def loss(self) -> LossKind:
        if self.kind is SourceKind.CSV_DIRECTORY:
            return self.csv_loss
        if self.kind is SourceKind.SYNTHETIC_REGRESSION:
            return LossKind.LEAST_SQUARES
        return LossKind.HINGE


@dataclass
class Federation:
    """Per-node train/test datasets plus bookkeeping."""

    loss: LossKind
    train: list
    test: list
    scalers: list | None = None  # per-node (mean, std) used to standardise
    true_weights: np.ndarray | None = None
    node_names: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.train)

    @property
    def dim(self) -> int:
        return self.train[0].dim

    @property
    def node_ids(self) -> list:
        return [node.node_id for node in self.train]

    def max_row_norm(self) -> float:
        return max(
            float(np.max(np.linalg.norm(node.features, axis=1))) for node in self.train
        )


def split_train_test(node: NodeDataset, fraction: float, seed: int):
    """Disjoint, exhaustive, seeded split of one node's data.

    Classification data (labels all in {-1, +1}) is stratified per class;
    singleton classes stay in the train side.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError("test fraction must be in (0, 1)")
    if node.n < 2:
        raise ValidationError(f"node {node.node_id}: need >= 2 samples to split")
    rng = np.random.default_rng((seed, node.node_id, 0x5B71))
    labels = node.labels
    binary = bool(np.all(np.isin(labels, (-1.0, 1.0))))
    test_idx = []
    if binary:
        for cls in (-1.0, 1.0):
            cls_idx = np.flatnonzero(labels == cls)
            if cls_idx.size == 0:
                continue
            n_test = int(round(fraction * cls_idx.size))
            n_test = min(n_test, cls_idx.size - 1)  # keep >= 1 in train
            if n_test > 0:
                picked = rng.permutation(cls_idx)[:n_test]
                test_idx.extend(picked.tolist())
        if not test_idx:
            raise ValidationError(
                f"node {node.node_id}: too small to stratify a test split"
            )
    else:
        n_test = int(round(fraction * node.n))
        n_test = min(max(n_test, 1), node.n - 1)
        test_idx = rng.permutation(node.n)[:n_test].tolist()
    test_mask = np.zeros(node.n, dtype=bool)
    test_mask[np.asarray(sorted(test_idx), dtype=int)] = True
    train = NodeDataset(
        node.node_id, node.features[~test_mask], labels[~test_mask], Split.TRAIN
    )
    test = NodeDataset(
        node.node_id, node.features[test_mask], labels[test_mask], Split.TEST
    )
    return train, test


def synthesize_federation(source: FederationSource):
    """Draw a synthetic federation with controllable inter-node correlation.

    Every node's ground-truth weight vector is a unit-normalised mix
    ``corr * u + (1 - corr) * v_l`` of a shared direction and a private
    one, so correlation near 1 yields strongly coupled tasks and near 0
    essentially unrelated ones.  Features are standard Gaussian; labels are
    the noisy linear response, passed through sign() for classification.
    """
    if source.kind is SourceKind.CSV_DIRECTORY:
        raise ValidationError("synthesize_federation needs a synthetic source")
    rng = np.random.default_rng((source.seed, 0xFEED))
    d, m = source.d, source.m
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    true_w = np.zeros((d, m))
    train_nodes, test_nodes = [], []
    lo, hi = source.per_node_n
    classification = source.kind is SourceKind.SYNTHETIC_CLASSIFICATION
    for l in range(m):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        w = source.correlation * u + (1.0 - source.correlation) * v
        nrm = np.linalg.norm(w)
        w = u.copy() if nrm == 0.0 else w / nrm
        true_w[:, l] = w
        n = int(rng.integers(lo, hi + 1))
        X = rng.standard_normal((n, d))
        raw = X @ w + source.noise_sigma * rng.standard_normal(n)
        y = np.where(raw >= 0.0, 1.0, -1.0) if classification else raw
        node = NodeDataset(l, X, y, Split.TRAIN)
        train, test = split_train_test(node, source.test_fraction, source.seed)
        train_nodes.append(train)
        test_nodes.append(test)
    return Federation(
        loss=source.loss,
        train=train_nodes,
        test=test_nodes,
        true_weights=true_w,
        node_names=[f"node_{l}" for l in range(m)],
    )


_NODE_FILE = re.compile(r"^node_(\d+)\.csv$")


def _parse_node_csv(path: Path, loss: LossKind):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataLoadError(f"{path.name}: empty file") from None
        header = [h.strip() for h in header]
        has_split = header[-1] == "split"
        feat_cols = header[:-2] if has_split else header[:-1]
        label_col = header[-2] if has_split else header[-1]
        expected = [f"feature_{i}" for i in range(len(feat_cols))]
        if feat_cols != expected or label_col != "label" or not feat_cols:
            raise DataLoadError(
                f"{path.name}: header must be feature_0..feature_k,label[,split]"
            )
        d = len(feat_cols)
        width = d + 1 + (1 if has_split else 0)
        rows, labels, splits = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataLoadError(
                    f"{path.name}: row {line_no} has {len(row)} fields, expected {width}"
                )
            try:
                vals = [float(v) for v in row[: d + 1]]
            except ValueError as exc:
                raise DataLoadError(f"{path.name}: row {line_no}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise DataLoadError(f"{path.name}: row {line_no}: non-finite value")
            try:
                check_label(loss, vals[d])
            except DomainError as exc:
                raise DataLoadError(f"{path.name}: row {line_no}: {exc}") from None
            rows.append(vals[:d])
            labels.append(vals[d])
            if has_split:
                tag = row[d + 1].strip().lower()
                if tag not in ("train", "test"):
                    raise DataLoadError(
                        f"{path.name}: row {line_no}: split must be train or test"
                    )
                splits.append(tag)
        if not rows:
            raise DataLoadError(f"{path.name}: no data rows")
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return X, y, (splits if has_split else None)


def load_csv_federation(directory, loss: LossKind, standardize: bool = True) -> Federation:
    """Load one-file-per-node CSVs, validate and optionally standardise.

    Standardisation statistics come from each node's train rows only and
    the (mean, std) transform is recorded on the federation.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataLoadError(f"{directory}: not a directory")
    found = {}
    for path in directory.iterdir():
        match = _NODE_FILE.match(path.name)
        if match:
            found[int(match.group(1))] = path
    if not found:
        raise DataLoadError(f"{directory}: no node_<id>.csv files")
    m = len(found)
    if sorted(found) != list(range(m)):
        raise DataLoadError(f"{directory}: node ids must be contiguous from 0")
    train_nodes, test_nodes, scalers = [], [], []
    d = None
    for l in range(m):
        X, y, splits = _parse_node_csv(found[l], loss)
        if d is None:
            d = X.shape[1]
        elif X.shape[1] != d:
            raise DataLoadError(
                f"{found[l].name}: dimension {X.shape[1]} != {d} of node_0"
            )
        if splits is None:
            tr_mask = np.ones(len(y), dtype=bool)
        else:
            tr_mask = np.asarray([s == "train" for s in splits])
        if not np.any(tr_mask):
            raise DataLoadError(f"{found[l].name}: node has no train rows")
        X_tr, y_tr = X[tr_mask], y[tr_mask]
        X_te, y_te = X[~tr_mask], y[~tr_mask]
        if standardize:
            mean = X_tr.mean(axis=0)
            std = X_tr.std(axis=0)
            std = np.where(std > 0.0, std, 1.0)
            X_tr = (X_tr - mean) / std
            if len(y_te):
                X_te = (X_te - mean) / std
            scalers.append((mean, std))
        else:
            scalers.append(None)
        train_nodes.append(NodeDataset(l, X_tr, y_tr, Split.TRAIN))
        test_nodes.append(
            NodeDataset(l, X_te, y_te, Split.TEST) if len(y_te) else None
        )
    return Federation(
        loss=loss,
        train=train_nodes,
        test=test_nodes,
        scalers=scalers,
        node_names=[found[l].name for l in range(m)],
    )


def write_csv_federation(federation: Federation, directory) -> list:
    """Write node_<id>.csv files; floats use repr so a reload (with
    standardize=False) reproduces the stored values bit-exactly."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for l, train in enumerate(federation.train):
        test = federation.test[l] if federation.test else None
        path = directory / f"node_{l}.csv"
        d = train.dim
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = [f"feature_{i}" for i in range(d)] + ["label"]
            if test is not None and test.n:
                header.append("split")
            writer.writerow(header)
            for split_tag, ds in (("train", train), ("test", test)):
                if ds is None or ds.n == 0:
                    continue
                for i in range(ds.n):
                    row = [repr(float(v)) for v in ds.features[i]]
                    row.append(repr(float(ds.labels[i])))
                    if len(header) == d + 2:
                        row.append(split_tag)
                    writer.writerow(row)
        written.append(path)
    return written


def build_federation(source: FederationSource) -> Federation:
    """Dispatch on the source kind."""
    if source.kind is SourceKind.CSV_DIRECTORY:
        return load_csv_federation(source.directory, source.loss)
    return synthesize_federation(source)
