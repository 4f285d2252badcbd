"""Datasets, standardization and train/test split generators."""
import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingValue, ParseError


@dataclass(frozen=True)
class Dataset:
    name: str
    x: np.ndarray
    y: np.ndarray
    feature_names: tuple = ()

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def d(self):
        return self.x.shape[1]


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    test: np.ndarray
    kind: str = "standard"  # "standard", "gap" or "toy"
    index: int = 0
    seed: object = None
    gap_dim: object = None


@dataclass(frozen=True)
class Manifest:
    name: str
    path: str
    target_col: int
    has_header: bool = False
    n_splits: int = 20

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
        missing = {"name", "path", "target_col"} - obj.keys()
        if missing:
            raise ConfigError(f"manifest {path} lacks {sorted(missing)}")
        data_path = Path(obj["path"])
        if not data_path.is_absolute():
            data_path = path.parent / data_path
        return cls(
            obj["name"], str(data_path), int(obj["target_col"]), bool(obj.get("has_header", False)),
            int(obj.get("n_splits", 20)),
        )


def data_dir():
    """Dataset root: ``$NLB_DATA_DIR`` or the ``data/`` directory of the source checkout."""
    env = os.environ.get("NLB_DATA_DIR")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data"


def find_manifest(name):
    path = data_dir() / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"no manifest for dataset {name!r} at {path}")
    return Manifest.load(path)


def load_csv(path, manifest):
    """Parse a numeric CSV; the manifest names the target column."""
    if isinstance(manifest, dict):
        manifest = Manifest(
            manifest.get("name", Path(path).stem), str(path), int(manifest["target_col"]),
            bool(manifest.get("has_header", False)), int(manifest.get("n_splits", 20)),
        )
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    header = ()
    if manifest.has_header and rows:
        header, rows = tuple(c.strip() for c in rows[0]), rows[1:]
    if not rows:
        raise ParseError(f"{path} contains no data rows")
    ncol = len(rows[0])
    if not 0 <= manifest.target_col < ncol:
        raise ConfigError(f"target column {manifest.target_col} out of range for {ncol} columns")
    first_row = 2 if header else 1
    values = np.empty((len(rows), ncol))
    for i, row in enumerate(rows):
        if len(row) != ncol:
            raise ParseError(f"expected {ncol} fields, found {len(row)}", row=i + first_row, col=None)
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.lower() in ("na", "nan", "?"):
                raise MissingValue("missing value", row=i + first_row, col=j + 1)
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", row=i + first_row, col=j + 1) from None
    keep = [j for j in range(ncol) if j != manifest.target_col]
    names = tuple(header[j] for j in keep) if header else ()
    return Dataset(manifest.name, values[:, keep], values[:, manifest.target_col], names)


def load_dataset(name_or_manifest):
    m = name_or_manifest
    if isinstance(m, (str, os.PathLike)):
        m = Manifest.load(m) if str(m).endswith(".json") else find_manifest(str(m))
    return load_csv(m.path, m), m


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    @classmethod
    def fit(cls, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape[0] == 0:
            raise ValueError("cannot standardize an empty training set")
        xs = x.std(axis=0)
        xs = np.where(xs > 0, xs, 1.0)
        ys = float(y.std())
        return cls(x.mean(axis=0), xs, float(y.mean()), ys if ys > 0 else 1.0)

    def apply_x(self, x):
        return (np.asarray(x, dtype=float) - self.x_mean) / self.x_std

    def apply_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def unapply_x(self, z):
        return np.asarray(z) * self.x_std + self.x_mean

    def unapply_y(self, z):
        return np.asarray(z) * self.y_std + self.y_mean

    def log_density_to_original(self, ll):
        """Convert log densities of standardized targets to original units."""
        return np.asarray(ll) - math.log(self.y_std)


def standard_splits(n, n_splits=20, test_fraction=0.1, seed=0):
    if n < 10:
        raise ValueError("standard splits need n >= 10")
    n_test = int(round(test_fraction * n))
    splits = []
    for i in range(n_splits):
        perm = np.random.default_rng([seed, i]).permutation(n)
        splits.append(Split(np.sort(perm[n_test:]), np.sort(perm[:n_test]), "standard", i, seed))
    return splits


def gap_splits(x):
    """One split per input dimension: the middle third along that dimension is the test set."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n, d = x.shape
    splits = []
    for j in range(d):
        order = np.argsort(x[:, j], kind="stable")
        test = order[n // 3 : (2 * n) // 3]
        train = np.concatenate([order[: n // 3], order[(2 * n) // 3 :]])
        splits.append(Split(np.sort(train), np.sort(test), "gap", j, None, j))
    return splits


def validation_split(n_train, seed, fraction=0.2):
    """Seeded ``(fit_idx, val_idx)`` partition of ``range(n_train)`` with ``floor(fraction * n)`` held out."""
    n_val = int(math.floor(fraction * n_train))
    perm = np.random.default_rng(seed).permutation(n_train)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _sample_toy_x(rng, n):
    u = rng.uniform(0.0, 4.0, size=n)
    return np.where(u < 2.0, -4.0 + u, u)


def toy_dataset(seed=0, n_train=100, n_test=100, noise_std=3.0):
    """Cubic toy problem ``y = x^3 + eps`` with x uniform on ``[-4, -2] U [2, 4]``."""
    rng = np.random.default_rng(seed)
    x = _sample_toy_x(rng, n_train + n_test)
    y = x**3 + rng.normal(0.0, noise_std, size=x.size)
    train = Dataset("toy", x[:n_train].reshape(-1, 1), y[:n_train])
    test = Dataset("toy", x[n_train:].reshape(-1, 1), y[n_train:])
    return train, test


def toy_grid(lo=-6.0, hi=6.0, step=0.05):
    n = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, n)
