"""Experiment orchestration: per-split tuning, training, evaluation and persistence."""
import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import baselines
from . import bayes_linear as bl
from . import evalstats
from .bayesopt import Dimension, SearchSpace, bo_minimize_negative
from .data import (
    Standardizer,
    find_manifest,
    gap_splits,
    load_csv,
    standard_splits,
    toy_dataset,
    toy_grid,
    validation_split,
)
from .errors import ConfigError, NonFiniteObjective, NotPositiveDefinite, PairingError
from .mlp import forward_output
from .slicesample import PredictiveMixture, SliceConfig, marginalize_head, mixture_predict, point_head
from .training import (
    BnConfig,
    MapConfig,
    RegConfig,
    TrainingData,
    config_to_json,
    gamma_from_log_prior_var,
    lr_grid,
    max_map_epochs,
    select_lr_grid,
    train_bn,
    train_map,
    train_reg_nl,
)

logger = logging.getLogger(__name__)

FAMILIES = ("map", "map-nl", "reg-nl", "bn-ml-nl", "bn-bo-nl", "mfvi", "mcd")
MODEL_TAGS = tuple(f"{f}-{d}" for f in FAMILIES for d in (1, 2))
HEAD_FAMILIES = ("map-nl", "reg-nl", "bn-ml-nl", "bn-bo-nl")
PHASES = {"val": 1, "train": 2, "bo": 3, "slice": 4, "predict": 5, "toy": 6}
RECORDS_FILE = "records.jsonl"
HEAD_SLICE = SliceConfig(step_width=1.0, max_stepout=10, n_samples=200, n_burnin=20)


def parse_model(tag):
    """``"bn-ml-nl-2"`` -> ``("bn-ml-nl", (50, 50))``."""
    family, _, depth = tag.rpartition("-")
    if family not in FAMILIES or depth not in ("1", "2"):
        raise ConfigError(f"unknown model tag {tag!r}; expected one of {', '.join(MODEL_TAGS)}")
    return family, (50,) * int(depth)


def stream(seed, split, phase):
    """Independent seed for one (split, phase) pair of a run."""
    return np.random.SeedSequence([int(seed), int(split), PHASES[phase]])


@dataclass
class ExperimentConfig:
    model: str
    dataset: str
    splits: tuple = None  # None: all splits the generator produces
    gap: bool = False
    tune: bool = True
    slice: bool = True
    seed: int = 0
    bo_iters: int = 50
    out: str = None
    workers: int = 1

    def __post_init__(self):
        parse_model(self.model)
        if self.bo_iters < 0:
            raise ConfigError("bo_iters must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.dataset == "toy" and self.gap:
            raise ConfigError("the toy dataset has no gap splits")
        if self.splits is not None:
            self.splits = tuple(int(s) for s in self.splits)
            if any(s < 0 for s in self.splits):
                raise ConfigError("split indices must be non-negative")

    def to_json(self):
        d = asdict(self)
        d["splits"] = list(self.splits) if self.splits is not None else None
        return d

    @classmethod
    def from_json(cls, obj):
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class ResultRecord:
    config: dict
    dataset: str
    model: str
    tuned: bool
    slice: bool
    split: int
    seed: int
    split_kind: str = "standard"
    failed: bool = False
    error: str = None
    test_ll: float = None
    test_rmse: float = None
    train_ll: float = None
    train_rmse: float = None
    pre_retrain: dict = None
    hyperparameters: dict = None
    slice_summary: dict = None
    bo: dict = None
    curve: dict = None
    seconds: float = 0.0
    version: str = __version__

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        return cls(**obj)

    def metric_values(self):
        return tuple(getattr(self, k) for k in evalstats.METRIC_KEYS)


@dataclass
class SplitData:
    """Standardized train/test arrays of one split plus the scaler."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    scaler: Standardizer
    kind: str
    index: int


def _split_data(x_tr, y_tr, x_te, y_te, kind, index):
    sc = Standardizer.fit(x_tr, y_tr)
    return SplitData(sc.apply_x(x_tr), sc.apply_y(y_tr), sc.apply_x(x_te), sc.apply_y(y_te), sc, kind, index)


def prepare_splits(config):
    """Materialize the requested splits; raises ConfigError on bad indices or datasets."""
    if config.dataset == "toy":
        train, test = toy_dataset(config.seed)
        wanted = config.splits or (0,)
        if tuple(wanted) != (0,):
            raise ConfigError("the toy dataset has a single split, index 0")
        return [_split_data(train.x, train.y, test.x, test.y, "toy", 0)]
    manifest = find_manifest(config.dataset)
    ds = load_csv(manifest.path, manifest)
    splits = gap_splits(ds.x) if config.gap else standard_splits(ds.n, manifest.n_splits, seed=config.seed)
    wanted = config.splits if config.splits is not None else tuple(range(len(splits)))
    bad = [s for s in wanted if s >= len(splits)]
    if bad:
        raise ConfigError(f"split indices {bad} out of range: {config.dataset} has {len(splits)} splits")
    return [
        _split_data(ds.x[splits[i].train], ds.y[splits[i].train], ds.x[splits[i].test], ds.y[splits[i].test],
                    splits[i].kind, i)
        for i in wanted
    ]


# Prediction -----------------------------------------------------------------


@dataclass
class Fitted:
    """Trained model ready for prediction in standardized units."""

    family: str
    model: object
    mixture: object = None  # HeadMixture for neural linear models

    def predictive(self, x, seed):
        if self.mixture is not None:
            return self.mixture.predict(x)
        if self.family == "map":
            mean = forward_output(self.model.params, x)
            return PredictiveMixture(mean[None, :], np.full((1, mean.size), self.model.head.sigma2))
        if self.family == "mfvi":
            return baselines.mfvi_predict(self.model, x, 100, seed)
        return baselines.mcd_predict(self.model, x, 100, seed)


def evaluate(fitted, x, y, scaler, seed):
    """Average log likelihood and RMSE in original target units."""
    ll, mean, _ = mixture_predict(fitted.predictive(x, seed), y)
    ll = scaler.log_density_to_original(ll)
    return evalstats.metrics(ll, scaler.unapply_y(mean), scaler.unapply_y(y))


def _attach_head(family, trained, x, y, use_slice, seed):
    if family not in HEAD_FAMILIES:
        return Fitted(family, trained)
    try:
        mix = marginalize_head(trained, (x, y), HEAD_SLICE, seed) if use_slice else point_head(trained, (x, y))
    except NotPositiveDefinite as exc:
        raise NonFiniteObjective(f"head posterior failed: {exc}") from exc
    return Fitted(family, trained, mix)


def _val_ll(family, trained, fit, val, use_slice=False, seed=None):
    """Validation log likelihood (standardized units) of the predictor that will be deployed.

    With ``use_slice`` the head is slice-marginalized here too; scoring the point
    head instead lets tuning pick overfit features whose only safeguard is a
    noise prior that the sampler then discards.
    """
    if family == "map" or (family in ("reg-nl", "bn-ml-nl", "bn-bo-nl") and not use_slice):
        return trained.val_ll
    fitted = _attach_head(family, trained, fit.x, fit.y, use_slice, seed)
    return float(np.mean(mixture_predict(fitted.predictive(val.x, None), val.y)[0]))


# Per-family default and tuned configurations --------------------------------


def default_config(family, hidden, n):
    if family in ("map", "map-nl"):
        return MapConfig(gamma=0.5, lr_weights=1e-3, lr_noise=1e-3, epochs=max_map_epochs(n), hidden=hidden)
    if family == "reg-nl":
        return RegConfig(gamma_w=0.5, gamma_b=0.5, lr_theta=1e-3, lr_sigma=1e-3, epochs=5000, hidden=hidden)
    if family == "bn-ml-nl":
        return BnConfig(lr=1e-3, max_epochs=5000, optimize_prior=True, early_stopping=False, hidden=hidden)
    if family == "bn-bo-nl":
        return BnConfig(lr=1e-3, max_epochs=5000, optimize_prior=False, early_stopping=False, hidden=hidden)
    return None


def search_space(family, n):
    lr = ("log", 1e-4, 1e-2)
    if family in ("map", "map-nl"):
        return SearchSpace((
            Dimension("log_prior_var", -5.0, 5.0),
            Dimension("lr_weights", lr[1], lr[2], "log"),
            Dimension("lr_noise", lr[1], lr[2], "log"),
            Dimension("epochs", 1.0, float(max_map_epochs(n))),
        ))
    if family == "reg-nl":
        return SearchSpace((
            Dimension("log_prior_var_w", -10.0, 10.0),
            Dimension("log_prior_var_b", -10.0, 10.0),
            Dimension("lr_theta", lr[1], lr[2], "log"),
            Dimension("lr_sigma", lr[1], lr[2], "log"),
            Dimension("epochs", 0.0, 5000.0),
        ))
    if family == "bn-bo-nl":
        return SearchSpace((
            Dimension("a0", 1e-3, 20.0),
            Dimension("b0", 1e-3, 10.0),
            Dimension("log_alpha_w", -10.0, 10.0),
            Dimension("log_alpha_b", -10.0, 10.0),
            Dimension("lr", lr[1], lr[2], "log"),
            Dimension("epochs", 0.0, 5000.0),
        ))
    raise ConfigError(f"{family} is not tuned by Bayesian optimization")


def default_point(family, n):
    if family in ("map", "map-nl"):
        return {"log_prior_var": 0.0, "lr_weights": 1e-3, "lr_noise": 1e-3, "epochs": float(max_map_epochs(n))}
    if family == "reg-nl":
        return {"log_prior_var_w": 0.0, "log_prior_var_b": 0.0, "lr_theta": 1e-3, "lr_sigma": 1e-3, "epochs": 5000.0}
    return {"a0": 1.0, "b0": 1.0, "log_alpha_w": 0.0, "log_alpha_b": 0.0, "lr": 1e-3, "epochs": 5000.0}


def config_from_point(family, hidden, point):
    epochs = int(round(point["epochs"]))
    if family in ("map", "map-nl"):
        return MapConfig(
            gamma=gamma_from_log_prior_var(point["log_prior_var"]), lr_weights=point["lr_weights"],
            lr_noise=point["lr_noise"], epochs=max(epochs, 1), hidden=hidden,
        )
    if family == "reg-nl":
        return RegConfig(
            gamma_w=gamma_from_log_prior_var(point["log_prior_var_w"]),
            gamma_b=gamma_from_log_prior_var(point["log_prior_var_b"]),
            lr_theta=point["lr_theta"], lr_sigma=point["lr_sigma"], epochs=epochs, hidden=hidden,
        )
    prior = bl.NigPrior(
        math.exp(point["log_alpha_w"]), math.exp(point["log_alpha_b"]), max(point["a0"], 1e-3), max(point["b0"], 1e-3)
    )
    return BnConfig(lr=point["lr"], max_epochs=epochs, prior=prior, optimize_prior=False, early_stopping=False,
                    hidden=hidden)


def train_with(family, data, config, seed):
    if family in ("map", "map-nl"):
        return train_map(data, config, seed)
    if family == "reg-nl":
        return train_reg_nl(data, config, seed)
    return train_bn(data, config, seed)


def _head_json(head):
    return {k: float(v) for k, v in asdict(head).items()}


# Per-split pipeline ---------------------------------------------------------


def run_split(config, sd):
    """Tune (optional), train, attach the head and evaluate one split."""
    family, hidden = parse_model(config.model)
    seed_train = stream(config.seed, sd.index, "train")
    seed_predict = stream(config.seed, sd.index, "predict")
    full = TrainingData(sd.x_train, sd.y_train)
    n = full.n
    hyper = {}
    bo_json = None
    pre = None

    if family == "mfvi":
        model, _ = baselines.mfvi_train(full, seed_train, hidden)
        hyper = {"log_sigma2": model.log_sigma2}
    elif family == "mcd":
        model = baselines.mcd_train(full, seed_train, hidden)
        hyper = {"log_sigma2": model.log_sigma2, "dropout_p": model.dropout_p, "weight_decay": model.weight_decay}
    elif not config.tune:
        cfg = default_config(family, hidden, n)
        model = train_with(family, full, cfg, seed_train)
        hyper = {"config": config_to_json(cfg)}
    else:
        fit_idx, val_idx = validation_split(n, stream(config.seed, sd.index, "val"))
        fit = TrainingData(sd.x_train[fit_idx], sd.y_train[fit_idx], sd.x_train[val_idx], sd.y_train[val_idx])
        val = TrainingData(fit.x_val, fit.y_val)
        if family == "bn-ml-nl":
            template = BnConfig(optimize_prior=True, early_stopping=True, hidden=hidden)
            best, lr = select_lr_grid(fit, template, seed_train, lr_grid())
            cfg = replace(template, lr=lr, max_epochs=best.best_epoch, early_stopping=False)
            hyper = {"lr": lr, "best_epoch": best.best_epoch, "val_ll": best.val_ll}
        else:
            space = search_space(family, fit.n)
            use_slice = config.slice and family in HEAD_FAMILIES
            seed_slice = stream(config.seed, sd.index, "slice")
            kept = {}

            def objective(point):
                trained = train_with(family, fit, config_from_point(family, hidden, point), seed_train)
                value = _val_ll(family, trained, fit, val, use_slice, seed_slice)
                if np.isfinite(value) and value > kept.get("value", -np.inf):
                    kept.update(value=value, model=trained)
                return value

            result = bo_minimize_negative(
                objective, space, n_iter=config.bo_iters, n_random=10,
                seed=stream(config.seed, sd.index, "bo"), initial_points=[default_point(family, fit.n)],
            )
            if result.best_point is None:
                raise NonFiniteObjective("every Bayesian optimization evaluation failed")
            best = kept["model"]
            cfg = config_from_point(family, hidden, result.best_point)
            bo_json = result.to_json()
            hyper = {"point": result.best_point, "val_ll": result.best_value}
        hyper["config"] = config_to_json(cfg)
        deployed = config.slice and family in HEAD_FAMILIES
        pre_fitted = _attach_head(family, best, fit.x, fit.y, deployed, stream(config.seed, sd.index, "slice"))
        pre_ll, pre_rmse = evaluate(pre_fitted, sd.x_test, sd.y_test, sd.scaler, seed_predict)
        pre = {"test_ll": pre_ll, "test_rmse": pre_rmse}
        model = train_with(family, full, cfg, seed_train)

    if hasattr(model, "head"):
        hyper["head"] = _head_json(model.head)
    use_slice = config.slice and family in HEAD_FAMILIES
    fitted = _attach_head(family, model, sd.x_train, sd.y_train, use_slice, stream(config.seed, sd.index, "slice"))
    test_ll, test_rmse = evaluate(fitted, sd.x_test, sd.y_test, sd.scaler, seed_predict)
    train_ll, train_rmse = evaluate(fitted, sd.x_train, sd.y_train, sd.scaler, seed_predict)
    for name, v in (("test", test_ll), ("train", train_ll)):
        if not np.isfinite(v):
            raise NonFiniteObjective(f"{name} log likelihood is {v}")

    curve = None
    if sd.kind == "toy":
        grid = toy_grid()
        _, mean, var = mixture_predict(fitted.predictive(sd.scaler.apply_x(grid.reshape(-1, 1)), seed_predict), 0.0)
        curve = {
            "x": grid.tolist(),
            "mean": sd.scaler.unapply_y(mean).tolist(),
            "std": (np.sqrt(var) * sd.scaler.y_std).tolist(),
        }
    return {
        "test_ll": test_ll, "test_rmse": test_rmse, "train_ll": train_ll, "train_rmse": train_rmse,
        "pre_retrain": pre, "hyperparameters": hyper,
        "slice_summary": fitted.mixture.summary() if use_slice else None, "bo": bo_json, "curve": curve,
    }


def _run_one(args):
    config, sd = args
    t0 = time.perf_counter()
    rec = ResultRecord(
        config.to_json(), config.dataset, config.model, config.tune, config.slice, sd.index, config.seed, sd.kind
    )
    try:
        for k, v in run_split(config, sd).items():
            setattr(rec, k, v)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - one split's failure must not end the run
        logger.warning("split %d of %s/%s failed: %s", sd.index, config.dataset, config.model, exc)
        rec.failed = True
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.seconds = time.perf_counter() - t0
    return rec


def run_experiment(config):
    """Run every requested split; failed splits are recorded, not raised."""
    splits = prepare_splits(config)
    jobs = [(config, sd) for sd in splits]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, len(jobs))) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    if config.out:
        append_records(records, Path(config.out) / RECORDS_FILE)
    return records


# Persistence and emission ---------------------------------------------------


def to_jsonable(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return to_jsonable(obj.item())
    return obj


def append_records(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(to_jsonable(r.to_json()), sort_keys=True) + "\n")


def load_records(path):
    path = Path(path)
    if path.is_dir():
        path = path / RECORDS_FILE
    with open(path, encoding="utf-8") as fh:
        return [ResultRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def write_toy_curves(records, path):
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "x", "mean", "std"])
        for r in records:
            if r.curve is None:
                continue
            for x, m, s in zip(r.curve["x"], r.curve["mean"], r.curve["std"]):
                w.writerow([r.model, x, m, s])
                rows += 1
    return rows


def emit(records, what, out_dir):
    """Write CSV/JSON artifacts for ``what`` in tables, diffs, ranks, toy-curves; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if what == "tables":
        p = out / "metrics.csv"
        evalstats.write_metric_csv(evalstats.aggregate(records), p)
        paths.append(p)
    elif what == "diffs":
        for flag in ("tuned", "slice"):
            p = out / f"diffs_{flag}.csv"
            evalstats.write_diff_csv(evalstats.paired_differences(records, flag), flag, p)
            paths.append(p)
    elif what == "ranks":
        for metric in ("test_ll", "test_rmse"):
            p = out / f"ranks_{metric}.json"
            evalstats.write_json(to_jsonable(evalstats.rank_records(records, metric).to_json()), p)
            paths.append(p)
    elif what == "toy-curves":
        p = out / "toy_curves.csv"
        write_toy_curves(records, p)
        paths.append(p)
    else:
        raise ConfigError(f"unknown emit target {what!r}")
    return paths


def compare(records_a, records_b, alpha=0.05):
    """Per (dataset, model) Wilcoxon verdicts of run ``a`` against run ``b``.

    Verdict ``I`` means ``a`` is significantly better. Fewer than 5 pairs
    yields verdict ``None``.
    """
    def index(records):
        out = {}
        for r in records:
            if not r.failed:
                out.setdefault((r.dataset, r.model), {})[(r.split, r.seed)] = r
        return out

    ia, ib = index(records_a), index(records_b)
    if ia.keys() != ib.keys():
        raise PairingError(f"runs cover different models: {sorted(ia.keys() ^ ib.keys())}")
    table = {}
    for key in sorted(ia):
        if ia[key].keys() != ib[key].keys():
            raise PairingError(f"{key}: runs cover different splits")
        pairs = sorted(ia[key])
        row = {"n": len(pairs)}
        for metric, higher in (("test_ll", True), ("test_rmse", False)):
            a = [getattr(ia[key][p], metric) for p in pairs]
            b = [getattr(ib[key][p], metric) for p in pairs]
            if len(pairs) < 5:
                row[metric] = {"verdict": None, "p_value": None}
            else:
                res = evalstats.wilcoxon_signed_rank(a, b, alpha, higher_is_better=higher)
                row[metric] = {"verdict": res.verdict, "p_value": res.p_value}
        table[f"{key[0]}/{key[1]}"] = row
    return table
