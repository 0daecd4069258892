"""Config-driven pipeline: ingest, features and labels, generator training
under both synthesis regimes, then fidelity / utility / privacy evaluation
with significance tests, report files and Pareto export.

Each (family, regime) job is independent and seeded by its position in the
config, so a failing job cannot disturb its neighbours and completed jobs
can be resumed from their content-addressed result files.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import MiaConfig, mia_attack, reconstruction_attack
from .classifiers import (
    CLASSIFIER_KINDS,
    fit_classifier,
    modal_params,
    nested_cv,
    stratified_fold_ids,
    train_on_synth_test_on_real,
)
from .errors import ConfigError, GridSynthError
from .features import SECRET_FEATURE, FeatureTable, build_labeled_table
from .fidelity import compute_fidelity, project_2d
from .generators import SynthesisRegime, make_config, synthesize, train_generator
from .ingest import group_and_standardize, parse_readings, synth_sample_dataset
from .report import write_outputs
from .seeding import spawn_rng, spawn_seed
from .stats import compare_fold_scores
from .tariff import TariffSchedule, default_schedule

log = logging.getLogger(__name__)

GENERATOR_FAMILIES = ("wgan", "diffusion", "ctgan", "noise")

DEFAULT_CONFIG = {
    "master_seed": 0,
    "output_dir": "gridsynth-out",
    "data": {"sample": {"seed": 7, "households": 200, "days": 28}},
    "tariff_schedule": None,
    "quantile": 0.75,
    "features": {"max_lag": 20, "min_readings": 48},
    "classifiers": list(CLASSIFIER_KINDS),
    "jobs": [],
    "evaluation": {
        "cv": {"n_iter": 10, "outer_folds": 5, "inner_folds": 3},
        "fidelity": {"mc_samples": 20000},
        "mia": {"n_shadow": 5, "n_seeds": 5, "holdout_fraction": 0.10, "patience": 10,
                "attack_rf_trees": 200},
        "reconstruction": {"secret": SECRET_FEATURE, "test_fraction": 0.30,
                           "n_permutations": 20},
        "significance": {"test": "paired_t", "alpha": 0.05},
        "transfer_mode": True,
    },
}

_SCHEMA = {
    "master_seed": int,
    "output_dir": str,
    "data": {"sample": {"seed": int, "households": int, "days": int},
             "csv": str, "schema": dict},
    "tariff_schedule": (str, type(None)),
    "quantile": float,
    "features": {"max_lag": int, "min_readings": int},
    "classifiers": list,
    "jobs": list,
    "evaluation": {
        "cv": {"n_iter": int, "outer_folds": int, "inner_folds": int},
        "fidelity": {"mc_samples": int},
        "mia": {"n_shadow": int, "n_seeds": int, "holdout_fraction": float,
                "patience": int, "attack_rf_trees": int},
        "reconstruction": {"secret": str, "test_fraction": float, "n_permutations": int},
        "significance": {"test": str, "alpha": float},
        "transfer_mode": bool,
    },
}

_JOB_KEYS = {"family", "regime", "config"}


def _check_keys(payload, schema, path):
    for key, value in payload.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path}{key}")
        expect = schema[key]
        if isinstance(expect, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key} must be an object")
            _check_keys(value, expect, f"{path}{key}.")
        elif isinstance(expect, tuple):
            if not isinstance(value, expect):
                raise ConfigError(f"{path}{key} has wrong type")
        elif expect is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"{path}{key} must be a number")
        elif expect is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"{path}{key} must be an integer")
        elif not isinstance(value, expect):
            raise ConfigError(f"{path}{key} must be {expect.__name__}")


def _merge(base, override):
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            out[key] = _merge(base[key], value)
        else:
            out[key] = value
    return out


def normalize_regime(spec) -> dict:
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind not in ("semi", "full"):
        raise ConfigError(f"regime kind must be semi|full, got {kind!r}")
    fraction = float(spec.get("synth_fraction", 1.0))
    if kind == "semi" and fraction <= 0:
        raise ConfigError("synth_fraction must be > 0")
    return {"kind": kind, "synth_fraction": fraction}


def validate_config(raw: dict) -> dict:
    """Merge over defaults, reject unknown keys, normalize job entries."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(raw, _SCHEMA, "")
    cfg = _merge(DEFAULT_CONFIG, raw)
    if "sample" in cfg["data"] and "csv" in cfg["data"]:
        raise ConfigError("data: provide either 'sample' or 'csv', not both")
    if not ("sample" in cfg["data"] or "csv" in cfg["data"]):
        raise ConfigError("data: need 'sample' or 'csv'")
    for kind in cfg["classifiers"]:
        if kind not in CLASSIFIER_KINDS:
            raise ConfigError(f"unknown classifier {kind!r}")
    if not 0.0 < cfg["quantile"] < 1.0:
        raise ConfigError("quantile must lie in (0, 1)")
    if cfg["evaluation"]["significance"]["test"] not in ("paired_t", "wilcoxon"):
        raise ConfigError("significance.test must be paired_t or wilcoxon")
    jobs = []
    for i, job in enumerate(cfg["jobs"]):
        if not isinstance(job, dict):
            raise ConfigError(f"jobs[{i}] must be an object")
        unknown = set(job) - _JOB_KEYS
        if unknown:
            raise ConfigError(f"jobs[{i}]: unknown keys {sorted(unknown)}")
        family = job.get("family")
        if family not in GENERATOR_FAMILIES:
            raise ConfigError(f"jobs[{i}]: unknown family {family!r}")
        regime = normalize_regime(job.get("regime", "full"))
        overrides = dict(job.get("config", {}))
        try:
            make_config(family, {k: v for k, v in overrides.items() if k != "seed"})
        except GridSynthError as exc:
            raise ConfigError(f"jobs[{i}]: {exc}") from None
        jobs.append({"family": family, "regime": regime, "config": overrides})
    cfg["jobs"] = jobs
    return cfg


def load_config(path) -> dict:
    return validate_config(json.loads(Path(path).read_text(encoding="utf-8")))


# --- data stage ---------------------------------------------------------------


def build_real_table(cfg: dict):
    data = cfg["data"]
    schedule = (
        TariffSchedule.from_file(cfg["tariff_schedule"])
        if cfg["tariff_schedule"]
        else default_schedule()
    )
    if "sample" in data:
        s = data["sample"]
        readings, _ = synth_sample_dataset(s["seed"], s["households"], s["days"])
    else:
        with open(data["csv"], "r", encoding="utf-8") as fh:
            readings = parse_readings(fh, data.get("schema")).readings
    series, _ = group_and_standardize(readings, cfg["features"]["min_readings"])
    table, score_model = build_labeled_table(
        series, schedule, q=cfg["quantile"], max_lag=cfg["features"]["max_lag"]
    )
    return table, score_model, schedule


# --- evaluation stages ----------------------------------------------------------


def _mia_stage(table: FeatureTable, cv_dict, eval_cfg, seed):
    """Split the table into member/eval halves, refit the best classifier as
    the target, and run the shadow attack."""
    X = table.classifier_matrix()
    y = table.labels
    fold = stratified_fold_ids(y, 2, spawn_rng(seed, "mia-split"))
    member_idx = np.nonzero(fold == 0)[0]
    eval_idx = np.nonzero(fold == 1)[0]
    best_kind = max(cv_dict, key=lambda k: cv_dict[k]["mean"])
    params = modal_params(cv_dict[best_kind]["chosen_params"])
    target = fit_classifier(best_kind, params, X[member_idx], y[member_idx],
                            spawn_seed(seed, "mia-target"))
    mia_cfg = MiaConfig(
        n_shadow=eval_cfg["mia"]["n_shadow"],
        n_seeds=eval_cfg["mia"]["n_seeds"],
        holdout_fraction=eval_cfg["mia"]["holdout_fraction"],
        patience=eval_cfg["mia"]["patience"],
        attack_rf_trees=eval_cfg["mia"]["attack_rf_trees"],
    )
    result = mia_attack(X[member_idx], y[member_idx], X[eval_idx], y[eval_idx],
                        target, mia_cfg, master_seed=spawn_seed(seed, "mia-run"))
    out = result.to_dict()
    out["target_kind"] = best_kind
    return out


def evaluate_dataset(name, family, regime_label, table: FeatureTable,
                     real_table: FeatureTable, eval_cfg, classifiers, seed,
                     real_fold_scores=None) -> dict:
    """All evaluation stages for one dataset; returns a JSON-ready dict."""
    entry = {"name": name, "family": family, "regime": regime_label, "error": None}
    is_real = family == "real"

    cv = nested_cv(
        table.classifier_matrix(), table.labels, kinds=classifiers,
        n_iter=eval_cfg["cv"]["n_iter"], outer_folds=eval_cfg["cv"]["outer_folds"],
        inner_folds=eval_cfg["cv"]["inner_folds"], seed=spawn_seed(seed, "cv"),
    )
    entry["utility"] = cv.to_dict()

    fid = compute_fidelity(
        real_table.classifier_matrix(), table.classifier_matrix(),
        feature_names=real_table.classifier_feature_names(),
        mc_n=eval_cfg["fidelity"]["mc_samples"], seed=spawn_seed(seed, "fidelity"),
    )
    entry["fidelity"] = fid.to_dict()

    if not is_real and eval_cfg.get("transfer_mode", True):
        transfer = train_on_synth_test_on_real(
            table.classifier_matrix(), table.labels,
            real_table.classifier_matrix(), real_table.labels,
            kinds=classifiers, n_iter=eval_cfg["cv"]["n_iter"],
            inner_folds=eval_cfg["cv"]["inner_folds"],
            eval_folds=eval_cfg["cv"]["outer_folds"],
            seed=spawn_seed(seed, "transfer"),
        )
        entry["utility_transfer"] = transfer.to_dict()
    else:
        entry["utility_transfer"] = None

    entry["mia"] = _mia_stage(table, entry["utility"], eval_cfg, seed)

    recon = reconstruction_attack(
        table, real_table, secret=eval_cfg["reconstruction"]["secret"],
        seed=spawn_seed(seed, "recon"),
        test_fraction=eval_cfg["reconstruction"]["test_fraction"],
        n_permutations=eval_cfg["reconstruction"]["n_permutations"],
    )
    entry["reconstruction"] = recon.to_dict()

    if not is_real and real_fold_scores:
        synth_scores = {k: entry["utility"][k]["fold_scores"] for k in classifiers}
        sig_cfg = eval_cfg["significance"]
        comparisons = compare_fold_scores(
            synth_scores, real_fold_scores, test=sig_cfg["test"], alpha=sig_cfg["alpha"]
        )
        entry["significance"] = {
            "test": sig_cfg["test"],
            "alpha": sig_cfg["alpha"],
            "comparisons": {k: c.to_dict() for k, c in comparisons.items()},
        }
    else:
        entry["significance"] = None

    if not is_real:
        entry["projection"] = project_2d(
            real_table.classifier_matrix(), table.classifier_matrix()
        )
    else:
        entry["projection"] = []
    return entry


def _job_name(job) -> str:
    return f"{job['family']}_{job['regime']['kind']}"


def _job_hash(cfg, job_payload) -> str:
    basis = {
        "version": __version__,
        "master_seed": cfg["master_seed"],
        "data": cfg["data"],
        "tariff_schedule": cfg["tariff_schedule"],
        "quantile": cfg["quantile"],
        "features": cfg["features"],
        "classifiers": cfg["classifiers"],
        "evaluation": cfg["evaluation"],
        "job": job_payload,
    }
    return hashlib.sha256(json.dumps(basis, sort_keys=True).encode()).hexdigest()[:16]


def run_job(cfg, job, index, real_table, real_fold_scores) -> dict:
    """Train one generator, synthesize under its regime, evaluate."""
    name = _job_name(job)
    seed = spawn_seed(cfg["master_seed"], "job", index, name)
    gen_cfg = make_config(job["family"],
                          {**job["config"], "seed": job["config"].get("seed", seed)})
    generator = train_generator(job["family"], real_table, gen_cfg)
    regime = SynthesisRegime(job["regime"]["kind"], job["regime"]["synth_fraction"])
    synth = synthesize(generator, regime, real_table, spawn_seed(seed, "sample"))
    entry = evaluate_dataset(
        name, job["family"], job["regime"]["kind"], synth, real_table,
        cfg["evaluation"], cfg["classifiers"], spawn_seed(seed, "eval"),
        real_fold_scores=real_fold_scores,
    )
    entry["training_log_tail"] = generator.training_log[-3:]
    return entry


def pareto_frontier(rows):
    """Indices of rows not dominated in (prs low, macro_f1 high)."""
    kept = []
    for i, row in enumerate(rows):
        dominated = False
        for j, other in enumerate(rows):
            if j == i:
                continue
            if (other["prs"] <= row["prs"] and other["macro_f1"] >= row["macro_f1"]
                    and (other["prs"] < row["prs"] or other["macro_f1"] > row["macro_f1"])):
                dominated = True
                break
        if not dominated:
            kept.append(i)
    return kept


def _pareto_rows(datasets):
    rows = []
    for entry in datasets:
        if entry.get("error"):
            continue
        kind, best = None, -1.0
        for k, res in entry["utility"].items():
            if res["mean"] > best:
                kind, best = k, res["mean"]
        rows.append({
            "dataset": entry["name"],
            "family": entry["family"],
            "regime": entry["regime"],
            "prs": entry["reconstruction"]["prs"],
            "macro_f1": best,
            "mia_auc": entry["mia"]["mean_auc"],
        })
    return rows


class _JobRunner:
    """Picklable callable for the worker pool."""

    def __init__(self, cfg, real_table, real_fold_scores):
        self.cfg = cfg
        self.real_table = real_table
        self.real_fold_scores = real_fold_scores

    def __call__(self, payload):
        index, job = payload
        return run_job(self.cfg, job, index, self.real_table, self.real_fold_scores)


def run(cfg: dict, resume=False, n_workers=1) -> dict:
    """Execute the full pipeline; writes all artifacts into output_dir."""
    cfg = validate_config(cfg)
    out_dir = Path(cfg["output_dir"])
    jobs_dir = out_dir / "jobs"
    jobs_dir.mkdir(parents=True, exist_ok=True)

    table, score_model, _ = build_real_table(cfg)
    (out_dir / "features.csv").write_text(table.to_csv(), encoding="utf-8")
    (out_dir / "score_model.json").write_text(score_model.to_json(), encoding="utf-8")

    real_hash = _job_hash(cfg, {"family": "real"})
    real_path = jobs_dir / f"real_{real_hash}.json"
    if resume and real_path.exists():
        real_entry = json.loads(real_path.read_text(encoding="utf-8"))
        log.info("resumed real baseline from %s", real_path.name)
    else:
        real_entry = evaluate_dataset(
            "real", "real", "real", table, table, cfg["evaluation"],
            cfg["classifiers"], spawn_seed(cfg["master_seed"], "real-eval"),
        )
        real_path.write_text(json.dumps(real_entry), encoding="utf-8")
    real_fold_scores = {
        k: real_entry["utility"][k]["fold_scores"] for k in cfg["classifiers"]
    }

    pending, results = [], {}
    for index, job in enumerate(cfg["jobs"]):
        h = _job_hash(cfg, {"index": index, **job})
        path = jobs_dir / f"{_job_name(job)}_{h}.json"
        if resume and path.exists():
            results[index] = json.loads(path.read_text(encoding="utf-8"))
            log.info("resumed job %s from %s", _job_name(job), path.name)
        else:
            pending.append((index, job, path))

    def _record(index, job, path, entry):
        path.write_text(json.dumps(entry), encoding="utf-8")
        results[index] = entry

    if n_workers > 1 and len(pending) > 1:
        runner = _JobRunner(cfg, table, real_fold_scores)
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = {
                pool.submit(runner, (index, job)): (index, job, path)
                for index, job, path in pending
            }
            for fut, (index, job, path) in futures.items():
                try:
                    _record(index, job, path, fut.result())
                except GridSynthError as exc:
                    results[index] = _error_entry(job, exc)
                except Exception as exc:  # job isolation: record, continue
                    results[index] = _error_entry(job, exc)
    else:
        for index, job, path in pending:
            try:
                _record(index, job, path, run_job(cfg, job, index, table, real_fold_scores))
            except Exception as exc:
                log.error("job %s failed: %s", _job_name(job), exc)
                results[index] = _error_entry(job, exc)

    datasets = [real_entry] + [results[i] for i in sorted(results)]
    rows = _pareto_rows(datasets)
    report = {
        "version": __version__,
        "master_seed": cfg["master_seed"],
        "config": {k: cfg[k] for k in ("data", "quantile", "features", "classifiers",
                                       "jobs", "evaluation")},
        "datasets": datasets,
        "pareto": {"rows": rows, "frontier": pareto_frontier(rows)},
    }
    write_outputs(report, out_dir)
    return report


def _error_entry(job, exc):
    return {
        "name": _job_name(job),
        "family": job["family"],
        "regime": job["regime"]["kind"],
        "error": f"{type(exc).__name__}: {exc}",
    }
