from __future__ import annotations

import json
import logging
import platform
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

# Ensure the current directory is on sys.path so absolute imports work when run as a script
BASE_DIR = Path(__file__).resolve().parent
if str(BASE_DIR) not in sys.path:
    sys.path.insert(0, str(BASE_DIR))

try:
    from . import config
    from .analysis.diagnostics import BalanceReport, balance_report
    from .analysis.inference import (
        BootstrapResult,
        CateTable,
        ate,
        cate_summary,
        cluster_bootstrap,
        cluster_bootstrap_multi,
        histogram_frame,
        interval_text,
        naive_ate,
        pehe,
        r2_heldout,
        resample_schools,
    )
    from .analysis.interpret import (
        export_rules,
        feature_importance,
        interpret_tree_fit,
        pair_grid,
        rules_to_text,
        stratify_cate,
    )
    from .cohort.dataset import Dataset, GroundTruth, Schema, SyntheticConfig, generate_synthetic, load_csv, load_schema
    from .cohort.splitting import SplitAssignment, balanced_split
    from .errors import ConfigError, HetfxError
    from .estimators.repnet import RepNetConfig, as_outcome_pair, repnet_fit
    from .estimators.tlearner import OutcomePairModel, fit_t_learner, impute_cate
    from .learners import EstimatorConfig
    from .tools import derive_seed, run_sync_tasks_strict, write_csv, write_json
except ImportError:
    import config
    from analysis.diagnostics import BalanceReport, balance_report
    from analysis.inference import (
        BootstrapResult,
        CateTable,
        ate,
        cate_summary,
        cluster_bootstrap,
        cluster_bootstrap_multi,
        histogram_frame,
        interval_text,
        naive_ate,
        pehe,
        r2_heldout,
        resample_schools,
    )
    from analysis.interpret import (
        export_rules,
        feature_importance,
        interpret_tree_fit,
        pair_grid,
        rules_to_text,
        stratify_cate,
    )
    from cohort.dataset import Dataset, GroundTruth, Schema, SyntheticConfig, generate_synthetic, load_csv, load_schema
    from cohort.splitting import SplitAssignment, balanced_split
    from errors import ConfigError, HetfxError
    from estimators.repnet import RepNetConfig, as_outcome_pair, repnet_fit
    from estimators.tlearner import OutcomePairModel, fit_t_learner, impute_cate
    from learners import EstimatorConfig
    from tools import derive_seed, run_sync_tasks_strict, write_csv, write_json

logger = logging.getLogger(__name__)

PROGRESS_FORMAT = "[%(asctime)s] %(message)s"


# ---------------------------------------------------------------------------
# Run directory plumbing
# ---------------------------------------------------------------------------


@contextmanager
def progress_log(run_dir: Path) -> Iterator[logging.Handler]:
    """Mirror every log record of the run into ``run_dir/progress.log``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(run_dir / "progress.log", encoding="utf-8")
    formatter = logging.Formatter(PROGRESS_FORMAT, datefmt="%H:%M:%S")
    formatter.converter = time.gmtime
    handler.setFormatter(formatter)
    handler.setLevel(logging.INFO)
    root = logging.getLogger()
    previous = root.level
    root.addHandler(handler)
    if previous > logging.INFO or previous == logging.NOTSET:
        root.setLevel(logging.INFO)
    try:
        yield handler
    finally:
        root.removeHandler(handler)
        root.setLevel(previous)
        handler.close()


def _produced_files(run_dir: Path) -> List[str]:
    return sorted(
        str(p.relative_to(run_dir)).replace("\\", "/")
        for p in run_dir.rglob("*")
        if p.is_file() and p.name != "result.json"
    )


def _write_result(run_dir: Path, *, error: Optional[str] = None, stage: Optional[str] = None) -> None:
    payload: Dict[str, Any] = {"files": _produced_files(run_dir)}
    if error is not None:
        payload["error"] = error
        payload["stage"] = stage
    write_json(run_dir, "result.json", payload)


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in text)


# ---------------------------------------------------------------------------
# Report types
# ---------------------------------------------------------------------------


@dataclass
class FamilyResult:
    family: str
    selected: str
    selected_index: int
    candidates: List[Dict[str, Any]]
    valid_r2: float
    ate: float
    ate_ci: Optional[BootstrapResult] = None
    r2_ci: Optional[BootstrapResult] = None
    oracle: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family,
            "selected": self.selected,
            "selected_index": self.selected_index,
            "candidates": self.candidates,
            "valid_r2": self.valid_r2,
            "ate": self.ate,
            "ate_bootstrap": self.ate_ci.to_dict() if self.ate_ci else None,
            "r2_bootstrap": self.r2_ci.to_dict() if self.r2_ci else None,
            "oracle": dict(self.oracle),
        }


@dataclass
class RunReport:
    out_dir: Path
    seed: int
    split: SplitAssignment
    families: List[FamilyResult]
    naive: float
    naive_ci: Optional[BootstrapResult] = None
    best_family: Optional[str] = None
    cate_summary: Dict[str, Any] = field(default_factory=dict)
    importance: Optional[Dict[str, Any]] = None
    stratification: List[Dict[str, Any]] = field(default_factory=list)
    trees: List[Dict[str, Any]] = field(default_factory=list)
    balance: Optional[Dict[str, Any]] = None
    files: List[str] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def family(self, name: str) -> FamilyResult:
        for item in self.families:
            if item.family == name:
                return item
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "split": self.split.to_dict(),
            "naive_ate": self.naive,
            "naive_bootstrap": self.naive_ci.to_dict() if self.naive_ci else None,
            "families": [item.to_dict() for item in self.families],
            "best_family": self.best_family,
            "cate_summary": self.cate_summary,
            "importance": self.importance,
            "stratification": self.stratification,
            "trees": self.trees,
            "balance": self.balance,
            "files": self.files,
        }


def selection_table(report: RunReport) -> pd.DataFrame:
    """Naive row plus one row per family: estimate with its [lo, hi] bootstrap interval."""
    rows: List[Dict[str, Any]] = []

    def _row(name: str, est: float, est_ci: Optional[BootstrapResult], r2: Optional[float], r2_ci: Optional[BootstrapResult]) -> Dict[str, Any]:
        return {
            "estimator": name,
            "ate": est,
            "ate_low": est_ci.ci_low if est_ci else None,
            "ate_high": est_ci.ci_high if est_ci else None,
            "ate_text": interval_text(est, est_ci.ci_low, est_ci.ci_high) if est_ci else f"{est:.2f}",
            "r2": r2,
            "r2_low": r2_ci.ci_low if r2_ci else None,
            "r2_high": r2_ci.ci_high if r2_ci else None,
            "r2_text": "" if r2 is None else (interval_text(r2, r2_ci.ci_low, r2_ci.ci_high) if r2_ci else f"{r2:.2f}"),
        }

    rows.append(_row("naive", report.naive, report.naive_ci, None, None))
    for item in report.families:
        rows.append(_row(item.family, item.ate, item.ate_ci, item.valid_r2, item.r2_ci))
    return pd.DataFrame(rows, columns=["estimator", "ate", "ate_low", "ate_high", "ate_text", "r2", "r2_low", "r2_high", "r2_text"])


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def load_data(cfg: config.PipelineConfig) -> Tuple[Dataset, Optional[GroundTruth]]:
    data = cfg.data
    if data.synthetic is not None:
        syn = data.synthetic
        synthetic = SyntheticConfig(
            n_schools=syn.n_schools,
            students_per_school=syn.students_per_school,
            effect=syn.effect,
            baseline=syn.baseline,
            assignment=syn.assignment,
            noise_sd=syn.noise_sd,
            seed=cfg.stage_seed(syn.seed),
        )
        dataset, truth = generate_synthetic(synthetic)
        logger.info("Synthetic cohort generated | rows=%d schools=%d", dataset.m, dataset.n_schools)
        return dataset, truth
    schema = load_schema(data.schema_path) if data.schema_path else Schema.from_dict({"columns": data.columns or []})
    return load_csv(data.path, schema), None


def _family_candidates(cfg: config.PipelineConfig) -> Dict[str, List[Any]]:
    """Validate every grid candidate before any computation starts."""
    grid: Dict[str, List[Any]] = {}
    for item in cfg.estimators:
        if item.family in config.REPNET_FAMILIES:
            grid[item.family] = [RepNetConfig.from_candidate(item.family, cand) for cand in item.candidates]
        else:
            grid[item.family] = [EstimatorConfig.from_candidate(item.family, cand) for cand in item.candidates]
    return grid


def fit_outcome_pair(family: str, candidate: Any, train: Dataset, seed: int, *, model_id: Optional[str] = None, threads: int = 1) -> OutcomePairModel:
    label = model_id or candidate.label()
    if family in config.REPNET_FAMILIES:
        return as_outcome_pair(repnet_fit(train, candidate, seed), model_id=label)
    return fit_t_learner(train, candidate, seed, model_id=label, threads=threads)


def _sorted_families(names: List[str]) -> List[str]:
    return sorted(names, key=config.FAMILY_ORDER.index)


def select_candidate(
    family: str,
    candidates: List[Any],
    train: Dataset,
    valid: Dataset,
    seed: int,
    threads: int,
) -> Tuple[int, OutcomePairModel, List[Dict[str, Any]]]:
    """Fit every candidate on the training schools and score it once on the validation schools."""
    family_key = config.FAMILY_ORDER.index(family)
    seeds = [derive_seed(seed, family_key, k) for k in range(len(candidates))]
    tasks = [
        (lambda k=k: fit_outcome_pair(family, candidates[k], train, seeds[k], model_id=f"{family}#{k}:{candidates[k].label()}"))
        for k in range(len(candidates))
    ]
    models = run_sync_tasks_strict(tasks, threads)
    scores: List[Dict[str, Any]] = []
    for k, model in enumerate(models):
        r2 = r2_heldout(model, valid)
        logger.info("Candidate scored on validation | family=%s candidate=%d id=%s valid_r2=%.6f", family, k, model.model_id, r2)
        scores.append({"index": k, "id": model.model_id, "seed": seeds[k], "valid_r2": r2})
    best = max(range(len(scores)), key=lambda k: (scores[k]["valid_r2"], -k))
    return best, models[best], scores


def _bootstrap_family(
    family: str,
    candidate: Any,
    dataset: Dataset,
    train: Dataset,
    valid: Dataset,
    point: Dict[str, float],
    cfg: config.PipelineConfig,
    threads: int,
) -> Dict[str, BootstrapResult]:
    scope = cfg.bootstrap.scope

    def statistic(sample: Dataset, seed: int) -> Dict[str, float]:
        model = fit_outcome_pair(family, candidate, sample, seed)
        scored = valid
        if scope == "train_and_valid":
            scored = resample_schools(valid, np.random.default_rng([seed, 1]))
        return {"ate": ate(impute_cate(model, dataset)), "r2": r2_heldout(model, scored)}

    boot_seed = derive_seed(cfg.stage_seed(cfg.bootstrap.seed), config.FAMILY_ORDER.index(family))
    return cluster_bootstrap_multi(
        train,
        statistic,
        cfg.bootstrap.B,
        cfg.bootstrap.level,
        boot_seed,
        point_estimate=point,
        threads=threads,
    )


def run_diagnostics(dataset: Dataset, cfg: config.PipelineConfig, out_dir: Path) -> BalanceReport:
    report = balance_report(dataset, cfg.diagnostics.n_bins, cfg.diagnostics.mmd_sigma)
    write_json(out_dir, "balance.json", report.to_dict())
    for name, marginal in report.marginals.items():
        write_csv(out_dir / "marginals", _slug(name), marginal.to_frame())
    write_csv(out_dir, "projection.csv", report.projection_frame())
    return report


def _interpret(
    cate: CateTable,
    model: OutcomePairModel,
    dataset: Dataset,
    cfg: config.PipelineConfig,
    out_dir: Path,
    threads: int,
) -> Tuple[Dict[str, Any], List[Dict[str, Any]], List[Dict[str, Any]]]:
    icfg = cfg.interpret
    features = model.encoder.transform(dataset)
    forest_params = EstimatorConfig.from_candidate("forest", icfg.importance) if icfg.importance else None
    importance = feature_importance(cate, features, forest_params, seed=derive_seed(cfg.seed, 7), threads=threads)
    write_json(out_dir, "importance.json", importance.to_dict())

    covariates = list(icfg.stratify) if icfg.stratify is not None else list(dataset.schema.covariate_names)
    summaries = [stratify_cate(cate, dataset, name, icfg.n_bins, icfg.binning) for name in covariates]
    if summaries:
        write_csv(out_dir, "strata.csv", pd.concat([s.to_frame() for s in summaries], ignore_index=True))

    constraints = {"min_schools": icfg.min_schools, "min_students": icfg.min_students}
    subsets: List[Tuple[str, List[str]]] = [(f"pair_{_slug(a)}_{_slug(b)}", [a, b]) for a, b in icfg.pairs]
    if icfg.full_tree:
        subsets.append(("full", list(dataset.schema.covariate_names)))
    tasks = [
        (lambda names=names: interpret_tree_fit(cate, dataset, names, constraints, icfg.max_depth))
        for _, names in subsets
    ]
    trees = run_sync_tasks_strict(tasks, threads)
    tree_entries: List[Dict[str, Any]] = []
    for (name, names), tree in zip(subsets, trees):
        write_json(out_dir / "trees", f"{name}.json", tree.to_dict())
        (out_dir / "rules").mkdir(parents=True, exist_ok=True)
        (out_dir / "rules" / f"{name}.txt").write_text(rules_to_text(export_rules(tree)), encoding="utf-8")
        entry: Dict[str, Any] = {"name": name, "covariates": names, "n_leaves": len(tree.leaves()), "root_only": tree.root_only}
        numeric_pair = len(names) == 2 and all(dataset.schema.column(n).kind == "numeric" for n in names)
        if name != "full" and numeric_pair:
            write_csv(out_dir / "grids", name, pair_grid(tree, dataset, icfg.grid_resolution))
            entry["grid"] = f"grids/{name}.csv"
        tree_entries.append(entry)
    return importance.to_dict(), [{"covariate": s.covariate, "n_strata": len(s.strata)} for s in summaries], tree_entries


def _versions() -> Dict[str, str]:
    import pydantic
    import scipy

    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def resolve_output_dir(cfg: config.PipelineConfig, out_dir: Optional[Path | str] = None) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(config.OUTPUT_DIR) / f"run_{cfg.seed}"


def run_pipeline(cfg: config.PipelineConfig, out_dir: Optional[Path | str] = None, *, threads: Optional[int] = None) -> RunReport:
    """Split, select and fit each family, bootstrap, interpret, diagnose; write every artifact.

    On failure the files written so far stay in place and ``result.json`` carries the
    error and the stage it happened in.
    """
    run_dir = resolve_output_dir(cfg, out_dir)
    n_threads = config.threads_for(threads if threads is not None else cfg.threads)
    stage = "config"
    timings: Dict[str, float] = {}
    with progress_log(run_dir):
        try:
            grid = _family_candidates(cfg)
            if cfg.interpret.force_family is not None and cfg.interpret.force_family not in grid:
                raise ConfigError(f"force_family {cfg.interpret.force_family!r} is not in the estimator grid")
            write_json(run_dir, "config_resolved.json", cfg.model_dump(mode="json"))

            def _timed(name: str, fn: Callable[[], Any]) -> Any:
                nonlocal stage
                stage = name
                logger.info("Stage start | %s", name)
                start = time.perf_counter()
                value = fn()
                timings[name] = time.perf_counter() - start
                logger.info("Stage done | %s (%.2fs)", name, timings[name])
                return value

            dataset, truth = _timed("data", lambda: load_data(cfg))
            if truth is not None:
                write_csv(run_dir, "ground_truth.csv", truth.to_frame(dataset))

            split = _timed(
                "split",
                lambda: balanced_split(
                    dataset,
                    cfg.split.train_frac,
                    cfg.split.n_candidates,
                    cfg.split.w_z,
                    cfg.stage_seed(cfg.split.seed),
                    moment_weighting=cfg.split.moment_weighting,
                    threads=n_threads,
                ),
            )
            write_json(run_dir, "split.json", split.to_dict())
            train = dataset.take(split.train_rows(dataset))
            valid = dataset.take(split.valid_rows(dataset))

            naive = naive_ate(dataset)
            naive_ci = None
            if cfg.bootstrap.enabled:
                naive_ci = _timed(
                    "bootstrap_naive",
                    lambda: cluster_bootstrap(
                        dataset,
                        lambda sample, _seed: naive_ate(sample),
                        cfg.bootstrap.B,
                        cfg.bootstrap.level,
                        cfg.stage_seed(cfg.bootstrap.seed),
                        point_estimate=naive,
                        threads=n_threads,
                    ),
                )

            families: List[FamilyResult] = []
            cates: Dict[str, CateTable] = {}
            models: Dict[str, OutcomePairModel] = {}
            for family in _sorted_families(list(grid)):
                candidates = grid[family]
                best, model, scores = _timed(
                    f"select_{family}",
                    lambda: select_candidate(family, candidates, train, valid, cfg.seed, n_threads),
                )
                cate = impute_cate(model, dataset)
                cate.to_csv(run_dir / f"cate_{family}.csv")
                write_json(run_dir / "models", f"{family}.json", model.to_dict())
                result = FamilyResult(
                    family=family,
                    selected=model.model_id,
                    selected_index=best,
                    candidates=scores,
                    valid_r2=scores[best]["valid_r2"],
                    ate=ate(cate),
                )
                if truth is not None:
                    result.oracle = {"true_ate": truth.ate, "pehe": pehe(cate, truth), "ate_error": result.ate - truth.ate}
                if cfg.bootstrap.enabled:
                    boot = _timed(
                        f"bootstrap_{family}",
                        lambda: _bootstrap_family(
                            family,
                            candidates[best],
                            dataset,
                            train,
                            valid,
                            {"ate": result.ate, "r2": result.valid_r2},
                            cfg,
                            n_threads,
                        ),
                    )
                    result.ate_ci, result.r2_ci = boot["ate"], boot["r2"]
                families.append(result)
                cates[family] = cate
                models[family] = model

            if cfg.interpret.force_family is not None:
                best_family = cfg.interpret.force_family
            else:
                best_family = max(families, key=lambda r: (r.valid_r2, -config.FAMILY_ORDER.index(r.family))).family
            logger.info("Best family for interpretation | %s", best_family)

            report = RunReport(out_dir=run_dir, seed=cfg.seed, split=split, families=families, naive=naive, naive_ci=naive_ci, best_family=best_family)
            best_cate = cates[best_family]
            report.cate_summary = cate_summary(best_cate, cfg.histogram_bins)
            write_csv(run_dir, "cate_histogram.csv", histogram_frame(best_cate, cfg.histogram_bins))

            if cfg.interpret.enabled:
                report.importance, report.stratification, report.trees = _timed(
                    "interpret",
                    lambda: _interpret(best_cate, models[best_family], dataset, cfg, run_dir, n_threads),
                )
            if cfg.diagnostics.enabled:
                report.balance = _timed("diagnostics", lambda: run_diagnostics(dataset, cfg, run_dir)).to_dict()

            stage = "report"
            write_csv(run_dir, "results_table.csv", selection_table(report))
            report.metadata = {"seed": cfg.seed, "threads": n_threads, "versions": _versions(), "timings": timings}
            write_json(run_dir, "run_metadata.json", report.metadata)
            report.files = _produced_files(run_dir) + ["report.json"]
            write_json(run_dir, "report.json", report.to_dict())
            _write_result(run_dir)
            logger.info("Run complete | outputs in %s", run_dir)
            return report
        except HetfxError as exc:
            logger.error("Run failed in stage %s: %s", stage, exc)
            _write_result(run_dir, error=str(exc), stage=stage)
            raise
        except Exception as exc:
            logger.exception("Run failed in stage %s", stage)
            _write_result(run_dir, error=f"{type(exc).__name__}: {exc}", stage=stage)
            raise


def run_job(run_dir: Path) -> Optional[RunReport]:
    """Run the pipeline described by ``run_dir/params.json`` into ``run_dir``."""
    params_path = run_dir / "params.json"
    try:
        payload = json.loads(params_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_result(run_dir, error=f"Failed to read params.json: {exc}", stage="config")
        return None
    try:
        cfg = config.parse_pipeline_config(payload)
    except ConfigError as exc:
        _write_result(run_dir, error=str(exc), stage="config")
        return None
    return run_pipeline(cfg, run_dir)
