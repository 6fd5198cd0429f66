"""Pipeline orchestration: stages, the triple worker pool and run-directory artifacts."""

from __future__ import annotations

import fnmatch
import logging
import logging.handlers
import multiprocessing
import traceback
from collections import Counter
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures import as_completed
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from rich.progress import Progress

from gaitscale.config.main import ConfigManager
from gaitscale.config.model import ContextSettings
from gaitscale.config.model import CrossValSettings
from gaitscale.config.model import SettingsModel
from gaitscale.config.model import TrainingSettings
from gaitscale.const import AXES
from gaitscale.const import CONFIG_SNAPSHOT_FILE_NAME
from gaitscale.const import PHASE_GRID
from gaitscale.crossval.evaluate import curve_from_results
from gaitscale.crossval.evaluate import derive_seed
from gaitscale.crossval.evaluate import nested_cv_evaluate
from gaitscale.crossval.evaluate import per_trial_r2
from gaitscale.crossval.folds import make_fold_plan
from gaitscale.crossval.scoring import critical_phase
from gaitscale.crossval.scoring import model_score
from gaitscale.crossval.scoring import relative_rmse_gap
from gaitscale.dataio import Dataset
from gaitscale.dataio import load_dataset
from gaitscale.dataio import save_checkpoint
from gaitscale.dataio import save_report
from gaitscale.dataio import write_dataset
from gaitscale.dataio import write_table
from gaitscale.errors import GaitscaleError
from gaitscale.errors import TripleFailure
from gaitscale.preprocess import ProcessedTrial
from gaitscale.preprocess import preprocess_trial
from gaitscale.preprocess import swing_velocity_profile
from gaitscale.report import CHECKPOINTS_DIR
from gaitscale.report import HISTORY_DIR
from gaitscale.report import MissingCurves
from gaitscale.report import PREDICTIONS_DIR
from gaitscale.report import PREPROCESS_DIR
from gaitscale.report import SAMPLES_DIR
from gaitscale.report import SCORES_DIR
from gaitscale.report import TIMESCALES_DIR
from gaitscale.report import curve_path
from gaitscale.report import curves_table
from gaitscale.report import emit_plots
from gaitscale.report import load_curves
from gaitscale.report import load_scores
from gaitscale.report import print_scores
from gaitscale.report import score_path
from gaitscale.report import scores_table
from gaitscale.report import timescale_path
from gaitscale.report import timescales_table
from gaitscale.report import tradeoff_path
from gaitscale.report import triple_name
from gaitscale.sampling import ModalitySpec
from gaitscale.sampling import SampleBatch
from gaitscale.sampling import build_batch
from gaitscale.sampling import write_samples
from gaitscale.synthgait import analytic_ceiling
from gaitscale.synthgait import generate
from gaitscale.synthgait import write_ground_truth
from gaitscale.timescale import NoPeak
from gaitscale.timescale import swing_initiation
from gaitscale.timescale import timescale_report
from gaitscale.timescale import tradeoff_report

logger = logging.getLogger(__name__)

DATASETS_DIR = "datasets"
INGEST_DIR = "ingest"
CHECKPOINT_SUFFIX = ".gsck"


@dataclass(frozen=True, order=True)
class Triple:
    context: str
    modality: str
    arch: str

    def __str__(self) -> str:
        return f"{self.context}:{self.modality}:{self.arch}"

    @property
    def name(self) -> str:
        return triple_name(self.context, self.modality, self.arch)

    def matches(self, pattern: str | None) -> bool:
        return pattern is None or fnmatch.fnmatchcase(str(self), pattern)


def phase_tag(phi: float) -> str:
    return f"phi_{round(phi * (PHASE_GRID.size - 1)):02d}"


def load_context(context: ContextSettings) -> Dataset:
    if context.source == "synth":
        return generate(context.synth, context=context.name)
    return load_dataset(context.dataset_dir, context=context.name)


def preprocess_dataset(dataset: Dataset, settings: SettingsModel) -> list[ProcessedTrial]:
    """Preprocess every trial; a trial that fails is logged and left out."""
    processed = []
    for trial in dataset.trials:
        try:
            processed.append(preprocess_trial(trial, settings.preprocess))
        except GaitscaleError as e:
            logger.error(f"context {dataset.context}: trial {trial.id} skipped: {e}")
    if not processed:
        raise GaitscaleError(f"context {dataset.context}: no trial survived preprocessing")
    return processed


@dataclass
class TripleTask:
    """Everything a worker needs to evaluate one triple over the phase grid."""

    triple: Triple
    batches: dict[float, SampleBatch]
    n_trials: int
    seed: int
    crossval: CrossValSettings
    training: TrainingSettings
    run_dir: Path


def _init_worker(log_queue, level: int) -> None:
    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(logging.handlers.QueueHandler(log_queue))
    root.setLevel(level)
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


def _evaluate_triple(task: TripleTask) -> Triple:
    triple, training = task.triple, task.training
    results = []
    for phi in sorted(task.batches):
        batch = task.batches[phi]
        results.append(
            nested_cv_evaluate(
                batch,
                triple.arch,
                make_fold_plan(len(batch), task.seed),
                task.crossval,
                training,
                task.n_trials,
                task.seed,
                keep_models=training.save_checkpoints,
            )
        )
    curve = curve_from_results(
        results, triple.context, triple.modality, task.crossval.lowess_frac, task.crossval.lowess_iterations
    )
    path = curve_path(task.run_dir, triple.context, triple.modality, triple.arch)
    save_report(curve, path)
    predictions = pd.concat([r.to_frame() for r in results], ignore_index=True)
    write_table(predictions, task.run_dir / PREDICTIONS_DIR / f"{triple.name}.csv")
    for result in results:
        tag = phase_tag(result.phi)
        if training.save_history:
            for k, history in enumerate(result.histories):
                if history is not None:
                    write_table(history.to_frame(), task.run_dir / HISTORY_DIR / triple.name / f"{tag}_fold_{k}.csv")
        for k, model in enumerate(result.models):
            save_checkpoint(model, task.run_dir / CHECKPOINTS_DIR / triple.name / f"{tag}_fold_{k}{CHECKPOINT_SUFFIX}")
    peak = float(np.nanmax(curve.r2_mean)) if curve.r2_mean else float("nan")
    logger.info(f"{triple}: {len(results)} phases, best mean R² {peak:.3f}")
    return triple


def run_triple(task: TripleTask) -> Triple:
    """Worker entry point; any failure comes back as a picklable ``TripleFailure``."""
    try:
        return _evaluate_triple(task)
    except Exception as e:
        raise TripleFailure(f"{task.triple}: {e}", str(task.triple), traceback.format_exc()) from e


class Pipeline:
    """Runs pipeline stages against one run directory."""

    def __init__(self, settings: SettingsModel):
        self.settings = settings
        self.run_dir = settings.get_run_dir()
        self.failures: list[str] = []
        self._datasets: dict[str, Dataset] = {}
        self._processed: dict[str, list[ProcessedTrial]] = {}

    @property
    def stages(self) -> dict[str, Callable[[], None]]:
        return {
            "ingest": self.ingest,
            "synth": self.synth,
            "preprocess": self.preprocess,
            "train": self.train,
            "evaluate": self.evaluate,
            "timescales": self.timescales,
            "report": self.report,
            "all": self.run_all,
        }

    def _fail(self, what: str, error: Exception) -> None:
        logger.error(f"{what} failed: {error}")
        self.failures.append(what)

    def dataset(self, context: ContextSettings) -> Dataset:
        if context.name not in self._datasets:
            self._datasets[context.name] = load_context(context)
        return self._datasets[context.name]

    def processed(self, context: ContextSettings) -> list[ProcessedTrial]:
        if context.name not in self._processed:
            self._processed[context.name] = preprocess_dataset(self.dataset(context), self.settings)
        return self._processed[context.name]

    def triples(self) -> list[Triple]:
        return sorted(
            Triple(context.name, modality, arch)
            for context in self.settings.contexts
            for modality in self.settings.sampling.modalities
            for arch in self.settings.crossval.architectures
            if Triple(context.name, modality, arch).matches(self.settings.basic.only)
        )

    def ingest(self) -> None:
        rows = []
        for context in self.settings.contexts:
            try:
                dataset = self.dataset(context)
            except GaitscaleError as e:
                self._fail(f"ingest {context.name}", e)
                continue
            for trial in dataset.trials:
                rows.append(
                    {
                        "context": context.name,
                        "trial": trial.id,
                        "fs": trial.fs,
                        "n_frames": trial.n_frames,
                        "duration_s": float(trial.time[-1] - trial.time[0]),
                        "task": trial.task.value,
                        "terrain": trial.terrain.value,
                        "belt_speed": trial.belt_speed,
                        "n_markers": len(trial.markers),
                        "has_gaze": trial.gaze is not None,
                    }
                )
        write_table(pd.DataFrame(rows), self.run_dir / INGEST_DIR / "trials.csv")
        logger.info(f"ingested {len(rows)} trials from {len(self.settings.contexts)} contexts")

    def synth(self) -> None:
        for context in self.settings.contexts:
            if context.source != "synth":
                logger.info(f"context {context.name} reads files, nothing to generate")
                continue
            dataset = self.dataset(context)
            directory = self.run_dir / DATASETS_DIR / context.name
            write_dataset(dataset, directory)
            write_ground_truth(dataset.ground_truth, directory)
            save_report(analytic_ceiling(context.synth, dataset), directory / "ceiling.toml")
            logger.info(f"wrote synthetic context {context.name} to {directory}")

    def preprocess(self) -> None:
        for context in self.settings.contexts:
            try:
                processed = self.processed(context)
            except GaitscaleError as e:
                self._fail(f"preprocess {context.name}", e)
                continue
            self._write_preprocess_tables(context.name, processed)

    def _write_preprocess_tables(self, name: str, processed: list[ProcessedTrial]) -> None:
        directory = self.run_dir / PREPROCESS_DIR / name
        rejections, summary, events, profiles, swings = [], [], [], [], []
        for trial in processed:
            n_cycles = sum(len(cycles) for cycles in trial.cycles.values())
            for r in trial.rejections:
                rejections.append({"trial": trial.id, "cycle_index": r.cycle_index, "foot": r.foot.value, "reason": r.reason})
            reasons = Counter(r.reason for r in trial.rejections)
            for reason, count in sorted(reasons.items()):
                summary.append({"trial": trial.id, "reason": reason, "count": count, "fraction": count / max(n_cycles, 1)})
            if trial.rejections:
                logger.info(f"{name} trial {trial.id}: rejected {len(trial.rejections)}/{n_cycles} cycles {dict(reasons)}")
            for foot, foot_events in trial.events.items():
                for event in foot_events:
                    events.append({"trial": trial.id, "foot": foot.value, "frame": event.frame, "time": event.time})
            try:
                profile = swing_velocity_profile(trial)
                onset = swing_initiation(profile, PHASE_GRID, self.settings.timescale.swing_velocity_fraction)
            except NoPeak as e:
                logger.warning(f"{name} trial {trial.id}: no swing initiation ({e})")
                onset = np.nan
            profiles.extend({"trial": trial.id, "phi": phi, "velocity": v} for phi, v in zip(PHASE_GRID, profile, strict=True))
            swings.append({"trial": trial.id, "swing_initiation": onset})
        write_table(pd.DataFrame(rejections, columns=["trial", "cycle_index", "foot", "reason"]), directory / "rejections.csv")
        write_table(pd.DataFrame(summary, columns=["trial", "reason", "count", "fraction"]), directory / "rejection_summary.csv")
        write_table(pd.DataFrame(events).sort_values(["trial", "frame", "foot"]), directory / "events.csv")
        write_table(pd.DataFrame(profiles), directory / "swing_profiles.csv")
        write_table(pd.DataFrame(swings), directory / "swing_initiation.csv")

    def _batches(self, context: ContextSettings, modality: str) -> dict[float, SampleBatch]:
        spec = ModalitySpec.from_settings(modality, self.settings.preprocess, self.settings.sampling)
        processed = self.processed(context)
        batches = {}
        for phi in sorted(self.settings.sampling.phases):
            batch = build_batch(processed, spec, phi, self.settings.sampling)
            batches[batch.phi] = batch
            if self.settings.basic.dump_samples:
                path = self.run_dir / SAMPLES_DIR / triple_name(context.name, modality) / f"{phase_tag(batch.phi)}.csv"
                write_samples(batch, path)
        return batches

    def _tasks(self) -> list[TripleTask]:
        tasks = []
        triples = self.triples()
        for context in self.settings.contexts:
            for modality in self.settings.sampling.modalities:
                wanted = [t for t in triples if (t.context, t.modality) == (context.name, modality)]
                if not wanted:
                    continue
                try:
                    batches = self._batches(context, modality)
                    n_trials = self.dataset(context).n_trials
                except GaitscaleError as e:
                    for triple in wanted:
                        self._fail(str(triple), e)
                    continue
                tasks.extend(
                    TripleTask(
                        triple=triple,
                        batches=batches,
                        n_trials=n_trials,
                        seed=self.settings.basic.seed,
                        crossval=self.settings.crossval,
                        training=self.settings.training,
                        run_dir=self.run_dir,
                    )
                    for triple in wanted
                )
        return tasks

    def train(self) -> None:
        tasks = self._tasks()
        if not tasks:
            logger.warning("no triple to train")
            return
        jobs = min(self.settings.basic.jobs, len(tasks))
        logger.info(f"evaluating {len(tasks)} triples with {jobs} worker(s)")
        with Progress(transient=True) as progress:
            bar = progress.add_task("triples", total=len(tasks))
            if jobs == 1:
                for task in tasks:
                    self._collect(lambda task=task: run_triple(task))
                    progress.advance(bar)
                return
            log_queue = multiprocessing.Queue()
            listener = logging.handlers.QueueListener(log_queue, *logging.getLogger().handlers, respect_handler_level=True)
            listener.start()
            try:
                with ProcessPoolExecutor(
                    max_workers=jobs,
                    initializer=_init_worker,
                    initargs=(log_queue, logging.getLogger().getEffectiveLevel()),
                ) as pool:
                    futures = [pool.submit(run_triple, task) for task in tasks]
                    for future in as_completed(futures):
                        self._collect(future.result)
                        progress.advance(bar)
            finally:
                listener.stop()

    def _collect(self, outcome: Callable[[], Triple]) -> None:
        try:
            outcome()
        except TripleFailure as e:
            logger.error(str(e))
            self.failures.append(e.triple)

    def evaluate(self) -> None:
        """Model scores per (context, modality), critical phases and the aggregate tables."""
        curves = [c for c in load_curves(self.run_dir) if self._wanted_curve(c.context, c.modality)]
        groups: dict[tuple[str, str], dict[str, np.ndarray]] = {}
        phases: dict[tuple[str, str], np.ndarray] = {}
        for curve in curves:
            key = (curve.context, curve.modality)
            groups.setdefault(key, {})[curve.arch] = np.asarray(curve.rmse, dtype=np.float64)
            phases[key] = np.asarray(curve.phases, dtype=np.float64)
        initial = {key: model_score(group, 1.0, phases[key], *key) for key, group in sorted(groups.items())}
        scores, gaps = [], []
        for context in sorted({key[0] for key in groups}):
            c, gap = self._critical_phase(context, groups, phases, initial)
            if gap is not None:
                gaps.append(gap)
            for key in sorted(k for k in groups if k[0] == context):
                try:
                    score = model_score(groups[key], c, phases[key], *key)
                except ValueError as e:
                    self._fail(f"score {key[0]}:{key[1]}", e)
                    continue
                path = score_path(self.run_dir, *key)
                save_report(score, path)
                scores.append(score)
                logger.info(f"{key[0]}:{key[1]}: best model {score.best_arch} (c = {c:.2f})")
        write_table(scores_table(scores), self.run_dir / "scores.csv")
        write_table(curves_table(curves), self.run_dir / "curves.csv")
        gap_columns = ["context", "modality", "arch", "baseline_arch", "phi", "gap", "critical_phase"]
        write_table(
            pd.concat(gaps, ignore_index=True) if gaps else pd.DataFrame(columns=gap_columns),
            self.run_dir / SCORES_DIR / "rmse_gap.csv",
        )

    def _wanted_curve(self, context: str, modality: str) -> bool:
        only = self.settings.basic.only
        return only is None or any(
            Triple(context, modality, arch).matches(only) for arch in self.settings.crossval.architectures
        )

    def _critical_phase(self, context, groups, phases, initial) -> tuple[float, pd.DataFrame | None]:
        """Critical phase of a context from the best non-baseline modality against the baseline."""
        baseline = self.settings.timescale.baseline_modality
        base_key = (context, baseline)
        if base_key not in groups:
            logger.warning(f"{context}: no {baseline} curves, scoring over every phase")
            return 1.0, None
        base_arch = initial[base_key].best_arch
        candidates = [
            (float(np.mean(groups[key][initial[key].best_arch])), key)
            for key in groups
            if key[0] == context and key[1] != baseline and np.array_equal(phases[key], phases[base_key])
        ]
        if not candidates:
            logger.warning(f"{context}: no modality to compare with {baseline}, scoring over every phase")
            return 1.0, None
        _, best_key = min(candidates)
        best_arch = initial[best_key].best_arch
        best, base = groups[best_key][best_arch], groups[base_key][base_arch]
        c = critical_phase(best, base, phases[base_key])
        gap = pd.DataFrame(
            {
                "context": context,
                "modality": best_key[1],
                "arch": best_arch,
                "baseline_arch": base_arch,
                "phi": phases[base_key],
                "gap": relative_rmse_gap(best, base),
                "critical_phase": c,
            }
        )
        logger.info(f"{context}: critical phase {c:.2f} from {best_key[1]}/{best_arch} against {baseline}/{base_arch}")
        return c, gap

    def _swing_initiations(self, context: str) -> pd.Series | None:
        path = self.run_dir / PREPROCESS_DIR / context / "swing_initiation.csv"
        if not path.exists():
            return None
        frame = pd.read_csv(path)
        return frame.set_index("trial")["swing_initiation"].dropna()

    def timescales(self) -> None:
        settings = self.settings
        baseline = settings.timescale.baseline_modality
        curves = {(c.context, c.modality, c.arch): c for c in load_curves(self.run_dir)}
        scores = {(s.context, s.modality): s for s in load_scores(self.run_dir)}
        reports = []
        for key, curve in sorted(curves.items()):
            triple = Triple(*key)
            if triple.modality == baseline or not triple.matches(settings.basic.only):
                continue
            base = curves.get((triple.context, baseline, triple.arch))
            if base is None:
                logger.warning(f"{triple}: no {baseline} curve of the same architecture")
                continue
            try:
                reports.extend(self._timescale_triple(triple, curve, base, scores.get(key[:2])))
            except (GaitscaleError, OSError) as e:
                self._fail(f"timescales {triple}", e)
        if reports:
            write_table(timescales_table(reports), self.run_dir / TIMESCALES_DIR / "summary.csv")

    def _timescale_triple(self, triple: Triple, curve, base, score) -> list:
        settings = self.settings
        baseline = settings.timescale.baseline_modality
        trial_mod = per_trial_r2(pd.read_csv(self.run_dir / PREDICTIONS_DIR / f"{triple.name}.csv"))
        base_name = triple_name(triple.context, baseline, triple.arch)
        trial_base = per_trial_r2(pd.read_csv(self.run_dir / PREDICTIONS_DIR / f"{base_name}.csv"))
        swings = self._swing_initiations(triple.context)
        critical = score.critical_phase if score is not None else None
        frac, iterations = settings.crossval.lowess_frac, settings.crossval.lowess_iterations
        reports = []
        for a, axis in enumerate((*AXES, "mean")):
            trial_deltas = None
            if settings.timescale.onset_replication == "trials":
                trial_deltas = _trial_deltas(trial_mod, trial_base, axis, curve.phases)
            report = timescale_report(
                curve,
                base,
                axis,
                settings.timescale,
                settings.stats,
                trial_deltas,
                None if swings is None else swings.to_numpy(),
                critical,
                frac,
                iterations,
            )
            save_report(report, timescale_path(self.run_dir, *_fields(triple), axis))
            reports.append(report)
            tradeoff = tradeoff_report(
                trial_mod,
                trial_base,
                axis,
                *_fields(triple),
                stats=settings.stats,
                seed=derive_seed(settings.basic.seed, a),
                swing_initiations=swings,
                frac=frac,
                iterations=iterations,
            )
            if not tradeoff.is_empty():
                save_report(tradeoff, tradeoff_path(self.run_dir, *_fields(triple), axis))
        return reports

    def report(self) -> None:
        print_scores(load_scores(self.run_dir))
        try:
            paths = emit_plots(self.run_dir)
        except MissingCurves as e:
            self._fail("report", e)
            return
        for path in paths:
            logger.debug(f"plot {path}")

    def run_all(self) -> None:
        self.ingest()
        self.preprocess()
        self.train()
        self.evaluate()
        self.timescales()
        self.report()

    def run(self, command: str = "all") -> int:
        """Run one stage; the exit code is 1 when anything failed."""
        ConfigManager().write_config_snapshot(self.settings, self.run_dir / CONFIG_SNAPSHOT_FILE_NAME)
        self.stages[command]()
        if self.failures:
            logger.error(f"{len(self.failures)} failure(s): {', '.join(self.failures)}")
            return 1
        return 0


def _fields(triple: Triple) -> tuple[str, str, str]:
    return triple.context, triple.modality, triple.arch


def _trial_deltas(trial_mod: pd.DataFrame, trial_base: pd.DataFrame, axis: str, phases: list[float]) -> np.ndarray:
    """(phases, trials) per-trial ΔR² of one axis."""
    column = f"r2_{axis}"
    merged = trial_mod.merge(trial_base, on=["trial", "phi"], suffixes=("", "_baseline"))
    merged["delta"] = merged[column] - merged[f"{column}_baseline"]
    table = merged.pivot(index="phi", columns="trial", values="delta")
    return table.reindex(index=phases).to_numpy(dtype=np.float64)


def run_pipeline(settings: SettingsModel, command: str = "all") -> int:
    """Run a stage (default: every stage) and return the process exit code."""
    return Pipeline(settings).run(command)
