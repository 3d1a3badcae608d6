"""Command-line surface: explain, evaluate, correlate, compare-aggregators,
synth-demo, and the synthetic backend server.

Configuration comes from an optional JSON document (--config); every field
can be overridden by the command-line flag of the same name. The backend
command defaults to the SPECTRAST_BACKEND environment variable.
"""

from __future__ import annotations

import itertools
import json
import queue
import sys
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import click

from . import artifacts
from .backend.client import SubprocessBackend
from .backend.server import serve
from .backend.synthetic import SyntheticBackend, load_suite
from .core import SCORER_BASE, SCORER_DIFFERENCE, SCORER_KINDS, SCORER_RELATIVE, ContrastCase
from .errors import (
    BackendError,
    BackendLaunchError,
    ConfigError,
    DegenerateStatisticsError,
    OutOfCoverageError,
    SpectrastError,
)
from .attribution import ScorerKind, explain_many
from .evaluation import DeletionConfig, map_correlation, paired_t_test, run_deletion_eval
from .features import load_features
from .manifest import load_manifest
from .perturbation import PerturbationPlan
from .segmentation import SegmentationConfig
from .synthdata import SuiteLayout, build_synthetic_suite, write_suite_files
from .wordprob import AGG_WORD_BOUNDARY, AGGREGATION_METHODS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_PARTIAL = 4


@dataclass
class RunConfig:
    """Resolved run settings; flags override config-file fields of the same name."""

    manifest: Optional[Path] = None
    backend_command: Optional[str] = None
    scorer: str = SCORER_RELATIVE
    aggregation: str = AGG_WORD_BOUNDARY
    output_dir: Path = Path("spectrast-out")
    seed: int = 0
    n_masks: int = 20000
    mask_probability: float = 0.5
    masks_per_level: Optional[tuple[int, ...]] = None
    level_targets: tuple[int, ...] = (2000, 2500, 3000)
    frame_threshold: int = 750
    compactness: float = 0.1
    max_iterations: int = 10
    smoothing_sigma: float = 0.0
    step_fraction: float = 0.01
    max_fraction: float = 0.20
    workers: int = 1

    def segmentation(self) -> SegmentationConfig:
        return SegmentationConfig(
            level_targets=self.level_targets, frame_threshold=self.frame_threshold,
            compactness=self.compactness, max_iterations=self.max_iterations,
            smoothing_sigma=self.smoothing_sigma,
        )

    def plan(self) -> PerturbationPlan:
        return PerturbationPlan(
            n_masks_total=self.n_masks, mask_probability=self.mask_probability,
            seed=self.seed, masks_per_level=self.masks_per_level,
        )

    def deletion(self) -> DeletionConfig:
        return DeletionConfig(step_fraction=self.step_fraction,
                              max_fraction=self.max_fraction)

    def digest(self, command: str) -> str:
        # paths and backend command are excluded: the digest names the
        # computation, not where its inputs and outputs live
        return artifacts.config_digest({
            "command": command,
            "scorer": self.scorer,
            "aggregation": self.aggregation,
            "seed": self.seed,
            "n_masks": self.n_masks,
            "mask_probability": self.mask_probability,
            "masks_per_level": list(self.masks_per_level) if self.masks_per_level else None,
            "level_targets": list(self.level_targets),
            "frame_threshold": self.frame_threshold,
            "compactness": self.compactness,
            "max_iterations": self.max_iterations,
            "smoothing_sigma": self.smoothing_sigma,
            "step_fraction": self.step_fraction,
            "max_fraction": self.max_fraction,
        })


_CONFIG_FIELDS = {
    "manifest": Path, "backend_command": str, "scorer": str, "aggregation": str,
    "output_dir": Path, "seed": int, "n_masks": int, "mask_probability": float,
    "masks_per_level": tuple, "level_targets": tuple, "frame_threshold": int,
    "compactness": float, "max_iterations": int, "smoothing_sigma": float,
    "step_fraction": float, "max_fraction": float, "workers": int,
}


def _load_config(config_path: Optional[str], overrides: dict) -> RunConfig:
    merged: dict = {}
    if config_path:
        try:
            document = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(document) - set(_CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        merged.update(document)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    cfg = RunConfig()
    for key, value in merged.items():
        caster = _CONFIG_FIELDS[key]
        if value is None:
            setattr(cfg, key, None)
        elif caster is tuple:
            if isinstance(value, str):
                value = [v for v in value.split(",") if v]
            setattr(cfg, key, tuple(int(v) for v in value))
        else:
            setattr(cfg, key, caster(value))
    if cfg.scorer not in SCORER_KINDS:
        raise ConfigError(f"unknown scorer {cfg.scorer!r}; choose from {SCORER_KINDS}")
    if cfg.aggregation not in AGGREGATION_METHODS:
        raise ConfigError(
            f"unknown aggregation {cfg.aggregation!r}; choose from {AGGREGATION_METHODS}")
    return cfg


def _require_manifest(cfg: RunConfig) -> list[ContrastCase]:
    if cfg.manifest is None:
        raise ConfigError("a manifest path is required (--manifest or config field)")
    try:
        cases = load_manifest(cfg.manifest)
    except (OSError, SpectrastError) as exc:
        raise ConfigError(str(exc)) from exc
    if not cases:
        raise ConfigError(f"{cfg.manifest}: no cases")
    return cases


def _require_backend_command(cfg: RunConfig) -> str:
    if not cfg.backend_command:
        raise ConfigError(
            "a backend command is required (--backend-command, config field, "
            "or SPECTRAST_BACKEND)")
    return cfg.backend_command


def _resolve_features_path(case: ContrastCase, manifest_path: Path) -> Path:
    path = Path(case.features_path)
    return path if path.is_absolute() else manifest_path.parent / path


@dataclass
class _ExplainOutcome:
    maps_written: int = 0
    skipped: list = field(default_factory=list)
    failed: list = field(default_factory=list)
    launch_errors: list = field(default_factory=list)


def _explain_suite(cfg: RunConfig, cases: Sequence[ContrastCase],
                   scorer_kinds: Sequence[ScorerKind], maps_root: Path) -> _ExplainOutcome:
    """Explain every case, one worker thread per backend connection."""
    for scorer in scorer_kinds:
        (maps_root / scorer.kind).mkdir(parents=True, exist_ok=True)
    outcome = _ExplainOutcome()
    digest = cfg.digest("explain")
    work: "queue.Queue[ContrastCase]" = queue.Queue()
    for case in cases:
        work.put(case)
    lock = threading.Lock()
    backend_command = _require_backend_command(cfg)

    def worker():
        try:
            backend = SubprocessBackend(backend_command)
        except BackendError as exc:
            with lock:
                outcome.launch_errors.append(exc)
            return
        try:
            try:
                info = backend.handshake()
            except BackendError as exc:
                with lock:
                    outcome.launch_errors.append(exc)
                return
            while True:
                try:
                    case = work.get_nowait()
                except queue.Empty:
                    return
                try:
                    features = load_features(_resolve_features_path(case, cfg.manifest))
                    maps = explain_many(
                        case, backend, scorer_kinds, aggregation=cfg.aggregation,
                        segmentation=cfg.segmentation(), plan=cfg.plan(),
                        features=features, info=info)
                    with lock:
                        for kind, saliency in maps.items():
                            artifacts.save_saliency(
                                saliency, maps_root / kind / f"{case.case_id}.fbnk",
                                extra_provenance={"config_digest": digest})
                            outcome.maps_written += 1
                except OutOfCoverageError as exc:
                    with lock:
                        outcome.skipped.append((case.case_id, str(exc)))
                except SpectrastError as exc:
                    with lock:
                        outcome.failed.append((case.case_id, str(exc)))
        finally:
            backend.shutdown()

    n_workers = max(1, int(cfg.workers))
    threads = [threading.Thread(target=worker, daemon=True) for _ in range(n_workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if outcome.launch_errors and not work.empty():
        raise outcome.launch_errors[0]
    outcome.skipped.sort()
    outcome.failed.sort()
    return outcome


def _exit(code: int):
    raise SystemExit(code)


@click.group()
def main():
    """Contrastive feature attribution for speech-to-text models."""


def _common_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="JSON config document; flags override its fields."),
        click.option("--manifest", type=click.Path(), default=None),
        click.option("--backend-command", envvar="SPECTRAST_BACKEND", default=None,
                     help="Backend launch command (or SPECTRAST_BACKEND)."),
        click.option("--scorer", type=click.Choice(SCORER_KINDS), default=None),
        click.option("--aggregation", type=click.Choice(AGGREGATION_METHODS), default=None),
        click.option("--output-dir", type=click.Path(), default=None),
        click.option("--seed", type=int, default=None),
        click.option("--n-masks", type=int, default=None),
        click.option("--mask-probability", type=float, default=None),
        click.option("--masks-per-level", type=str, default=None,
                     help="Comma-separated per-level mask counts."),
        click.option("--level-targets", type=str, default=None,
                     help="Comma-separated segment counts per level."),
        click.option("--frame-threshold", type=int, default=None),
        click.option("--compactness", type=float, default=None),
        click.option("--max-iterations", type=int, default=None),
        click.option("--smoothing-sigma", type=float, default=None),
        click.option("--step-fraction", type=float, default=None),
        click.option("--max-fraction", type=float, default=None),
        click.option("--workers", type=int, default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def _build_config(config_path, **overrides) -> RunConfig:
    try:
        return _load_config(config_path, overrides)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        _exit(EXIT_CONFIG)


@main.command("explain")
@_common_options
def cmd_explain(config_path, **overrides):
    """Produce one saliency map per in-coverage manifest case."""
    cfg = _build_config(config_path, **overrides)
    try:
        cases = _require_manifest(cfg)
        _require_backend_command(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        _exit(EXIT_CONFIG)
    maps_root = Path(cfg.output_dir) / "maps"
    try:
        outcome = _explain_suite(cfg, cases, [ScorerKind(kind=cfg.scorer)], maps_root)
    except BackendLaunchError as exc:
        click.echo(f"backend error: {exc}", err=True)
        _exit(EXIT_BACKEND)
    digest = cfg.digest("explain")
    artifacts.write_skip_report(outcome.skipped, Path(cfg.output_dir) / "skipped.tsv",
                                cfg.seed, digest)
    click.echo(f"maps: {outcome.maps_written}  skipped: {len(outcome.skipped)}  "
               f"failed: {len(outcome.failed)}")
    if outcome.failed:
        artifacts.write_skip_report(outcome.failed, Path(cfg.output_dir) / "failed.tsv",
                                    cfg.seed, digest)
        _exit(EXIT_PARTIAL)


def _paired_cases_with_maps(cfg: RunConfig, cases: Sequence[ContrastCase],
                            maps_dir: Path) -> list:
    pairs = []
    for case in cases:
        map_path = maps_dir / f"{case.case_id}.fbnk"
        if map_path.exists():
            resolved = ContrastCase(
                case_id=case.case_id,
                features_path=str(_resolve_features_path(case, cfg.manifest)),
                reference_text=case.reference_text,
                target_word=case.target_word,
                foil_word=case.foil_word,
                gender_of_target=case.gender_of_target,
                category=case.category,
            )
            pairs.append((resolved, artifacts.load_saliency(map_path)))
    return pairs


@main.command("evaluate")
@_common_options
@click.option("--maps-dir", type=click.Path(), default=None,
              help="Directory of saliency maps; defaults to <output>/maps/<scorer> "
                   "and maps are produced there first when absent.")
def cmd_evaluate(config_path, maps_dir, **overrides):
    """Deletion-metric evaluation: coverage and flip-rate curves."""
    cfg = _build_config(config_path, **overrides)
    try:
        cases = _require_manifest(cfg)
        backend_command = _require_backend_command(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        _exit(EXIT_CONFIG)
    maps_dir = Path(maps_dir) if maps_dir else Path(cfg.output_dir) / "maps" / cfg.scorer
    try:
        if not maps_dir.exists() or not any(maps_dir.glob("*.fbnk")):
            outcome = _explain_suite(cfg, cases, [ScorerKind(kind=cfg.scorer)],
                                     maps_dir.parent)
            if outcome.failed:
                click.echo(f"explain failed for {len(outcome.failed)} case(s)", err=True)
                _exit(EXIT_PARTIAL)
        pairs = _paired_cases_with_maps(cfg, cases, maps_dir)
        if not pairs:
            click.echo("no cases with maps to evaluate", err=True)
            _exit(EXIT_CONFIG)
        backend = SubprocessBackend(backend_command)
        try:
            backend.handshake()
            curves = run_deletion_eval(pairs, backend, cfg.deletion())
        finally:
            backend.shutdown()
    except BackendLaunchError as exc:
        click.echo(f"backend error: {exc}", err=True)
        _exit(EXIT_BACKEND)
    digest = cfg.digest("evaluate")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_curves_csv(curves, out / f"curves_{cfg.scorer}.csv", cfg.seed, digest)
    artifacts.write_json(artifacts.curves_report(curves, cfg.seed, digest),
                         out / f"curves_{cfg.scorer}.report.json")
    click.echo(f"curves written for {len(curves.case_ids)} case(s); "
               f"{len(curves.excluded_case_ids)} out of coverage")
    if curves.failed_cases:
        _exit(EXIT_PARTIAL)


@main.command("correlate")
@click.argument("map_dir_a", type=click.Path(exists=True))
@click.argument("map_dir_b", type=click.Path(exists=True))
@click.option("--output", type=click.Path(), default="correlation.csv")
def cmd_correlate(map_dir_a, map_dir_b, output):
    """Per-case Pearson correlation between two map directories."""
    dir_a, dir_b = Path(map_dir_a), Path(map_dir_b)
    ids_a = {p.stem for p in dir_a.glob("*.fbnk")}
    ids_b = {p.stem for p in dir_b.glob("*.fbnk")}
    if not ids_a or ids_a != ids_b:
        click.echo(
            f"case id mismatch: {sorted(ids_a ^ ids_b) or 'no maps found'}", err=True)
        _exit(EXIT_CONFIG)
    rows = []
    seed = 0
    for case_id in sorted(ids_a):
        map_a = artifacts.load_saliency(dir_a / f"{case_id}.fbnk")
        map_b = artifacts.load_saliency(dir_b / f"{case_id}.fbnk")
        seed = map_a.provenance.get("seed", seed)
        rows.append((case_id, map_correlation(map_a, map_b)))
    digest = artifacts.config_digest({"command": "correlate", "cases": sorted(ids_a)})
    artifacts.write_correlation_csv(rows, output, seed, digest)
    click.echo(f"correlated {len(rows)} case(s) -> {output}")


@main.command("compare-aggregators")
@_common_options
def cmd_compare_aggregators(config_path, **overrides):
    """Paired t-tests between aggregation methods on coverage and flip-rate curves."""
    cfg = _build_config(config_path, **overrides)
    try:
        cases = _require_manifest(cfg)
        backend_command = _require_backend_command(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        _exit(EXIT_CONFIG)
    out = Path(cfg.output_dir)
    curves_by_method = {}
    try:
        for method in AGGREGATION_METHODS:
            method_cfg = _load_config(None, {})
            for key in _CONFIG_FIELDS:
                setattr(method_cfg, key, getattr(cfg, key))
            method_cfg.aggregation = method
            method_cfg.output_dir = out / f"agg_{method}"
            maps_root = Path(method_cfg.output_dir) / "maps"
            outcome = _explain_suite(method_cfg, cases,
                                     [ScorerKind(kind=cfg.scorer)], maps_root)
            if outcome.failed:
                click.echo(f"explain failed for {len(outcome.failed)} case(s)", err=True)
                _exit(EXIT_PARTIAL)
            pairs = _paired_cases_with_maps(method_cfg, cases, maps_root / cfg.scorer)
            backend = SubprocessBackend(backend_command)
            try:
                backend.handshake()
                curves_by_method[method] = run_deletion_eval(pairs, backend,
                                                             cfg.deletion())
            finally:
                backend.shutdown()
    except BackendLaunchError as exc:
        click.echo(f"backend error: {exc}", err=True)
        _exit(EXIT_BACKEND)

    if any(len(c.fractions) < 2 for c in curves_by_method.values()):
        click.echo("degenerate: fewer than 2 deletion steps", err=True)
        _exit(EXIT_CONFIG)
    rows = []
    try:
        for method_a, method_b in itertools.combinations(AGGREGATION_METHODS, 2):
            a, b = curves_by_method[method_a], curves_by_method[method_b]
            t, p = paired_t_test(a.coverage, b.coverage)
            rows.append({"comparison": f"{method_a}_vs_{method_b}",
                         "metric": "coverage", "t": t, "p": p})
            flips = [(fa, fb) for fa, fb in zip(a.flip_rate, b.flip_rate)
                     if fa is not None and fb is not None]
            if len(flips) >= 2:
                t, p = paired_t_test([f[0] for f in flips], [f[1] for f in flips])
                rows.append({"comparison": f"{method_a}_vs_{method_b}",
                             "metric": "flip_rate", "t": t, "p": p})
    except DegenerateStatisticsError as exc:
        click.echo(f"degenerate comparison: {exc}", err=True)
        _exit(EXIT_CONFIG)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_ttest_csv(rows, out / "aggregator_comparison.csv", cfg.seed,
                              cfg.digest("compare-aggregators"))
    click.echo(f"wrote {len(rows)} comparisons")


@main.command("synth-demo")
@click.option("--output-dir", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--cases", "n_cases", type=int, default=6)
@click.option("--frames", type=int, default=160)
@click.option("--bins", type=int, default=48)
@click.option("--n-masks", type=int, default=3000)
@click.option("--step-fraction", type=float, default=0.02)
@click.option("--max-fraction", type=float, default=0.12)
@click.option("--workers", type=int, default=1)
def cmd_synth_demo(output_dir, seed, n_cases, frames, bins, n_masks,
                   step_fraction, max_fraction, workers):
    """Build a planted-truth suite, explain it with all scorers, and evaluate."""
    out = Path(output_dir)
    layout = SuiteLayout(n_cases=n_cases, n_frames=frames, n_bins=bins,
                         cue_frames=max(8, frames // 8), cue_bins=max(8, bins // 3),
                         content_frames=max(8, frames // 8),
                         content_bins=max(8, bins // 3), seed=seed)
    suite, features, cases = build_synthetic_suite(layout)
    paths = write_suite_files(suite, features, cases, out / "suite")
    backend_command = " ".join([
        sys.executable, "-m", "spectrast.cli", "synth-backend",
        "--model-spec", str(paths["suite"]),
    ])
    cfg = _load_config(None, {
        "manifest": str(paths["manifest"]),
        "backend_command": backend_command,
        "output_dir": str(out),
        "seed": seed,
        "n_masks": n_masks,
        "step_fraction": step_fraction,
        "max_fraction": max_fraction,
        "workers": workers,
    })
    scorer_kinds = [ScorerKind(kind=k) for k in SCORER_KINDS]
    maps_root = out / "maps"
    try:
        outcome = _explain_suite(cfg, cases, scorer_kinds, maps_root)
        digest = cfg.digest("synth-demo")
        artifacts.write_skip_report(outcome.skipped, out / "skipped.tsv", seed, digest)
        if outcome.failed:
            artifacts.write_skip_report(outcome.failed, out / "failed.tsv", seed, digest)
            click.echo(f"explain failed for {len(outcome.failed)} case(s)", err=True)
            _exit(EXIT_PARTIAL)
        for scorer in (SCORER_RELATIVE, SCORER_BASE):
            cfg.scorer = scorer
            pairs = _paired_cases_with_maps(cfg, cases, maps_root / scorer)
            backend = SubprocessBackend(backend_command)
            try:
                backend.handshake()
                curves = run_deletion_eval(pairs, backend, cfg.deletion())
            finally:
                backend.shutdown()
            artifacts.write_curves_csv(curves, out / f"curves_{scorer}.csv", seed, digest)
            artifacts.write_json(artifacts.curves_report(curves, seed, digest),
                                 out / f"curves_{scorer}.report.json")
        for contrastive in (SCORER_DIFFERENCE, SCORER_RELATIVE):
            rows = []
            for case in cases:
                path_a = maps_root / contrastive / f"{case.case_id}.fbnk"
                path_b = maps_root / SCORER_BASE / f"{case.case_id}.fbnk"
                if path_a.exists() and path_b.exists():
                    rows.append((case.case_id, map_correlation(
                        artifacts.load_saliency(path_a), artifacts.load_saliency(path_b))))
            artifacts.write_correlation_csv(
                rows, out / f"correlation_{contrastive}_vs_base.csv", seed, digest)
    except BackendLaunchError as exc:
        click.echo(f"backend error: {exc}", err=True)
        _exit(EXIT_BACKEND)
    click.echo(f"synth-demo complete in {out}")


@main.command("synth-backend")
@click.option("--model-spec", type=click.Path(exists=True), required=True)
def cmd_synth_backend(model_spec):
    """Serve the planted-truth synthetic backend over stdio."""
    backend = SyntheticBackend(load_suite(model_spec))
    raise SystemExit(serve(backend))


if __name__ == "__main__":
    main()
