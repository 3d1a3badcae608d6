"""Disk artifacts: saliency maps, provenance sidecars, CSV reports.

Every artifact embeds the run seed and a digest of the computation-relevant
configuration. Nothing here writes timestamps or absolute paths, so re-runs
with identical configuration produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import SaliencyMap
from .errors import SpectrastError
from .evaluation import EvalCurves
from .features import load_matrix, save_matrix

PROVENANCE_SUFFIX = ".json"
MAP_SUFFIX = ".fbnk"


def config_digest(config: dict) -> str:
    """SHA-256 over the canonical JSON of computation-relevant settings."""
    canonical = json.dumps(config, ensure_ascii=False, sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _jsonify(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    return value


def write_json(obj: dict, path) -> None:
    Path(path).write_text(
        json.dumps(_jsonify(obj), ensure_ascii=False, sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )


def save_saliency(saliency: SaliencyMap, path, extra_provenance: Optional[dict] = None) -> None:
    """Write the score matrix (FBNK container) plus a provenance sidecar."""
    path = Path(path)
    save_matrix(saliency.scores, path)
    provenance = {
        "target_word": saliency.target_word,
        "foil_word": saliency.foil_word,
        "scorer": saliency.scorer_kind,
        "n_frames": saliency.n_frames,
        "n_bins": saliency.n_bins,
    }
    provenance.update(saliency.provenance)
    if extra_provenance:
        provenance.update(extra_provenance)
    write_json(provenance, path.with_suffix(PROVENANCE_SUFFIX))


def save_saliency_csv(saliency: SaliencyMap, path) -> None:
    """Score matrix as CSV (17 significant digits), for plotting pipelines."""
    save_matrix(saliency.scores, path, fmt="csv")


def load_saliency(path) -> SaliencyMap:
    """Load a map written by save_saliency (sidecar required for metadata)."""
    path = Path(path)
    scores = load_matrix(path).astype(np.float64)
    sidecar = path.with_suffix(PROVENANCE_SUFFIX)
    if not sidecar.exists():
        raise SpectrastError(f"missing provenance sidecar {sidecar}")
    provenance = json.loads(sidecar.read_text(encoding="utf-8"))
    return SaliencyMap(
        scores=scores,
        scorer_kind=provenance.get("scorer", "base"),
        target_word=provenance.get("target_word", ""),
        foil_word=provenance.get("foil_word"),
        provenance=provenance,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _provenance_comment(seed: int, digest: str) -> str:
    return f"# seed={seed} config={digest}\n"


def write_curves_csv(curves: EvalCurves, path, seed: int, digest: str) -> None:
    """Plot-ready deletion curves, one row per fraction step."""
    with Path(path).open("w", encoding="utf-8") as stream:
        stream.write(_provenance_comment(seed, digest))
        stream.write("fraction,coverage,flip_rate,n_covered,n_flipped\n")
        for i in range(len(curves.fractions)):
            stream.write(",".join([
                _fmt(curves.fractions[i]),
                _fmt(curves.coverage[i]),
                _fmt(curves.flip_rate[i]),
                str(curves.n_covered[i]),
                str(curves.n_flipped[i]),
            ]) + "\n")


def curves_report(curves: EvalCurves, seed: int, digest: str) -> dict:
    """Structured report with per-case outcome trajectories."""
    return {
        "seed": seed,
        "config": digest,
        "fractions": list(curves.fractions),
        "coverage": list(curves.coverage),
        "flip_rate": list(curves.flip_rate),
        "n_covered": list(curves.n_covered),
        "n_flipped": list(curves.n_flipped),
        "cases": {
            case_id: list(outcomes)
            for case_id, outcomes in zip(curves.case_ids, curves.per_case_outcomes)
        },
        "excluded_out_of_coverage": list(curves.excluded_case_ids),
        "failed": [{"case_id": cid, "error": err} for cid, err in curves.failed_cases],
    }


def write_correlation_csv(rows: Sequence[tuple[str, float]], path, seed: int,
                          digest: str) -> None:
    """Per-case correlations plus their mean."""
    with Path(path).open("w", encoding="utf-8") as stream:
        stream.write(_provenance_comment(seed, digest))
        stream.write("case_id,pearson_r\n")
        for case_id, r in rows:
            stream.write(f"{case_id},{_fmt(float(r))}\n")
        if rows:
            mean = float(np.mean([r for _, r in rows]))
            stream.write(f"mean,{_fmt(mean)}\n")


def write_skip_report(skipped: Sequence[tuple[str, str]], path, seed: int,
                      digest: str) -> None:
    """Cases dropped as out of coverage (or failed), with reasons."""
    with Path(path).open("w", encoding="utf-8") as stream:
        stream.write(_provenance_comment(seed, digest))
        stream.write("case_id\treason\n")
        for case_id, reason in skipped:
            reason_flat = reason.replace("\t", " ").replace("\n", " ")
            stream.write(f"{case_id}\t{reason_flat}\n")


def write_ttest_csv(rows: Sequence[dict], path, seed: int, digest: str) -> None:
    """Pairwise aggregation-method comparison table."""
    with Path(path).open("w", encoding="utf-8") as stream:
        stream.write(_provenance_comment(seed, digest))
        stream.write("comparison,metric,t,p\n")
        for row in rows:
            stream.write(",".join([
                row["comparison"], row["metric"], _fmt(row["t"]), _fmt(row["p"]),
            ]) + "\n")
