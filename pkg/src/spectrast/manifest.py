"""Benchmark manifest ingestion.

The manifest is UTF-8 tab-separated with a header row naming the case
fields. One row describes one (utterance, target, foil) triple. Gendered
articles are expected to be excluded upstream by the manifest author; the
engine does not re-filter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .core import ContrastCase
from .errors import ManifestError

MANIFEST_COLUMNS = (
    "case_id",
    "features_path",
    "reference_text",
    "target_word",
    "foil_word",
    "gender_of_target",
    "category",
)


@dataclass(frozen=True)
class RejectedRow:
    """A manifest row that failed validation, with its 1-based data row index."""

    row_index: int
    reason: str


def scan_manifest(path) -> tuple[list[ContrastCase], list[RejectedRow]]:
    """Parse every row, separating valid cases from rejected rows.

    Order-preserving and total: len(cases) + len(rejected) equals the number
    of data rows in the file. A missing column is a file-level error.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as stream:
        reader = csv.reader(stream, delimiter="\t")
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: manifest has no header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in MANIFEST_COLUMNS if c not in header]
        if missing:
            raise ManifestError(f"{path}: missing column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in MANIFEST_COLUMNS}

        cases: list[ContrastCase] = []
        rejected: list[RejectedRow] = []
        seen_ids: set[str] = set()
        for row_index, row in enumerate(reader, start=1):
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) < len(header):
                rejected.append(RejectedRow(row_index, f"expected {len(header)} fields, got {len(row)}"))
                continue
            fields = {name: row[col[name]].strip() for name in MANIFEST_COLUMNS}
            try:
                case = ContrastCase(
                    case_id=fields["case_id"],
                    features_path=fields["features_path"],
                    reference_text=fields["reference_text"],
                    target_word=fields["target_word"],
                    foil_word=fields["foil_word"],
                    gender_of_target=fields["gender_of_target"],
                    category=fields["category"],
                )
            except ValueError as exc:
                rejected.append(RejectedRow(row_index, str(exc)))
                continue
            if case.case_id in seen_ids:
                rejected.append(RejectedRow(row_index, f"duplicate case_id {case.case_id!r}"))
                continue
            seen_ids.add(case.case_id)
            cases.append(case)
    return cases, rejected


def load_manifest(path) -> list[ContrastCase]:
    """Load a manifest, raising on the first invalid row.

    An empty manifest (header only) yields an empty list, not an error.
    """
    cases, rejected = scan_manifest(path)
    if rejected:
        first = rejected[0]
        raise ManifestError(f"{path}: row {first.row_index}: {first.reason}")
    return cases
