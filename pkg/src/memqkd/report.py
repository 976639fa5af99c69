"""CSV / JSON / plot-data writers for sweep tables.

Floats are written with ``repr`` (shortest round-trip form) so parsing a
file reproduces the in-memory table exactly. Every file starts with a
``#`` comment header carrying the tool version, config digest and seed;
nothing time-dependent is written, so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .experiment import OutputRow

INT_COLUMNS = {"n_trials", "n_success", "n_error", "n_truncated", "seed"}
STR_COLUMNS = {"mode", "source", "model", "flags"}


def header_lines(version: str, digest: str, seed: int, extra: Sequence[str] = ()) -> list[str]:
    lines = [f"# memqkd {version}", f"# config_sha256 {digest}", f"# seed {seed}"]
    lines += [f"# {x}" for x in extra]
    return lines


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if not math.isfinite(value):
            return ""
        return repr(value)
    return str(value)


def rows_to_csv(rows: Iterable[OutputRow], header: Sequence[str]) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = OutputRow.columns()
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(getattr(r, c)) for c in cols])
    return buf.getvalue()


def _parse(col: str, text: str):
    if col in STR_COLUMNS:
        return text
    if text == "":
        return None
    return int(text) if col in INT_COLUMNS else float(text)


def rows_from_csv(text: str) -> list[OutputRow]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    cols = next(reader)
    return [OutputRow(**{c: _parse(c, v) for c, v in zip(cols, rec)}) for rec in reader]


def rows_to_json(rows: Iterable[OutputRow], meta: dict) -> str:
    records = []
    for r in rows:
        rec = dataclasses.asdict(r)
        records.append({k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in rec.items()})
    return json.dumps({"meta": meta, "rows": records}, indent=1, sort_keys=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    """Write via a sibling temp file so a failed run never leaves a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def curve_text(points: Sequence[tuple[float, float | None]], quantity: str, header: Sequence[str]) -> str:
    out = list(header) + [f"# distance_km {quantity}"]
    for x, y in points:
        out.append(f"{_cell(float(x))} {_cell(y) or 'nan'}")
    return "\n".join(out) + "\n"
