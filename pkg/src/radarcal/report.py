"""Comparison tables and plot-ready CSVs from aggregate results."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import List, Optional, Sequence

# column key, header, direction of "better" (None: not ranked)
_COLUMNS = (
    ("accuracy", "Accuracy", max),
    ("ece", "ECE", min),
    ("mmc_all", "MMC", None),
    ("mmc_incorrect", "MMC (incorrect)", min),
)
DIGITS = 3


def _fmt(stat: Optional[dict]) -> str:
    if not stat or stat.get("mean") is None:
        return "n/a"
    return f"{stat['mean']:.{DIGITS}f} ± {stat['std']:.{DIGITS}f}"


def _bold_best(cells: List[str], stats: List[Optional[dict]], better) -> List[str]:
    if better is None:
        return cells
    means = [round(s["mean"], DIGITS) for s in stats if s and s.get("mean") is not None]
    if len(means) < 2:
        return cells
    best = better(means)
    return [f"**{c}**" if s and s.get("mean") is not None and round(s["mean"], DIGITS) == best else c
            for c, s in zip(cells, stats)]


def _table(header: List[str], names: List[str], columns: List[List[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    for i, name in enumerate(names):
        lines.append("| " + " | ".join([name] + [col[i] for col in columns]) + " |")
    return "\n".join(lines)


def render_table(entries: Sequence[dict]) -> str:
    """Markdown table of mean ± std per policy, best value per ranked column in bold.

    A second table of per-severity corruption results follows when present.
    """
    names = [e.get("display_name") or e["name"] for e in entries]
    columns = []
    for key, _, better in _COLUMNS:
        stats = [e.get("summary", {}).get(key) for e in entries]
        columns.append(_bold_best([_fmt(s) for s in stats], stats, better))
    out = [_table(["Policy"] + [h for _, h, _ in _COLUMNS], names, columns)]

    severities = sorted({r["severity"] for e in entries for r in e.get("corruption_by_severity", [])})
    if severities:
        header, columns = ["Policy"], []
        for key, label, better in (("ece", "ECE", min), ("mmc_all", "MMC", None),
                                   ("accuracy", "Accuracy", max)):
            for sev in severities:
                stats = []
                for e in entries:
                    rows = [r for r in e.get("corruption_by_severity", []) if r["severity"] == sev]
                    stats.append(rows[0][key] if rows else None)
                header.append(f"{label} s{sev}")
                columns.append(_bold_best([_fmt(s) for s in stats], stats, better))
        out.append(_table(header, names, columns))
    return "\n\n".join(out) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    return "" if v is None else repr(v)


def write_report_files(entries: Sequence[dict], out_dir) -> List[Path]:
    """Write ``table.md`` plus per-policy reliability, range and severity CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "table.md"]
    written[0].write_text(render_table(entries), encoding="utf-8")
    for e in entries:
        name = e["name"]
        if e.get("reliability_bins"):
            path = out / f"reliability_{name}.csv"
            path.write_text(_csv(["lo", "hi", "count", "mean_confidence", "accuracy"], [
                [_num(b["confidence_lo"]), _num(b["confidence_hi"]), b["count"],
                 _num(b["mean_confidence"]), _num(b["accuracy"])] for b in e["reliability_bins"]]),
                encoding="utf-8")
            written.append(path)
        if e.get("range_bins"):
            path = out / f"range_{name}.csv"
            path.write_text(_csv(
                ["lo", "hi", "count", "low_support", "ece_mean", "ece_std", "accuracy_mean",
                 "accuracy_std", "mmc_incorrect_mean", "mmc_incorrect_std"],
                [[_num(r["lo"]), _num(r["hi"]), r["count"], int(r["low_support"]),
                  _num(r["ece"]["mean"]), _num(r["ece"]["std"]), _num(r["accuracy"]["mean"]),
                  _num(r["accuracy"]["std"]), _num(r["mmc_incorrect"]["mean"]),
                  _num(r["mmc_incorrect"]["std"])] for r in e["range_bins"]]), encoding="utf-8")
            written.append(path)
        if e.get("corruption_by_severity"):
            path = out / f"severity_{name}.csv"
            path.write_text(_csv(
                ["severity", "ece_mean", "ece_std", "mmc_all_mean", "mmc_all_std",
                 "accuracy_mean", "accuracy_std"],
                [[r["severity"], _num(r["ece"]["mean"]), _num(r["ece"]["std"]),
                  _num(r["mmc_all"]["mean"]), _num(r["mmc_all"]["std"]),
                  _num(r["accuracy"]["mean"]), _num(r["accuracy"]["std"])]
                 for r in e["corruption_by_severity"]]), encoding="utf-8")
            written.append(path)
    return written
