"""Report serialization and baseline-anchored comparison tables."""

from __future__ import annotations

import csv
import io
import json
from fractions import Fraction

CSV_COLUMNS = ("kernel", "mode", "blocks", "cycles", "ipc_num", "ipc_den", "stalls",
               "instr_user", "instr_relssp", "instr_goto")
COMPARE_COLUMNS = ("kernel", "mode", "blocks", "cycles", "speedup", "blocks_ratio", "ipc_ratio",
                   "instr_delta", "lock_wait_delta")


class CompareError(Exception):
    pass


def dumps(report: dict) -> str:
    """Canonical JSON text; equal reports give byte-identical output."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def csv_row(report: dict) -> dict:
    return {
        "kernel": report["kernel"],
        "mode": report["mode"],
        "blocks": report["plan"]["total"],
        "cycles": report["cycles"],
        "ipc_num": report["ipc"]["num"],
        "ipc_den": report["ipc"]["den"],
        "stalls": report["stall_cycles"],
        "instr_user": report["instructions"]["user"],
        "instr_relssp": report["instructions"]["relssp"],
        "instr_goto": report["instructions"]["goto"],
    }


def _write_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def reports_csv(reports) -> str:
    return _write_csv([csv_row(r) for r in reports], CSV_COLUMNS)


def _ipc(r: dict) -> Fraction:
    return Fraction(r["ipc"]["num"], r["ipc"]["den"])


def compare(reports: list[dict]) -> list[dict]:
    """Ratios of each report against the first one.

    ``speedup`` is baseline cycles over this run's cycles. All reports must
    come from the same kernel text.
    """
    if len(reports) < 2:
        raise CompareError("compare needs at least two reports")
    base = reports[0]
    for r in reports[1:]:
        if r["kernel_hash"] != base["kernel_hash"]:
            raise CompareError(
                f"report for {r['kernel']!r} ({r['mode']}) was produced from a different kernel "
                f"than the baseline {base['kernel']!r}"
            )
    rows = []
    for r in reports:
        base_ipc = _ipc(base)
        rows.append({
            "kernel": r["kernel"],
            "mode": r["mode"],
            "blocks": r["plan"]["total"],
            "cycles": r["cycles"],
            "speedup": float(Fraction(base["cycles"], r["cycles"])),
            "blocks_ratio": float(Fraction(r["plan"]["total"], base["plan"]["total"])),
            "ipc_ratio": float(_ipc(r) / base_ipc) if base_ipc else float("nan"),
            "instr_delta": r["instructions"]["total"] - base["instructions"]["total"],
            "lock_wait_delta": r["lock_wait_cycles"] - base["lock_wait_cycles"],
        })
    return rows


def compare_csv(rows) -> str:
    return _write_csv(rows, COMPARE_COLUMNS)


def format_table(rows, columns=COMPARE_COLUMNS) -> str:
    def cell(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(r[c]) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)
