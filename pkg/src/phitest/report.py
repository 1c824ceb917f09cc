"""Plain-text, CSV and JSON renderings of tables, metrics and calibration runs.

Tables use 4 decimals with a fixed decimal point; JSON keeps full precision.
Every JSON or CSV artifact carries the run configuration and tool version.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from . import __version__
from .calibration import CalibrationResult
from .pipeline import FeatureTable, MetricsReport

HEADER = ("Feature", "SHAP", "Coef", "SE", "z", "p-value", "95% CI")
SEP = "  "


def fmt(x, digits: int = 4) -> str:
    if x is None:
        return "--"
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    s = f"{x:.{digits}f}"
    return "0." + "0" * digits if s == "-0." + "0" * digits else s


def fmt_ci(lo, hi) -> str:
    return f"[{fmt(lo)}, {fmt(hi)}]"


def render_table(table: FeatureTable) -> str:
    """Selected features in selection order, then the residual row, then the
    SHAP scores of every unselected feature."""
    conf = round(100 * (1 - table.alpha))
    head = list(HEADER)
    head[-1] = f"{conf}% CI"
    lines = [SEP.join(head)]
    by_index = {r.index: r for r in table.rows}
    for j in table.selected:
        r = by_index[j]
        lines.append(SEP.join([r.name, fmt(r.shap), fmt(r.coef), fmt(r.se), fmt(r.stat), fmt(r.p_value),
                               fmt_ci(r.ci_low, r.ci_high)]))
    lines.append(SEP.join(["Residual (unselected)", fmt(table.residual_shap), "--", "--", "--", "--", "[--, --]"]))
    unselected = [r for r in table.rows if not r.selected]
    if unselected:
        lines.append("")
        lines.append("Unselected features (SHAP only):")
        lines.extend(SEP.join([r.name, fmt(r.shap)]) for r in unselected)
    if table.mode == "split" and table.selected:
        lines.append("")
        lines.append("z column: t statistics from the inference half (split mode).")
    return "\n".join(lines)


METRIC_HEADER = ("Method", "Fidelity (%)", "Sparsity", "Stability", "Robustness")


def render_metrics(reports: list[MetricsReport]) -> str:
    lines = [SEP.join(METRIC_HEADER)]
    for r in reports:
        lines.append(SEP.join([r.method, fmt(r.fidelity_pct, 2), str(r.sparsity), fmt(r.stability, 2),
                               fmt(r.robustness, 2)]))
    return "\n".join(lines)


def render_calibration(res: CalibrationResult) -> str:
    lines = [f"calibration mode={res.mode} replicates={res.replicates} values={res.n_values} skipped={res.skipped}"]
    for row in res.rows:
        status = "PASS" if row["pass"] else "FAIL"
        lines.append(f"{row['quantity']}  level={fmt(row['level'])}  rate={fmt(row['rate'])}  "
                     f"sd={fmt(row['sd'])}  band=[{fmt(row['band_low'])}, {fmt(row['band_high'])}]  {status}")
    return "\n".join(lines)


def envelope(kind: str, payload, config: dict | None) -> dict:
    return {"tool": "phitest", "version": __version__, "kind": kind, "config": config or {}, "result": payload}


def write_json(path, kind: str, payload, config: dict | None = None) -> None:
    Path(path).write_text(json.dumps(envelope(kind, payload, config), indent=2, allow_nan=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def table_from_json(path) -> FeatureTable:
    return FeatureTable.from_dict(read_json(path)["result"])


def _write_csv(path, header, rows, config: dict | None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# phitest {__version__} config={json.dumps(config or {}, sort_keys=True)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _g(x):
    return "" if x is None else repr(float(x))


def table_to_csv(table: FeatureTable, path, config: dict | None = None) -> None:
    rows = [[r.name, _g(r.shap), int(r.selected), _g(r.coef), _g(r.se), _g(r.stat), _g(r.p_value),
             _g(r.ci_low), _g(r.ci_high)] for r in table.rows]
    rows.append(["Residual (unselected)", _g(table.residual_shap), 0, "", "", "", "", "", ""])
    _write_csv(path, ["feature", "shap", "selected", "coef", "se", "stat", "p_value", "ci_low", "ci_high"], rows, config)


def metrics_to_csv(reports: list[MetricsReport], path, config: dict | None = None) -> None:
    rows = [[r.method, _g(r.fidelity_pct), r.sparsity, _g(r.stability), _g(r.robustness), _g(r.r2_full),
             _g(r.r2_selected), r.replicates, " ".join(map(str, r.selected))] for r in reports]
    _write_csv(path, ["method", "fidelity_pct", "sparsity", "stability", "robustness", "r2_full",
                      "r2_selected", "replicates", "selected"], rows, config)


def calibration_to_csv(res: CalibrationResult, path, config: dict | None = None) -> None:
    keys = ["quantity", "level", "rate", "sd", "band_low", "band_high", "pass"]
    _write_csv(path, keys, [[row[k] for k in keys] for row in res.rows], config)
