"""Aligned-text tables for the aggregated and disaggregated reports.

Published values for the NYC and LA extracts are printed underneath as
references. They are documentation only: the open-data snapshots behind
them are not pinned, so nothing here compares against them.
"""

from __future__ import annotations

from .pipeline import GROUP_LABELS

AGG_TARGETS = ("p_day", "p_month")
DIS_TARGETS = ("d_day", "d_month")

# (MSE, R2) per step and target
REFERENCE_AGGREGATED = {
    "New York": {
        "step1": {"p_day": (0.0049, 0.243), "p_month": (0.005, 0.233)},
        "step2": {"p_day": (0.0044, 0.09), "p_month": (0.0045, 0.095)},
    },
    "Los Angeles": {
        "step1": {"p_day": (0.0014, 0.176), "p_month": (0.0049, 0.097)},
        "step2": {"p_day": (0.0013, 0.035), "p_month": (0.0048, 0.004)},
    },
}

# (LogLoss, AUC) per target and feature group, Los Angeles
REFERENCE_DISAGGREGATED = {
    "d_day": {"c": (0.682, 0.521), "z": (0.678, 0.531), "x": (0.681, 0.531), "v": (0.65, 0.626), "czxv": (0.656, 0.625)},
    "d_month": {"c": (0.592, 0.501), "z": (0.574, 0.545), "x": (0.59, 0.517), "v": (0.536, 0.68), "czxv": (0.53, 0.692)},
}

_STEP_LABELS = {"step1": "Step 1: p ~ f(x)", "step2": "Step 2: e ~ f(g)"}


def _num(v, digits=4):
    if v is None:
        return "n/a"
    return f"{v:.{digits}f}"


def _table(header_rows, body):
    rows = header_rows + body
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if k == len(header_rows) - 1:
            lines.append("-" * len(lines[-1]))
    return "\n".join(lines)


def aggregated_table(report: dict, references: bool = True) -> str:
    """Two steps by two targets, MSE and R2 per cell."""
    targets = [t for t in AGG_TARGETS if t in report["targets"]]
    head = [
        ["", *[x for t in targets for x in (t, "")]],
        ["", *["MSE", "R2"] * len(targets)],
    ]
    body = []
    for step in ("step1", "step2"):
        row = [_STEP_LABELS[step]]
        for t in targets:
            cell = report["targets"][t][step]
            row += [_num(cell["MSE"]), _num(cell["R2"], 3)]
        body.append(row)
    winners = ", ".join(f"{t}: {report['targets'][t]['step1']['model_id']}" for t in targets)
    out = [
        f"Aggregated model ({report['selection_metric']}; {report['n_areas']} areas; seed {report['seed']})",
        _table(head, body),
        f"Step 1 winners: {winners}",
    ]
    if references:
        out.append("")
        out.append("Reference values (published extracts, not asserted):")
        rbody = [
            [f"{city} {_STEP_LABELS[s][:6]}", *[_num(v, 4 if i % 2 == 0 else 3) for t in AGG_TARGETS for i, v in enumerate(ref[s][t])]]
            for city, ref in REFERENCE_AGGREGATED.items()
            for s in ("step1", "step2")
        ]
        out.append(_table([["", "p_day", "", "p_month", ""], ["", *["MSE", "R2"] * 2]], rbody))
    return "\n".join(out) + "\n"


def disaggregated_table(report: dict, references: bool = True) -> str:
    """Two targets by five feature groups, LogLoss and AUC of the winning model."""
    cells = {(c["target"], c["feature_group"]): c for c in report["cells"]}
    groups = [g for g in GROUP_LABELS if any(k[1] == g for k in cells)]
    targets = [t for t in DIS_TARGETS if any(k[0] == t for k in cells)]
    head = [
        ["", *[x for g in groups for x in (f"f({g})", "")]],
        ["", *["LogL", "AUC"] * len(groups)],
    ]
    body, model_rows = [], []
    for t in targets:
        row, mrow = [t], [t]
        for g in groups:
            m = cells[(t, g)]["metrics"]
            row += [_num(m["LogLoss"], 3), _num(m["AUC"], 3)]
            mrow += [cells[(t, g)]["model_id"], ""]
        body.append(row)
        model_rows.append(mrow)
    out = [
        f"Disaggregated model ({report['selection_metric']}; seed {report['seed']})",
        _table(head, body),
        "Winning models:",
        _table([["", *[x for g in groups for x in (g, "")]]], model_rows),
    ]
    for s in report.get("skipped", []):
        out.append(f"skipped group {s['group']}: {s['reason']}")
    if references:
        out.append("")
        out.append("Reference values, Los Angeles (published extract, not asserted):")
        rhead = [["", *[x for g in GROUP_LABELS for x in (f"f({g})", "")]], ["", *["LogL", "AUC"] * len(GROUP_LABELS)]]
        rbody = [[t, *[_num(v, 3) for g in GROUP_LABELS for v in REFERENCE_DISAGGREGATED[t][g]]] for t in DIS_TARGETS]
        out.append(_table(rhead, rbody))
    return "\n".join(out) + "\n"


def importance_table(entries: list, top: int = 10) -> str:
    out = []
    for e in entries:
        title = f"{e['target']} / {e['feature_group']} ({e['model_id']})"
        if not e["table"]:
            out.append(f"{title}: {e.get('note', 'no table')}")
            continue
        out.append(f"{title}, metric {e['metric']}, noise floor {e['noise_floor']:.4g}")
        body = [[str(r["rank"]), r["feature"], f"{r['importance']:.4g}"] for r in e["table"][:top]]
        out.append(_table([["rank", "feature", "importance"]], body))
    return "\n".join(out) + ("\n" if out else "")
