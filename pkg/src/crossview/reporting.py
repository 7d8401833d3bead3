"""Report emission: delimited files, aligned plain-text tables, and
matplotlib figures rendered alongside them."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

METRIC_ORDER = ("1", "5", "10", "1%")


def _metric_headers():
    return [f"r@{m}" for m in METRIC_ORDER]


def write_recall_report(report, complexity, out_dir):
    """recall_report.json + recall.tsv + aligned recall_table.txt +
    recall_bars.png. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "r_at": report.r_at,
        "n_queries": report.n_queries,
        "n_references": report.n_references,
    }
    if complexity is not None:
        payload["param_counts"] = complexity.param_counts
        payload["param_total"] = complexity.param_total
        payload["mac_counts"] = complexity.mac_counts
        payload["mac_total"] = complexity.mac_total

    json_path = out_dir / "recall_report.json"
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                         encoding="utf-8")

    tsv_path = out_dir / "recall.tsv"
    headers = _metric_headers()
    values = [f"{report.r_at[m]:.2f}" for m in METRIC_ORDER]
    tsv_path.write_text(
        "\t".join(headers) + "\n" + "\t".join(values) + "\n", encoding="utf-8"
    )

    table_path = out_dir / "recall_table.txt"
    table_path.write_text(format_table(["model"] + headers,
                                       [["this-run"] + values]) + "\n",
                          encoding="utf-8")

    fig_path = out_dir / "recall_bars.png"
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(headers, [report.r_at[m] for m in METRIC_ORDER], color="#4878d0")
    ax.set_ylabel("recall (%)")
    ax.set_ylim(0, 100)
    ax.set_title(f"retrieval recall ({report.n_queries} queries)")
    fig.tight_layout()
    fig.savefig(fig_path, metadata={"Software": None})
    plt.close(fig)
    return [json_path, tsv_path, table_path, fig_path]


def format_table(headers, rows):
    """Aligned fixed-width text table."""
    columns = [headers] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in columns) for i in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def write_loss_curve(log_path, out_dir):
    """Render total/triplet loss per step from a JSONL training log."""
    out_dir = Path(out_dir)
    entries = []
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(json.loads(line))
    fig_path = out_dir / "loss_curve.png"
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if entries:
        ax.plot([e["total"] for e in entries], label="total", color="#4878d0")
        ax.plot([e["triplet"] for e in entries], label="triplet",
                color="#ee854a", alpha=0.8)
        ax.legend()
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(fig_path, metadata={"Software": None})
    plt.close(fig)
    return fig_path


def write_ablation_tables(cmi_rows, step_rows, out_dir):
    """Comparison tables (TSV + aligned text) and a grouped bar figure for
    the ablation grids. Rows are aggregated per variant by median r@K."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def aggregate(rows):
        names = []
        for r in rows:
            if r.name not in names:
                names.append(r.name)
        out = []
        for name in names:
            group = [r for r in rows if r.name == name]
            rec = {}
            for m in METRIC_ORDER:
                vals = sorted(g.recall[m] for g in group)
                mid = len(vals) // 2
                rec[m] = vals[mid] if len(vals) % 2 else 0.5 * (vals[mid - 1] + vals[mid])
            out.append((name, rec, group[0].param_total, group[0].mac_total))
        return out

    def emit(rows, stem):
        agg = aggregate(rows)
        headers = ["variant", "params", "macs"] + _metric_headers()
        body = [
            [name, str(params), str(macs)] + [f"{rec[m]:.2f}" for m in METRIC_ORDER]
            for name, rec, params, macs in agg
        ]
        tsv = out_dir / f"{stem}.tsv"
        tsv.write_text(
            "\t".join(headers) + "\n" + "\n".join("\t".join(r) for r in body) + "\n",
            encoding="utf-8",
        )
        txt = out_dir / f"{stem}.txt"
        txt.write_text(format_table(headers, body) + "\n", encoding="utf-8")
        written.extend([tsv, txt])
        return agg

    agg_cmi = emit(cmi_rows, "ablation_cmi") if cmi_rows else []
    agg_steps = emit(step_rows, "ablation_steps") if step_rows else []

    fig_path = out_dir / "ablation.png"
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, agg, title in ((axes[0], agg_cmi, "candidate comparison"),
                           (axes[1], agg_steps, "recurrence depth")):
        if agg:
            names = [a[0] for a in agg]
            ax.bar(names, [a[1]["1"] for a in agg], color="#4878d0")
            ax.tick_params(axis="x", rotation=30)
        ax.set_ylim(0, 100)
        ax.set_ylabel("r@1 (%)")
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(fig_path, metadata={"Software": None})
    plt.close(fig)
    written.append(fig_path)
    return written
