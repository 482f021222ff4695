"""Analytic output files: CSVs, stats JSON, and figure PNGs.

Every CSV and JSON writer embeds the config hash and seed in its header and
writes no timestamps, so identical inputs produce byte-identical files.
Figures are rendered from the same data but carry no such guarantee (PNG
encoders may differ across library versions).
"""

import csv
import hashlib
import io
import json

import numpy as np

from .analytics import ConfusionMatrix
from .labels import LABELS


def config_hash(config) -> str:
    """Stable 12-hex digest of a JSON-serializable config mapping."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _provenance_lines(provenance: dict) -> list:
    return [f"# {key}={provenance[key]}" for key in sorted(provenance)]


def write_confusion_csv(path, cm: ConfusionMatrix, provenance: dict) -> None:
    """8x8 counts with label row/column headers under provenance comments."""
    buf = io.StringIO()
    for line in _provenance_lines(provenance):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\predicted", *LABELS])
    for i, lab in enumerate(LABELS):
        writer.writerow([lab, *(int(v) for v in cm.counts[i])])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_confusion_csv(path) -> ConfusionMatrix:
    counts = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh)
                if row and not row[0].startswith("#")]
    header, *body = rows
    if header[1:] != list(LABELS) or len(body) != len(LABELS):
        raise ValueError(f"{path}: not an 8x8 confusion CSV")
    for row in body:
        counts.append([int(v) for v in row[1:]])
    return ConfusionMatrix(np.asarray(counts, dtype=np.int64))


def write_dice_csv(path, rows, provenance: dict) -> None:
    """Rows of (pair, method, dice), one line each, with provenance comments."""
    buf = io.StringIO()
    for line in _provenance_lines(provenance):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["pair", "method", "dice"])
    for pair, method, value in rows:
        writer.writerow([str(pair), method, repr(float(value))])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_dice_csv(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh)
                if row and not row[0].startswith("#")]
    if not rows or rows[0] != ["pair", "method", "dice"]:
        raise ValueError(f"{path}: not a dice table CSV")
    for pair, method, value in rows[1:]:
        out.append((pair, method, float(value)))
    return out


def stats_result_dict(res) -> dict:
    payload = {"statistic": res.statistic, "p_value": res.p_value, "df": list(res.df)}
    if res.comparison is not None:
        payload["comparison"] = res.comparison
    return payload


def write_stats_json(path, payload: dict, provenance: dict) -> None:
    doc = {"provenance": dict(sorted(provenance.items())), **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_confusion_heatmap(path, cm: ConfusionMatrix, title: str) -> None:
    """Heatmap colored by the square roots of the normalized values."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    im = ax.imshow(cm.display, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(LABELS)), LABELS, rotation=45, ha="right")
    ax.set_yticks(range(len(LABELS)), LABELS)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    for i in range(len(LABELS)):
        for j in range(len(LABELS)):
            value = cm.normalized[i, j]
            if value > 0:
                ax.text(j, i, f"{value:.2f}", ha="center", va="center",
                        fontsize=7, color="white" if cm.display[i, j] < 0.6 else "black")
    fig.colorbar(im, ax=ax, label="sqrt(row-normalized)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_dice_boxplot(path, method_values: dict, title: str) -> None:
    """Box plot of per-pair dice values, one box per saliency method."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    methods = sorted(method_values)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ax.boxplot([method_values[m] for m in methods], tick_labels=methods)
    ax.set_ylabel("dice vs human attention")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
