"""Comparison and ablation reports rendered as markdown, CSV or JSON.

Every number in a report comes from :mod:`darcnet.stats`. A statistic that is
undefined for the inputs (e.g. zero variance) is stored as a string starting
with ``"undefined:"`` and rendered as ``n/a``; a field left as ``None`` is a
construction bug and makes :func:`render` raise :class:`ReportError`.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Union

import numpy as np

from . import stats as S
from .model import ArchConfig, expected_param_count

FORMATS = ("markdown", "csv", "json")
Stat = Union[float, str, None]

DARC_REFERENCE_CHANNELS = 98
DARC_REFERENCE_COUNT = 87_910


class ReportError(ValueError):
    pass


def _guard(fn, *args) -> Stat:
    try:
        return fn(*args)
    except S.DegenerateInputError as exc:
        return f"undefined: {exc}"


@dataclass
class SplitComparison:
    split: str
    n: int
    mean_a: Stat
    mean_b: Stat
    median_a: Stat
    median_b: Stat
    mean_diff: Stat
    ci_lo: Stat
    ci_hi: Stat
    ci_level: float
    buckets: dict
    t_stat: Stat
    t_p: Stat
    wilcoxon_w: Stat
    wilcoxon_p: Stat
    d_pooled: Stat
    d_z: Stat
    cliffs_delta: Stat
    hist_edges: list
    hist_a: list
    hist_b: list


def compare_split(split: str, x, y, B: int = 10_000, level: float = 0.95, seed: int = 0,
                  bins: int = 20, zero_method: str = "drop") -> SplitComparison:
    """Summarize baseline ``x`` against challenger ``y`` (aligned task accuracies)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise ReportError(f"split {split!r}: need two aligned non-empty vectors")
    d = y - x
    if d.size >= 2:
        lo, hi = S.bootstrap_ci(d, B, level, seed)
    else:
        lo = hi = "undefined: bootstrap needs at least two tasks"
    t = _guard(S.paired_t, x, y) if d.size >= 2 else "undefined: fewer than two tasks"
    w = _guard(S.wilcoxon_signed_rank, x, y, zero_method)
    counts_edges_a = S.histogram(x, bins)
    counts_edges_b = S.histogram(y, bins)
    return SplitComparison(
        split=split, n=int(x.size),
        mean_a=float(x.mean()), mean_b=float(y.mean()),
        median_a=float(np.median(x)), median_b=float(np.median(y)),
        mean_diff=float(d.mean()), ci_lo=lo, ci_hi=hi, ci_level=level,
        buckets=S.win_loss_tie(x, y).to_dict(),
        t_stat=t[0] if isinstance(t, tuple) else t, t_p=t[1] if isinstance(t, tuple) else t,
        wilcoxon_w=w[0] if isinstance(w, tuple) else w, wilcoxon_p=w[1] if isinstance(w, tuple) else w,
        d_pooled=_guard(S.cohens_d_pooled, x, y) if d.size >= 2 else "undefined: fewer than two tasks",
        d_z=_guard(S.cohens_d_z, x, y) if d.size >= 2 else "undefined: fewer than two tasks",
        cliffs_delta=S.cliffs_delta(x, y),
        hist_edges=[float(e) for e in counts_edges_a[1]],
        hist_a=[int(c) for c in counts_edges_a[0]],
        hist_b=[int(c) for c in counts_edges_b[0]],
    )


@dataclass
class ComparisonReport:
    label_a: str
    label_b: str
    task_ids: list
    splits: dict
    config_a: dict = field(default_factory=dict)
    config_b: dict = field(default_factory=dict)
    fingerprints: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["splits"] = {k: asdict(v) for k, v in self.splits.items()}
        return d


def build_comparison(label_a: str, label_b: str, task_ids, vectors_a: dict, vectors_b: dict,
                     B: int = 10_000, seed: int = 0, bins: int = 20, **meta) -> ComparisonReport:
    """``vectors_*`` map split name to accuracy vectors aligned with ``task_ids``."""
    if set(vectors_a) != set(vectors_b):
        raise ReportError(f"split sets differ: {sorted(vectors_a)} vs {sorted(vectors_b)}")
    splits = {s: compare_split(s, vectors_a[s], vectors_b[s], B=B, seed=seed, bins=bins)
              for s in sorted(vectors_a, key=_split_order)}
    return ComparisonReport(label_a, label_b, list(task_ids), splits, **meta)


def _split_order(s: str):
    return ({"id": 0, "ood": 1}.get(s, 2), s)


def _pct(v: Stat, signed: bool = False) -> str:
    if isinstance(v, str):
        return "n/a"
    return f"{100 * v:+.2f}%" if signed else f"{100 * v:.2f}%"


def _num(v: Stat, digits: int = 4) -> str:
    if isinstance(v, str):
        return "n/a"
    return f"{v:.{digits}f}"


def _p(v: Stat) -> str:
    if isinstance(v, str):
        return "n/a"
    return "< 1e-12" if v < 1e-12 else f"{v:.4g}"


BUCKET_LABELS = {
    "b_better": "{b} > {a}",
    "both_perfect": "{b} = {a} = 1",
    "both_zero": "{b} = {a} = 0",
    "other_tie": "{b} = {a} (other)",
    "a_better": "{b} < {a}",
}


def _check_complete(report: ComparisonReport) -> None:
    for f in ("label_a", "label_b", "task_ids", "splits"):
        if getattr(report, f) is None:
            raise ReportError(f"report is missing field {f!r}")
    if not report.splits:
        raise ReportError("report is missing field 'splits'")
    for name, sc in report.splits.items():
        for f in fields(sc):
            if getattr(sc, f.name) is None:
                raise ReportError(f"report is missing field 'splits.{name}.{f.name}'")
        if sc.n != len(report.task_ids):
            raise ReportError(f"split {name!r} has {sc.n} tasks but the report lists {len(report.task_ids)}")


def table_rows(report: ComparisonReport) -> list[tuple[str, str, list[str]]]:
    """(section, metric, one display cell per split) in table order."""
    _check_complete(report)
    a, b = report.label_a, report.label_b
    sp = list(report.splits.values())
    rows = [
        ("summary", f"Mean {a}", [_pct(s.mean_a) for s in sp]),
        ("summary", f"Mean {b}", [_pct(s.mean_b) for s in sp]),
        ("summary", f"Median {a}", [_pct(s.median_a) for s in sp]),
        ("summary", f"Median {b}", [_pct(s.median_b) for s in sp]),
        ("summary", f"Mean Diff ({b}-{a})", [_pct(s.mean_diff, True) for s in sp]),
        ("summary", f"Diff {round(100 * sp[0].ci_level)}% CI",
         [f"[{_pct(s.ci_lo)}, {_pct(s.ci_hi)}]" for s in sp]),
    ]
    for key, label in BUCKET_LABELS.items():
        rows.append(("win_loss_tie", label.format(a=a, b=b),
                     [f"{s.buckets[key]} ({100 * s.buckets[key] / s.n:.2f}%)" for s in sp]))
    rows += [
        ("tests", "Paired t-test p", [_p(s.t_p) for s in sp]),
        ("tests", "Wilcoxon test p", [_p(s.wilcoxon_p) for s in sp]),
        ("tests", "Cohen's d (pooled)", [_num(s.d_pooled) for s in sp]),
        ("tests", "Cohen's d (paired d_z)", [_num(s.d_z) for s in sp]),
        ("tests", "Cliff's delta", [_num(s.cliffs_delta) for s in sp]),
        ("tests", "Total tasks", [str(s.n) for s in sp]),
    ]
    return rows


SECTION_TITLES = {"summary": "Summary Statistics", "win_loss_tie": "Win/Loss/Tie Analysis",
                  "tests": "Statistical Tests"}


def _markdown(report: ComparisonReport) -> str:
    rows = table_rows(report)
    names = [f"Test ({s.upper()})" for s in report.splits]
    out = [f"# {report.label_a} vs {report.label_b}", "",
           "| Metric | " + " | ".join(names) + " |",
           "|---|" + "---|" * len(names)]
    section = None
    for sec, metric, cells in rows:
        if sec != section:
            out.append(f"| **{SECTION_TITLES[sec]}** |" + " |" * len(names))
            section = sec
        out.append(f"| {metric} | " + " | ".join(cells) + " |")
    undefined = [f"- {s.split}.{f.name}: {getattr(s, f.name)[len('undefined: '):]}"
                 for s in report.splits.values() for f in fields(s)
                 if isinstance(getattr(s, f.name), str) and getattr(s, f.name).startswith("undefined:")]
    if undefined:
        out += ["", "Undefined statistics:", *undefined]
    if report.notes:
        out += ["", "Notes:", *[f"- {n}" for n in report.notes]]
    if report.fingerprints:
        out += ["", "Provenance:", *[f"- {k}: {v}" for k, v in sorted(report.fingerprints.items())]]
    return "\n".join(out) + "\n"


def _csv(report: ComparisonReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["section", "metric", *report.splits])
    for sec, metric, cells in table_rows(report):
        w.writerow([sec, metric, *cells])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def render(report: ComparisonReport, fmt: str = "markdown") -> str:
    """Deterministic text rendering of ``report`` in one of ``FORMATS``."""
    if fmt == "markdown":
        return _markdown(report)
    if fmt == "csv":
        return _csv(report)
    if fmt == "json":
        _check_complete(report)
        return json.dumps(report.to_dict(), sort_keys=True, indent=2, default=_json_default) + "\n"
    raise ReportError(f"unknown format {fmt!r}; choose from {FORMATS}")


def histogram_csv(report: ComparisonReport, split: str) -> str:
    """``bin_lo,bin_hi,count_<a>,count_<b>`` rows for plotting elsewhere."""
    sc = report.splits.get(split)
    if sc is None:
        raise ReportError(f"report has no split {split!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", f"count_{report.label_a}", f"count_{report.label_b}"])
    e = sc.hist_edges
    for i, (ca, cb) in enumerate(zip(sc.hist_a, sc.hist_b)):
        w.writerow([f"{e[i]:.4f}", f"{e[i + 1]:.4f}", ca, cb])
    return buf.getvalue()


def param_count_note(channels: int = DARC_REFERENCE_CHANNELS,
                     reference: int = DARC_REFERENCE_COUNT) -> str:
    """Statement of how the DARC parameter count compares with the quoted 87.91K."""
    count = expected_param_count(ArchConfig(arch="darc", channels=channels))
    diff = reference - count
    return (f"DARC at C={channels} has {count:,} parameters under this accounting "
            f"(embedding {10 * channels:,}, conv {9 * channels * channels + channels:,}, "
            f"layer norm {2 * channels}); the quoted figure is {reference / 1000:.2f}K, "
            f"a difference of {diff:+d} ({100 * diff / reference:+.2f}%).")


# --- optimizer ablation ---------------------------------------------------

def cliffs_magnitude(delta: float) -> str:
    a = abs(delta)
    if a < 0.147:
        return "negligible"
    if a < 0.33:
        return "small"
    if a < 0.474:
        return "medium"
    return "large"


def relative_improvement(new: float, base: float) -> Stat:
    if base == 0:
        return "undefined: baseline mean is zero"
    return (new - base) / base


@dataclass
class AblationReport:
    """Accuracy vectors keyed by ``(arch, optimizer)`` and split, aligned by task id."""

    task_ids: list
    vectors: dict
    notes: list = field(default_factory=list)
    fingerprints: dict = field(default_factory=dict)

    ARCHS = ("darc", "damp")
    OPTIMS = ("muon", "adamw")

    def _get(self, arch: str, opt: str, split: str) -> np.ndarray:
        try:
            return np.asarray(self.vectors[f"{arch}-{opt}"][split], dtype=np.float64)
        except KeyError as exc:
            raise ReportError(f"ablation report is missing field {arch}-{opt}.{split}") from exc

    def rows(self) -> list[tuple[str, list[str]]]:
        out = []
        for opt in self.OPTIMS:
            for arch in self.ARCHS:
                cells = [_pct(float(self._get(arch, opt, s).mean())) for s in ("id", "ood")]
                cells += [_pct(float(np.median(self._get(arch, opt, s)))) for s in ("id", "ood")]
                out.append((f"{arch.upper()}-{'Muon' if opt == 'muon' else 'AdamW'}", cells))
        return out

    def improvements(self) -> list[tuple[str, list[str]]]:
        out = []
        for arch in self.ARCHS:
            cells = []
            for s in ("id", "ood"):
                r = relative_improvement(float(self._get(arch, "muon", s).mean()),
                                         float(self._get(arch, "adamw", s).mean()))
                cells.append(f"{s.upper()}: {_pct(r, True)}")
            out.append((arch.upper(), cells))
        return out

    def significance(self, split: str = "id") -> list[tuple[str, str, str]]:
        pairs = [(f"Muon > AdamW ({a.upper()})", (a, "adamw"), (a, "muon")) for a in self.ARCHS]
        pairs += [(f"DAMP > DARC ({'Muon' if o == 'muon' else 'AdamW'})", ("darc", o), ("damp", o))
                  for o in self.OPTIMS]
        out = []
        for label, base, new in pairs:
            x, y = self._get(*base, split), self._get(*new, split)
            w = _guard(S.wilcoxon_signed_rank, x, y)
            delta = S.cliffs_delta(x, y)
            p = w[1] if isinstance(w, tuple) else w
            out.append((label, f"p = {_p(p)}", f"delta = {delta:.4f} ({cliffs_magnitude(delta)})"))
        return out

    def render_markdown(self) -> str:
        out = ["# Optimizer ablation", "",
               "| Model-Optimizer | Mean (ID) | Mean (OOD) | Median (ID) | Median (OOD) |",
               "|---|---|---|---|---|"]
        out += [f"| {name} | " + " | ".join(c) + " |" for name, c in self.rows()]
        out += ["", "Relative improvement from Muon (based on means):", "",
                "| Arch | ID | OOD |", "|---|---|---|"]
        out += [f"| {name} | " + " | ".join(c) + " |" for name, c in self.improvements()]
        out += ["", "Wilcoxon signed-rank tests (ID):", "", "| Comparison | p | Cliff's delta |",
                "|---|---|---|"]
        out += [f"| {a} | {b} | {c} |" for a, b, c in self.significance("id")]
        out.append(f"\nTotal tasks: {len(self.task_ids)}")
        if self.notes:
            out += ["", "Notes:", *[f"- {n}" for n in self.notes]]
        return "\n".join(out) + "\n"

    def render_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "mean_id", "mean_ood", "median_id", "median_ood"])
        for name, cells in self.rows():
            w.writerow([name, *cells])
        for name, cells in self.improvements():
            w.writerow([f"relative_improvement_{name}", *[c.split(": ")[1] for c in cells], "", ""])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"task_ids": list(self.task_ids), "notes": self.notes, "fingerprints": self.fingerprints,
                "vectors": {k: {s: [float(v) for v in vec] for s, vec in d.items()}
                            for k, d in sorted(self.vectors.items())}}
