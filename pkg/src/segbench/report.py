"""Metric tables, CSV/JSON reports and manifest-driven batch evaluation."""
from __future__ import annotations

import csv
import io
import json
import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ensemble import VoteConfig, argmax_labels, average_probs, majority_vote
from .io import read_labels, read_volume
from .metrics import NA, MetricRecord, Task, evaluate_case, nanmean, task_view
from .stats import DEFAULT_RESAMPLES, summarize
from .taxonomy import Taxonomy
from .volume import LabelVolume, ProbVolume

__all__ = [
    "MetricTable",
    "BoxplotSeries",
    "CASE_COLUMNS",
    "TABLE_ROWS",
    "format_value",
    "parse_value",
    "write_case_csv",
    "emit_summary_tables",
    "emit_volume_boxplots",
    "boxplot_series",
    "lesion_volumes",
    "ManifestError",
    "run_manifest",
]

log = logging.getLogger(__name__)

CASE_COLUMNS = ("case_id", "method", "task", "class", "dsc", "hd95_mm", "asd_mm", "avd_ml", "sen")
_COLUMN_METRIC = {"dsc": "dsc", "hd95_mm": "hd95", "asd_mm": "asd", "avd_ml": "avd", "sen": "sen"}

_OVERLAP = ("dsc", "hd95", "asd", "avd")
# (class, metric) rows of each task's summary table
TABLE_ROWS = {
    Task.LUNG: [("LUNG", m) for m in _OVERLAP] + [(c, "sen") for c in ("CON", "CPP", "GGO")],
    Task.BIN: [("BIN", m) for m in _OVERLAP],
    Task.MULTICLASS: [
        (c, m) for c in ("CON", "CPP", "GGO", "MEAN", "GGO_PLUS_CPP") for m in _OVERLAP
    ],
}
_METRIC_LABEL = {"dsc": "DSC", "hd95": "HD95", "asd": "ASD", "avd": "AVD", "sen": "SEN"}
_CLASS_LABEL = {"GGO_PLUS_CPP": "GGO + CPP"}
BOXPLOT_CLASSES = ("CON", "CPP", "GGO", "COM", "OAT", "BIN")


def format_value(v) -> str:
    if v is NA:
        return "NA"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(s: str):
    return NA if s == "NA" else float(s)


@dataclass
class MetricTable:
    """Metric records, unique per (case, method, class, task)."""

    records: list = field(default_factory=list)

    def __post_init__(self):
        recs, self.records, self._keys = list(self.records), [], set()
        self.extend(recs)

    def add(self, rec: MetricRecord) -> None:
        if rec.key in self._keys:
            raise ValueError(f"duplicate metric record {rec.key}")
        self._keys.add(rec.key)
        self.records.append(rec)

    def extend(self, recs: Iterable[MetricRecord]) -> None:
        for r in recs:
            self.add(r)

    def __len__(self):
        return len(self.records)

    def tasks(self) -> list[Task]:
        seen = {r.task for r in self.records}
        return [t for t in Task if t in seen]

    def methods(self, task=None) -> list[str]:
        out = []
        for r in self.records:
            if (task is None or r.task is task) and r.method_id not in out:
                out.append(r.method_id)
        return out

    def values(self, task: Task, eval_class: str, metric: str) -> dict:
        """method -> {case_id -> value} in record order."""
        out = {m: {} for m in self.methods(task)}
        for r in self.records:
            if r.task is task and r.eval_class == eval_class:
                out[r.method_id][r.case_id] = r.get(metric)
        return out


def write_case_csv(table: MetricTable, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CASE_COLUMNS)
    for r in table.records:
        w.writerow([r.case_id, r.method_id, r.task.value, r.eval_class]
                   + [format_value(r.get(_COLUMN_METRIC[c])) for c in CASE_COLUMNS[4:]])
    Path(path).write_text(buf.getvalue())


def _write_rows(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _markdown(task: Task, methods, rows, summaries) -> str:
    lines = [f"## {task.name}", "", "| Class | Metric | " + " | ".join(methods) + " |",
             "|---|---|" + "---|" * len(methods)]
    for cls, metric in rows:
        by_method = summaries[(cls, metric)]
        means = {m: s.mean for m, s in by_method.items() if s.mean is not NA}
        best = None
        if means:
            pick = max if metric in ("dsc", "sen") else min
            best = pick(means.values())
        cells = []
        for m in methods:
            s = by_method.get(m)
            if s is None or s.mean is NA:
                cells.append("NA")
                continue
            txt = f"{s.mean:.3g}"
            if s.mean == best:
                txt = f"**{txt}**"
            if s.superior_to_all:
                txt += "*"
            cells.append(txt)
        label = _CLASS_LABEL.get(cls, cls)
        lines.append(f"| {label} | {_METRIC_LABEL[metric]} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit_summary_tables(
    table: MetricTable,
    out_dir,
    n: int = DEFAULT_RESAMPLES,
    seed: int = 0,
    level: float = 0.95,
    markdown: bool = False,
) -> list[Path]:
    """Write per-task mean tables, CI companions and per-class statistics CSVs."""
    if not len(table):
        raise ValueError("metric table is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for task in table.tasks():
        methods = table.methods(task)
        rows = TABLE_ROWS[task]
        summaries = {}
        for cls, metric in rows:
            res = summarize(table.values(task, cls, metric), metric, n, seed, level)
            summaries[(cls, metric)] = {s.method: s for s in res}
        header = ["class", "metric"] + methods
        for name, attr in (("summary", "mean"), ("ci_lo", "ci_lo"), ("ci_hi", "ci_hi")):
            path = out_dir / f"{name}_{task.value}.csv"
            body = [
                [cls, metric] + [
                    format_value(getattr(summaries[(cls, metric)][m], attr))
                    if m in summaries[(cls, metric)] else "NA"
                    for m in methods
                ]
                for cls, metric in rows
            ]
            _write_rows(path, header, body)
            written.append(path)
        for cls in dict.fromkeys(c for c, _ in rows):
            path = out_dir / f"stats_{task.value}_{cls}.csv"
            body = []
            for c, metric in rows:
                if c != cls:
                    continue
                for m in methods:
                    s = summaries[(c, metric)][m]
                    body.append([m, metric, format_value(s.mean), format_value(s.ci_lo),
                                 format_value(s.ci_hi), format_value(s.superior_to_all),
                                 json.dumps(s.p_values, sort_keys=True)])
            _write_rows(path, ["method", "metric", "mean", "ci_lo", "ci_hi",
                               "superior_to_all", "p_values"], body)
            written.append(path)
        if markdown:
            path = out_dir / f"summary_{task.value}.md"
            path.write_text(_markdown(task, methods, rows, summaries))
            written.append(path)
    return written


@dataclass(frozen=True)
class BoxplotSeries:
    eval_class: str
    volumes_ml: tuple
    n_present: int
    n_total: int

    def __post_init__(self):
        if any(v <= 0 for v in self.volumes_ml):
            raise ValueError("boxplot volumes must be positive")
        if self.n_present > self.n_total:
            raise ValueError("n_present exceeds n_total")

    @property
    def mean(self):
        return nanmean(self.volumes_ml)

    def stats(self) -> dict:
        out = {
            "class": self.eval_class,
            "volumes_ml": list(self.volumes_ml),
            "n_present": self.n_present,
            "n_total": self.n_total,
            "mean": self.mean,
        }
        if not self.volumes_ml:
            out.update(q1=None, median=None, q3=None, whisker_lo=None, whisker_hi=None, outliers=[])
            return out
        v = np.asarray(self.volumes_ml, dtype=np.float64)
        q1, med, q3 = (float(x) for x in np.percentile(v, [25, 50, 75]))
        iqr = q3 - q1
        inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
        out.update(
            q1=q1,
            median=med,
            q3=q3,
            whisker_lo=float(inside.min()),
            whisker_hi=float(inside.max()),
            outliers=[float(x) for x in v if x < inside.min() or x > inside.max()],
        )
        return out


def boxplot_series(eval_class: str, volumes: Sequence[float]) -> BoxplotSeries:
    """Series for one class; zero-volume cases count towards ``n_total`` only."""
    present = tuple(float(v) for v in volumes if v > 0)
    return BoxplotSeries(eval_class, present, len(present), len(volumes))


def lesion_volumes(gt: LabelVolume, taxonomy: Taxonomy, classes=BOXPLOT_CLASSES) -> dict:
    """Reference volume in ml of each class in one case."""
    ml = gt.spacing.voxel_volume_ml
    return {c: taxonomy.project(gt, c).count * ml for c in classes}


def emit_volume_boxplots(volumes: Mapping[str, Mapping[str, float]], out_path) -> Path:
    """Write boxplot statistics; ``volumes`` maps class -> {case_id -> ml}."""
    series = [boxplot_series(cls, list(per_case.values())).stats() for cls, per_case in volumes.items()]
    out_path = Path(out_path)
    out_path.write_text(json.dumps({"series": series}, indent=2, sort_keys=True) + "\n")
    return out_path


# --------------------------------------------------------------------------- manifest


class ManifestError(ValueError):
    pass


_TASK_KEYS = {"lung", "bin", "mc", "multiclass", "binary"}


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _load_prediction(spec, base: Path) -> LabelVolume:
    if isinstance(spec, str):
        return read_labels(_resolve(base, spec))
    if not isinstance(spec, dict):
        raise ManifestError(f"bad prediction entry {spec!r}")
    if "labels" in spec:
        return read_labels(_resolve(base, spec["labels"]))
    if "class_ids" not in spec:
        raise ManifestError("probability predictions need 'class_ids'")
    if "probs" in spec:
        folds = [spec["probs"]]
    elif "folds" in spec:
        folds = spec["folds"]
    else:
        raise ManifestError(f"prediction entry needs labels, probs or folds: {sorted(spec)}")
    maps = [ProbVolume.from_channels([read_volume(_resolve(base, p)) for p in fold]) for fold in folds]
    return argmax_labels(average_probs(maps), spec["class_ids"])


def _prediction_for(entry, task: Task):
    if isinstance(entry, dict) and entry and set(entry) <= _TASK_KEYS:
        for key, value in entry.items():
            if Task.parse(key) is task:
                return value
        return None
    return entry


@dataclass
class _CaseResult:
    case_id: str
    records: list = field(default_factory=list)
    volumes: dict | None = None
    spacing: list | None = None
    errors: list = field(default_factory=list)


def _evaluate_manifest_case(case, ctx) -> _CaseResult:
    base, taxonomy, tasks, methods, maj, vote = ctx
    cid = str(case.get("id", "?"))
    res = _CaseResult(cid)
    try:
        gt = read_labels(_resolve(base, case["gt"]))
        res.volumes = lesion_volumes(gt, taxonomy)
        res.spacing = list(gt.spacing.as_tuple())
    except Exception as exc:  # noqa: BLE001 - isolate per-case failures
        res.errors.append(f"{cid}: ground truth: {exc}")
        return res
    preds = case.get("preds", case.get("pred_paths", {}))
    case_tasks = [Task.parse(t) for t in case.get("tasks", tasks)]
    cache = {}
    for task in case_tasks:
        views = {}
        for method in methods:
            entry = preds.get(method)
            spec = _prediction_for(entry, task) if entry is not None else None
            if spec is None:
                res.errors.append(f"{cid}: {method}/{task.value}: no prediction listed")
                continue
            try:
                key = json.dumps(spec, sort_keys=True)
                if key not in cache:
                    cache[key] = _load_prediction(spec, base)
                pred = cache[key]
                views[method] = task_view(pred, task, taxonomy)
                res.records.extend(evaluate_case(gt, pred, taxonomy, task, cid, method))
            except Exception as exc:  # noqa: BLE001
                res.errors.append(f"{cid}: {method}/{task.value}: {type(exc).__name__}: {exc}")
                log.debug("case %s failed:\n%s", cid, traceback.format_exc())
        if maj:
            name, members = maj
            missing = [m for m in members if m not in views]
            if missing:
                res.errors.append(f"{cid}: {name}/{task.value}: missing inputs {missing}")
                continue
            try:
                fused = majority_vote([views[m] for m in members], vote)
                res.records.extend(evaluate_case(gt, fused, taxonomy, task, cid, name))
            except Exception as exc:  # noqa: BLE001
                res.errors.append(f"{cid}: {name}/{task.value}: {type(exc).__name__}: {exc}")
    return res


def _order_key(methods):
    order = {m: i for i, m in enumerate(methods)}
    return lambda r: (list(Task).index(r.task), order.get(r.method_id, len(order)))


def run_manifest(
    manifest_path,
    out_dir,
    vote_seed: int | None = None,
    boot_n: int | None = None,
    boot_seed: int | None = None,
    markdown: bool = False,
    jobs: int = 1,
) -> int:
    """Evaluate every case of a manifest and write all reports.

    Returns 0 when every (case, method, task) was evaluated, 1 otherwise, and
    2 when the manifest itself is unusable. Failures are listed in
    ``errors.log``; they never stop the remaining cases.
    """
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("schema") != 1:
            raise ManifestError(f"unsupported manifest schema {manifest.get('schema')!r}")
        base = manifest_path.parent
        taxonomy = (Taxonomy.from_json(_resolve(base, manifest["taxonomy"]))
                    if manifest.get("taxonomy") else Taxonomy())
        tasks = [Task.parse(t) for t in manifest.get("tasks", ["lung", "bin", "mc"])]
        cases = manifest["cases"]
        if not isinstance(cases, list) or not cases:
            raise ManifestError("manifest lists no cases")
        methods = manifest.get("methods")
        if methods is None:
            methods = []
            for c in cases:
                for m in c.get("preds", c.get("pred_paths", {})):
                    if m not in methods:
                        methods.append(m)
        maj_cfg = manifest.get("majority_vote")
        maj = None
        if maj_cfg:
            maj = (maj_cfg.get("name", "MAJ"), list(maj_cfg.get("methods", methods)))
        boot = manifest.get("bootstrap", {})
        vote = VoteConfig(int(vote_seed if vote_seed is not None else manifest.get("vote_seed", 0)))
        n = int(boot_n if boot_n is not None else boot.get("n", DEFAULT_RESAMPLES))
        seed = int(boot_seed if boot_seed is not None else boot.get("seed", 0))
        level = float(boot.get("level", 0.95))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        (out_dir / "errors.log").write_text(f"manifest: {type(exc).__name__}: {exc}\n")
        log.error("unusable manifest %s: %s", manifest_path, exc)
        return 2

    ctx = (base, taxonomy, tasks, methods, maj, vote)
    with ThreadPoolExecutor(max_workers=max(1, int(jobs))) as pool:
        results = list(pool.map(lambda c: _evaluate_manifest_case(c, ctx), cases))

    table = MetricTable()
    all_methods = list(methods) + ([maj[0]] if maj else [])
    for r in sorted((rec for res in results for rec in res.records), key=_order_key(all_methods)):
        table.add(r)
    errors = [e for res in results for e in res.errors]

    write_case_csv(table, out_dir / "per_case.csv")
    if len(table):
        emit_summary_tables(table, out_dir, n, seed, level, markdown)
    volumes = {c: {} for c in BOXPLOT_CLASSES}
    for res in results:
        if res.volumes is not None:
            for c in BOXPLOT_CLASSES:
                volumes[c][res.case_id] = res.volumes[c]
    emit_volume_boxplots(volumes, out_dir / "boxplots.json")
    provenance = {
        "manifest": manifest_path.name,
        "vote_seed": vote.seed,
        "bootstrap": {"n": n, "seed": seed, "level": level},
        "taxonomy": taxonomy.to_json(),
        "methods": all_methods,
        "tasks": [t.value for t in tasks],
        "n_cases": len(cases),
        "asd": "pooled",
        "notes": ["OAT reference voxels are not in the multiclass ignore set unless configured"],
        "spacing_mm": {res.case_id: res.spacing for res in results},
        "n_errors": len(errors),
    }
    (out_dir / "run.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    (out_dir / "errors.log").write_text("".join(e + "\n" for e in errors))
    for e in errors:
        log.error(e)
    return 1 if errors else 0
