"""``darcnet`` command-line entry point.

Settings are resolved in this order, later winning: built-in defaults, the
JSON file given by ``--config``, the ``DARCNET_OUT`` environment variable (output
root only), then command-line flags.

Run layout::

    <out>/<arch>-<optim>-s<seed>/manifest.json
    <out>/<arch>-<optim>-s<seed>/<task>/model.ckpt
    <out>/<arch>-<optim>-s<seed>/<task>/train.jsonl     one {"step", "loss", "lr"} per line
    <out>/<arch>-<optim>-s<seed>/<task>/record.json
    <out>/<arch>-<optim>-s<seed>/<task>/eval-id.json    TaskResult
    <out>/<arch>-<optim>-s<seed>/<task>/eval-ood.json

Exit codes: 0 success, 1 invalid configuration or refused overwrite, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import evaluator as E
from . import report as R
from . import taskgen as G
from .checkpoint import CheckpointError, checkpoint_load, checkpoint_meta, checkpoint_save
from .model import ARCHS, ArchConfig, ConfigError
from .optim import OptimConfig
from .trainer import TrainConfig, TrainingDiverged, train_task

log = logging.getLogger("darcnet")

ENV_OUT = "DARCNET_OUT"
DEFAULT_CHANNELS = {"darc": 98, "damp": 64}
OPTIMIZERS = ("muon", "adamw")


class ValidationError(ValueError):
    """Bad configuration or arguments (exit code 1)."""


class RefusedError(ValidationError):
    """Output exists and ``--force`` was not given."""


class AlignmentError(ValidationError):
    pass


@dataclass
class ExperimentConfig:
    tasks: list = field(default_factory=lambda: list(G.FAMILIES))
    arch: str = "damp"
    optimizer: str = "muon"
    channels: dict = field(default_factory=lambda: dict(DEFAULT_CHANNELS))
    muon: dict = field(default_factory=dict)
    adamw: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    out: str = "runs"
    workers: int = 1

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ValidationError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not self.tasks:
            raise ValidationError("task list is empty")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        for t in self.tasks:
            resolve_task(t)
        for a in ARCHS:
            self.arch_config(a)
        for o in OPTIMIZERS:
            self.train_config(self.arch, o)
        self.sweep_config("id")
        unknown = set(self.stats) - {"B", "seed", "bins"}
        if unknown:
            raise ValidationError(f"unknown stats settings: {sorted(unknown)}")

    def arch_config(self, arch: str) -> ArchConfig:
        try:
            return ArchConfig(arch=arch, channels=int(self.channels.get(arch, DEFAULT_CHANNELS[arch])))
        except (ConfigError, ValueError, TypeError) as exc:
            raise ValidationError(f"arch {arch}: {exc}") from None

    def optim_config(self, name: str) -> OptimConfig:
        base = OptimConfig() if name == "muon" else OptimConfig.adamw_default()
        overrides = self.muon if name == "muon" else self.adamw
        try:
            return dataclasses.replace(base, **overrides)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{name} settings: {exc}") from None

    def train_config(self, arch: str, optimizer: str) -> TrainConfig:
        t = dict(self.train)
        allowed = {"batches", "batch_size", "band", "seed", "dtype", "bucketing"}
        if set(t) - allowed:
            raise ValidationError(f"unknown train settings: {sorted(set(t) - allowed)}")
        if "seed" in t and not isinstance(t["seed"], int):
            raise ValidationError("train.seed must be an integer")
        try:
            return TrainConfig(arch=self.arch_config(arch), optim=self.optim_config(optimizer),
                               **{k: tuple(v) if k == "band" else v for k, v in t.items()})
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"train settings: {exc}") from None

    def sweep_config(self, split: str) -> E.SweepConfig:
        s = dict(self.sweep)
        if set(s) - {"grids_per_value", "seed", "band_width"}:
            raise ValidationError(f"unknown sweep settings: {sorted(set(s) - {'grids_per_value', 'seed', 'band_width'})}")
        try:
            return E.SweepConfig.for_split(split, **s)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"sweep settings: {exc}") from None

    @property
    def seed(self) -> int:
        return int(self.train.get("seed", 0))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(doc) - names
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**doc)


def resolve_task(ref: str):
    """Built-in ``family[:seed]`` or a path to a dataset file."""
    if ref.endswith(".json") or os.sep in ref:
        if not os.path.exists(ref):
            raise ValidationError(f"dataset file not found: {ref}")
        try:
            return G.DatasetTask(Path(ref).stem, G.load_dataset(ref))
        except G.DatasetError as exc:
            raise ValidationError(f"{ref}: {exc}") from None
    try:
        return G.TaskSpec.from_id(ref)
    except (G.TaskError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def code_version() -> str:
    h = hashlib.sha256()
    pkg = Path(__file__).parent
    for f in sorted(pkg.glob("*.py")):
        h.update(f.name.encode() + b"\0" + f.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_dir(out: str, arch: str, optimizer: str, seed: int) -> Path:
    return Path(out) / f"{arch}-{optimizer}-s{seed}"


def task_dirname(task_id: str) -> str:
    return task_id.replace(os.sep, "_").replace(":", "@")


def update_manifest(root: Path, config: ExperimentConfig, files: Sequence[Path]) -> None:
    root.mkdir(parents=True, exist_ok=True)
    path = root / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {"files": {}}
    doc["config_hash"] = config.digest()
    doc["code_version"] = code_version()
    for f in files:
        doc["files"][str(Path(f).relative_to(root))] = sha256_file(Path(f))
    doc["files"] = dict(sorted(doc["files"].items()))
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_new(path: Path, text: str, force: bool) -> Path:
    if path.exists() and not force:
        raise RefusedError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


# ---------------------------------------------------------------------------
# jobs (top-level so they can run in worker processes)


def train_one(cfg_dict: dict, task_ref: str, arch: str, optimizer: str, force: bool) -> list[str]:
    cfg = ExperimentConfig(**cfg_dict)
    task = resolve_task(task_ref)
    tdir = run_dir(cfg.out, arch, optimizer, cfg.seed) / task_dirname(task.task_id)
    ckpt = tdir / "model.ckpt"
    if ckpt.exists() and not force:
        raise RefusedError(f"{ckpt} exists; pass --force to overwrite")
    tc = cfg.train_config(arch, optimizer)
    start = time.perf_counter()
    record = train_task(tc, task)
    log.info("%s/%s-%s: %d steps, loss %.4f -> %.4f in %.1fs", task.task_id, arch, optimizer,
             len(record.losses), record.losses[0], record.losses[-1], time.perf_counter() - start)
    tdir.mkdir(parents=True, exist_ok=True)
    meta = {"task_id": task.task_id, "task_ref": task_ref, "arch": arch, "optimizer": optimizer,
            "train": tc.to_dict()}
    digest = checkpoint_save(record.params, ckpt, meta)
    lines = "".join(json.dumps({"step": i, "loss": l, "lr": r}) + "\n"
                    for i, (l, r) in enumerate(zip(record.losses, record.lrs)))
    written = [ckpt, _write_new(tdir / "train.jsonl", lines, True)]
    rec = {**meta, "model_seed": record.model_seed, "data_seed": record.data_seed,
           "steps": len(record.losses), "first_loss": record.losses[0],
           "final_loss": record.losses[-1], "checkpoint_sha256": digest}
    written.append(_write_new(tdir / "record.json", json.dumps(rec, indent=2, sort_keys=True) + "\n", True))
    return [str(p) for p in written]


def eval_checkpoint(cfg_dict: dict, ckpt: str, split: str, output: Optional[str], force: bool,
                    expected: Optional[dict] = None) -> str:
    cfg = ExperimentConfig(**cfg_dict)
    meta = checkpoint_meta(ckpt)
    params = checkpoint_load(ckpt, ArchConfig.from_dict(expected) if expected else None)
    task = resolve_task(meta["task_ref"])
    result = E.sweep(params, task, cfg.sweep_config(split))
    result.meta["checkpoint_sha256"] = sha256_file(Path(ckpt))
    result.meta["arch"] = params.config.arch
    result.meta["optimizer"] = meta.get("optimizer")
    out = Path(output) if output else Path(ckpt).parent / f"eval-{split}.json"
    _write_new(out, json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", force)
    log.info("%s %s: task accuracy %.4f", task.task_id, split, result.task_accuracy)
    return str(out)


def train_and_eval(cfg_dict: dict, task_ref: str, arch: str, optimizer: str, force: bool) -> list[str]:
    paths = train_one(cfg_dict, task_ref, arch, optimizer, force)
    ckpt = paths[0]
    for split in E.SPLITS:
        paths.append(eval_checkpoint(cfg_dict, ckpt, split, None, force))
    return paths


def _fan_out(cfg: ExperimentConfig, fn, jobs: list[tuple]) -> list[str]:
    if cfg.workers == 1 or len(jobs) == 1:
        return [p for job in jobs for p in fn(*job)]
    with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs))) as pool:
        return [p for paths in pool.map(fn, *zip(*jobs)) for p in paths]


def _preflight(cfg: ExperimentConfig, archs, optimizers, force: bool) -> None:
    if force:
        return
    for arch in archs:
        for opt in optimizers:
            for ref in cfg.tasks:
                ckpt = (run_dir(cfg.out, arch, opt, cfg.seed)
                        / task_dirname(resolve_task(ref).task_id) / "model.ckpt")
                if ckpt.exists():
                    raise RefusedError(f"{ckpt} exists; pass --force to overwrite")


def _manifest_by_run(cfg: ExperimentConfig, paths: Sequence[str]) -> None:
    by_root: dict[Path, list[Path]] = {}
    out = Path(cfg.out).resolve()
    for p in map(Path, paths):
        rel = p.resolve().relative_to(out)
        by_root.setdefault(out / rel.parts[0], []).append(p.resolve())
    for root, files in by_root.items():
        update_manifest(root, cfg, files)


# ---------------------------------------------------------------------------
# result loading and comparison


def load_results(run: Path, split: str) -> dict[str, E.TaskResult]:
    if not run.is_dir():
        raise ValidationError(f"run directory not found: {run}")
    out = {}
    for f in sorted(run.glob(f"*/eval-{split}.json")):
        r = E.TaskResult.from_dict(json.loads(f.read_text()))
        out[r.task_id] = r
    return out


def _run_label(run: Path) -> str:
    recs = sorted(run.glob("*/record.json"))
    if recs:
        return json.loads(recs[0].read_text())["arch"].upper()
    return run.name


def _run_provenance(run: Path) -> dict:
    m = run / "manifest.json"
    if not m.exists():
        return {}
    doc = json.loads(m.read_text())
    return {"config_hash": doc.get("config_hash"), "code_version": doc.get("code_version"),
            "checkpoints": {k: v for k, v in doc.get("files", {}).items() if k.endswith("model.ckpt")}}


def aligned_vectors(run_a: Path, run_b: Path) -> tuple[list[str], dict, dict]:
    va, vb, ids = {}, {}, None
    for split in E.SPLITS:
        ra, rb = load_results(run_a, split), load_results(run_b, split)
        if not ra and not rb:
            continue
        if set(ra) != set(rb):
            missing_b = sorted(set(ra) - set(rb))
            missing_a = sorted(set(rb) - set(ra))
            raise AlignmentError(f"split {split}: task sets differ; missing from {run_b}: {missing_b}; "
                                 f"missing from {run_a}: {missing_a}")
        split_ids = sorted(ra)
        if ids is not None and split_ids != ids:
            raise AlignmentError(f"split {split} covers different tasks than the other split")
        ids = split_ids
        va[split] = [ra[t].task_accuracy for t in ids]
        vb[split] = [rb[t].task_accuracy for t in ids]
    if not ids:
        raise AlignmentError(f"no evaluation results found in {run_a} and {run_b}")
    return ids, va, vb


def write_comparison(run_a: Path, run_b: Path, outdir: Path, cfg: ExperimentConfig, force: bool,
                     label_a: Optional[str] = None, label_b: Optional[str] = None) -> list[str]:
    ids, va, vb = aligned_vectors(run_a, run_b)
    la, lb = label_a or _run_label(run_a), label_b or _run_label(run_b)
    if la == lb:
        la, lb = run_a.name, run_b.name
    st = {"B": 10_000, "seed": 0, "bins": 20, **cfg.stats}
    notes = []
    if "darc" in (la.lower(), lb.lower()) or any("darc" in r.name for r in (run_a, run_b)):
        notes.append(R.param_count_note())
    rep = R.build_comparison(la, lb, ids, va, vb, B=st["B"], seed=st["seed"], bins=st["bins"],
                             fingerprints={"a": json.dumps(_run_provenance(run_a), sort_keys=True),
                                           "b": json.dumps(_run_provenance(run_b), sort_keys=True)},
                             notes=notes)
    written = [_write_new(outdir / "report.md", R.render(rep, "markdown"), force),
               _write_new(outdir / "report.csv", R.render(rep, "csv"), force),
               _write_new(outdir / "report.json", R.render(rep, "json"), force)]
    for split in rep.splits:
        written.append(_write_new(outdir / f"hist-{split}.csv", R.histogram_csv(rep, split), force))
    return [str(p) for p in written]


def write_ablation(cfg: ExperimentConfig, outdir: Path, force: bool) -> list[str]:
    vectors, ids = {}, None
    for arch in ARCHS:
        for opt in OPTIMIZERS:
            run = run_dir(cfg.out, arch, opt, cfg.seed)
            vectors[f"{arch}-{opt}"] = {}
            for split in E.SPLITS:
                res = load_results(run, split)
                split_ids = sorted(res)
                if ids is None:
                    ids = split_ids
                if split_ids != ids:
                    raise AlignmentError(f"{run} {split}: tasks {split_ids} differ from {ids}")
                vectors[f"{arch}-{opt}"][split] = [res[t].task_accuracy for t in ids]
    rep = R.AblationReport(ids, vectors, notes=[R.param_count_note()])
    written = [_write_new(outdir / "ablation.md", rep.render_markdown(), force),
               _write_new(outdir / "ablation.csv", rep.render_csv(), force),
               _write_new(outdir / "ablation.json", json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n", force)]
    return [str(p) for p in written]


# ---------------------------------------------------------------------------
# commands


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    env_out = os.environ.get(ENV_OUT)
    if env_out:
        cfg.out = env_out
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "task", None):
        cfg.tasks = list(args.task)
    if getattr(args, "arch", None):
        cfg.arch = args.arch
    if getattr(args, "optim", None):
        cfg.optimizer = args.optim
    if getattr(args, "channels", None) is not None:
        cfg.channels = {**cfg.channels, cfg.arch: args.channels}
    train = dict(cfg.train)
    for flag, key in (("batches", "batches"), ("batch_size", "batch_size"), ("seed", "seed"),
                      ("dtype", "dtype")):
        if getattr(args, flag, None) is not None:
            train[key] = getattr(args, flag)
    cfg.train = train
    if getattr(args, "lr", None) is not None:
        target = "muon" if cfg.optimizer == "muon" else "adamw"
        setattr(cfg, target, {**getattr(cfg, target), "lr": args.lr})
    if getattr(args, "grids_per_value", None) is not None:
        cfg.sweep = {**cfg.sweep, "grids_per_value": args.grids_per_value}
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def cmd_train(cfg: ExperimentConfig, args) -> int:
    _preflight(cfg, [cfg.arch], [cfg.optimizer], args.force)
    jobs = [(cfg.to_dict(), t, cfg.arch, cfg.optimizer, args.force) for t in cfg.tasks]
    paths = _fan_out(cfg, train_one, jobs)
    _manifest_by_run(cfg, paths)
    for p in paths:
        print(p)
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    splits = list(E.SPLITS) if args.split == "both" else [args.split]
    if args.checkpoint:
        expected = cfg.arch_config(args.arch).to_dict() if args.arch else None
        jobs = [(cfg.to_dict(), args.checkpoint, s, args.output if len(splits) == 1 else None,
                 args.force, expected) for s in splits]
    else:
        root = run_dir(cfg.out, cfg.arch, cfg.optimizer, cfg.seed)
        expected = cfg.arch_config(cfg.arch).to_dict()
        jobs = []
        for ref in cfg.tasks:
            ckpt = root / task_dirname(resolve_task(ref).task_id) / "model.ckpt"
            if not ckpt.exists():
                raise ValidationError(f"no checkpoint for task {ref!r} at {ckpt}")
            jobs += [(cfg.to_dict(), str(ckpt), s, None, args.force, expected) for s in splits]
    paths = _fan_out(cfg, _eval_job, jobs)
    inside = [p for p in paths if _is_under(p, cfg.out)]
    if inside:
        _manifest_by_run(cfg, inside)
    for p in paths:
        print(p)
    return 0


def _eval_job(*job) -> list[str]:
    return [eval_checkpoint(*job)]


def _is_under(path: str, root: str) -> bool:
    try:
        rel = Path(path).resolve().relative_to(Path(root).resolve())
    except ValueError:
        return False
    return len(rel.parts) > 1


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    a, b = Path(args.run_a), Path(args.run_b)
    outdir = Path(args.output) if args.output else Path(cfg.out) / f"compare-{a.name}-vs-{b.name}"
    paths = write_comparison(a, b, outdir, cfg, args.force, args.label_a, args.label_b)
    update_manifest(outdir, cfg, [Path(p) for p in paths])
    for p in paths:
        print(p)
    return 0


def cmd_ablate(cfg: ExperimentConfig, args) -> int:
    _preflight(cfg, ARCHS, OPTIMIZERS, args.force)
    jobs = [(cfg.to_dict(), t, arch, opt, args.force)
            for arch in ARCHS for opt in OPTIMIZERS for t in cfg.tasks]
    paths = _fan_out(cfg, train_and_eval, jobs)
    _manifest_by_run(cfg, paths)
    outdir = Path(args.output) if args.output else Path(cfg.out) / f"ablation-s{cfg.seed}"
    report_paths = write_ablation(cfg, outdir, args.force)
    update_manifest(outdir, cfg, [Path(p) for p in report_paths])
    for p in paths + report_paths:
        print(p)
    return 0


def cmd_gen(cfg: ExperimentConfig, args) -> int:
    spec = resolve_task(args.family)
    if not isinstance(spec, G.TaskSpec):
        raise ValidationError("gen needs a built-in task family")
    try:
        rng = np.random.default_rng(args.seed)
        pairs = [G.generate(spec, args.lo, args.hi, rng) for _ in range(args.count)]
    except G.InvalidRangeError as exc:
        raise ValidationError(str(exc)) from None
    out = Path(args.output)
    _write_new(out, G.dump_dataset(pairs), args.force)
    print(out)
    return 0


def cmd_bench(cfg: ExperimentConfig, args) -> int:
    refs = args.family or list(G.FAMILIES)
    for ref in refs:
        spec = resolve_task(ref)
        if not isinstance(spec, G.TaskSpec):
            raise ValidationError("bench needs built-in task families")
        res = G.throughput_bench(spec, args.seconds, args.lo, args.hi)
        res["meets_threshold"] = res["pairs_per_second"] >= args.min_rate
        print(json.dumps(res, sort_keys=True))
    return 0


def _common(p: argparse.ArgumentParser, training: bool = True) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help=f"output root (overrides ${ENV_OUT} and the config)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--workers", type=int, help="task-level worker processes")
    p.add_argument("-v", "--verbose", action="store_true")
    if training:
        p.add_argument("--task", action="append", help="task id or dataset path (repeatable)")
        p.add_argument("--arch", choices=ARCHS)
        p.add_argument("--optim", choices=OPTIMIZERS)
        p.add_argument("--channels", type=int)
        p.add_argument("--batches", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--dtype", choices=("float32", "float64"))
        p.add_argument("--grids-per-value", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darcnet", description="Train, evaluate and compare DARC / DAMP grid models.")
    parser.add_argument("--version", action="version", version=f"darcnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per task")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="difficulty sweep of trained checkpoints")
    _common(p)
    p.add_argument("--checkpoint", help="evaluate this file instead of the configured run")
    p.add_argument("--split", choices=("id", "ood", "both"), default="both")
    p.add_argument("--output", help="result path (single split with --checkpoint only)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="statistical comparison of two evaluated runs")
    _common(p, training=False)
    p.add_argument("run_a", help="baseline run directory")
    p.add_argument("run_b", help="challenger run directory")
    p.add_argument("--output", help="report directory")
    p.add_argument("--label-a")
    p.add_argument("--label-b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="architecture x optimizer grid with report")
    _common(p)
    p.add_argument("--output", help="report directory")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen", help="write generated pairs as a dataset file")
    _common(p, training=False)
    p.add_argument("family", help="family[:seed]")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--lo", type=float, default=0.3)
    p.add_argument("--hi", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench", help="generator throughput")
    p.add_argument("family", nargs="*")
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--lo", type=float, default=0.3)
    p.add_argument("--hi", type=float, default=0.5)
    p.add_argument("--min-rate", type=float, default=200.0)
    p.add_argument("--config")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.func(cfg, args)
    except ValidationError as exc:
        print(f"darcnet: error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, ConfigError) as exc:
        print(f"darcnet: error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, OSError, RuntimeError) as exc:
        print(f"darcnet: runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
