"""Command-line driver: ``prepare``, ``train``, ``evaluate``, ``ablate``, ``sweep``.

Every command reads an INI experiment config (see :mod:`isgfan.config`);
``--set section.key=value`` overrides any field and a handful of common
fields have their own flags. Runs land in
``<root>/<task>/<variant>/<noise>/<seed>/`` where ``<root>`` comes from
``[output] dir``, then ``$ISGFAN_OUTPUT_ROOT``, then ``./runs``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .evaluator import (accuracy, confusion_matrix, load_report, predict, summarize, write_confusion,
                        write_summary)
from .network import VARIANTS, load_checkpoint
from .signal_ingest import (NOISE_TYPES, ManifestEntry, NoiseSpec, dataset_from_records, file_checksum,
                            load_raw_condition, noisy_copy, read_archive, read_manifest, write_archive,
                            write_manifest)
from .trainer import run_dir, run_experiment

log = logging.getLogger("isgfan")

# variants compared by ``ablate`` when none are named
ABLATION_ORDER = ("isfa", "is", "fa", "fald", "full")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ config handling

def _parse_assignment(text: str):
    key, sep, value = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot:
        raise UsageError(f"--set expects section.key=value, got {text!r}")
    return section, name, value.strip()


def resolve_config(args) -> config_mod.ExperimentConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.ExperimentConfig()
    # route all overrides through the INI parser so types are handled once
    overrides: dict[str, dict[str, str]] = {}
    for item in args.set or []:
        section, name, value = _parse_assignment(item)
        overrides.setdefault(section, {})[name] = value
    for flag, (section, name) in {"variant": ("model", "variant"), "epochs": ("training", "epochs"),
                                  "seed": ("training", "seed"), "repeats": ("output", "repeats"),
                                  "out": ("output", "dir")}.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.setdefault(section, {})[name] = str(value)
    if overrides:
        text = config_mod.dumps(cfg) + "\n".join(
            f"[{s}]\n" + "\n".join(f"{k} = {v}" for k, v in kv.items()) for s, kv in overrides.items())
        try:
            cfg = config_mod.loads(_merge_ini(text))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _merge_ini(text: str) -> str:
    """Collapse repeated sections (later keys win) so configparser accepts the text."""
    merged: dict[str, dict[str, str]] = {}
    section = None
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = merged.setdefault(s[1:-1], {})
        elif "=" in s and section is not None:
            k, _, v = s.partition("=")
            section[k.strip()] = v.strip()
    return "\n".join(f"[{name}]\n" + "\n".join(f"{k} = {v}" for k, v in kv.items()) + "\n"
                     for name, kv in merged.items())


def _seeds(cfg) -> list[int]:
    return [cfg.training.seed + i for i in range(cfg.output.repeats)]


# ------------------------------------------------------------------ commands

def cmd_prepare(args) -> int:
    entries = read_manifest(args.manifest)
    specs = [NoiseSpec(args.noise_type, snr, args.noise_seed) for snr in args.snr]
    out = Path(args.out)
    for spec in specs:
        sub = out / spec.tag
        sub.mkdir(parents=True, exist_ok=True)
        written = []
        for e in entries:
            ds = dataset_from_records(load_raw_condition(e), args.length, args.stride,
                                      samples_per_class=e.samples_per_class, num_classes=e.num_classes)
            path = sub / f"{e.condition_id}.isgf"
            write_archive(path, noisy_copy(ds, spec), ds.labels, e.num_classes)
            written.append(ManifestEntry(e.condition_id, Path(path.name), e.num_classes, e.samples_per_class))
        write_manifest(sub / "manifest.txt", written)
        sums = [f"{file_checksum(sub / e.path)}  {e.path}" for e in written]
        (sub / "checksums.sha256").write_text("\n".join(sums) + "\n")
        print(f"{sub}: {len(written)} archives")
    return 0


def _train_one_snr(cfg, snr: float) -> tuple[list, Path]:
    reports = [run_experiment(cfg, seed=s, snr_db=snr) for s in _seeds(cfg)]
    summary_path = run_dir(cfg, snr, 0).parent / "summary.txt"
    summary = summarize(reports)
    summary["snr_db"] = float(snr)
    write_summary(summary, summary_path)
    return reports, summary_path


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    for snr in cfg.noise.snr_db:
        reports, summary_path = _train_one_snr(cfg, snr)
        mean = np.mean([r.final_accuracy for r in reports])
        print(f"{cfg.task_name} {cfg.model.variant} snr={snr:g}dB runs={len(reports)} "
              f"mean_final_accuracy={mean:.4f} -> {summary_path}")
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = read_archive(args.archive)
    if ds.labels is None:
        raise UsageError(f"{args.archive} carries no labels")
    preds, _ = predict(model, ds.samples)
    acc = accuracy(preds, ds.labels)
    if args.confusion:
        write_confusion(confusion_matrix(preds, ds.labels, model.num_classes), args.confusion)
    print(f"accuracy: {acc!r}")
    return 0


def cmd_ablate(args) -> int:
    base = resolve_config(args)
    variants = args.variants or list(ABLATION_ORDER)
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    rows = []
    for snr in base.noise.snr_db:
        for v in variants:
            cfg = config_mod.replace(base, model={"variant": v})
            reports, _ = _train_one_snr(cfg, snr)
            rows.append((snr, v, float(np.mean([r.final_accuracy for r in reports]))))
    table = base.output_root() / base.task_name / "ablation.csv"
    table.parent.mkdir(parents=True, exist_ok=True)
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snr_db", "variant", "mean_final_accuracy"])
        for snr, v, acc in rows:
            w.writerow([f"{snr:g}", v, repr(acc)])
            print(f"snr={snr:g}dB {v:12s} {acc:.4f}")
    print(f"-> {table}")
    return 0


def _parse_task(text: str) -> tuple[str, str]:
    src, sep, tgt = text.partition(":")
    if not sep or not src or not tgt:
        raise UsageError(f"--task expects SOURCE:TARGET, got {text!r}")
    return src, tgt


def sweep_table(root: Path, tasks: list[str], variant: str, snrs: list[float], noise_type: str):
    """Mean final accuracy per (snr, task), recomputed from stored reports."""
    table = {}
    for snr in snrs:
        for task in tasks:
            folder = Path(root) / task / variant / f"{noise_type}_{snr:g}dB"
            files = sorted(folder.glob("*/report.json"))
            if not files:
                raise FileNotFoundError(f"no reports under {folder}")
            table[(snr, task)] = float(np.mean([load_report(f).final_accuracy for f in files]))
    return table


def write_sweep(table, tasks, snrs, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["snr_db"] + tasks)
        for snr in snrs:
            w.writerow([f"{snr:g}"] + [repr(table[(snr, t)]) for t in tasks])


def cmd_sweep(args) -> int:
    base = resolve_config(args)
    snrs = args.snr or base.noise.snr_db
    pairs = [_parse_task(t) for t in args.task] if args.task else [(base.task.source, base.task.target)]
    tasks, live = [], {}
    for src, tgt in pairs:
        cfg = config_mod.replace(base, task={"source": src, "target": tgt})
        cfg.validate()
        tasks.append(cfg.task_name)
        if args.from_reports:
            continue
        for snr in snrs:
            reports, _ = _train_one_snr(cfg, snr)
            live[(snr, cfg.task_name)] = float(np.mean([r.final_accuracy for r in reports]))
    root = base.output_root()
    table = sweep_table(root, tasks, base.model.variant, snrs, base.noise.type)
    if live and any(abs(table[k] - v) > 1e-12 for k, v in live.items()):
        raise RuntimeError("stored reports disagree with live results; stale runs in the output root?")
    path = root / f"sweep_{base.model.variant}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_sweep(table, tasks, snrs, path)
    print("snr_db " + " ".join(f"{t:>10s}" for t in tasks))
    for snr in snrs:
        print(f"{snr:6g} " + " ".join(f"{table[(snr, t)]:10.4f}" for t in tasks))
    print(f"-> {path}")
    return 0


# ------------------------------------------------------------------ parser

def _add_run_flags(p: argparse.ArgumentParser, variant=True) -> None:
    p.add_argument("config", nargs="?", help="experiment INI file (defaults apply when omitted)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config field")
    if variant:
        p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--out", help="output root directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isgfan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="segment raw recordings and write noisy archives")
    p.add_argument("manifest", help="raw-data manifest: condition_id, path, num_classes, samples_per_class")
    p.add_argument("--length", type=int, default=2048)
    p.add_argument("--stride", type=int, default=None, help="window hop; defaults to --length")
    p.add_argument("--snr", type=float, action="append", required=True, help="repeatable, in dB")
    p.add_argument("--noise-type", choices=NOISE_TYPES, default="mixed")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train one variant, repeats seeds, write reports")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a labeled archive")
    p.add_argument("checkpoint")
    p.add_argument("archive")
    p.add_argument("--confusion", help="also write the confusion matrix here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train several variants under one config")
    _add_run_flags(p, variant=False)
    p.add_argument("--variants", nargs="+", metavar="VARIANT")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="SNR x task table of mean target accuracy")
    _add_run_flags(p)
    p.add_argument("--snr", type=float, action="append", help="repeatable; defaults to [noise] snr_db")
    p.add_argument("--task", action="append", metavar="SOURCE:TARGET")
    p.add_argument("--from-reports", action="store_true", help="rebuild the table without training")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "epochs", None) is not None and args.epochs < 0:
        parser.error("--epochs must be >= 0")
    if getattr(args, "repeats", None) is not None and args.repeats < 1:
        parser.error("--repeats must be >= 1")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (FileNotFoundError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"isgfan: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
