"""Batch experiment runner: dataset generation, solving, tuning, evaluation.

Subcommands
-----------
gen-dataset   simulate a dataset directory from a scene config
solve-pm      pressure-matching pre-filters for a dataset split
tune-ae       search the global regularization weight for a target effort
evaluate      score pre-filters (internal PM or an external directory)
compare       merge evaluation summaries into side-by-side tables

Every command writes its outputs plus a ``run_manifest.json`` under ``--out``.
Outputs are deterministic: re-running a command with identical inputs and seed
produces byte-identical files (no timestamps are recorded).

Exit codes: 0 success, 2 usage error, 3 validation failure, 4 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    DataIOError,
    Dataset,
    DimensionError,
    generate_dataset,
    load_dataset,
    read_prefilters,
    write_prefilters,
)
from .metrics import CSV_COLUMNS, compute_report
from .scene import MASK_NAMES, GeometryError, SceneConfig, make_scene, mask_indices
from .solver import (
    IllPosedError,
    PreFilterSet,
    TuneError,
    solve_masked_pm_many,
    tune_regularization,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

DEFAULT_N_SAMPLES = 2000
DEFAULT_NUM_FREQS = 128

# Published benchmark rows rendered by `compare` for context only: they come
# from a different simulator and a differently pinned effort metric, so they
# are reference points for direction, never numeric targets.
PUBLISHED_REFERENCE_ROWS = [
    ("pm", "Grid-3#1", -9.67, -17.25, 9.61),
    ("pm", "Grid-3#2", -9.87, -17.23, 9.13),
    ("pm", "Grid-3#3", -8.70, -16.39, 7.73),
    ("neural", "Grid-3#1", -21.79, -33.36, 14.12),
    ("neural", "Grid-3#2", -21.86, -33.33, 14.12),
    ("neural", "Grid-3#3", -21.87, -33.32, 14.12),
    ("neural-flexible", "Grid-12", -22.41, -32.16, 14.17),
    ("neural-flexible", "Grid-6", -22.21, -32.94, 14.13),
    ("neural-flexible", "Grid-4", -22.03, -33.11, 14.14),
    ("neural-flexible", "Grid-3#1", -21.79, -33.36, 14.13),
    ("neural-flexible", "Grid-2#1", -20.90, -33.76, 14.12),
    ("neural-fixed", "Grid-12", -22.67, -32.70, 14.07),
    ("neural-fixed", "Grid-6", -22.68, -32.66, 14.08),
    ("neural-fixed", "Grid-4", -22.64, -32.64, 14.08),
    ("neural-fixed", "Grid-3#1", -22.60, -32.69, 14.06),
    ("neural-fixed", "Grid-2#1", -22.18, -33.09, 14.05),
]


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def _write_run_manifest(out_dir: Path, command: str, params: dict) -> None:
    manifest = {"tool": "pszsim", "version": __version__, "command": command, **params}
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _resolve_config(args) -> SceneConfig:
    cfg = SceneConfig.from_yaml(args.config)
    overrides = {}
    if getattr(args, "k", None) is not None:
        overrides["num_freqs"] = args.k
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _split_indices(dataset: Dataset, split: str) -> list[int]:
    if split == "all":
        return list(range(dataset.n_samples))
    if split not in dataset.splits:
        raise ValueError(f"unknown split {split!r}; use train, val, test or all")
    return list(dataset.splits[split])


def _targets_for(dataset: Dataset, indices: list[int]):
    return [dataset.target_atf(i) for i in indices]


def cmd_gen_dataset(args) -> int:
    cfg = _resolve_config(args)
    scene = make_scene(cfg)
    out = Path(args.out)
    dataset = generate_dataset(scene, n_samples=args.n, seed=cfg.seed, out_dir=out)
    _write_run_manifest(
        out,
        "gen-dataset",
        {
            "config_path": str(args.config),
            "n_samples": args.n,
            "seed": cfg.seed,
            "scene_config_hash": cfg.config_hash(),
        },
    )
    m = dataset.manifest
    print(f"dataset written to {out}")
    print(
        f"  samples={m['n_samples']} freqs={m['num_freqs']} "
        f"loudspeakers={m['num_loudspeakers']} "
        f"control={m['control_grid'][0]}x{m['control_grid'][1]} "
        f"monitor={m['monitor_grid'][0]}x{m['monitor_grid'][1]}"
    )
    print(
        f"  splits: train={len(m['splits']['train'])} "
        f"val={len(m['splits']['val'])} test={len(m['splits']['test'])}"
    )
    print(f"  scene_config_hash={m['scene_config_hash']}")
    return EXIT_OK


def cmd_solve_pm(args) -> int:
    dataset = load_dataset(args.dataset)
    scene = dataset.build_scene()
    pattern = mask_indices(args.mask)
    indices = _split_indices(dataset, args.split)
    if not indices:
        raise ValueError(f"split {args.split!r} is empty")
    targets = _targets_for(dataset, indices)
    h_ctrl = dataset.h_ctrl()
    lam = args.lam
    tune_meta = {}
    if args.tune_ae is not None:
        h_mon = dataset.h_mon()
        result = tune_regularization(
            h_ctrl,
            h_mon,
            targets,
            target_bae_db=args.tune_ae,
            tol_db=args.tol,
            pattern=pattern,
            num_bright_monitor=dataset.scene_config.monitor_n**2,
            ref_speaker=scene.reference_speaker_index(),
        )
        lam = result.lam
        tune_meta = {
            "tuned": True,
            "target_bae_db": result.target_bae_db,
            "achieved_bae_db": result.achieved_bae_db,
        }
        print(f"tuned lambda={lam:.6g} (effort {result.achieved_bae_db:.3f} dB)")
    sets = solve_masked_pm_many(h_ctrl, targets, pattern, lam)
    by_index = {idx: pf for idx, pf in zip(indices, sets)}
    out = Path(args.out)
    write_prefilters(
        out,
        by_index,
        method="pm",
        mask=pattern.name,
        scene_config_hash=dataset.scene_config_hash,
        extra_meta={"lambda": lam, **tune_meta},
    )
    _write_run_manifest(
        out,
        "solve-pm",
        {
            "dataset": str(args.dataset),
            "mask": pattern.name,
            "lambda": lam,
            "split": args.split,
            "scene_config_hash": dataset.scene_config_hash,
        },
    )
    print(f"pre-filters for {len(indices)} samples written to {out} (lambda={lam:.6g})")
    return EXIT_OK


def cmd_tune_ae(args) -> int:
    dataset = load_dataset(args.dataset)
    scene = dataset.build_scene()
    pattern = mask_indices(args.mask)
    indices = _split_indices(dataset, args.split)
    if not indices:
        raise ValueError(f"split {args.split!r} is empty")
    targets = _targets_for(dataset, indices)
    result = tune_regularization(
        dataset.h_ctrl(),
        dataset.h_mon(),
        targets,
        target_bae_db=args.target_bae,
        tol_db=args.tol,
        pattern=pattern,
        num_bright_monitor=dataset.scene_config.monitor_n**2,
        ref_speaker=scene.reference_speaker_index(),
    )
    print(
        f"lambda={result.lam:.10g} achieved_bae_db={result.achieved_bae_db:.4f} "
        f"target_bae_db={result.target_bae_db:.4f} iterations={result.iterations}"
    )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "tune.json").write_text(
            json.dumps(
                {
                    "lambda": result.lam,
                    "achieved_bae_db": result.achieved_bae_db,
                    "target_bae_db": result.target_bae_db,
                    "tol_db": args.tol,
                    "mask": pattern.name,
                    "split": args.split,
                    "iterations": result.iterations,
                    "evaluations": result.evaluations,
                    "scene_config_hash": dataset.scene_config_hash,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
        _write_run_manifest(
            out,
            "tune-ae",
            {
                "dataset": str(args.dataset),
                "mask": pattern.name,
                "target_bae_db": args.target_bae,
                "split": args.split,
                "scene_config_hash": dataset.scene_config_hash,
            },
        )
    return EXIT_OK


def _evaluate_sets(
    dataset: Dataset,
    scene,
    by_mask: dict[str, dict[int, PreFilterSet]],
    method: str,
    lam: float | None,
    out: Path,
    split: str,
) -> None:
    h_mon = dataset.h_mon()
    nm = dataset.scene_config.monitor_n
    num_bright_mon = nm * nm
    ref_speaker = scene.reference_speaker_index()
    freqs = dataset.freq_grid.values
    summary: dict = {
        "scene_config_hash": dataset.scene_config_hash,
        "scene_config": dataset.scene_config.to_dict(),
        "method": method,
        "split": split,
        "masks": {},
    }
    if lam is not None:
        summary["lambda"] = lam
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("mask", "method", "sample_index") + CSV_COLUMNS)
        for mask_name, sets in by_mask.items():
            per_sample = {}
            for idx in sorted(sets):
                pf = sets[idx]
                target_mon = dataset.monitor_target(idx).reshape(len(freqs), num_bright_mon)
                report = compute_report(
                    pf.data,
                    h_mon.data,
                    target_mon,
                    num_bright_monitor=num_bright_mon,
                    freqs_hz=freqs,
                    ref_speaker=ref_speaker,
                    metadata={"mask": mask_name, "method": method, "sample_index": idx},
                )
                for row in report.csv_rows():
                    writer.writerow((mask_name, method, str(idx)) + row)
                per_sample[str(idx)] = {
                    "re_b_db": report.b_re_b,
                    "re_d_db": report.b_re_d,
                    "ac_db": report.b_ac,
                    "ae_db": report.b_ae,
                    "clamped": report.clamped,
                }
            mean = {
                key: float(np.mean([v[key] for v in per_sample.values()]))
                for key in ("re_b_db", "re_d_db", "ac_db", "ae_db")
            }
            summary["masks"][mask_name] = {
                "n_samples": len(per_sample),
                "mean": mean,
                "per_sample": per_sample,
            }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("mask", "method", "n_samples", "re_b_db", "re_d_db", "ac_db", "ae_db")
        )
        for mask_name, entry in summary["masks"].items():
            mean = entry["mean"]
            writer.writerow(
                (
                    mask_name,
                    method,
                    str(entry["n_samples"]),
                    _fmt(mean["re_b_db"]),
                    _fmt(mean["re_d_db"]),
                    _fmt(mean["ac_db"]),
                    _fmt(mean["ae_db"]),
                )
            )
    for mask_name, entry in summary["masks"].items():
        mean = entry["mean"]
        print(
            f"{mask_name} ({method}, n={entry['n_samples']}): "
            f"RE_B={mean['re_b_db']:.2f} dB RE_D={mean['re_d_db']:.2f} dB "
            f"AC={mean['ac_db']:.2f} dB AE={mean['ae_db']:.2f} dB"
        )


def cmd_evaluate(args) -> int:
    dataset = load_dataset(args.dataset)
    scene = dataset.build_scene()
    out = Path(args.out)
    if args.prefilters is not None:
        collection = read_prefilters(
            args.prefilters, expected_l=dataset.manifest["num_loudspeakers"]
        )
        if collection.scene_config_hash != dataset.scene_config_hash:
            raise DimensionError(
                "pre-filter scene_config_hash does not match the dataset; "
                "refusing to mix scenes"
            )
        if tuple(collection.meta["freqs_hz"]) != tuple(dataset.manifest["freqs_hz"]):
            raise DimensionError("pre-filter frequency grid does not match the dataset")
        sets = {i: collection.load(i) for i in collection.sample_indices}
        by_mask = {collection.mask: sets}
        method = collection.method
        lam = collection.meta.get("lambda")
        split = "external"
    else:
        if args.lam is None:
            raise ValueError("--lambda is required when evaluating internal PM")
        indices = _split_indices(dataset, args.split)
        if not indices:
            raise ValueError(f"split {args.split!r} is empty")
        targets = _targets_for(dataset, indices)
        h_ctrl = dataset.h_ctrl()
        masks = args.mask or ["Grid-12"]
        by_mask = {}
        for name in masks:
            pattern = mask_indices(name)
            sets = solve_masked_pm_many(h_ctrl, targets, pattern, args.lam)
            by_mask[name] = {idx: pf for idx, pf in zip(indices, sets)}
        method = "pm"
        lam = args.lam
        split = args.split
    _evaluate_sets(dataset, scene, by_mask, method, lam, out, split)
    _write_run_manifest(
        out,
        "evaluate",
        {
            "dataset": str(args.dataset),
            "prefilters": str(args.prefilters) if args.prefilters else None,
            "masks": sorted(by_mask),
            "lambda": lam,
            "split": split,
            "scene_config_hash": dataset.scene_config_hash,
        },
    )
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.results) < 2:
        raise ValueError("compare needs at least two evaluate output directories")
    summaries = []
    for path in args.results:
        spath = Path(path) / "summary.json"
        if not spath.exists():
            raise ValueError(f"{path}: no summary.json (expected an evaluate output)")
        summaries.append((str(path), json.loads(spath.read_text(encoding="utf-8"))))
    hashes = {s["scene_config_hash"] for _, s in summaries}
    if len(hashes) > 1:
        raise DimensionError(
            "result sets come from different scenes; refusing to compare"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ("source", "method", "mask", "re_b_db", "re_d_db", "ac_db", "ae_db", "context_only")
        )
        for label, summary in summaries:
            for mask_name in sorted(summary["masks"]):
                mean = summary["masks"][mask_name]["mean"]
                writer.writerow(
                    (
                        label,
                        summary["method"],
                        mask_name,
                        _fmt(mean["re_b_db"]),
                        _fmt(mean["re_d_db"]),
                        _fmt(mean["ac_db"]),
                        _fmt(mean["ae_db"]),
                        "0",
                    )
                )
        if not args.no_reference:
            for method, mask_name, re_b, re_d, ac in PUBLISHED_REFERENCE_ROWS:
                writer.writerow(
                    (
                        "published-reference",
                        method,
                        mask_name,
                        _fmt(re_b),
                        _fmt(re_d),
                        _fmt(ac),
                        "",
                        "1",
                    )
                )
    with open(out / "figure_data.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("mask", "source", "method", "re_b_db", "ac_db"))
        for mask_name in MASK_NAMES:
            for label, summary in summaries:
                if mask_name in summary["masks"]:
                    mean = summary["masks"][mask_name]["mean"]
                    writer.writerow(
                        (
                            mask_name,
                            label,
                            summary["method"],
                            _fmt(mean["re_b_db"]),
                            _fmt(mean["ac_db"]),
                        )
                    )
    _write_run_manifest(
        out,
        "compare",
        {
            "results": [str(p) for p in args.results],
            "scene_config_hash": next(iter(hashes)) if hashes else None,
        },
    )
    print(f"comparison written to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pszsim",
        description="Personal sound zone simulation and pressure-matching experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="simulate a dataset from a scene config")
    p.add_argument("--config", required=True, help="scene config YAML")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--n", type=int, default=DEFAULT_N_SAMPLES, help="number of samples")
    p.add_argument("--k", type=int, default=None, help="frequency bins (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("solve-pm", help="solve pressure-matching pre-filters")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", default="Grid-12", choices=MASK_NAMES)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--tune-ae", dest="tune_ae", type=float, default=None,
                   help="tune lambda for this broadband effort (dB) instead of --lambda")
    p.add_argument("--tol", type=float, default=0.1, help="tuning tolerance in dB")
    p.add_argument("--split", default="test", help="train, val, test or all")
    p.set_defaults(func=cmd_solve_pm)

    p = sub.add_parser("tune-ae", help="search lambda for a target broadband effort")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target-bae", dest="target_bae", type=float, required=True)
    p.add_argument("--tol", type=float, default=0.1)
    p.add_argument("--mask", default="Grid-12", choices=MASK_NAMES)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_tune_ae)

    p = sub.add_parser("evaluate", help="score pre-filters on the monitor grid")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", action="append", choices=MASK_NAMES,
                   help="mask for internal PM; repeat for several masks")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--prefilters", default=None,
                   help="externally produced pre-filter directory")
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="side-by-side tables from evaluate outputs")
    p.add_argument("--results", nargs="+", required=True,
                   help="two or more evaluate output directories")
    p.add_argument("--out", required=True)
    p.add_argument("--no-reference", action="store_true",
                   help="omit the published context rows")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TuneError, IllPosedError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataIOError, GeometryError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
