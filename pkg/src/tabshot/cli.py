"""Command-line entry points for the harness."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .export import validate_jsonl
from .prompts import load_instructions
from .runner import (
    ABLATION_SEEDS,
    _load_dataset,
    export_finetune_corpus,
    manifest_from_file,
    run_ablation_grid,
    run_experiment,
    run_seed,
    write_report,
)
from .selection import lasso_path_rank, import_external_ranking, ranking_to_csv, select_top_p
from .splits import SplitAssignment, SplitFractions, make_splits
from .table import FeatureTable, TableSchema, filter_complete, load_table, write_table


def _load(csv_path: str, schema_path: str, complete_case: bool):
    table = load_table(Path(csv_path), TableSchema.from_json(Path(schema_path)))
    return filter_complete(table) if complete_case else table


def _cmd_ingest(args) -> int:
    table = _load(args.csv, args.schema, args.complete_case)
    if args.out:
        Path(args.out).write_text(write_table(table), encoding="utf-8")
    n_missing = sum(1 for r in table.rows for c in r.cells if c.missing)
    print(f"{len(table.rows)} rows x {len(table.columns)} columns, {n_missing} missing cells")
    return 0


def _cmd_split(args) -> int:
    table = _load(args.csv, args.schema, args.complete_case)
    fractions = SplitFractions(*args.fractions) if args.fractions else SplitFractions()
    assignment = make_splits(table, fractions, args.seed, not args.no_stratify)
    Path(args.out).write_text(json.dumps(assignment.to_json(), indent=2) + "\n", encoding="utf-8")
    sizes = {name: len(ids) for name, ids in assignment.partitions.items()}
    print(f"seed {args.seed}: {sizes}")
    return 0


def _cmd_select_features(args) -> int:
    table = _load(args.csv, args.schema, complete_case=True)
    if args.external:
        ranked = import_external_ranking(Path(args.external), table)
    else:
        assignment = SplitAssignment.from_json(Path(args.split))
        assignment.validate(table.subject_ids)
        train = FeatureTable(
            columns=table.columns,
            rows=tuple(table.row_by_id(i) for i in assignment.ids("train")),
            label_column=table.label_column,
            subject_id_column=table.subject_id_column,
        )
        ranked = lasso_path_rank(train)
    feature_set = select_top_p(ranked, args.p, table.covariate_names)
    doc = {
        **feature_set.to_json(),
        "method": ranked.method,
        "train_fingerprint": ranked.train_fingerprint,
    }
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if args.ranking_out:
        Path(args.ranking_out).write_text(ranking_to_csv(ranked), encoding="utf-8")
    print(f"selected {feature_set.p} features: {', '.join(feature_set.selected)}")
    return 0


def _cmd_gen_prompts(args) -> int:
    manifest = manifest_from_file(args.manifest)
    table = _load_dataset(manifest)
    instructions = load_instructions(manifest.instruction_version)
    for seed in manifest.seeds:
        seed_dir = Path(manifest.output_dir) / f"seed_{seed}"
        run_seed(manifest, table, seed, seed_dir, instructions)
        print(f"seed {seed}: prompts in {seed_dir / 'prompts.jsonl'}")
    return 0


def _cmd_export_finetune(args) -> int:
    manifest = manifest_from_file(args.manifest)
    count = export_finetune_corpus(manifest, args.seed, Path(args.out), split=args.split)
    print(f"wrote {count} records to {args.out}")
    return 0


def _cmd_validate_jsonl(args) -> int:
    with open(args.path, "rb") as fh:
        report = validate_jsonl(fh)
    print(report.summary())
    return 0 if report.passed else 1


def _cmd_run(args) -> int:
    manifest = manifest_from_file(args.manifest)
    result = run_experiment(manifest)
    for seed, outcome in result.outcomes.items():
        if outcome.error:
            print(f"seed {seed}: FAILED ({outcome.error})")
        else:
            report = outcome.report
            f1 = "undefined" if report.f1 is None else f"{report.f1:.4f}"
            print(f"seed {seed}: f1={f1} n={report.n}")
    failed = sum(1 for o in result.outcomes.values() if o.error)
    return 1 if failed == len(result.outcomes) else 0


def _cmd_ablate(args) -> int:
    manifest = manifest_from_file(args.manifest)
    ks = [int(x) for x in args.ks.split(",")]
    ps = [int(x) for x in args.ps.split(",")] if args.ps else None
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else list(ABLATION_SEEDS)
    run_ablation_grid(manifest, ks, ps, seeds)
    print(f"grid written to {Path(manifest.output_dir) / 'grid.csv'}")
    return 0


def _cmd_missingness(args) -> int:
    import dataclasses

    manifest = manifest_from_file(args.manifest)
    rates = [float(x) for x in args.rates.split(",")]
    for rate in rates:
        sub = dataclasses.replace(
            manifest,
            missingness=f"mcar:{rate}",
            output_dir=str(Path(manifest.output_dir) / f"rate_{rate}"),
        )
        result = run_experiment(sub)
        n_ok = len(result.reports)
        print(f"rate {rate}: {n_ok}/{len(sub.seeds)} seeds completed")
    return 0


def _cmd_report(args) -> int:
    run_dirs = [Path(d) for d in args.run_dirs]
    write_report(run_dirs, Path(args.csv), Path(args.md) if args.md else None)
    print(f"report written to {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabshot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a CSV against a schema")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", help="write the canonical CSV here")
    p.add_argument("--complete-case", action="store_true")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="write a seeded split assignment")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", type=float, nargs=6, metavar="F")
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--complete-case", action="store_true")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("select-features", help="rank features and pick the top p")
    p.add_argument("--csv", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--split", help="split assignment JSON (train rows feed the ranking)")
    p.add_argument("--external", help="feature,score CSV instead of the in-repo ranking")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ranking-out")
    p.set_defaults(func=_cmd_select_features)

    p = sub.add_parser("gen-prompts", help="generate prompts (and run inference) per manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_gen_prompts)

    p = sub.add_parser("export-finetune", help="write a chat fine-tuning JSONL")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.set_defaults(func=_cmd_export_finetune)

    p = sub.add_parser("validate-jsonl", help="validate a fine-tuning JSONL")
    p.add_argument("path")
    p.set_defaults(func=_cmd_validate_jsonl)

    p = sub.add_parser("run", help="run a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ablate", help="run a k x p ablation grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ks", required=True, help="comma-separated k values")
    p.add_argument("--ps", help="comma-separated p values")
    p.add_argument("--seeds", help="comma-separated seeds (default: the 3-seed ablation set)")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("missingness", help="sweep simulated MCAR rates")
    p.add_argument("--manifest", required=True)
    p.add_argument("--rates", default="0.1,0.2,0.3,0.4,0.5")
    p.set_defaults(func=_cmd_missingness)

    p = sub.add_parser("report", help="flatten run metrics into CSV/markdown")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--csv", required=True)
    p.add_argument("--md")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
