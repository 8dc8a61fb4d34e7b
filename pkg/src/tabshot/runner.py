"""Manifest-driven experiment execution.

A manifest declares one run: dataset, seeds, prompt format, k/p, selector,
endpoint (HTTP or mock rule), missingness treatment, reflection. Every run
directory carries the manifest hash, the split assignment, the feature set,
prompt/transcript JSONL, and per-seed metrics; reruns against the mock
endpoint are byte-identical. Seed failures are recorded and do not abort
the other seeds.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import client as client_mod
from .client import EndpointConfig, MockEndpoint, MockRule, constrained_binary_decode
from .errors import InvariantViolation, TabshotError, Undecodable
from .export import FinetuneRecord, export_chat_jsonl
from .interpret import parse_interpretable, run_self_reflection
from .metrics import MetricsReport, SummaryStats, aggregate_seeds, confusion, metrics
from .missing import bin_by_target_missingness, mask_mcar, natural_missingness_split
from .prompts import (
    InstructionSet,
    PromptFormat,
    RenderedPrompt,
    build_prompt,
    load_instructions,
    load_template,
)
from .records import PredictionRecord
from .selection import (
    FeatureSet,
    import_external_ranking,
    lasso_path_rank,
    ranking_to_csv,
    select_top_p,
    train_fingerprint,
)
from .splits import (
    ICL_POOL_FOR_SPLIT,
    ContextSet,
    SplitAssignment,
    SplitFractions,
    make_splits,
    pool_pairs,
    sample_context,
)
from .table import FeatureTable, TableSchema, filter_complete, load_table, select_columns

PAPER_SEEDS = (36, 73, 105, 254, 314, 492, 564, 688, 777, 825)
ABLATION_SEEDS = (36, 73, 314)
DEFAULT_STRATA_EDGES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 1.0)


@dataclass(frozen=True)
class ExperimentManifest:
    dataset_csv: str
    dataset_schema: str
    output_dir: str
    structure: str = "tabular"
    shots: str = "few"
    variant: str = "standard"  # standard | interpretable
    k: int | None = None
    p: int | None = None
    selector: str = "none"  # none | lasso_path | external:<path>
    endpoint: dict | None = None
    mock_rule: dict | None = None
    missingness: str = "none"  # none | mcar:<rate> | natural
    reflection: bool = False
    seeds: tuple[int, ...] = PAPER_SEEDS
    fractions: tuple[float, ...] | None = None
    stratified: bool = True
    complete_case: bool = True
    template_style: str = "keyvalue"  # narrative | keyvalue
    instruction_version: str = "v1"
    template_version: str = "v1"
    eval_split: str = "test"
    dataset_name: str = ""
    strata_edges: tuple[float, ...] = DEFAULT_STRATA_EDGES
    concurrency: int = 4

    def __post_init__(self) -> None:
        if self.variant not in ("standard", "interpretable"):
            raise ValueError("manifest variant must be standard or interpretable")
        if self.shots == "zero" and self.k is not None:
            raise ValueError("zero-shot manifests must not set k")
        if self.shots == "few" and (self.k is None or self.k < 1):
            raise ValueError("few-shot manifests need k >= 1")
        if self.selector == "none" and self.p is not None:
            raise ValueError("p requires a selector")
        if self.selector != "none" and self.p is None:
            raise ValueError(f"selector {self.selector!r} needs p")
        if (self.endpoint is None) == (self.mock_rule is None):
            raise ValueError("exactly one of endpoint / mock_rule is required")
        if self.missingness != "none":
            kind = self.missingness.split(":", 1)[0]
            if kind not in ("mcar", "natural"):
                raise ValueError(f"unknown missingness {self.missingness!r}")
            if kind == "mcar":
                rate = float(self.missingness.split(":", 1)[1])
                if not 0.0 <= rate <= 1.0:
                    raise ValueError(f"mcar rate {rate} outside [0,1]")
            if kind == "natural" and self.selector != "none":
                raise ValueError("natural-missingness runs do not use a selector")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["seeds"] = list(self.seeds)
        doc["strata_edges"] = list(self.strata_edges)
        if self.fractions is not None:
            doc["fractions"] = list(self.fractions)
        return doc

    def hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def mcar_rate(self) -> float | None:
        if self.missingness.startswith("mcar:"):
            return float(self.missingness.split(":", 1)[1])
        return None

    def prompt_format(self) -> PromptFormat:
        return PromptFormat(self.structure, self.shots, self.variant)


def manifest_from_file(path: str | Path) -> ExperimentManifest:
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    else:
        doc = json.loads(path.read_text(encoding="utf-8"))
    return manifest_from_dict(doc)


def manifest_from_dict(doc: dict) -> ExperimentManifest:
    doc = dict(doc)
    if "seeds" in doc:
        doc["seeds"] = tuple(doc["seeds"])
    if "fractions" in doc and doc["fractions"] is not None:
        doc["fractions"] = tuple(doc["fractions"])
    if "strata_edges" in doc:
        doc["strata_edges"] = tuple(doc["strata_edges"])
    return ExperimentManifest(**doc)


@dataclass
class SeedOutcome:
    seed: int
    report: MetricsReport | None = None
    error: str | None = None
    records: list = field(default_factory=list)


@dataclass
class ResultSet:
    manifest_hash: str
    run_dir: Path
    outcomes: dict[int, SeedOutcome]

    @property
    def reports(self) -> list[MetricsReport]:
        return [o.report for o in self.outcomes.values() if o.report is not None]

    def summary(self) -> SummaryStats:
        return aggregate_seeds(self.reports)


def _dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _completer(manifest: ExperimentManifest):
    """Returns (complete_fn(prompt) -> RawResponse, description, request_body_fn)."""
    if manifest.mock_rule is not None:
        endpoint = MockEndpoint(rule=MockRule(**manifest.mock_rule))
        return (
            lambda prompt: endpoint.complete(prompt),
            endpoint.describe(),
            lambda prompt: {"mock_rule": dataclasses.asdict(endpoint.rule)},
        )
    config = EndpointConfig(**manifest.endpoint)
    constrain = manifest.variant == "standard"

    def complete_fn(prompt: RenderedPrompt):
        return client_mod.complete(config, prompt, constrain_binary=constrain)

    def body_fn(prompt: RenderedPrompt):
        return client_mod.build_request_body(config, prompt, constrain_binary=constrain)

    return complete_fn, config.describe(), body_fn


def _load_dataset(manifest: ExperimentManifest) -> FeatureTable:
    schema = TableSchema.from_json(Path(manifest.dataset_schema))
    table = load_table(Path(manifest.dataset_csv), schema)
    if manifest.complete_case:
        table = filter_complete(table)
    return table


def _select_features(
    manifest: ExperimentManifest, table: FeatureTable, assignment: SplitAssignment, seed_dir: Path
) -> FeatureSet | None:
    if manifest.selector == "none":
        return None
    covariates = table.covariate_names
    if manifest.selector == "lasso_path":
        train_rows = tuple(table.row_by_id(i) for i in assignment.ids("train"))
        train_table = FeatureTable(
            columns=table.columns,
            rows=train_rows,
            label_column=table.label_column,
            subject_id_column=table.subject_id_column,
        )
        ranked = lasso_path_rank(train_table)
        (seed_dir / "ranking.csv").write_text(ranking_to_csv(ranked), encoding="utf-8")
    elif manifest.selector.startswith("external:"):
        ranked = import_external_ranking(Path(manifest.selector.split(":", 1)[1]), table)
    else:
        raise ValueError(f"unknown selector {manifest.selector!r}")
    feature_set = select_top_p(ranked, manifest.p or 0, covariates)
    _dump_json(
        seed_dir / "feature_set.json",
        {
            **feature_set.to_json(),
            "method": ranked.method,
            "train_fingerprint": ranked.train_fingerprint,
        },
    )
    return feature_set


def _decode(manifest: ExperimentManifest, raw_text: str) -> tuple[int | None, float | None, str | None]:
    """(label or None, confidence, reasoning) under the manifest's variant."""
    if manifest.variant == "interpretable":
        try:
            parsed = parse_interpretable(raw_text)
            return parsed.prediction, parsed.confidence, parsed.reasoning
        except TabshotError:
            return None, None, None
    try:
        return constrained_binary_decode(raw_text), None, None
    except Undecodable:
        return None, None, None


def run_seed(
    manifest: ExperimentManifest,
    table: FeatureTable,
    seed: int,
    seed_dir: Path,
    instructions: InstructionSet,
) -> SeedOutcome:
    seed_dir.mkdir(parents=True, exist_ok=True)
    manifest_hash = manifest.hash()
    complete_fn, endpoint_desc, body_fn = _completer(manifest)
    template = (
        load_template(manifest.template_style, manifest.template_version)
        if manifest.structure == "serialized"
        else None
    )
    fmt = manifest.prompt_format()

    # --- choose targets and the context pool ---
    if manifest.missingness == "natural":
        pool_ids, target_ids = natural_missingness_split(table, seed)
        pool = []
        for pid in pool_ids:
            label = table.label_of(table.row_by_id(pid))
            if label is None:
                raise InvariantViolation(f"pool subject {pid!r} has no label")
            pool.append((pid, label))
        working = table
        strata = bin_by_target_missingness(
            table,
            [table.row_by_id(t) for t in target_ids],
            manifest.strata_edges,
            pool=[table.row_by_id(p) for p in pool_ids],
        )
        _dump_json(
            seed_dir / "strata.json",
            {
                "manifest_hash": manifest_hash,
                "edges": list(strata.edges),
                "bins": [list(b) for b in strata.bins],
                "pool_mean_missingness": strata.pool_mean_missingness,
                "pool_ids": list(pool_ids),
            },
        )
        pool_name = "natural_pool"
    else:
        fractions = (
            SplitFractions(*manifest.fractions) if manifest.fractions else SplitFractions()
        )
        assignment = make_splits(table, fractions, seed, manifest.stratified)
        _dump_json(seed_dir / "split.json", assignment.to_json())
        feature_set = _select_features(manifest, table, assignment, seed_dir)
        working = (
            select_columns(table, feature_set.selected) if feature_set is not None else table
        )
        rate = manifest.mcar_rate()
        if rate is not None:
            working, plan = mask_mcar(working, rate, seed)
            _dump_json(seed_dir / "mask.json", {"manifest_hash": manifest_hash, **plan.to_json()})
        target_ids = assignment.ids(manifest.eval_split)
        pool_name = ICL_POOL_FOR_SPLIT[manifest.eval_split]
        pool = pool_pairs(working, assignment, pool_name)

    # --- prompts ---
    prompts: list[RenderedPrompt] = []
    for target_id in target_ids:
        if manifest.shots == "few":
            context = sample_context(pool, manifest.k or 0, seed, target_id, pool_name)
        else:
            context = ContextSet(target_id=target_id, examples=(), k=0, source_pool="")
        prompts.append(
            build_prompt(
                working.row_by_id(target_id),
                context,
                fmt,
                None,
                instructions,
                working,
                template,
            )
        )
    with (seed_dir / "prompts.jsonl").open("w", encoding="utf-8") as fh:
        for prompt in prompts:
            fh.write(
                json.dumps(
                    {
                        "manifest_hash": manifest_hash,
                        "target_id": prompt.target_id,
                        "messages": [
                            {"role": m.role, "content": m.content} for m in prompt.messages
                        ],
                    },
                    ensure_ascii=False,
                    separators=(",", ":"),
                )
                + "\n"
            )

    # --- inference, optional reflection, decoding ---
    raw_by_target: dict[str, client_mod.RawResponse] = {}
    if manifest.endpoint is not None and manifest.concurrency > 1:
        # fan out over HTTP within the client's in-flight bound; results are
        # keyed by target id so output order stays deterministic
        config = EndpointConfig(**manifest.endpoint)
        fanned = client_mod.complete_many(
            config,
            prompts,
            constrain_binary=manifest.variant == "standard",
            concurrency=manifest.concurrency,
        )
        for target_id, result in fanned.items():
            if isinstance(result, Exception):
                raise result
            raw_by_target[target_id] = result

    final_records: list[PredictionRecord] = []
    transcript_rows: list[dict] = []
    for prompt in prompts:
        raw = raw_by_target.get(prompt.target_id) or complete_fn(prompt)
        label, confidence, reasoning = _decode(manifest, raw.text)
        record = PredictionRecord(
            target_id=prompt.target_id,
            label=label,
            raw_text=raw.text,
            confidence=confidence,
            reasoning=reasoning,
            seed=seed,
            format_desc=fmt.describe(),
            endpoint_desc=endpoint_desc,
            round=1,
        )
        transcript_rows.append(
            {
                "manifest_hash": manifest_hash,
                "target_id": prompt.target_id,
                "seed": seed,
                "round": 1,
                "request": body_fn(prompt),
                "response": {"text": raw.text, "finish_reason": raw.finish_reason},
                "decoded": label,
                "undecodable": label is None,
                "confidence": confidence,
                "reasoning": reasoning,
            }
        )
        if manifest.reflection and record.label is not None:
            outcome = run_self_reflection(complete_fn, prompt, record, instructions)
            transcript_rows.append(
                {
                    "manifest_hash": manifest_hash,
                    "target_id": prompt.target_id,
                    "seed": seed,
                    "round": 2,
                    "response": {"text": outcome.revised.raw_text},
                    "decoded": outcome.revised.label,
                    "changed": outcome.changed,
                }
            )
            record = outcome.revised
        final_records.append(record)
    with (seed_dir / "transcripts.jsonl").open("w", encoding="utf-8") as fh:
        for row in transcript_rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(",", ":")) + "\n")

    # --- scoring ---
    truth = {}
    for target_id in target_ids:
        label = working.label_of(working.row_by_id(target_id))
        if label is None:
            raise InvariantViolation(f"evaluation target {target_id!r} has no label")
        truth[target_id] = label
    cm = confusion(final_records, truth)
    report = metrics(cm, seed=seed)
    _dump_json(
        seed_dir / "metrics.json",
        {
            "manifest_hash": manifest_hash,
            "counts": {
                "tp": cm.tp,
                "fp": cm.fp,
                "tn": cm.tn,
                "fn": cm.fn,
                "undecodable_pos": cm.undecodable_pos,
                "undecodable_neg": cm.undecodable_neg,
            },
            **report.as_dict(),
        },
    )
    return SeedOutcome(seed=seed, report=report, records=final_records)


def run_experiment(manifest: ExperimentManifest) -> ResultSet:
    run_dir = Path(manifest.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_hash = manifest.hash()
    _dump_json(run_dir / "manifest.json", {"manifest_hash": manifest_hash, "manifest": manifest.to_dict()})
    table = _load_dataset(manifest)
    instructions = load_instructions(manifest.instruction_version)

    outcomes: dict[int, SeedOutcome] = {}
    for seed in manifest.seeds:
        seed_dir = run_dir / f"seed_{seed}"
        try:
            outcomes[seed] = run_seed(manifest, table, seed, seed_dir, instructions)
        except Exception as exc:  # seed-level failure isolation
            seed_dir.mkdir(parents=True, exist_ok=True)
            detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
            _dump_json(seed_dir / "failure.json", {"manifest_hash": manifest_hash, "seed": seed, "error": detail})
            outcomes[seed] = SeedOutcome(seed=seed, error=detail)

    result = ResultSet(manifest_hash=manifest_hash, run_dir=run_dir, outcomes=outcomes)
    if result.reports:
        _dump_json(
            run_dir / "summary.json",
            {"manifest_hash": manifest_hash, **result.summary().as_dict()},
        )
    return result


def run_ablation_grid(
    base: ExperimentManifest,
    ks: Sequence[int],
    ps: Sequence[int | None] | None,
    seeds: Sequence[int],
) -> dict[tuple[int, int | None], ResultSet]:
    """One run per (k, p); k-only ablation passes ps=None to reuse base.p.

    Emits grid.csv under the base output dir with one row per completed
    (k, p, seed) cell; per-cell failures are recorded and skipped.
    """
    if not ks or not seeds:
        raise ValueError("ablation grid needs nonempty ks and seeds")
    p_values: list[int | None] = list(ps) if ps else [base.p]
    if any(p is not None for p in p_values) and base.selector == "none":
        raise ValueError("a p grid needs a feature selector on the base manifest")
    grid_dir = Path(base.output_dir)
    grid_dir.mkdir(parents=True, exist_ok=True)

    results: dict[tuple[int, int | None], ResultSet] = {}
    rows: list[dict] = []
    failures: list[dict] = []
    for k in ks:
        for p in p_values:
            cell_dir = grid_dir / (f"k{k}_p{p}" if p is not None else f"k{k}")
            cell = dataclasses.replace(
                base,
                k=k,
                p=p,
                shots="few",
                seeds=tuple(seeds),
                output_dir=str(cell_dir),
            )
            result = run_experiment(cell)
            results[(k, p)] = result
            for seed in seeds:
                outcome = result.outcomes[seed]
                if outcome.report is None:
                    failures.append({"k": k, "p": p, "seed": seed, "error": outcome.error})
                    continue
                report = outcome.report
                rows.append(
                    {
                        "k": k,
                        "p": "" if p is None else p,
                        "seed": seed,
                        "f1": report.f1,
                        "balanced_accuracy": report.balanced_accuracy,
                        "precision": report.precision,
                        "recall": report.recall,
                        "n": report.n,
                        "undecodable": report.undecodable,
                    }
                )
    _write_grid_csv(grid_dir / "grid.csv", rows)
    if failures:
        _dump_json(grid_dir / "grid_failures.json", {"failures": failures})
    return results


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_grid_csv(path: Path, rows: list[dict]) -> None:
    columns = ["k", "p", "seed", "f1", "balanced_accuracy", "precision", "recall", "n", "undecodable"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_value(row[c]) for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8")


def export_finetune_corpus(
    manifest: ExperimentManifest, seed: int, out_path: Path, split: str = "train"
) -> int:
    """Render one fine-tuning JSONL for a split's targets plus a sidecar
    manifest recording provenance."""
    table = _load_dataset(manifest)
    instructions = load_instructions(manifest.instruction_version)
    template = (
        load_template(manifest.template_style, manifest.template_version)
        if manifest.structure == "serialized"
        else None
    )
    fractions = SplitFractions(*manifest.fractions) if manifest.fractions else SplitFractions()
    assignment = make_splits(table, fractions, seed, manifest.stratified)
    feature_set = None
    if manifest.selector != "none":
        out_path.parent.mkdir(parents=True, exist_ok=True)
        feature_set = _select_features(manifest, table, assignment, out_path.parent)
    working = select_columns(table, feature_set.selected) if feature_set is not None else table
    pool = pool_pairs(working, assignment, ICL_POOL_FOR_SPLIT[split])
    fmt = manifest.prompt_format()

    records = []
    for target_id in assignment.ids(split):
        if manifest.shots == "few":
            context = sample_context(pool, manifest.k or 0, seed, target_id, ICL_POOL_FOR_SPLIT[split])
        else:
            context = ContextSet(target_id=target_id, examples=(), k=0, source_pool="")
        prompt = build_prompt(
            working.row_by_id(target_id), context, fmt, None, instructions, working, template
        )
        label = working.label_of(working.row_by_id(target_id))
        if label is None:
            raise InvariantViolation(f"fine-tune target {target_id!r} has no label")
        records.append(
            FinetuneRecord.from_prompt(
                prompt,
                label,
                meta={"seed": seed, "dataset": manifest.dataset_name, "split": split},
            )
        )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("wb") as fh:
        count = export_chat_jsonl(records, fh)
    dataset_hash = hashlib.sha256(Path(manifest.dataset_csv).read_bytes()).hexdigest()
    _dump_json(
        out_path.with_suffix(out_path.suffix + ".manifest.json"),
        {
            "manifest_hash": manifest.hash(),
            "dataset_hash": dataset_hash,
            "seed": seed,
            "format": fmt.describe(),
            "instruction_version": manifest.instruction_version,
            "split": split,
            "count": count,
            "train_fingerprint": train_fingerprint(assignment.ids("train")),
        },
    )
    return count


def write_report(run_dirs: Sequence[Path], csv_path: Path, md_path: Path | None = None) -> None:
    """Flatten per-seed metrics into one CSV plus a markdown summary.

    Refuses artifacts whose recorded manifest hash disagrees with their run
    directory's manifest.
    """
    rows: list[dict] = []
    summaries: list[tuple[str, dict]] = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        manifest_doc = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
        expected_hash = manifest_doc["manifest_hash"]
        manifest = manifest_doc["manifest"]
        for metrics_file in sorted(run_dir.glob("seed_*/metrics.json")):
            doc = json.loads(metrics_file.read_text(encoding="utf-8"))
            if doc["manifest_hash"] != expected_hash:
                raise InvariantViolation(
                    f"{metrics_file} carries hash {doc['manifest_hash'][:12]}..., "
                    f"run manifest is {expected_hash[:12]}..."
                )
            for metric in ("f1", "balanced_accuracy", "precision", "recall"):
                rows.append(
                    {
                        "dataset": manifest.get("dataset_name", ""),
                        "format": f"{manifest['shots']}-shot {manifest['structure']}",
                        "variant": manifest["variant"],
                        "k": manifest.get("k"),
                        "p": manifest.get("p"),
                        "seed": doc["seed"],
                        "metric": metric,
                        "value": doc[metric],
                    }
                )
        summary_file = run_dir / "summary.json"
        if summary_file.exists():
            summaries.append((run_dir.name, json.loads(summary_file.read_text(encoding="utf-8"))))

    columns = ["dataset", "format", "variant", "k", "p", "seed", "metric", "value"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_value(row[c]) for c in columns])
    csv_path.write_text(buf.getvalue(), encoding="utf-8")

    if md_path is not None:
        lines = ["| run | metric | mean | sd | seeds |", "| --- | --- | --- | --- | --- |"]
        for name, summary in summaries:
            for metric, entry in summary["metrics"].items():
                mean = entry.get("mean")
                sd = entry.get("sd")
                lines.append(
                    f"| {name} | {metric} | "
                    f"{'' if mean is None else f'{mean:.4f}'} | "
                    f"{'' if sd is None else f'{sd:.4f}'} | {entry['n_defined']} |"
                )
        md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
