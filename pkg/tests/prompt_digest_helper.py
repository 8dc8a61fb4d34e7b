"""Print a digest of 1,008 prompts (84 targets x 12 format combinations).

Run as a subprocess by the acceptance suite: identical digests across two
interpreter invocations demonstrate cross-process byte determinism.
"""

from __future__ import annotations

import hashlib
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from conftest import synthetic_table  # noqa: E402
from tabshot.prompts import PromptFormat, build_prompt, load_instructions, load_template  # noqa: E402
from tabshot.splits import ContextSet, make_splits, pool_pairs, sample_context  # noqa: E402

COMBOS = [
    (structure, shots, variant)
    for structure in ("tabular", "serialized")
    for shots in ("zero", "few")
    for variant in ("standard", "interpretable", "reflection_round")
]


def generate_prompts():
    table = synthetic_table(420, 140, n_features=3, seed=2024)
    assignment = make_splits(table, seed=36)
    pool = pool_pairs(table, assignment, "pool_test")
    instructions = load_instructions("v1")
    template = load_template("keyvalue", "v1")
    targets = assignment.ids("test")
    assert len(targets) == 84
    for target_id in targets:
        row = table.row_by_id(target_id)
        label = table.label_of(row)
        few = sample_context(pool, 4, 36, target_id, "pool_test")
        zero = ContextSet(target_id, (), 0, "")
        for structure, shots, variant in COMBOS:
            prompt = build_prompt(
                row,
                few if shots == "few" else zero,
                PromptFormat(structure, shots, variant),
                None,
                instructions,
                table,
                template,
                prior_answer="1" if variant == "reflection_round" else None,
            )
            yield prompt, structure, label


def main() -> None:
    digest = hashlib.sha256()
    count = 0
    for prompt, _, _ in generate_prompts():
        for message in prompt.messages:
            digest.update(message.role.encode("utf-8"))
            digest.update(b"\x00")
            digest.update(message.content.encode("utf-8"))
            digest.update(b"\x01")
        count += 1
    print(f"{count} {digest.hexdigest()}")


if __name__ == "__main__":
    main()
