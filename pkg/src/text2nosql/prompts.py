"""Prompt templates and the schema listing they embed.

Templates are plain ``str.format`` strings; every model-facing text in the
package is built here so golden tests can snapshot them in one place.
"""

from __future__ import annotations

import json
from typing import Any, Iterable, Mapping, Sequence

from .engine import DocumentDatabase

STEP_BY_STEP = "A: Let's think step by step!"

SYSTEM = (
    "You translate natural language questions into MongoDB shell queries. "
    "Use only the collections and fields listed for the database."
)

SCHEMA_INSTRUCTIONS = {
    "db_fields": "List the database fields the query will read, as a comma-separated line.",
    "defined_fields": "List the new field names the query will define (renamed or computed fields), "
                      "as a comma-separated line.",
    "result_fields": "List the fields that will appear in the result documents, as a comma-separated line.",
    "collections": "List the collections the query will use, as a comma-separated line.",
}

SCHEMA_TEMPLATE = """# {instruction}
## Natural Language Query: `{nlq}`
## MongoDB Collection and their Fields
{schema}"""

GENERATE_TEMPLATE = """# Write the MongoDB query that answers the question below.
## Natural Language Query: `{nlq}`
## MongoDB Collection and their Fields
{schema}"""

REFINE_INSTRUCTION = (
    "Decide whether the original query answers the question against this database. "
    "Keep it unchanged if it does; otherwise correct it, using the reference examples and the "
    "predicted fields as hints. Give the final query in a ``` code block."
)

REFINE_TEMPLATE = """## Query Transformation Reference Examples
{examples}
## MongoDB collections and their fields
{schema}
## Natural Language Query
   - `{nlq}`
## Original MongoDB Query
{query}
{predicted}
{instruction}
""" + STEP_BY_STEP

OPTIMIZE_INSTRUCTION = (
    "Compare the execution results of the original query with what the question asks for and "
    "with the reference examples and their results. Return the original query if its results "
    "are right; otherwise return a corrected query. Give the final query in a ``` code block."
)

OPTIMIZE_TEMPLATE = """## Reference Examples
{examples}
## MongoDB collections and their fields
{schema}
## Natural Language Query
   - `{nlq}`
## Fields Shown in the Execution Results
   - `{target_fields}`
## Original MongoDB Query
{query}
### Execution Results
{results}
{instruction}
""" + STEP_BY_STEP

CANDIDATE_TEMPLATE = """# Write a MongoDB query that answers the question below.
## Natural Language Query: `{nlq}`
## Fields Expected in the Result
   - `{target_fields}`
## MongoDB Collection and their Fields
{schema}
""" + STEP_BY_STEP

FEEDBACK_TEMPLATE = """# Two query results should agree but do not.
## Natural Language Query: `{nlq}`
## Fields Expected in the Result
   - `{target_fields}`
## MongoDB Query
{query}
## MongoDB Query Result (JSON)
{query_result}
## Reference Result (JSON)
{reference_result}
## Comparison
{diff}
## Task
Step 1: describe how the two results differ.
Step 2: explain which parts of the MongoDB query could produce those differences.
Do not propose a corrected query."""

DEBUG_TEMPLATE = """# The MongoDB query below returns the wrong result. Fix it.
## Natural Language Query: `{nlq}`
## Fields Expected in the Result
   - `{target_fields}`
## MongoDB Collection and their Fields
{schema}
## MongoDB Query
{query}
## Reviewer Notes
{feedback}
Give the corrected query in a ``` code block.
""" + STEP_BY_STEP

EXTEND_TEMPLATE = """# Write {n} different natural language questions that the MongoDB query below answers.
## MongoDB Query
{query}
## Fields Expected in the Result
   - `{target_fields}`
## MongoDB Collection and their Fields
{schema}
## Example Questions
{references}
Write one question per line, with no numbering."""


def _field_paths(value: Any, prefix: str, out: dict[str, None]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            path = f"{prefix}.{k}" if prefix else k
            out.setdefault(path)
            _field_paths(v, path, out)
    elif isinstance(value, list):
        for v in value:
            _field_paths(v, prefix, out)


def collection_fields(docs: Iterable[Mapping[str, Any]]) -> list[str]:
    """Dotted field paths in first-appearance order; array elements share their parent's path."""
    out: dict[str, None] = {}
    for d in docs:
        _field_paths(d, "", out)
    return list(out)


def describe_schema(db: DocumentDatabase) -> str:
    lines = []
    for name, docs in db.collections.items():
        lines.append(f"# Collection: {name}")
        lines.extend(f"   - {f}" for f in collection_fields(docs))
    return "\n".join(lines)


def messages(user: str, system: str = SYSTEM, demo: Sequence[Mapping[str, str]] = ()) -> list[dict[str, str]]:
    out = [{"role": "system", "content": system}]
    out.extend(dict(m) for m in demo)
    out.append({"role": "user", "content": user})
    return out


def dump_json(value: Any) -> str:
    return json.dumps(value, ensure_ascii=False, sort_keys=False)
