"""Document databases, result sets and the on-disk bundle format.

A bundle is either a directory holding one ``<collection>.json`` array per
collection, or a single JSON object mapping collection names to arrays.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..errors import DatabaseIoError, SchemaError
from ..values import check_document_value


@dataclass(frozen=True)
class DocumentDatabase:
    name: str
    collections: Mapping[str, list[dict[str, Any]]] = field(default_factory=dict)

    def __contains__(self, name: str) -> bool:
        return name in self.collections

    def collection(self, name: str) -> list[dict[str, Any]]:
        return self.collections[name]

    def to_json(self) -> dict[str, list[dict[str, Any]]]:
        return {name: docs for name, docs in self.collections.items()}


@dataclass
class ResultSet:
    docs: list[dict[str, Any]]
    ordered: bool = False

    def __len__(self) -> int:
        return len(self.docs)

    def to_json(self) -> list[dict[str, Any]]:
        return self.docs


def _validate(name: str, docs: Any, where: str) -> list[dict[str, Any]]:
    if not isinstance(docs, list) or not all(isinstance(d, dict) for d in docs):
        raise SchemaError(f"collection {name!r} in {where} is not an array of objects")
    try:
        check_document_value(docs)
    except TypeError as exc:
        raise SchemaError(f"collection {name!r} in {where}: {exc}") from None
    return docs


# written next to run outputs; never a database
RUN_MANIFEST = "run_manifest.json"


def database_from_mapping(name: str, blob: Mapping[str, Any]) -> DocumentDatabase:
    if not isinstance(blob, Mapping):
        raise SchemaError(f"database {name!r} must be an object of collections")
    return DocumentDatabase(name, {k: _validate(k, v, name) for k, v in blob.items()})


def _read_json(path: Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise DatabaseIoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc


def load_database(source: str | os.PathLike | Mapping[str, Any], name: str | None = None) -> DocumentDatabase:
    """Load a bundle from a directory, a single JSON file, or an in-memory mapping."""
    if isinstance(source, Mapping):
        return database_from_mapping(name or "db", source)
    path = Path(source)
    if path.is_dir():
        collections = {}
        for file in sorted(path.glob("*.json")):
            collections[file.stem] = _validate(file.stem, _read_json(file), str(path))
        return DocumentDatabase(name or path.name, collections)
    if path.is_file():
        return database_from_mapping(name or path.stem, _read_json(path))
    raise DatabaseIoError(f"no database bundle at {path}")


def load_databases(root: str | os.PathLike) -> dict[str, DocumentDatabase]:
    """Load every bundle under ``root``: each subdirectory or ``*.json`` file is one database."""
    root = Path(root)
    if not root.is_dir():
        raise DatabaseIoError(f"database directory {root} does not exist")
    dbs = {}
    for entry in sorted(root.iterdir()):
        if entry.name == RUN_MANIFEST:
            continue
        if entry.is_dir() or entry.suffix == ".json":
            db = load_database(entry)
            dbs[db.name] = db
    return dbs


def write_database(db: DocumentDatabase, out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, docs in db.collections.items():
        with open(out / f"{name}.json", "w", encoding="utf-8") as fh:
            json.dump(docs, fh, ensure_ascii=False, indent=1)
            fh.write("\n")
    return out
