"""Parsing, serialisation and structural analysis of MongoDB shell queries."""

from .analysis import (
    DEFAULT_BANNED_OPS,
    detect_special_ops,
    extract_field_profile,
    extract_stage_keywords,
    normalize_renames,
)
from .ast import FieldProfile, FindClauses, Method, QueryAst, Stage, StageKind, structurally_equal
from .parser import parse_query, serialize_canonical

__all__ = [
    "DEFAULT_BANNED_OPS",
    "FieldProfile",
    "FindClauses",
    "Method",
    "QueryAst",
    "Stage",
    "StageKind",
    "detect_special_ops",
    "extract_field_profile",
    "extract_stage_keywords",
    "normalize_renames",
    "parse_query",
    "serialize_canonical",
    "structurally_equal",
]
