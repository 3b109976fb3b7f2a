"""In-memory document store and query interpreter."""

from .compare import Comparison, compare_results, field_multiset, fields_match, leaves, results_equal, value_multiset, values_match
from .database import DocumentDatabase, ResultSet, database_from_mapping, load_database, load_databases, write_database
from .executor import execute_query

__all__ = [
    "Comparison",
    "DocumentDatabase",
    "ResultSet",
    "compare_results",
    "database_from_mapping",
    "execute_query",
    "field_multiset",
    "fields_match",
    "leaves",
    "load_database",
    "load_databases",
    "results_equal",
    "value_multiset",
    "values_match",
    "write_database",
]
