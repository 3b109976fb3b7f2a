"""Text-to-NoSQL toolkit: query parsing and execution, relational-to-document
transformation, evaluation metrics, and multi-step generation pipelines."""

__version__ = "0.1.0"
