"""fixture-forge: synthetic corpora, toy model training, and fixture export.

Everything here communicates with the inference engine exclusively
through files: weight containers, feature containers, JSONL manifests,
and golden JSON cases.  No code is shared in either direction, which is
what makes the golden replay a genuine interchange check.
"""

__all__ = ["__version__"]

__version__ = "0.1.0"
