"""Versioned JSON schemas for every emitted document."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from .errors import FormatError

SCHEMAS = ("qnpe_result.v1", "classical_result.v1", "comparison.v1", "scaling.v1", "manifest.v1")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    if name not in SCHEMAS:
        raise FormatError(f"unknown schema {name!r}")
    text = resources.files("qnpe").joinpath("schemas", f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate(doc: dict, name: str | None = None) -> None:
    """Validate ``doc`` against its declared (or the given) schema; raises :class:`FormatError`."""
    name = name or doc.get("schema")
    schema = load_schema(name)
    try:
        jsonschema.validate(doc, schema, cls=jsonschema.Draft202012Validator)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise FormatError(f"{name} document invalid at '{path}': {exc.message}", schema=name, path=path) from None
