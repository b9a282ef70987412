"""YAML loading that keeps source line numbers for schema error messages."""
from __future__ import annotations

import yaml

from .errors import SpecSchemaError


class LineDict(dict):
    line: int | None = None
    lines: dict


class LineList(list):
    line: int | None = None


def _convert(node):
    if isinstance(node, yaml.MappingNode):
        out = LineDict()
        out.line = node.start_mark.line + 1
        out.lines = {}
        for k, v in node.value:
            key = _convert(k)
            if key in out:
                raise SpecSchemaError(f"duplicate key {key!r}", k.start_mark.line + 1)
            out[key] = _convert(v)
            out.lines[key] = k.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        out = LineList(_convert(v) for v in node.value)
        out.line = node.start_mark.line + 1
        return out
    return _scalar(node)


def _scalar(node):
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_object(node)
    finally:
        loader.dispose()


def load_yaml_lines(text: str):
    """Parse ``text``; mappings and lists carry ``.line`` (1-based)."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise SpecSchemaError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                              mark.line + 1 if mark else None) from None
    if node is None:
        raise SpecSchemaError("empty document", 1)
    return _convert(node)
