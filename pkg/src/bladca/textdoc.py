"""YAML documents that remember where each value came from."""
from __future__ import annotations

from pathlib import Path

import yaml

from . import StructuralError


class DocumentError(StructuralError):
    """Invalid input document; carries the offending line when known."""

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None or line is not None:
            where = f"{source or '<document>'}:{line if line is not None else '?'}: "
        super().__init__(where + message)


class Located:
    """Parsed document plus a map from key paths to 1-based line numbers."""

    def __init__(self, data, lines, source=None):
        self.data = data
        self.lines = lines
        self.source = source

    def line(self, *path):
        """Line of the deepest known prefix of ``path``."""
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path, 1)

    def error(self, message, *path):
        return DocumentError(message, self.line(*path), self.source)


def _walk(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for key, value in node.value:
            _walk(value, path + (key.value,), lines)
            lines[path + (key.value,)] = key.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, value in enumerate(node.value):
            _walk(value, path + (i,), lines)


def load(source) -> Located:
    """Load YAML (or JSON) from a path or a string holding the document."""
    name = None
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        name = str(source)
        text = Path(source).read_text()
    else:
        text = source
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise DocumentError(f"unparsable document: {exc}", mark.line + 1 if mark else None, name) from None
    lines = {}
    if node is not None:
        _walk(node, (), lines)
    if not isinstance(data, dict):
        raise DocumentError("document must be a mapping", 1, name)
    return Located(data, lines, name)


def dump(data) -> str:
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None, width=100)


def parse_complex(value):
    """Accept numbers, ``[re, im]`` pairs and strings such as ``"1-2j"``."""
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValueError(f"complex pair must have two entries, got {value!r}")
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, str):
        return complex(value.replace(" ", ""))
    return complex(value)


def format_complex(z):
    z = complex(z)
    return [float(z.real), float(z.imag)]
