"""Flat ``key = value`` experiment configs with dotted section names.

Grammar, one assignment per line::

    # comment
    name = "quad_demo"
    run.K = 200
    topology.name = "ring"
    topology.edges = [[0, 1], [1, 2]]
    analysis.checks = ["lemma2", "theorem1"]

Values are Python/JSON-style literals: quoted strings, numbers, lists,
``true``/``false``. Keys may repeat only if identical values are given.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field

from .errors import ConfigError

__all__ = ["ExperimentConfig", "parse_config", "load_config", "KNOWN_CHECKS"]

KNOWN_CHECKS = (
    "lemma2",
    "lemma3",
    "lemma6",
    "theorem1",
    "theorem2",
    "theorem3",
    "theorem4",
    "corollary1",
    "corollary2",
    "curvature",
)

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")
_WORDS = {"true": True, "false": False, "null": None}


def _literal(text, line_no, key):
    text = text.strip()
    if text in _WORDS:
        return _WORDS[text]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise ConfigError(f"cannot parse value {text!r}", line_no, key) from None


def _strip_comment(line):
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


def parse_config(text):
    """Parse config text into ``{dotted_key: (value, line_no)}``."""
    entries = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError("expected 'key = value'", line_no)
        if not _KEY.match(key):
            raise ConfigError(f"invalid key {key!r}", line_no)
        val = _literal(value, line_no, key)
        if key in entries and entries[key][0] != val:
            raise ConfigError("conflicting duplicate key", line_no, key)
        entries[key] = (val, line_no)
    return entries


@dataclass
class ExperimentConfig:
    """Typed view over a parsed config.

    ``section(prefix)`` returns the sub-dictionary of one dotted section;
    ``get``/``require`` read single keys and report the defining line on
    type errors.
    """

    entries: dict
    source: str = "<config>"
    _used: set = field(default_factory=set, repr=False)

    def get(self, key, default=None, kind=None):
        if key not in self.entries:
            return default
        self._used.add(key)
        value, line = self.entries[key]
        if kind is not None and value is not None:
            ok = isinstance(value, kind) and not (kind in (int, float) and isinstance(value, bool))
            if kind is float and isinstance(value, int) and not isinstance(value, bool):
                value, ok = float(value), True
            if not ok:
                names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
                raise ConfigError(f"expected {names}, got {type(value).__name__}", line, key)
        return value

    def require(self, key, kind=None):
        if key not in self.entries:
            raise ConfigError("missing required field", None, key)
        return self.get(key, kind=kind)

    def line_of(self, key):
        return self.entries.get(key, (None, None))[1]

    def section(self, prefix):
        p = prefix + "."
        return {k[len(p):]: v for k, (v, _) in self.entries.items() if k.startswith(p)}

    @property
    def name(self):
        name = self.require("name", str)
        if not re.match(r"^[A-Za-z0-9_.-]+$", name):
            raise ConfigError("name may only contain letters, digits, '_', '.', '-'", self.line_of("name"), "name")
        return name


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return ExperimentConfig(parse_config(text), str(path))
