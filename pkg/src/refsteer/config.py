"""Flat ``key = value`` configuration with dotted keys."""

import configparser
import math
import os

import numpy as np

from .errors import InvalidInputError, ParseError

_SECTION = "refsteer"


def parse_config(text, source="<string>"):
    """Parse config text into an ordered ``{key: str}`` dict.

    Keys are case-sensitive, ``#`` and ``;`` start comments, and duplicate
    keys are rejected.
    """
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(f"[{_SECTION}]\n" + text, source=source)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0]
        raise ParseError(f"{source}: expected 'key = value'", line - 1) from None
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"{source}: duplicate key {exc.option!r}", exc.lineno - 1) from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = str(exc).splitlines()[0]
        raise ParseError(f"{source}: {msg}", None if line is None else line - 1) from None
    if cp.sections() != [_SECTION]:
        raise ParseError(f"{source}: section headers are not allowed")
    return dict(cp[_SECTION])


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read(), str(path))
    cfg.setdefault("_dir", os.path.dirname(os.path.abspath(path)))
    return cfg


class Settings:
    """Typed read access to a flat config dict with defaults recorded.

    Every value read through a getter is kept in ``used`` so reports can
    print the full resolved configuration.
    """

    def __init__(self, raw):
        self.raw = dict(raw)
        self.used = {}

    def _get(self, key, default, conv):
        if key in self.raw:
            try:
                val = conv(self.raw[key])
            except (ValueError, TypeError):
                raise InvalidInputError(
                    f"config key {key!r}: cannot parse {self.raw[key]!r}") from None
        elif default is None:
            raise InvalidInputError(f"missing required config key {key!r}")
        else:
            val = default
        self.used[key] = val
        return val

    def float(self, key, default=None):
        return self._get(key, default, _to_float)

    def int(self, key, default=None):
        return self._get(key, default, int)

    def str(self, key, default=None):
        return self._get(key, default, str)

    def bool(self, key, default=None):
        return self._get(key, default, _to_bool)

    def floats(self, key, default=None):
        return self._get(key, None if default is None else np.asarray(default, float),
                         lambda s: np.array([_to_float(v) for v in s.split()]))

    def path(self, key, default=None):
        p = self.str(key, default)
        base = self.raw.get("_dir", "")
        return p if os.path.isabs(p) else os.path.join(base, p)

    def paths(self, key):
        base = self.raw.get("_dir", "")
        items = self.str(key).split()
        return [p if os.path.isabs(p) else os.path.join(base, p) for p in items]

    def has(self, key):
        return key in self.raw

    def override(self, key, value):
        self.raw[key] = str(value)


def _to_float(s):
    s = str(s).strip().lower()
    if s in ("inf", "+inf"):
        return math.inf
    if s == "-inf":
        return -math.inf
    return float(s)


def _to_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "on", "true", "yes"):
        return True
    if v in ("0", "off", "false", "no"):
        return False
    raise ValueError(s)


def format_value(v):
    if isinstance(v, np.ndarray):
        return " ".join(format_value(float(x)) for x in v.reshape(-1))
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)
