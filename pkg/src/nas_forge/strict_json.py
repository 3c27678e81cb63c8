"""Strict JSON helpers: duplicate keys and unknown fields are errors with a path."""

import json
from fractions import Fraction

from .errors import SchemaError


class _Pairs(list):
    pass


def _resolve(node, path):
    if isinstance(node, _Pairs):
        out = {}
        for key, value in node:
            sub = f"{path}.{key}" if path else key
            if key in out:
                raise SchemaError(sub, "duplicate field")
            out[key] = _resolve(value, sub)
        return out
    if isinstance(node, list):
        return [_resolve(v, f"{path}[{i}]") for i, v in enumerate(node)]
    return node


def loads(text):
    """Parse JSON text, rejecting duplicate object keys (reported with their path)."""
    try:
        raw = json.loads(text, object_pairs_hook=_Pairs)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"malformed JSON: {exc}") from exc
    return _resolve(raw, "")


def dumps(obj):
    """Canonical, byte-stable JSON encoding used for every document we emit."""
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


def check_fields(doc, path, required, optional=()):
    if not isinstance(doc, dict):
        raise SchemaError(path, f"expected an object, got {type(doc).__name__}")
    allowed = set(required) | set(optional)
    for key in doc:
        if key not in allowed:
            raise SchemaError(_join(path, key), "unknown field")
    for key in required:
        if key not in doc:
            raise SchemaError(_join(path, key), "missing required field")


def _join(path, key):
    return f"{path}.{key}" if path else key


def get_int(doc, key, path, minimum=None, optional=False):
    value = doc.get(key)
    where = _join(path, key)
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(where, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise SchemaError(where, f"must be >= {minimum}, got {value}")
    return value


def get_bool(doc, key, path, default=False):
    value = doc.get(key, default)
    if value is None:
        return default
    if not isinstance(value, bool):
        raise SchemaError(_join(path, key), f"expected a boolean, got {value!r}")
    return value


def to_fraction(value, where):
    """Accept ints, decimal floats and ``"a/b"`` strings as exact rationals."""
    if isinstance(value, bool):
        raise SchemaError(where, f"expected a rational, got {value!r}")
    try:
        if isinstance(value, int):
            return Fraction(value)
        if isinstance(value, float):
            return Fraction(repr(value))
        if isinstance(value, str):
            return Fraction(value.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise SchemaError(where, f"invalid rational {value!r}") from exc
    raise SchemaError(where, f"expected a rational, got {value!r}")


def fraction_to_json(value):
    value = Fraction(value)
    if value.denominator == 1:
        return value.numerator
    return f"{value.numerator}/{value.denominator}"


def shape_from_json(value, where):
    if not (isinstance(value, list) and len(value) == 3):
        raise SchemaError(where, f"expected [h, w, c], got {value!r}")
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise SchemaError(f"{where}[{i}]", f"expected a positive integer, got {v!r}")
    return tuple(value)
