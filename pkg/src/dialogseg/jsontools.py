"""Pull the first JSON value out of free-form model output."""

import json

from .errors import ResponseParseError

_decoder = json.JSONDecoder()


def extract_first_json(text: str):
    """Return the first JSON object or array embedded in ``text``.

    Handles replies wrapped in prose or code fences by scanning for the
    first position where a JSON value actually parses.
    """
    obj, _ = extract_first_json_with_source(text)
    return obj


def extract_first_json_with_source(text: str):
    """Like extract_first_json but also returns the exact source slice."""
    for i, ch in enumerate(text):
        if ch not in "{[":
            continue
        try:
            obj, end = _decoder.raw_decode(text[i:])
        except json.JSONDecodeError:
            continue
        return obj, text[i : i + end]
    raise ResponseParseError("no JSON value found in model reply")
