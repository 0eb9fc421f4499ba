# SPDX-License-Identifier: Apache-2.0
"""Template rendering and decoupling mirrored from the native engine."""

import json
import re
import zlib

PLACEHOLDER = "{}"


def render(text, class_name):
    if PLACEHOLDER not in text:
        raise ValueError("template has no placeholder")
    return text.replace(PLACEHOLDER, class_name, 1)


def decouple(text):
    """Drop the placeholder and one adjacent space, then collapse runs of spaces."""
    pos = text.find(PLACEHOLDER)
    if pos < 0:
        raise ValueError("template has no placeholder")
    before, after = text[:pos], text[pos + len(PLACEHOLDER):]
    if before.endswith(" "):
        before = before[:-1]
    elif after.startswith(" "):
        after = after[1:]
    out = re.sub(" {2,}", " ", before + after)
    if not out.strip(" "):
        raise ValueError("template is empty once decoupled")
    return out


def file_hash(path):
    with open(path, "rb") as f:
        return format(zlib.crc32(f.read()), "08x")


def load(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)
