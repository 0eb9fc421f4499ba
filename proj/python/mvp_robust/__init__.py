# SPDX-License-Identifier: Apache-2.0
"""Prompt-robustness benchmark engine over frozen embeddings."""

from ._core import (
    MvpError,
    compute_prs,
    crc32_hex,
    decouple_template,
    inspect_store,
    load_benchmark,
    load_template_set,
    prs_avg,
    read_store,
    render_prompt,
    synth,
    write_store,
    zero_shot_report,
)

__all__ = [
    "MvpError",
    "compute_prs",
    "crc32_hex",
    "decouple_template",
    "inspect_store",
    "load_benchmark",
    "load_template_set",
    "prs_avg",
    "read_store",
    "render_prompt",
    "synth",
    "write_store",
    "zero_shot_report",
]
