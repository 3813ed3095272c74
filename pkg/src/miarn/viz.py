"""Attention-map rendering: self-contained HTML, terminal ANSI, audit text.

Intensity is normalized per document by the maximum attention weight, so a
single rendering always uses the full scale.
"""

from __future__ import annotations

import html

# 8-level background ramp from dark red to bright orange (256-color codes)
_ANSI_RAMP = (52, 88, 124, 160, 196, 202, 208, 214)

_HTML_HEAD = """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>attention maps</title>
<style>
body { font-family: monospace; margin: 2em; }
.doc { margin-bottom: 1em; line-height: 2; }
.tok { padding: 2px 3px; border-radius: 3px; }
</style>
</head>
<body>
"""


def _intensities(record):
    """Per-valid-token weights scaled into [0, 1] by the document maximum."""
    a = record.a[: record.valid_len]
    peak = float(a.max()) if len(a) else 0.0
    if peak <= 0:
        return [0.0] * len(a)
    return [float(x) / peak for x in a]


def _record_tokens(record):
    if record.tokens is not None:
        return list(record.tokens)[: record.valid_len]
    return [f"#{int(i)}" for i in record.ids[: record.valid_len]]


def render_html(records) -> str:
    """One self-contained page; exactly one span per token."""
    parts = [_HTML_HEAD]
    for record in records:
        spans = []
        for tok, frac in zip(_record_tokens(record), _intensities(record)):
            spans.append(
                f'<span class="tok" style="background-color: '
                f'rgba(255,96,0,{frac:.2f})">{html.escape(tok)}</span>'
            )
        parts.append('<div class="doc">' + " ".join(spans) + "</div>\n")
    parts.append("</body>\n</html>\n")
    return "".join(parts)


def render_ansi(record) -> str:
    """Tokens with 8-level background intensity buckets for the terminal."""
    pieces = []
    for tok, frac in zip(_record_tokens(record), _intensities(record)):
        level = min(int(frac * 8), 7)
        if level == 0:
            pieces.append(tok)
        else:
            pieces.append(f"\x1b[48;5;{_ANSI_RAMP[level]}m{tok}\x1b[0m")
    return " ".join(pieces)


def audit_text(record) -> str:
    """Raw attention weights and unmasked upper-triangle affinity scores."""
    lines = []
    tokens = _record_tokens(record)
    lines.append("tokens: " + " ".join(tokens))
    weights = " ".join(f"{float(x):.6f}" for x in record.a[: record.valid_len])
    lines.append("a: " + weights)
    if record.s is not None and record.mask is not None:
        m = record.valid_len
        for i in range(m):
            for j in range(i + 1, m):
                if record.mask[i, j]:
                    lines.append(f"s[{i},{j}] = {float(record.s[i, j]):.6f}")
    return "\n".join(lines) + "\n"
