"""Deterministic text serialization for reports and config echoes.

All report floats are printed with 9 significant digits so that repeated
runs produce byte-identical JSON/CSV artifacts that diff cleanly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def fmt_float(x: float) -> str:
    """Format a float with 9 significant digits ('%.9g')."""
    if isinstance(x, float) and not np.isfinite(x):
        return repr(x)
    return f"{float(x):.9g}"


def _json_fragment(obj, indent: int) -> str:
    pad = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(float(obj))
    if isinstance(obj, str):
        escaped = obj.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        inner = ", ".join(_json_fragment(v, indent) for v in obj)
        if len(inner) <= 70:
            return f"[{inner}]"
        items = (",\n" + pad + "  ").join(_json_fragment(v, indent + 1) for v in obj)
        return "[\n" + pad + "  " + items + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (",\n" + pad + "  ").join(
            f'"{k}": {_json_fragment(v, indent + 1)}' for k, v in obj.items()
        )
        return "{\n" + pad + "  " + items + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def dumps_json(obj) -> str:
    return _json_fragment(obj, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def write_csv(path, header: list[str], rows) -> None:
    """Write rows of mixed int/float/str cells; floats go through fmt_float."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [
                    fmt_float(c)
                    if isinstance(c, (float, np.floating))
                    else str(int(c))
                    if isinstance(c, (int, np.integer)) and not isinstance(c, bool)
                    else str(c)
                    for c in row
                ]
            )


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        s = fmt_float(float(v))
        # bare integers would re-parse as TOML ints
        if "." not in s and "e" not in s and "n" not in s:
            s += ".0"
        return s
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__} to TOML")


def dumps_toml(sections: dict) -> str:
    """Emit a restricted TOML document.

    ``sections`` maps a table name to a dict of scalar/list values, to a
    nested dict (sub-table), or to a list of dicts (array of tables).
    """
    out: list[str] = []
    for name, content in sections.items():
        if isinstance(content, list):
            for entry in content:
                out.append(f"[[{name}]]")
                out.extend(f"{k} = {_toml_value(v)}" for k, v in entry.items())
                out.append("")
            continue
        scalars = {k: v for k, v in content.items() if not isinstance(v, dict)}
        subtables = {k: v for k, v in content.items() if isinstance(v, dict)}
        if scalars or not subtables:
            out.append(f"[{name}]")
            out.extend(f"{k} = {_toml_value(v)}" for k, v in scalars.items())
            out.append("")
        for sub, values in subtables.items():
            out.append(f"[{name}.{sub}]")
            out.extend(f"{k} = {_toml_value(v)}" for k, v in values.items())
            out.append("")
    return "\n".join(out)
