"""CSV and config artifacts with reproducible bytes.

Every CSV starts with a single '# created:' comment line; everything after
it is a pure function of the inputs, so two runs with the same flags and
seed produce byte-identical files once that line is dropped.
"""

from __future__ import annotations

import os
from datetime import datetime, timezone


def format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path, header, rows) -> None:
    lines = [f"# created: {datetime.now(timezone.utc).isoformat()}"]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def read_csv_payload(path) -> str:
    """File contents with '# created:' comment lines removed, for comparisons."""
    with open(path, "r", encoding="utf-8") as handle:
        return "".join(
            line for line in handle if not line.startswith("# created:")
        )


def write_config(path, config: dict) -> None:
    lines = [f"{key}={config[key]}" for key in sorted(config) if config[key] is not None]
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
