#!/usr/bin/env python3
"""Validate scenario grids in config/*.yaml against schemas/simulation_config.schema.json."""
from __future__ import annotations

import sys
from pathlib import Path

from core.errors import InputError
from core.io import parse_simulation_config, read_document

ROOT = Path(__file__).resolve().parents[1]


def main(argv: list[str] | None = None) -> int:
    paths = [Path(p) for p in argv] if argv else sorted((ROOT / "config").glob("*.y*ml"))
    if not paths:
        print("No scenario grids found under config/", file=sys.stderr)
        return 0
    failures = 0
    for p in paths:
        try:
            cfg = parse_simulation_config(read_document(p), str(p))
        except InputError as exc:
            failures += 1
            print(f"❌ {p}: {len(exc.diagnostics) or 1} error(s)")
            for diag in exc.diagnostics or [exc.summary]:
                print(f"  - {diag}")
        else:
            print(f"✅ {p} is valid ({len(cfg.scenarios)} scenario(s))")
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
