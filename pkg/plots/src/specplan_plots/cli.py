"""Standalone figure renderer: specplan-plots --in CSV --kind KIND --out IMG."""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .figures import KINDS, PlotSpec, SchemaError, render


def parse_styles(spec: Optional[str]) -> dict:
    if not spec:
        return {}
    out = {}
    for part in spec.split(","):
        if "=" not in part:
            raise ValueError(f"style entries look like planner=color, got {part!r}")
        name, color = part.split("=", 1)
        out[name.strip()] = color.strip()
    return out


def main(argv: Optional[list[str]] = None) -> int:
    p = argparse.ArgumentParser(prog="specplan-plots", description=__doc__)
    p.add_argument("--in", dest="input_csv", required=True, help="harness CSV input")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--out", required=True, help="output image path (png/pdf/svg)")
    p.add_argument("--timings", default=None, help="timing side file for ns-tradeoff")
    p.add_argument("--style", default=None, help="planner=color overrides, comma separated")
    args = p.parse_args(argv)
    try:
        spec = PlotSpec(
            input_csv=args.input_csv,
            kind=args.kind,
            output=args.out,
            styles=parse_styles(args.style),
            timings_csv=args.timings,
        )
        path = render(spec)
    except FileNotFoundError as exc:
        sys.stderr.write(f"specplan-plots: error: {exc}\n")
        return 2
    except (SchemaError, ValueError) as exc:
        sys.stderr.write(f"specplan-plots: error: {exc}\n")
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
