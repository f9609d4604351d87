#!/usr/bin/env python3
"""Print the cost/context table (receptive field, parameters, size, FLOPS)
for the built-in presets A..I next to the published reference values."""

import argparse
import json
import sys

from dfsmn.analysis import table_report
from dfsmn.network import PRESETS


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--presets", default="".join(sorted(PRESETS)),
                    help="preset names to include, e.g. AEI")
    ap.add_argument("--json", help="also write one JSON record per preset")
    args = ap.parse_args(argv)

    text, records = table_report(list(args.presets))
    print(text)
    if args.json:
        with open(args.json, "w") as f:
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
