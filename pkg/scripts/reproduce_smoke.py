#!/usr/bin/env python
"""Minutes-scale end-to-end pipeline check: tiny model, few iterations.

Useful for verifying the plumbing before committing to the full run.
"""

import json
import sys

from trajedit.harness import reproduce, smoke_profile


def main() -> int:
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/smoke"
    acceptance = reproduce(smoke_profile(), out)
    print(json.dumps({k: v["passed"] for k, v in acceptance["criteria"].items()},
                     indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
