#!/usr/bin/env python
"""Full pipeline: evaluation data, curriculum + ablation training, reports.

Several hours on one CPU core. Restartable: completed stages are detected
by their final checkpoint and skipped, partial stages resume from the
newest step checkpoint.
"""

import json
import sys

from trajedit.harness import full_profile, reproduce


def main() -> int:
    out = sys.argv[1] if len(sys.argv) > 1 else "runs/acceptance"
    acceptance = reproduce(full_profile(), out)
    print(json.dumps({k: v["passed"] for k, v in acceptance["criteria"].items()},
                     indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
