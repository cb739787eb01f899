#!/usr/bin/env python
"""Apply a trained model to one generated case and save contact sheets.

    python scripts/demo_edit.py runs/acceptance [case_dir] [dest]

Defaults to the first decoupled case and dest runs/acceptance/demo.
"""

import json
import sys
from pathlib import Path

import numpy as np

from trajedit.conditioning import EditSpec
from trajedit.editing import edit_video
from trajedit.harness import (
    PipelineConfig,
    contact_sheet,
    full_profile,
    load_model_for_eval,
)
from trajedit.scenes import save_video


def main() -> int:
    run = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/acceptance")
    case = Path(sys.argv[2]) if len(sys.argv) > 2 else run / "data/decoupled/case_00"
    dest = Path(sys.argv[3]) if len(sys.argv) > 3 else run / "demo"

    cfg_path = run / "config.json"
    if cfg_path.exists():
        cfg = PipelineConfig.from_dict(json.loads(cfg_path.read_text()))
    else:
        cfg = full_profile()
    model, edit_cfg = load_model_for_eval(cfg, run, "full")
    spec = EditSpec.load(case / "edit.json")
    edited = edit_video(model, spec, edit_cfg)

    dest.mkdir(parents=True, exist_ok=True)
    save_video(edited, dest / "video")
    contact_sheet(np.asarray(spec.video), dest / "source.png")
    contact_sheet(edited, dest / "edited.png")
    print(f"wrote {dest}/video, {dest}/source.png, {dest}/edited.png")
    return 0


if __name__ == "__main__":
    sys.exit(main())
