"""Regenerate the bundled demo scene (src/wimesh/data/demo.json)."""

import argparse
import json
from pathlib import Path

from wimesh.scenes import demo_scene_dict


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/wimesh/data/demo.json"))
    args = ap.parse_args()
    Path(args.out).write_text(json.dumps(demo_scene_dict(args.frames), indent=1) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
