"""Write the synthetic benchmark shapes to disk for driving the CLI.

    python scripts/make_fixtures.py [out_dir]

Defaults to fixtures/ next to the repository root. Suggested starting
points: 12 clusters for the cylinder, 30 for the tee, 40 for the
quadruped with --k2 2.
"""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from gcskel.cloud import write_cloud
from gcskel.synth import make_cylinder, make_quadruped, make_tee


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).resolve().parent.parent / "fixtures"
    out.mkdir(parents=True, exist_ok=True)
    shapes = {
        "cylinder": make_cylinder()[0],
        "tee": make_tee()[0],
        "quadruped": make_quadruped()[0],
    }
    for name, cloud in shapes.items():
        path = out / f"{name}.xyzn"
        write_cloud(cloud, path)
        print(f"{path}  ({len(cloud)} points)")
    print("\ntry:")
    print(f"  gcskel run --input {out}/cylinder.xyzn --clusters 12 --seed 3 --out /tmp/cyl")
    print(f"  gcskel run --input {out}/tee.xyzn --clusters 30 --seed 3 --out /tmp/tee")
    print(f"  gcskel run --input {out}/quadruped.xyzn --clusters 40 --k2 2 --seed 3 --out /tmp/quad")


if __name__ == "__main__":
    main()
