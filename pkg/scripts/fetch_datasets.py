"""Download the UCI sources that are not bundled under data/ and rewrite them
as headed, comma-separated files the registry can read.

    python3 scripts/fetch_datasets.py [--out data] [--force]
"""

from __future__ import annotations

import argparse
import csv
import io
import re
import sys
import urllib.request
from pathlib import Path

UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"
SOURCES = {
    "slump.csv": (f"{UCI}/concrete/slump/slump_test.data", ","),
    "forestfires.csv": (f"{UCI}/forest-fires/forestfires.csv", ","),
    "parkinsons_updrs.csv": (f"{UCI}/parkinsons/telemonitoring/parkinsons_updrs.data", ","),
    "winequality_red.csv": (f"{UCI}/wine-quality/winequality-red.csv", ";"),
    "winequality_white.csv": (f"{UCI}/wine-quality/winequality-white.csv", ";"),
}
# slump_test.data spells its targets out in full
RENAMES = {"slump_cm": "slump", "flow_cm": "flow", "compressive_strength_28_day_mpa": "compressive_strength"}


def clean_name(name: str) -> str:
    name = re.sub(r"[^0-9a-zA-Z]+", "_", name.strip().strip('"')).strip("_").lower()
    if name == "rh":
        return "RH"
    return RENAMES.get(name, name)


def convert(raw: str, delimiter: str) -> str:
    rows = list(csv.reader(io.StringIO(raw), delimiter=delimiter))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([clean_name(h) for h in rows[0]])
    writer.writerows(r for r in rows[1:] if r)
    return out.getvalue()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    parser.add_argument("--force", action="store_true", help="overwrite existing files")
    args = parser.parse_args(argv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for name, (url, delimiter) in SOURCES.items():
        target = out_dir / name
        if target.exists() and not args.force:
            print(f"skip {name} (exists)")
            continue
        try:
            with urllib.request.urlopen(url, timeout=60) as response:
                raw = response.read().decode("utf-8")
        except OSError as exc:
            print(f"FAILED {name}: {exc}", file=sys.stderr)
            failures += 1
            continue
        target.write_text(convert(raw, delimiter), encoding="utf-8")
        print(f"wrote {target}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
