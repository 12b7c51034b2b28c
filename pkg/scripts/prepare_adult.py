"""Build data/adult.csv from the raw UCI files (adult.data, adult.test).

Usage: python3 scripts/prepare_adult.py RAW_DIR_OR_WHEEL [OUT_CSV]

RAW_DIR_OR_WHEEL is a directory holding adult.data and adult.test, or any zip
archive (e.g. a wheel) that contains them.  Rows with "?" are kept here and
dropped by the loader.
"""
import csv
import io
import sys
import zipfile
from pathlib import Path

HEADER = ["age", "workclass", "fnlwgt", "education", "education-num", "marital-status", "occupation",
          "relationship", "race", "sex", "capital-gain", "capital-loss", "hours-per-week",
          "native-country", "income"]


def _read_raw(src: Path):
    if src.is_dir():
        return [(src / n).read_text() for n in ("adult.data", "adult.test")]
    with zipfile.ZipFile(src) as zf:
        names = {Path(n).name: n for n in zf.namelist()}
        return [zf.read(names[n]).decode() for n in ("adult.data", "adult.test")]


def main(argv):
    if len(argv) < 2:
        print(__doc__)
        return 2
    out = Path(argv[2]) if len(argv) > 2 else Path(__file__).resolve().parents[1] / "data" / "adult.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for text in _read_raw(Path(argv[1])):
        for rec in csv.reader(io.StringIO(text)):
            rec = [v.strip() for v in rec]
            if len(rec) != len(HEADER):
                continue  # blank lines and the "|1x3 Cross validator" banner in adult.test
            rows.append(rec)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
