"""Materialize the benchmark CSVs into a local data directory.

COMPAS, adult and the UCI german credit table are taken from the
``responsibly`` wheel on PyPI, which vendors the original public files.
The german credit table is rewritten into the column layout of the
widely circulated ``german_credit_data.csv`` (Age, Sex, Saving accounts,
Checking account, Credit amount, Duration, Risk, ...).

The drug consumption data is not redistributed by any package we know of;
place ``drug_consumption.csv`` in the data directory by hand.

Usage::

    python scripts/fetch_data.py [--wheel path/to/responsibly.whl] [--out data]
"""
import argparse
import csv
import io
import pathlib
import subprocess
import sys
import tempfile
import zipfile

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "educational-num",
    "marital-status", "occupation", "relationship", "race", "gender",
    "capital-gain", "capital-loss", "hours-per-week", "native-country", "income",
]

CHECKING = {"A11": "little", "A12": "moderate", "A13": "rich", "A14": "NA"}
SAVINGS = {"A61": "little", "A62": "moderate", "A63": "quite rich", "A64": "rich", "A65": "NA"}
SEX = {"A91": "male", "A92": "female", "A93": "male", "A94": "male", "A95": "female"}
HOUSING = {"A151": "rent", "A152": "own", "A153": "free"}
JOB = {"A171": "0", "A172": "1", "A173": "2", "A174": "3"}
PURPOSE = {
    "A40": "car", "A41": "car", "A42": "furniture/equipment", "A43": "radio/TV",
    "A44": "domestic appliances", "A45": "repairs", "A46": "education",
    "A47": "vacation/others", "A48": "vacation/others", "A49": "business",
    "A410": "vacation/others",
}


def _download_wheel(dest):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
         "responsibly==0.1.2", "-d", str(dest)],
        check=True,
    )
    return next(pathlib.Path(dest).glob("responsibly-*.whl"))


def _write_adult(zf, out):
    rows = []
    for member in ("responsibly/dataset/adult/adult.data", "responsibly/dataset/adult/adult.test"):
        text = zf.read(member).decode()
        for line in text.splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            fields[-1] = fields[-1].rstrip(".")
            rows.append(fields)
    with open(out / "adult.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ADULT_COLUMNS)
        w.writerows(rows)
    return len(rows)


def _write_german(zf, out):
    text = zf.read("responsibly/dataset/german/german.data").decode()
    header = ["", "Age", "Sex", "Job", "Housing", "Saving accounts",
              "Checking account", "Credit amount", "Duration", "Purpose", "Risk"]
    rows = []
    for i, line in enumerate(l for l in text.splitlines() if l.strip()):
        f = line.split()
        rows.append([
            i, f[12], SEX[f[8]], JOB[f[16]], HOUSING[f[14]], SAVINGS[f[5]],
            CHECKING[f[0]], f[4], f[1], PURPOSE[f[3]],
            "good" if f[20] == "1" else "bad",
        ])
    with open(out / "german_credit_data.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return len(rows)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--wheel", type=pathlib.Path, default=None)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data"))
    args = parser.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or _download_wheel(tmp)
        with zipfile.ZipFile(wheel) as zf:
            (args.out / "compas-scores-two-years.csv").write_bytes(
                zf.read("responsibly/dataset/compas/compas-scores-two-years.csv"))
            n_adult = _write_adult(zf, args.out)
            n_german = _write_german(zf, args.out)
    print(f"compas-scores-two-years.csv, adult.csv ({n_adult} rows), "
          f"german_credit_data.csv ({n_german} rows) -> {args.out}")
    if not (args.out / "drug_consumption.csv").exists():
        print("drug_consumption.csv missing: download it manually", file=sys.stderr)


if __name__ == "__main__":
    main()
