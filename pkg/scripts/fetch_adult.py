#!/usr/bin/env python3
"""Fetch the UCI Adult training file into data/.

Tries the UCI archive first, then falls back to the copy bundled inside the
``responsibly`` wheel (fetched with ``pip download``). The result is checked
against the known sha256 of the 32561-row file.
"""

import argparse
import hashlib
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

UCI_URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data"
SHA256 = "5b00264637dbfec36bdeaab5676b0b309ff9eb788d63554ca0a249491c86603d"
WHEEL_MEMBER = "responsibly/dataset/adult/adult.data"


def from_uci() -> bytes:
    with urllib.request.urlopen(UCI_URL, timeout=30) as resp:
        return resp.read()


def from_wheel() -> bytes:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
             "-d", tmp, "responsibly==0.1.2"],
            check=True, capture_output=True,
        )
        wheel = next(Path(tmp).glob("responsibly-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            return zf.read(WHEEL_MEMBER)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/adult.data")
    args = ap.parse_args()
    out = Path(args.out)
    if out.is_file() and hashlib.sha256(out.read_bytes()).hexdigest() == SHA256:
        print(f"{out} already present")
        return 0
    for source in (from_uci, from_wheel):
        try:
            data = source()
        except Exception as exc:  # noqa: BLE001 - try the next source
            print(f"{source.__name__}: {exc}", file=sys.stderr)
            continue
        digest = hashlib.sha256(data).hexdigest()
        if digest != SHA256:
            print(f"{source.__name__}: unexpected sha256 {digest}", file=sys.stderr)
            continue
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(data)
        print(f"wrote {out} ({len(data)} bytes) via {source.__name__}")
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
