#!/usr/bin/env python3
"""Identity-baseline MSE of a generated dataset: the predictor H' = I.

Reads manifest.json and the PGM files directly (no project code) and prints
the mean over entries of the per-image mean squared difference between the
stored interferogram and the stored hologram.
"""

import argparse
import json
import pathlib
import sys


def read_pgm(path):
    data = path.read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = (int(f) for f in fields[1:])
    pos += 1
    count = width * height
    if maxval < 256:
        samples = data[pos:pos + count]
    else:
        raw = data[pos:pos + 2 * count]
        samples = [(raw[2 * i] << 8) | raw[2 * i + 1] for i in range(count)]
    if len(samples) != count:
        raise ValueError(f"{path}: truncated raster")
    return [s / maxval for s in samples]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dataset", type=pathlib.Path, help="dataset directory holding manifest.json")
    parser.add_argument("--split", default="validation", choices=["train", "validation", "all"])
    args = parser.parse_args()

    manifest = json.loads((args.dataset / "manifest.json").read_text())
    per_entry = []
    for entry in manifest["entries"]:
        if args.split != "all" and entry["split"] != args.split:
            continue
        i = read_pgm(args.dataset / entry["i_path"])
        h = read_pgm(args.dataset / entry["h_path"])
        per_entry.append(sum((a - b) ** 2 for a, b in zip(i, h)) / len(i))
    if not per_entry:
        sys.exit("no entries in the requested split")
    print(f"{sum(per_entry) / len(per_entry):.17g}")


if __name__ == "__main__":
    main()
