#!/usr/bin/env python3
"""Convert a NAS-Bench-201 export into the pinas benchmark table format.

Output: one "<arch> <accuracy in [0,1]>" line per architecture, arch strings
in the benchmark's own "|op~0|+|op~0|op~1|+|op~0|op~1|op~2|" notation.

Inputs:
  *.pth          official release file, read through nas_201_api (pip install nas-bench-201)
  *.csv          columns arch,accuracy (header required)
  *.json         {"<arch>": accuracy, ...} or [{"arch": ..., "accuracy": ...}, ...]
Accuracies above 1 are taken as percentages.
"""

import argparse
import csv
import json
import re
import sys

OPS = {"none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"}
ARCH_RE = re.compile(r"^\|([a-z0-9_]+)~0\|\+\|([a-z0-9_]+)~0\|([a-z0-9_]+)~1\|\+"
                     r"\|([a-z0-9_]+)~0\|([a-z0-9_]+)~1\|([a-z0-9_]+)~2\|$")


def check_arch(arch):
    m = ARCH_RE.match(arch)
    if not m or any(op not in OPS for op in m.groups()):
        raise ValueError(f"not a NAS-Bench-201 cell string: {arch!r}")
    return arch


def to_fraction(acc):
    acc = float(acc)
    if acc > 1.0:
        acc /= 100.0
    if not 0.0 <= acc <= 1.0:
        raise ValueError(f"accuracy out of range: {acc}")
    return acc


def from_pth(path, dataset, hp):
    try:
        from nas_201_api import NASBench201API
    except ImportError:
        sys.exit("reading .pth needs nas_201_api (pip install nas-bench-201)")
    api = NASBench201API(path, verbose=False)
    out = {}
    for idx in range(len(api)):
        info = api.get_more_info(idx, dataset, hp=hp, is_random=False)
        out[check_arch(api.arch(idx))] = to_fraction(info["test-accuracy"])
    return out


def from_csv(path):
    out = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out[check_arch(row["arch"].strip())] = to_fraction(row["accuracy"])
    return out


def from_json(path):
    with open(path) as f:
        data = json.load(f)
    if isinstance(data, dict):
        return {check_arch(k): to_fraction(v) for k, v in data.items()}
    return {check_arch(r["arch"]): to_fraction(r["accuracy"]) for r in data}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("input")
    ap.add_argument("output")
    ap.add_argument("--dataset", default="cifar10", help="dataset key for .pth input (default cifar10)")
    ap.add_argument("--hp", default="200", help="training schedule for .pth input (default 200 epochs)")
    args = ap.parse_args(argv)

    if args.input.endswith(".pth"):
        table = from_pth(args.input, args.dataset, args.hp)
    elif args.input.endswith(".csv"):
        table = from_csv(args.input)
    elif args.input.endswith(".json"):
        table = from_json(args.input)
    else:
        sys.exit("input must be .pth, .csv or .json")

    with open(args.output, "w") as f:
        f.write(f"# converted from {args.input}\n")
        for arch in sorted(table):
            f.write(f"{arch} {table[arch]:.17g}\n")
    print(f"wrote {len(table)} architectures to {args.output}")


if __name__ == "__main__":
    main()
