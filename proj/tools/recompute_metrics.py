#!/usr/bin/env python3
# Copyright 2026 The vecloc Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Recompute summary metrics from frames.csv and compare with summary.json.

Usage: recompute_metrics.py <report dir> [--tol 1e-9]
Exit status 0 when every field agrees, 1 otherwise.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

THRESHOLDS = {
    "lon": ("err_lon", [0.1, 0.2, 0.3]),
    "lat": ("err_lat", [0.1, 0.2, 0.3]),
    "yaw_deg": ("err_yaw_deg", [0.1, 0.3, 0.6]),
}
AVAILABLE = {"err_lon": 0.6, "err_lat": 0.3, "err_yaw_deg": 1.0}


def key(t):
    return f"{t:g}" if t != int(t) else f"{t:.1f}"


def recompute(rows):
    ok = [r for r in rows if r["status"] == "ok"]
    n = len(ok)
    out = {"trials": len(rows), "succeeded": n, "failed": len(rows) - n}
    for axis, (col, thr) in THRESHOLDS.items():
        e = [float(r[col]) for r in ok]
        if n == 0:
            out[axis] = {"mae": None, "rmse": None, "pct_below": {key(t): None for t in thr}}
            continue
        out[axis] = {
            "mae": sum(abs(x) for x in e) / n,
            "rmse": math.sqrt(sum(x * x for x in e) / n),
            "pct_below": {key(t): 100.0 * sum(abs(x) < t for x in e) / n for t in thr},
        }
    if n == 0:
        out["available_ratio"] = None
    else:
        hits = sum(all(abs(float(r[c])) < t for c, t in AVAILABLE.items()) for r in ok)
        out["available_ratio"] = 100.0 * hits / n
    return out


def compare(want, got, tol, path=""):
    errors = []
    if isinstance(want, dict):
        for k, v in want.items():
            if k not in got:
                errors.append(f"{path}{k}: missing")
            else:
                errors += compare(v, got[k], tol, f"{path}{k}.")
    elif want is None or got is None:
        if want is not got:
            errors.append(f"{path[:-1]}: expected {want}, found {got}")
    elif abs(want - got) > tol:
        errors.append(f"{path[:-1]}: expected {want!r}, found {got!r}")
    return errors


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dir", type=Path)
    ap.add_argument("--tol", type=float, default=1e-9)
    args = ap.parse_args()
    with open(args.dir / "frames.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    with open(args.dir / "summary.json") as f:
        summary = json.load(f)
    errors = compare(recompute(rows), summary, args.tol)
    for axis in THRESHOLDS:
        m = summary[axis]
        if m["mae"] is not None and m["mae"] > m["rmse"]:
            errors.append(f"{axis}: mae above rmse")
        pct = list(m["pct_below"].values())
        if None not in pct and pct != sorted(pct):
            errors.append(f"{axis}: pct_below not monotone")
    for e in errors:
        print(e)
    print(f"{len(rows)} rows, {'OK' if not errors else f'{len(errors)} mismatches'}")
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
