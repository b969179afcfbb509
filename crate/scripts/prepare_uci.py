#!/usr/bin/env python3
"""Convert the CollegeMsg (UCI) message log into the weekly-snapshot DTDG CSV.

Input: collegemsg.csv.gz with rows `Source,Target,Timestamp` where Timestamp is
`M/D/YY H:MM AM|PM`. Output: `snapshot,src,dst,feat_0` with snapshot = whole
weeks elapsed since the first message, node ids remapped to 0..|U|-1 in order
of first appearance, and feat_0 = 1.0 (one message per edge).
"""
import csv
import gzip
import sys
from datetime import datetime

src_path = sys.argv[1] if len(sys.argv) > 1 else "data/uci/collegemsg.csv.gz"
out_path = sys.argv[2] if len(sys.argv) > 2 else "data/uci/uci_dtdg.csv"

rows = []
with gzip.open(src_path, "rt") as f:
    reader = csv.reader(f)
    next(reader)
    for s, d, ts in reader:
        rows.append((datetime.strptime(ts.strip(), "%m/%d/%y %I:%M %p"), s, d))

rows.sort(key=lambda r: r[0])
t0 = rows[0][0]
ids = {}
def node(x):
    return ids.setdefault(x, len(ids))

with open(out_path, "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(["snapshot", "src", "dst", "feat_0"])
    for ts, s, d in rows:
        week = (ts - t0).days // 7
        w.writerow([week, node(s), node(d), "1.0"])

print(f"{len(rows)} edges, {len(ids)} nodes, {(rows[-1][0] - t0).days // 7 + 1} snapshots -> {out_path}")
