#!/usr/bin/env python3
"""Solve an SDPA sparse file (.dat-s) with cvxopt and print the model value.

The header comment written by `seqnpa export` carries `offset` and `sign`;
the printed value is offset + sign * (optimal c.x). Files without that header
print the SDPA optimum itself.

usage: sdpa_cvxopt.py FILE
"""
import re
import sys

from cvxopt import matrix, solvers


def read(path):
    offset, sign = 0.0, 1.0
    rows = []
    with open(path) as f:
        for line in f:
            if line.startswith('"') or line.startswith("*"):
                m = re.search(r"sign=(\S+)", line)
                if m:
                    sign = float(m.group(1))
                m = re.search(r"offset=(\S+)", line)
                if m:
                    offset = float(m.group(1))
                continue
            line = re.sub(r"[,(){}]", " ", line).strip()
            if line:
                rows.append(line)
    m = int(rows[0].split()[0])
    nblocks = int(rows[1].split()[0])
    sizes = [abs(int(v)) for v in rows[2].split()[:nblocks]]
    c = [float(v) for v in rows[3].split()[:m]] if m else []
    mats = [[[[0.0] * n for _ in range(n)] for n in sizes] for _ in range(m + 1)]
    for line in rows[4:]:
        k, b, i, j, v = line.split()[:5]
        k, b, i, j, v = int(k), int(b) - 1, int(i) - 1, int(j) - 1, float(v)
        mats[k][b][i][j] = v
        mats[k][b][j][i] = v
    return offset, sign, m, sizes, c, mats


def main():
    offset, sign, m, sizes, c, mats = read(sys.argv[1])
    # SDPA: min c.x  s.t.  sum x_k F_k - F_0 >= 0
    # cvxopt: min c.x  s.t.  h - sum x_k G_k >= 0, so G_k = -F_k, h = -F_0
    gs, hs = [], []
    for b, n in enumerate(sizes):
        cols = [[-mats[k][b][i][j] for j in range(n) for i in range(n)] for k in range(1, m + 1)]
        gs.append(matrix(cols, (n * n, m), "d"))
        hs.append(matrix([[-mats[0][b][i][j] for i in range(n)] for j in range(n)], (n, n), "d"))
    solvers.options["show_progress"] = False
    solvers.options["abstol"] = 1e-10
    solvers.options["reltol"] = 1e-10
    solvers.options["feastol"] = 1e-10
    sol = solvers.sdp(matrix(c, (m, 1), "d"), Gs=gs, hs=hs)
    print(f"status {sol['status']}")
    print(f"sdpa_objective {sol['primal objective']:.12e}")
    print(f"model_value {offset + sign * sol['primal objective']:.12e}")


if __name__ == "__main__":
    main()
