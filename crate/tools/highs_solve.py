#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Solve an MPS model with HiGHS.

Usage: highs_solve.py MODEL.mps OUT.sol [TIME_S] [START.sol]

Writes `# status optimal|feasible|infeasible|timeout` followed by one
`name value` line per column. START, when given, holds `name value` lines
used as a MIP start.
"""

import sys

import highspy


def read_start(path, names):
    values = {}
    with open(path) as f:
        for line in f:
            parts = line.split()
            if len(parts) == 2 and not parts[0].startswith("#"):
                values[parts[0]] = float(parts[1])
    return [values.get(n, 0.0) for n in names]


def main(argv):
    if len(argv) < 3:
        print(__doc__, file=sys.stderr)
        return 2
    mps, out = argv[1], argv[2]
    time_limit = float(argv[3]) if len(argv) > 3 and argv[3] else None
    start = argv[4] if len(argv) > 4 and argv[4] else None

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("mip_rel_gap", 0.0)
    h.setOptionValue("mip_abs_gap", 1e-9)
    if time_limit is not None:
        h.setOptionValue("time_limit", time_limit)
    if h.readModel(mps) != highspy.HighsStatus.kOk:
        print(f"cannot read {mps}", file=sys.stderr)
        return 1
    names = list(h.getLp().col_names_)
    if start:
        sol = highspy.HighsSolution()
        sol.col_value = read_start(start, names)
        sol.value_valid = True
        h.setSolution(sol)
    h.run()

    status = h.getModelStatus()
    has_solution = h.getInfo().primal_solution_status == 2
    if status == highspy.HighsModelStatus.kOptimal:
        word = "optimal"
    elif status == highspy.HighsModelStatus.kInfeasible:
        word = "infeasible"
    elif has_solution:
        word = "feasible"
    else:
        word = "timeout"
    with open(out, "w") as f:
        f.write(f"# status {word}\n")
        if has_solution and word != "infeasible":
            for n, v in zip(names, h.getSolution().col_value):
                f.write(f"{n} {v:.10g}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
