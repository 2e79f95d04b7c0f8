"""Compare the compiled and pure-Python routing kernels.

Solves the same random CVRPs with both backends, checks that the plans are
identical and reports wall-clock times.

    python3 benchmarks/bench_routing.py --stops 30 65 --effort 20 100 --repeat 3
"""
import argparse
import csv
import sys
import time

import numpy as np

from oohlab.generators import synthetic_instance
from oohlab.instance import Location
from oohlab.routing import Booking, aggregate_stops, backend, solve_cvrp, use_backend


def random_stops(inst, n, seed):
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(inst.customer_pool), size=n)
    bookings = []
    for i in picks:
        option = -1 if rng.random() < 0.7 else int(rng.integers(len(inst.ooh)))
        p = inst.customer_pool[i]
        bookings.append(Booking(Location(p.x, p.y), float(inst.pool_service_minutes[i]), option))
    return aggregate_stops(bookings, inst)[0]


def time_solve(stops, inst, effort, seed, repeat):
    best, plan = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        plan = solve_cvrp(stops, inst, effort, np.random.default_rng(seed))
        best = min(best, time.perf_counter() - t0)
    return best, plan


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--stops", type=int, nargs="+", default=[30, 65, 90])
    ap.add_argument("--effort", type=int, nargs="+", default=[20, 100])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="optional CSV output")
    args = ap.parse_args(argv)

    if "compiled" not in backend.available():
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    inst = synthetic_instance("RC", 0)
    rows = []
    print(f"{'customers':>9} {'effort':>6} {'python s':>9} {'compiled s':>10} {'speedup':>8} {'same plan':>9}")
    for n in args.stops:
        stops = random_stops(inst, n, args.seed)
        for effort in args.effort:
            use_backend("python")
            t_py, p_py = time_solve(stops, inst, effort, args.seed, args.repeat)
            use_backend("compiled")
            t_c, p_c = time_solve(stops, inst, effort, args.seed, args.repeat)
            same = p_py.routes == p_c.routes
            rows.append({"customers": n, "effort": effort, "python_s": t_py, "compiled_s": t_c,
                         "speedup": t_py / t_c, "same_plan": same})
            print(f"{n:>9} {effort:>6} {t_py:>9.4f} {t_c:>10.4f} {t_py / t_c:>8.1f} {str(same):>9}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
