#!/usr/bin/env python3
"""Independent oracle for the backtest golden files.

Generates a small synthetic price fixture and computes the buy-and-hold and
index criteria directly from the CSV text, with no code shared with the Rust
implementation. Usage: oracle_metrics.py <fixture_dir>
"""
import csv
import math
import random
import sys
from pathlib import Path

RATE = 0.02
GAMMA = 1.5
TC = 0.003
MONTH = 21
TRAIN = 21
STEPS = 10 * MONTH


def write_fixture(d: Path) -> None:
    rng = random.Random(7)
    prices = [100.0, 50.0, 20.0]
    index = 1000.0
    with open(d / "fixture_prices.csv", "w", newline="") as fp, open(d / "fixture_index.csv", "w", newline="") as fi:
        wp, wi = csv.writer(fp, lineterminator="\n"), csv.writer(fi, lineterminator="\n")
        wp.writerow(["date", "a", "b", "c"])
        wi.writerow(["date", "index"])
        for j in range(STEPS + 1):
            t = f"{j / 252:.10f}"
            wp.writerow([t] + [f"{p:.6f}" for p in prices])
            wi.writerow([t, f"{index:.6f}"])
            prices = [p * math.exp(rng.gauss(0.0004, 0.012)) for p in prices]
            index *= math.exp(rng.gauss(0.0003, 0.009))


def read(path: Path):
    with open(path) as f:
        rows = list(csv.reader(f))[1:]
    times = [float(r[0]) for r in rows]
    t0 = times[0]
    times = [t - t0 for t in times]
    prices = [[float(x) * math.exp(-RATE * t) for x in r[1:]] for r, t in zip(rows, times)]
    return times, prices


def run(times, prices, choose):
    n = len(prices[0])
    held = [0.0] * n
    w = g = 1.0
    wealth, gross, turnover = [w], [g], []
    for k, j in enumerate(range(TRAIN, len(prices) - 1)):
        theta = choose(k, w, held)
        ret = [prices[j + 1][i] / prices[j][i] - 1.0 for i in range(n)]
        traded = sum(abs(a - b) for a, b in zip(theta, held))
        pnl = sum(a * r for a, r in zip(theta, ret))
        g *= 1.0 + pnl / w
        w += pnl - TC * traded
        held = [a * (1.0 + r) for a, r in zip(theta, ret)]
        wealth.append(w)
        gross.append(g)
        turnover.append(traded)
    return times[TRAIN:], wealth, gross, turnover


def monthly(times, wealth):
    pts = list(range(0, len(wealth), MONTH))
    return [wealth[b] / wealth[a] * math.exp(RATE * (times[b] - times[a])) - 1.0 for a, b in zip(pts, pts[1:])]


def criteria(rets):
    m = sum(rets) / len(rets)
    s = math.sqrt(sum((x - m) ** 2 for x in rets) / (len(rets) - 1))
    return m, s, 12 * (m - GAMMA * s * s), math.sqrt(12) * (m - RATE / 12) / s


def report(name, times, wealth, gross, turnover):
    m, s, ceq, sr = criteria(monthly(times, gross))
    _, _, ceq_tr, sr_tr = criteria(monthly(times, wealth))
    daily = [turnover[k] / wealth[k] for k in range(1, len(turnover))]
    return [name, m, s, ceq, sr, sum(daily) / len(daily), ceq_tr, sr_tr]


def main() -> None:
    d = Path(sys.argv[1])
    write_fixture(d)
    times, prices = read(d / "fixture_prices.csv")
    n = len(prices[0])
    bh = run(times, prices, lambda k, w, held: [w / n] * n)
    itimes, index = read(d / "fixture_index.csv")
    ix = run(itimes, index, lambda k, w, held: [w] if k == 0 else held)
    with open(d / "golden_report.csv", "w", newline="") as f:
        out = csv.writer(f, lineterminator="\n")
        out.writerow(["strategy", "MEAN", "STD", "CEQ", "SR", "TR", "CEQ_TR", "SR_TR"])
        for row in (report("B-H", *bh), report("Index", *ix)):
            out.writerow([row[0]] + [repr(v) for v in row[1:]])


if __name__ == "__main__":
    main()
