#!/usr/bin/env python3
"""Independent oracle for the VWAP fixture.

Generates trades.csv and quotes.csv from a fixed seed, then recomputes
VWAP = sum(P_i * V_i) / sum(V_i) over the last 20 ACME trades and the
bargain flag (quote price < VWAP) for every input tuple, writing the rows
the engine is expected to emit to expected.csv.

Usage: python3 oracle.py [outdir]
"""
import csv
import os
import random
import sys
from decimal import Decimal

SEED = 20240617
N_TRADES = 200
N_QUOTES = 20
ROWS = 20
SYMBOL = "ACME"


def fmt_number(x):
    if x == int(x):
        return str(int(x))
    return format(Decimal(repr(x)), "f")


def generate(rng):
    trades = []
    ts = 0
    price = 17.0
    for _ in range(N_TRADES):
        ts += rng.randint(1, 400)
        sym = SYMBOL if rng.random() < 0.75 else "IBM"
        price = max(1.0, price + rng.choice([-0.25, -0.1, -0.05, 0.0, 0.05, 0.1, 0.25]))
        trades.append((sym, round(price, 2), rng.randint(1, 10) * 100, ts))
    trade_ts = [t[3] for t in trades]
    quote_ts = sorted(rng.sample(range(1, trade_ts[-1] + 1), N_QUOTES - 2))
    # one quote before any trade and one tied with a trade timestamp
    quote_ts = sorted(quote_ts + [0, trade_ts[len(trade_ts) // 2]])
    quotes = []
    for qts in quote_ts:
        sym = SYMBOL if rng.random() < 0.8 else "IBM"
        quotes.append((sym, round(17.0 + rng.uniform(-1.5, 1.5), 2), qts))
    return trades, quotes


def merged(trades, quotes):
    # ascending ts, ties by stream declaration order (trades first), then file order
    events = [(t[3], 0, i, "trades", t) for i, t in enumerate(trades)]
    events += [(q[2], 1, i, "quotes", q) for i, q in enumerate(quotes)]
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    return [(e[3], e[4]) for e in events]


def vwap_of(region):
    num = 0.0
    den = 0.0
    for p, v in region:
        num = num + p * v
    for p, v in region:
        den = den + v
    if den == 0.0:
        return "#DIV/0!", None
    x = num / den
    return fmt_number(x), x


def expected_rows(trades, quotes):
    region = []
    quote = None
    exported = (None, None)
    rows = []
    for seq, (stream, t) in enumerate(merged(trades, quotes)):
        if t[0] != SYMBOL:
            continue
        if stream == "trades":
            region.append((t[1], float(t[2])))
            region = region[-ROWS:]
        else:
            quote = t[1]
        vwap_text, vwap = vwap_of(region)
        if quote is None:
            bargain = "FALSE"
        elif vwap is None:
            bargain = "#DIV/0!"
        else:
            bargain = "TRUE" if quote < vwap else "FALSE"
        if (vwap_text, bargain) != exported:
            exported = (vwap_text, bargain)
            rows.append((str(seq), vwap_text, bargain))
    return rows


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.dirname(os.path.abspath(__file__))
    trades, quotes = generate(random.Random(SEED))
    with open(os.path.join(out, "trades.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sym", "price", "vol", "ts"])
        for sym, p, v, ts in trades:
            w.writerow([sym, fmt_number(p), v, ts])
    with open(os.path.join(out, "quotes.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sym", "price", "ts"])
        for sym, p, ts in quotes:
            w.writerow([sym, fmt_number(p), ts])
    with open(os.path.join(out, "expected.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["__seq", "vwap", "isBargain"])
        w.writerows(expected_rows(trades, quotes))


if __name__ == "__main__":
    main()
