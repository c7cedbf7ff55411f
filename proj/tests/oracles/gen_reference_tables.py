#!/usr/bin/env python3
"""Regenerates the frozen high-precision reference tables in tests/data.

Survival functions, Irwin-Hall CDFs and the Pearson fixture are evaluated with
mpmath at 50 significant digits, independently of Boost.Math. Run from the repo
root; the outputs are committed and read by the C++ tests.
"""
import json
import os

import mpmath as mp

mp.mp.dps = 50
HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "data")


def chi2_sf(x, k):
    return mp.gammainc(mp.mpf(k) / 2, mp.mpf(x) / 2, mp.inf, regularized=True)


def f_sf(x, d1, d2):
    x, d1, d2 = mp.mpf(x), mp.mpf(d1), mp.mpf(d2)
    return mp.betainc(d2 / 2, d1 / 2, 0, d2 / (d2 + d1 * x), regularized=True)


def normal_sf(x):
    return mp.erfc(mp.mpf(x) / mp.sqrt(2)) / 2


def t_sf(x, k):
    x, k = mp.mpf(x), mp.mpf(k)
    tail = mp.betainc(k / 2, mp.mpf(1) / 2, 0, k / (k + x * x), regularized=True) / 2
    return tail if x >= 0 else 1 - tail


def irwin_hall_cdf(x, n):
    x = mp.mpf(x)
    total = mp.mpf(0)
    for k in range(int(mp.floor(x)) + 1):
        total += (-1) ** k * mp.binomial(n, k) * (x - k) ** n
    return total / mp.factorial(n)


def survival_rows():
    rows = []
    for k in (1, 2, 3, 5, 10, 40):
        for x in (0.01, 0.5, 1.0, 3.0, 5.99146, 12.0, 30.0):
            rows.append(("chi_square", k, 0, x, chi2_sf(x, k)))
    for d1, d2 in ((1, 5), (2, 10), (3, 20), (5, 2), (9, 150), (1, 14)):
        for x in (0.05, 0.5, 1.0, 2.5, 4.0, 10.0):
            rows.append(("f", d1, d2, x, f_sf(x, d1, d2)))
    for x in (-6, -3.5, -2, -1.41421356237, -1, -0.3, 0, 0.25, 0.5, 1, 1.5, 1.959963985, 2.5,
              3, 4, 5, 6, 7.5, 8, 9, 10, 12, 15, 20, 25, 30, 35, -0.05, 0.05, 2.2):
        rows.append(("normal", 0, 0, x, normal_sf(x)))
    for k in (1, 3, 8, 14, 30, 100):
        for x in (-2.0, 0.0, 0.7, 1.5, 2.3, 4.0, 9.0):
            rows.append(("student_t", k, 0, x, t_sf(x, k)))
    return rows


def irwin_hall_rows():
    rows = []
    for n in (1, 2, 3, 5, 8, 11):
        for frac in (0.05, 0.2, 0.37, 0.5, 0.81, 0.97):
            x = mp.mpf(n) * frac
            rows.append((n, float(x), irwin_hall_cdf(x, n)))
    return rows


def pearson_fixture():
    x = [0.3, -1.2, 2.5, 0.8, -0.4, 1.9, -2.2, 0.1, 1.4, -0.9]
    y = [0.5, -0.7, 1.1, 1.6, -1.3, 0.4, -1.0, 0.9, 2.1, -0.2]
    n = len(x)
    X = [mp.mpf(v) for v in x]
    Y = [mp.mpf(v) for v in y]
    mx, my = sum(X) / n, sum(Y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(X, Y))
    sxx = sum((a - mx) ** 2 for a in X)
    syy = sum((b - my) ** 2 for b in Y)
    rho = sxy / mp.sqrt(sxx * syy)
    t = rho * mp.sqrt((n - 2) / (1 - rho * rho))
    p = 2 * t_sf(abs(t), n - 2)
    return {"x": x, "y": y, "rho": mp.nstr(rho, 25), "p": mp.nstr(p, 25)}


def anova_fixture_groups():
    return [
        [0.3, -1.1, 2.0, 0.7, 0.1, -0.4],
        [3.0, -2.5, 1.0, 4.2, 0.6],
        [0.0, 0.2, -0.3, 0.15, 0.05, -0.1, 0.4],
        [1.5, -1.5, 0.5, -0.5],
    ]


def one_way_anova(ys):
    q = len(ys)
    n = sum(len(y) for y in ys)
    grand = sum(sum(y) for y in ys) / n
    means = [sum(y) / len(y) for y in ys]
    between = sum(len(y) * (m - grand) ** 2 for y, m in zip(ys, means))
    within = sum(sum((v - m) ** 2 for v in y) for y, m in zip(ys, means))
    w = (n - q) * between / ((q - 1) * within)
    return w, f_sf(w, q - 1, n - q)


def variance_fixture():
    groups = anova_fixture_groups()
    zs = [[mp.mpf(v) for v in g] for g in groups]
    lev = []
    for z in zs:
        srt = sorted(z)
        k = len(srt)
        med = srt[k // 2] if k % 2 else (srt[k // 2 - 1] + srt[k // 2]) / 2
        lev.append([abs(v - med) for v in z])
    obr = []
    for z in zs:
        k = len(z)
        m = sum(z) / k
        s2 = sum((v - m) ** 2 for v in z) / (k - 1)
        obr.append([((k - 1.5) * k * (v - m) ** 2 - s2 * (k - 1) / 2) / ((k - 1) * (k - 2)) for v in z])
    lw, lp = one_way_anova(lev)
    ow, op = one_way_anova(obr)
    return {
        "groups": groups,
        "levene": {"statistic": mp.nstr(lw, 25), "p": mp.nstr(lp, 25)},
        "obrien": {"statistic": mp.nstr(ow, 25), "p": mp.nstr(op, 25)},
    }


def main():
    os.makedirs(DATA, exist_ok=True)
    with open(os.path.join(DATA, "survival_reference.csv"), "w") as f:
        f.write("dist,param1,param2,x,sf\n")
        for d, a, b, x, v in survival_rows():
            f.write(f"{d},{a},{b},{x!r},{mp.nstr(v, 25)}\n")
    with open(os.path.join(DATA, "irwin_hall_reference.csv"), "w") as f:
        f.write("n,x,cdf\n")
        for n, x, v in irwin_hall_rows():
            f.write(f"{n},{x!r},{mp.nstr(v, 25)}\n")
    with open(os.path.join(DATA, "pearson_fixture.json"), "w") as f:
        json.dump(pearson_fixture(), f, indent=2)
        f.write("\n")
    with open(os.path.join(DATA, "variance_tests_fixture.json"), "w") as f:
        json.dump(variance_fixture(), f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
