#!/usr/bin/env python3
"""Fits the piecewise polynomial table used by glaff's vectorized erf.

erf on [0, 6) is split into intervals of width 1/4; on each interval a
degree-11 polynomial in t = 8 (x - centre), t in [-1, 1], interpolates erf at
Chebyshev nodes computed with mpmath at 50 digits. Prints a C++ array body.
"""
import mpmath
import numpy as np

WIDTH = 0.25
INTERVALS = 24
DEGREE = 11
mpmath.mp.dps = 50


def fit(centre):
    k = np.arange(DEGREE + 1)
    nodes = [mpmath.cos(mpmath.pi * (2 * j + 1) / (2 * (DEGREE + 1))) for j in k]
    values = [mpmath.erf(mpmath.mpf(centre) + n * WIDTH / 2) for n in nodes]
    # Solve the Vandermonde system in high precision for monomial coefficients in t.
    a = mpmath.matrix([[n ** p for p in range(DEGREE + 1)] for n in nodes])
    c = mpmath.lu_solve(a, mpmath.matrix(values))
    return [float(c[i]) for i in range(DEGREE + 1)]


def main():
    rows = []
    worst = 0.0
    for i in range(INTERVALS):
        centre = (i + 0.5) * WIDTH
        coeffs = fit(centre)
        for x in np.linspace(i * WIDTH, (i + 1) * WIDTH, 257):
            t = (x - centre) * (2 / WIDTH)
            approx = 0.0
            for c in reversed(coeffs):
                approx = approx * t + c
            worst = max(worst, abs(approx - float(mpmath.erf(x))))
        rows.append(coeffs)
    rows.append([1.0] + [0.0] * DEGREE)
    for r in rows:
        print("    {" + ", ".join(repr(v) for v in r) + "},")
    print(f"// max abs error on the fit grid: {worst:.3g}")


if __name__ == "__main__":
    main()
