"""Slow reference formulas written with plain Python loops."""

import math


def mean(x):
    return sum(x) / len(x)


def var(x):
    m = mean(x)
    return sum((v - m) ** 2 for v in x) / len(x)


def quantile(x, q):
    # linear interpolation between order statistics
    s = sorted(x)
    pos = q * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (pos - lo)


def skewness(x):
    n = len(x)
    if n < 3:
        return math.nan
    m = mean(x)
    m2 = sum((v - m) ** 2 for v in x) / n
    m3 = sum((v - m) ** 3 for v in x) / n
    if m2 == 0:
        return 0.0
    g1 = m3 / m2 ** 1.5
    return g1 * math.sqrt(n * (n - 1)) / (n - 2)


def kurtosis(x):
    n = len(x)
    if n < 4:
        return math.nan
    m = mean(x)
    m2 = sum((v - m) ** 2 for v in x) / n
    m4 = sum((v - m) ** 4 for v in x) / n
    if m2 == 0:
        return 0.0
    g2 = m4 / m2 ** 2 - 3.0
    return (n - 1) / ((n - 2) * (n - 3)) * ((n + 1) * g2 + 6)


def binned_entropy(x, bins=10):
    lo, hi = min(x), max(x)
    if lo == hi:
        return 0.0
    counts = [0] * bins
    width = (hi - lo) / bins
    for v in x:
        k = bins - 1 if v == hi else int((v - lo) / width)
        # guard the rounding at interior edges the same way a histogram does
        while k > 0 and v < lo + k * width:
            k -= 1
        while k < bins - 1 and v >= lo + (k + 1) * width:
            k += 1
        counts[k] += 1
    n = len(x)
    return -sum(c / n * math.log(c / n) for c in counts if c)


def autocorr(x, lag):
    n = len(x)
    if n <= lag:
        return math.nan
    m = mean(x)
    v = var(x)
    if v == 0:
        return math.nan
    return sum((x[i] - m) * (x[i + lag] - m) for i in range(n - lag)) / ((n - lag) * v)


def longest_increasing_run(x):
    best = cur = 1
    for a, b in zip(x, x[1:]):
        cur = cur + 1 if b > a else 1
        best = max(best, cur)
    return best


def count_vs_mean(x, sign):
    m = mean(x)
    return sum(1 for v in x if (v - m) * sign > 0)


def zero_crossings(x):
    m = mean(x)
    return sum(1 for a, b in zip(x, x[1:]) if (a - m) * (b - m) < 0)


def aggregators():
    """name -> oracle(list) ; NaN marks undefined."""
    out = {
        "mean": mean,
        "std": lambda x: math.sqrt(var(x)),
        "variance": var,
        "minimum": min,
        "maximum": max,
        "median": lambda x: quantile(x, 0.5),
        "iqr": lambda x: quantile(x, 0.75) - quantile(x, 0.25),
        "rms": lambda x: math.sqrt(sum(v * v for v in x) / len(x)),
        "mean_abs_change": lambda x: (sum(abs(b - a) for a, b in zip(x, x[1:])) / (len(x) - 1)
                                      if len(x) > 1 else math.nan),
        "mean_change": lambda x: (sum(b - a for a, b in zip(x, x[1:])) / (len(x) - 1)
                                  if len(x) > 1 else math.nan),
        "count_above_mean": lambda x: count_vs_mean(x, 1),
        "count_below_mean": lambda x: count_vs_mean(x, -1),
        "first": lambda x: x[0],
        "last": lambda x: x[-1],
        "skewness": skewness,
        "kurtosis": kurtosis,
        "zero_crossings": zero_crossings,
        "binned_entropy": binned_entropy,
        "autocorr_1": lambda x: autocorr(x, 1),
        "autocorr_5": lambda x: autocorr(x, 5),
        "longest_increasing_run": longest_increasing_run,
    }
    for q in (0.1, 0.25, 0.75, 0.9):
        out[f"quantile_{q:g}"] = (lambda qq: lambda x: quantile(x, qq))(q)
    return out


def close(a, b, rel, scale=0.0):
    """Relative agreement; ``scale`` (the data magnitude) floors the reference
    for results that cancel to nearly zero, like the mean of a centered series."""
    if math.isnan(a) or math.isnan(b):
        return math.isnan(a) and math.isnan(b)
    return abs(a - b) <= rel * max(abs(a), abs(b), scale)
