"""Independent reference implementations used as test oracles.

Deliberately naive: exact fractions and O(n^2) pair enumeration, sharing no
code with the package.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations
from math import sqrt


def literal_fine(entity, relational, rule="drop_term_renormalize"):
    """fine = sum_i e_i/(2 n_e) + sum_j r_j/(2 n_r), term by term in exact fractions."""
    e = [Fraction(x) for x in entity]
    r = [Fraction(x) for x in relational]
    if e and r:
        total = Fraction(0)
        for x in e:
            total += x / (2 * len(e))
        for x in r:
            total += x / (2 * len(r))
        return total
    group = e or r
    if not group:
        return Fraction(0) if rule == "score_zero" else None
    weight = 2 if rule == "score_zero" else 1
    total = Fraction(0)
    for x in group:
        total += x / (weight * len(group))
    return total


def literal_coarse(global_):
    total = Fraction(0)
    for x in global_:
        total += Fraction(x) / len(global_)
    return total


def literal_scores(entity, relational, global_, rule="drop_term_renormalize"):
    """(fine, coarse, overall) as floats; each rounded once from its exact value.

    overall is formed from the reported (rounded) fine and coarse values.
    """
    fine = literal_fine(entity, relational, rule)
    coarse = float(literal_coarse(global_))
    fine_f = None if fine is None else float(fine)
    overall = coarse if fine_f is None else float((Fraction(fine_f) + Fraction(coarse)) / 2)
    return fine_f, coarse, overall


def brute_tau_b(xs, ys):
    concordant = discordant = tied_x = tied_y = 0
    for i, j in combinations(range(len(xs)), 2):
        dx = (xs[i] > xs[j]) - (xs[i] < xs[j])
        dy = (ys[i] > ys[j]) - (ys[i] < ys[j])
        if dx == 0 and dy == 0:
            continue
        if dx == 0:
            tied_x += 1
        elif dy == 0:
            tied_y += 1
        elif dx == dy:
            concordant += 1
        else:
            discordant += 1
    denom = (concordant + discordant + tied_x) * (concordant + discordant + tied_y)
    if denom == 0:
        return None
    return (concordant - discordant) / sqrt(denom)


def brute_average_ranks(values):
    """Rank of v = (#smaller) + (#equal + 1)/2, counted directly."""
    out = []
    for v in values:
        smaller = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(Fraction(2 * smaller + equal + 1, 2))
    return out


def brute_rho(xs, ys):
    rx, ry = brute_average_ranks(xs), brute_average_ranks(ys)
    n = len(xs)
    mx, my = sum(rx) / n, sum(ry) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    if sxx == 0 or syy == 0:
        return None
    return float(sxy) / sqrt(float(sxx) * float(syy))
