"""Independent brute-force reference implementations used by the tests.

Written with plain loops and Fractions on purpose; nothing here imports the
package's own metric code.
"""
from fractions import Fraction
import itertools
import math


def slide_exact(z, tau):
    z, tau = Fraction(z), Fraction(tau)
    if z <= 0:
        return Fraction(0)
    if z <= tau:
        return z / tau
    return Fraction(1)


def opposite_slide_exact(z, tau):
    z, tau = Fraction(z), Fraction(tau)
    if z > 0:
        return Fraction(1)
    if z > -tau:
        return 1 + z / tau
    return Fraction(0)


def hinge_exact(z):
    return max(Fraction(0), 1 + Fraction(z))


def indicator(z):
    return 1.0 if z > 0 else 0.0


def sigma(kind, z, tau=0.1):
    if kind == "indicator":
        return indicator(z)
    if kind == "slide":
        return float(slide_exact(z, tau))
    if kind in ("opposite_slide", "psi"):
        return float(opposite_slide_exact(z, tau))
    if kind == "hinge":
        return float(hinge_exact(z))
    if kind == "linear":
        return z
    raise ValueError(kind)


def di(scores, z, kind="indicator", tau=0.1):
    g = {0: [], 1: []}
    for s, zz in zip(scores, z):
        g[int(zz)].append(sigma(kind, s, tau))
    return abs(math.fsum(g[0]) / len(g[0]) - math.fsum(g[1]) / len(g[1]))


def eo(scores, y, z, kind="indicator", tau=0.1):
    gaps = []
    for lab in (-1, 1):
        ss = [s for s, yy in zip(scores, y) if yy == lab]
        zz = [t for t, yy in zip(z, y) if yy == lab]
        gaps.append(di(ss, zz, kind, tau))
    return max(gaps)


def eqopp(scores, y, z, kind="indicator", tau=0.1):
    ss = [s for s, yy in zip(scores, y) if yy == 1]
    zz = [t for t, yy in zip(z, y) if yy == 1]
    return di(ss, zz, kind, tau)


def uif(scores, adv_scores, gamma, kind="indicator", tau=0.1):
    return math.fsum(sigma(kind, abs(a - b) - gamma, tau) for a, b in zip(scores, adv_scores)) / len(scores)


def consistency(predict_row, rows, flip_blocks):
    """``flip_blocks``: list of (column indices, list of encodings)."""
    same = 0
    for r in rows:
        labels = set()
        for combo in itertools.product(*[encs for _, encs in flip_blocks]):
            rr = list(r)
            for (cols, _), enc in zip(flip_blocks, combo):
                for c, v in zip(cols, enc):
                    rr[c] = v
            labels.add(predict_row(rr) > 0)
        same += len(labels) == 1
    return same / len(rows)


def hausdorff(A, B):
    def d(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
    h1 = max(min(d(a, b) for b in B) for a in A)
    h2 = max(min(d(a, b) for a in A) for b in B)
    return max(h1, h2)


def dominated(points):
    """points: list of (acc, fairness). Higher acc and lower fairness are better."""
    out = []
    for i, (a, f) in enumerate(points):
        dom = False
        for j, (b, g) in enumerate(points):
            if i != j and b >= a and g <= f and (b > a or g < f):
                dom = True
        out.append(dom)
    return out


def select_rule(cands, target, band):
    """cands: list of (acc, fairness, seed, restart). Returns the index the selection rule picks."""
    pool = [i for i, c in enumerate(cands) if abs(c[0] - target) <= band]
    if not pool:
        pool = [min(range(len(cands)), key=lambda i: (abs(cands[i][0] - target), cands[i][1], cands[i][2]))]
    best = pool[0]
    for i in pool[1:]:
        a, b = cands[i], cands[best]
        if (a[1], -a[0], a[2], a[3]) < (b[1], -b[0], b[2], b[3]):
            best = i
    return best


def mlp_forward_row(W1, b1, w2, b2, x):
    h = [max(0.0, sum(x[k] * W1[k][j] for k in range(len(x))) + b1[j]) for j in range(len(b1))]
    return sum(hj * wj for hj, wj in zip(h, w2)) + b2
