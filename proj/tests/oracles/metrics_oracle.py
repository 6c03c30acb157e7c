"""Localization metrics for one fixed instance, straight from the definitions.

precision@k = generated spans within k of some relevant ideal span / generated
recall@k    = relevant changes with some generated span within k / relevant
specificity = neutral changes with no generated span within k of any of their
              changed-line regions / neutral
Distance: max(|start diff|, |end diff|) on the same path, infinite otherwise.
"""

GENERATED = [
    ("s1", "a.py", (10, 20)),
    ("s2", "a.py", (40, 44)),
    ("s3", "b.py", (5, 9)),
    ("s4", "c.py", (1, 3)),
    ("s5", "a.py", (70, 75)),
]
# (change_id, path, relevant, ideal_span, regions)
TRUTH = [
    ("c1", "a.py", True, (11, 22), [(12, 14)]),
    ("c2", "a.py", True, (40, 50), [(45, 46)]),
    ("c3", "b.py", True, (30, 31), [(30, 30)]),
    ("c4", "a.py", False, None, [(68, 72)]),
    ("c5", "c.py", False, None, [(50, 50), (80, 81)]),
    ("c6", "d.py", False, None, [(1, 1)]),
]


def dist(p1, r1, p2, r2):
    if p1 != p2:
        return None
    return max(abs(r1[0] - r2[0]), abs(r1[1] - r2[1]))


def within(d, k):
    return d is not None and d <= k


def metrics(k):
    hits = 0
    for _, path, rng in GENERATED:
        if any(within(dist(path, rng, p, ideal), k) for _, p, rel, ideal, _ in TRUTH if rel):
            hits += 1
    rel = [t for t in TRUTH if t[2]]
    neu = [t for t in TRUTH if not t[2]]
    found = sum(1 for _, p, _, ideal, _ in rel if any(within(dist(gp, gr, p, ideal), k) for _, gp, gr in GENERATED))
    clean = sum(
        1
        for _, p, _, _, regions in neu
        if not any(within(dist(gp, gr, p, reg), k) for _, gp, gr in GENERATED for reg in regions)
    )
    return hits, len(GENERATED), found, len(rel), clean, len(neu)


for k in (0, 1, 2, 5, 6, 10, 30):
    h, g, f, r, c, n = metrics(k)
    print(f"k={k} hits={h}/{g} recall={f}/{r} specificity={c}/{n}")
