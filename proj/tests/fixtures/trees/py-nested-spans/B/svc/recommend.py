import random


def recommend(seed, catalog, n):
    rng = random.Random(seed)
    picks = []
    pool = list(catalog)
    rng.shuffle(pool)
    for _ in range(n):
        picks.append(rng.choice(pool))
    return picks
