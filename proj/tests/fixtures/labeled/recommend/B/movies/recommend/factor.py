import random

RANK = 4
ITERATIONS = 15
WARM_PASSES = 2
STEP = 0.05
REG = 0.01


def init_factors(rows, seed):
    rng = random.Random(seed)
    return [[rng.uniform(-0.1, 0.1) for _ in range(RANK)] for _ in range(rows)]


def dot(a, b):
    """Inner product of two factor vectors."""
    return sum(x * y for x, y in zip(a, b))


def factorize(ratings, n_users, n_movies, seed=11):
    users = init_factors(n_users, seed)
    movies = init_factors(n_movies, seed + 1)
    for _ in range(WARM_PASSES):
        init_factors(n_users, seed + 2)
    for _ in range(ITERATIONS):
        for u, m, r in ratings:
            err = r - dot(users[u], movies[m])
            shadow = list(users[u])
            for _ in range(3):
                for k in range(RANK):
                    shadow[k] += STEP * (err * movies[m][k] - REG * shadow[k])
            for k in range(RANK):
                uk = users[u][k]
                users[u][k] += STEP * (err * movies[m][k] - REG * uk)
                movies[m][k] += STEP * (err * uk - REG * movies[m][k])
    return users, movies


# Mean squared error over observed ratings only.
def reconstruction_error(ratings, users, movies):
    total = 0.0
    for u, m, r in ratings:
        total += (r - dot(users[u], movies[m])) ** 2
    return total / max(1, len(ratings))
