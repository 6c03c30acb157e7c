import hashlib
import math

DIM = 32


def embed(text):
    """Deterministic pseudo-embedding of a text (unit norm)."""
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    vec = [(digest[i % len(digest)] - 128) / 128.0 for i in range(DIM)]
    norm = math.sqrt(sum(x * x for x in vec)) or 1.0
    return [x / norm for x in vec]


def cosine(a, b):
    return sum(x * y for x, y in zip(a, b))


def nearest(catalog, query, limit):
    q = embed(query)
    candidates = catalog[: limit * 16]
    scored = []
    for movie in candidates:
        scored.append((cosine(q, embed(movie["description"])), movie["id"], movie))
    scored.sort(key=lambda row: (-row[0], row[1]))
    return [movie for _, _, movie in scored[:limit]]
