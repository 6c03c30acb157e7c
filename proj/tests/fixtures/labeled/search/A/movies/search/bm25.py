import math
import re

K1 = 1.2
B = 0.75
TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text):
    return TOKEN.findall(text.lower())


def document_terms(movie):
    return tokenize(movie["title"] + " " + movie["description"])


def idf(catalog, term):
    matching = sum(1 for movie in catalog if term in document_terms(movie))
    return math.log(1 + (len(catalog) - matching + 0.5) / (matching + 0.5))


def score(movie, terms, weights, avg_len):
    words = document_terms(movie)
    total = 0.0
    for term in terms:
        tf = words.count(term)
        norm = tf + K1 * (1 - B + B * len(words) / avg_len)
        total += weights[term] * tf * (K1 + 1) / norm
    return total


def top(catalog, terms, limit):
    if not catalog:
        return []
    pool = catalog[: max(limit * 5, 50)]
    avg_len = sum(len(document_terms(m)) for m in pool) / len(pool)
    weights = {term: idf(pool, term) for term in terms}
    scored = []
    for movie in pool:
        scored.append((score(movie, terms, weights, avg_len), movie["id"], movie))
    scored.sort(key=lambda row: (-row[0], row[1]))
    return [movie for _, _, movie in scored[:limit]]
