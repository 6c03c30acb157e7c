import logging

from movies.search import bm25, knn

logger = logging.getLogger(__name__)

DEFAULT_LIMIT = 10
MAX_QUERY_LENGTH = 256


# Queries are trimmed and capped before tokenization.
def parse_query(raw):
    query = raw.strip()
    if not query:
        raise ValueError("empty query")
    if len(query) > MAX_QUERY_LENGTH:
        query = query[:MAX_QUERY_LENGTH]
    return query


def search(raw_query, catalog, limit=DEFAULT_LIMIT):
    query = parse_query(raw_query)
    terms = bm25.tokenize(query)
    lexical = bm25.top(catalog, terms, limit * 8)
    semantic = knn.nearest(catalog, query, limit)
    fused = {}
    for rank, movie in enumerate(lexical):
        fused[movie["id"]] = fused.get(movie["id"], 0) + rank
    for rank, movie in enumerate(semantic):
        fused[movie["id"]] = fused.get(movie["id"], 0) + rank
    ordered = sorted(fused, key=lambda movie_id: (fused[movie_id], movie_id))
    by_id = {movie["id"]: movie for movie in catalog}
    return [by_id[movie_id] for movie_id in ordered[:limit]]


def suggest(prefix, catalog):
    prefix = prefix.lower()
    logger.debug("suggest prefix=%s catalog=%d", prefix, len(catalog))
    titles = [movie["title"] for movie in catalog]
    return [title for title in titles if title.lower().startswith(prefix)][:5]
