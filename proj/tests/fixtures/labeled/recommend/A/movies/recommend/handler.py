import logging

from movies.recommend import factor

logger = logging.getLogger(__name__)


def ratings_matrix(store):
    ratings = []
    for user_index, user in enumerate(store.users()):
        for movie_index, value in user.preferences():
            ratings.append((user_index, movie_index, value))
    return ratings


def top_user(store, user_index, count):
    ratings = ratings_matrix(store)
    users, movies = factor.factorize(ratings, store.user_count(), store.movie_count())
    scores = []
    for movie_index, vec in enumerate(movies):
        scores.append((factor.dot(users[user_index], vec), movie_index))
    scores.sort(key=lambda row: (-row[0], row[1]))
    return [movie_index for _, movie_index in scores[:count]]


def health(store):
    return {"users": store.user_count(), "movies": store.movie_count()}
