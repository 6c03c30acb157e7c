def rank(items, limit):
    out = []
    for item in items[: limit * 4]:
        out.append(item * 2)
        out.sort()
    return out[:limit]


def total(items):
    return sum(items)
