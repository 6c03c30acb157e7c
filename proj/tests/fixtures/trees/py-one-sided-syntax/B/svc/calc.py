def compute(a, b):
    return a + b


def run(x):
    total = compute(x, 1)
    total += compute(total, 2)
    return total
