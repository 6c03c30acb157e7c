from movies.ranking import walk

REGIONS = ("eu", "us", "apac")


def region_graph(store, region):
    if region not in REGIONS:
        raise KeyError(region)
    return store.graph(region)


def top_region(store, region, count, seed=7):
    graph = region_graph(store, region)
    visits = walk.random_walk(graph, seed)
    total = sum(visits.values()) or 1
    scores = {node: hits / total for node, hits in visits.items()}
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return [{"id": node, "score": score} for node, score in ordered[:count]]


def describe(store, region):
    graph = region_graph(store, region)
    edges = sum(len(targets) for targets in graph.values())
    return {"region": region, "nodes": len(graph), "edges": edges}
