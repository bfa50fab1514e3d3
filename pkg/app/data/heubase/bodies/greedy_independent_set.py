def greedy_independent_set(num_nodes, edges):
    neighbors = [set() for _ in range(num_nodes)]
    for u, v in edges:
        neighbors[u].add(v)
        neighbors[v].add(u)
    alive = set(range(num_nodes))
    chosen = []
    while alive:
        node = min(alive, key=lambda x: (len(neighbors[x] & alive), x))
        chosen.append(node)
        alive -= neighbors[node] | {node}
    return sorted(chosen)
