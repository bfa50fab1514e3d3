def nearest_neighbor_tour(coords, start=0):
    n = len(coords)
    unvisited = set(range(n))
    unvisited.discard(start)
    tour = [start]
    while unvisited:
        last = coords[tour[-1]]
        nxt = min(unvisited, key=lambda j: (coords[j][0] - last[0]) ** 2 + (coords[j][1] - last[1]) ** 2)
        tour.append(nxt)
        unvisited.discard(nxt)
    return tour
