def first_fit_decreasing(sizes, capacity=1.0):
    order = sorted(range(len(sizes)), key=lambda i: -sizes[i])
    loads = []
    assignment = [0] * len(sizes)
    for item in order:
        for b, load in enumerate(loads):
            if load + sizes[item] <= capacity + 1e-9:
                loads[b] += sizes[item]
                assignment[item] = b
                break
        else:
            loads.append(sizes[item])
            assignment[item] = len(loads) - 1
    return assignment
