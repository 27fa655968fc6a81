"""Brute-force reference implementations used by unit and acceptance tests.

The clustering replay below re-implements the assignment and recentering
control flow from scratch, step by step, with plain Python loops. It shares
only the public mean_similarity primitive with the library: two float
pipelines computing cosines in different operation orders would disagree in
the last ulp and make exact assignment comparison meaningless on ties.
"""

import numpy as np

from gaborjet import mean_similarity


def brute_force_scatter(jets, labels):
    """Full-matrix within/between scatter traces, one pixel at a time."""
    t, h, w, dim = jets.shape
    labels = list(labels)
    classes = sorted(set(labels))
    tr_sw = np.zeros((h, w))
    tr_sb = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            vectors = jets[:, y, x, :]
            global_mean = vectors.mean(axis=0)
            sw = np.zeros((dim, dim))
            sb = np.zeros((dim, dim))
            for label in classes:
                members = np.array(
                    [vectors[i] for i in range(t) if labels[i] == label]
                )
                class_mean = members.mean(axis=0)
                for row in members:
                    d = (row - class_mean)[:, None]
                    sw += d @ d.T
                d = (class_mean - global_mean)[:, None]
                sb += len(members) * (d @ d.T)
            tr_sw[y, x] = np.trace(sw)
            tr_sb[y, x] = np.trace(sb)
    return tr_sw, tr_sb


def snap(value):
    import math

    return int(math.floor(value + 0.5))


def replay_clustering(coords, j_values, q, max_iterations, jets):
    """Independent run of the assignment/recentering loop.

    Returns a list of (assignments, centers, snapped, changed) tuples, one
    per round, mirroring the library's history for exact comparison.
    """
    n = len(coords)
    centers = [(float(x), float(y)) for x, y in coords[:q]]
    previous = None
    rounds = []
    for step in range(max_iterations + 1):
        snapped = [(snap(cx), snap(cy)) for cx, cy in centers]
        assignments = []
        for i in range(n):
            sims = [
                mean_similarity(coords[i], snapped[k], jets) for k in range(q)
            ]
            best = 0
            for k in range(1, q):
                if sims[k] > sims[best]:
                    best = k
            assignments.append(best)
        changed = previous is None or assignments != previous
        rounds.append(
            (list(assignments), list(centers), list(snapped), changed)
        )
        if not changed or step >= max_iterations:
            break
        next_centers = []
        for k in range(q):
            total = 0.0
            sx = 0.0
            sy = 0.0
            for i in range(n):
                if assignments[i] != k:
                    continue
                weight = float(j_values[i])
                total += weight
                sx += weight * coords[i][0]
                sy += weight * coords[i][1]
            if total > 0.0:
                next_centers.append((sx / total, sy / total))
            else:
                next_centers.append(centers[k])
        centers = next_centers
        previous = assignments
    return rounds
