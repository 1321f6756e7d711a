"""Independent slow reference implementations used to cross-check the
library.  Everything here is deliberately written with plain Python loops
(or a third-party implementation) rather than reusing library code paths.
"""

import math

import numpy as np


def layer_norm_ref(row, g, b, eps=1e-5):
    n = len(row)
    mu = sum(row) / n
    var = sum((v - mu) ** 2 for v in row) / n
    inv = 1.0 / math.sqrt(var + eps)
    return [(row[i] - mu) * inv * g[i] + b[i] for i in range(n)]


def matvec_ref(mat, vec):
    return [sum(mat[i][j] * vec[j] for j in range(len(vec)))
            for i in range(len(mat))]


def gelu_ref(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def softmax_ref(row):
    m = max(row)
    e = [math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def transformer_forward_ref(tokens, store, layers, heads, prefix="enc"):
    """Scalar-loop re-implementation of the pre-norm encoder stack."""
    x = [list(map(float, row)) for row in np.asarray(tokens)]
    t = len(x)
    d = len(x[0])
    dh = d // heads
    scale = 1.0 / math.sqrt(dh)
    for l in range(layers):
        p = f"{prefix}.layer{l}."
        g1 = store[p + "ln1_g"].tolist()
        b1 = store[p + "ln1_b"].tolist()
        a = [layer_norm_ref(row, g1, b1) for row in x]

        def project(w_name, b_name):
            w = store[p + w_name].tolist()
            bb = store[p + b_name].tolist()
            out = []
            for row in a:
                out.append([sum(row[i] * w[i][j] for i in range(d)) + bb[j]
                            for j in range(d)])
            return out

        q = project("wq", "bq")
        k = project("wk", "bk")
        v = project("wv", "bv")
        ctx = [[0.0] * d for _ in range(t)]
        for h in range(heads):
            lo = h * dh
            for i in range(t):
                scores = [sum(q[i][lo + c] * k[j][lo + c] for c in range(dh))
                          * scale for j in range(t)]
                attn = softmax_ref(scores)
                for c in range(dh):
                    ctx[i][lo + c] = sum(attn[j] * v[j][lo + c]
                                         for j in range(t))
        wo = store[p + "wo"].tolist()
        bo = store[p + "bo"].tolist()
        x1 = []
        for i in range(t):
            o = [sum(ctx[i][a_] * wo[a_][j] for a_ in range(d)) + bo[j]
                 for j in range(d)]
            x1.append([x[i][j] + o[j] for j in range(d)])

        g2 = store[p + "ln2_g"].tolist()
        b2 = store[p + "ln2_b"].tolist()
        w1 = store[p + "w1"].tolist()
        bb1 = store[p + "b1"].tolist()
        w2 = store[p + "w2"].tolist()
        bb2 = store[p + "b2"].tolist()
        ff = len(bb1)
        x2 = []
        for i in range(t):
            bn = layer_norm_ref(x1[i], g2, b2)
            z = [sum(bn[a_] * w1[a_][j] for a_ in range(d)) + bb1[j]
                 for j in range(ff)]
            hmid = [gelu_ref(val) for val in z]
            f = [sum(hmid[a_] * w2[a_][j] for a_ in range(ff)) + bb2[j]
                 for j in range(d)]
            x2.append([x1[i][j] + f[j] for j in range(d)])
        x = x2
    return np.array(x)


def classifier_forward_ref(tokens, model):
    """Transformer + linear head + per-token softmax via scalar loops."""
    enc = transformer_forward_ref(tokens, model.store, model.layers,
                                  model.heads)
    w = model.store["head_w"].tolist()
    b = model.store["head_b"].tolist()
    d = len(w)
    c = len(b)
    probs = []
    for row in enc.tolist():
        logits = [sum(row[i] * w[i][j] for i in range(d)) + b[j]
                  for j in range(c)]
        probs.append(softmax_ref(logits))
    return np.array(probs)


def contrastive_loss_ref(query, relevant, categories, irrelevant, bank, tau):
    """Direct evaluation of the four-pair loss without stabilization."""
    def dot(a, b):
        return sum(float(x) * float(y) for x, y in zip(a, b))

    s1 = sum(math.exp(dot(query, r) / tau) for r in relevant)
    s2 = sum(math.exp(dot(bank.prototypes[bank.row(c)], r) / tau)
             for r, c in zip(relevant, categories))
    s3 = sum(math.exp(dot(query, ir) / tau) for ir in irrelevant)
    s4 = sum(math.exp(dot(bank.prototypes[j], ir) / tau)
             for ir in irrelevant for j in range(bank.size))
    return -math.log((s1 + s2) / (s1 + s2 + s3 + s4))


def ttc_loss_ref(probs, labels):
    return -sum(math.log(probs[i][labels[i]]) for i in range(len(labels)))


def precision_ref(ids, relevant, k):
    return sum(1 for i in ids[:k] if i in relevant) / k


def cluster_recall_ref(ids, category_of, gt, k):
    seen = set()
    for i in ids[:k]:
        if i in category_of and category_of[i] in gt:
            seen.add(category_of[i])
    return len(seen) / len(gt)


def f1_ref(p, cr):
    return 0.0 if p + cr == 0 else 2 * p * cr / (p + cr)


def post_process_ref(entries, irrelevant_class, x, k):
    """entries: (image_id, sim, pred_class); returns the selected id list.

    Naive restatement of the selection rule: similarity-ordered categories,
    X per category per round, shortfall from discarded tokens.
    """
    kept = [e for e in entries if e[2] < irrelevant_class]
    discarded = [e for e in entries if e[2] >= irrelevant_class]
    if not kept:
        return [e[0] for e in sorted(entries, key=lambda e: (-e[1], e[0]))[:k]]
    cats = {}
    for e in kept:
        cats.setdefault(e[2], []).append(e)
    for members in cats.values():
        members.sort(key=lambda e: (-e[1], e[0]))
    order = sorted(cats, key=lambda c: (-cats[c][0][1], cats[c][0][0]))
    out = []
    r = 0
    while len(out) < k:
        advanced = False
        for c in order:
            for e in cats[c][r * x:(r + 1) * x]:
                if len(out) < k:
                    out.append(e[0])
                    advanced = True
        if not advanced:
            break
        r += 1
    for e in sorted(discarded, key=lambda e: (-e[1], e[0])):
        if len(out) >= k:
            break
        out.append(e[0])
    return out


def dbscan_ref(points, eps, min_pts):
    """Brute-force density clustering via connected components.

    Core points are found by O(n^2) distance checks; clusters are the
    connected components of the core-point adjacency graph, numbered by
    their smallest core index; a border point joins the cluster with the
    smallest such index among its core neighbours; everything else is
    noise.  This reproduces the first-expansion-wins border convention of
    an index-ordered scan without sharing any code with it.
    """
    n = len(points)

    def close(i, j):
        d2 = sum((points[i][c] - points[j][c]) ** 2
                 for c in range(len(points[i])))
        return d2 <= eps * eps

    neigh = [[j for j in range(n) if close(i, j)] for i in range(n)]
    core = [i for i in range(n) if len(neigh[i]) >= min_pts]
    core_set = set(core)

    # connected components over core points (repeated merging)
    comp = {i: i for i in core}
    changed = True
    while changed:
        changed = False
        for i in core:
            for j in neigh[i]:
                if j in core_set and comp[j] != comp[i]:
                    lo = min(comp[i], comp[j])
                    hi = max(comp[i], comp[j])
                    for p in core:
                        if comp[p] == hi:
                            comp[p] = lo
                    changed = True

    roots = sorted({comp[i] for i in core})
    label_of_root = {r: idx for idx, r in enumerate(roots)}
    labels = [-1] * n
    for i in core:
        labels[i] = label_of_root[comp[i]]
    for i in range(n):
        if i in core_set:
            continue
        owners = [comp[j] for j in neigh[i] if j in core_set]
        if owners:
            labels[i] = label_of_root[min(owners)]
    return labels


def mmr_ref(sims, pairwise, lam, k):
    """Exhaustive greedy MMR over candidate indices 0..n-1."""
    n = len(sims)
    selected = []
    remaining = list(range(n))
    while remaining and len(selected) < k:
        best = None
        best_key = None
        for i in remaining:
            if selected:
                red = max(pairwise[i][j] for j in selected)
                score = lam * sims[i] - (1 - lam) * red
            else:
                score = lam * sims[i]
            key = (score, sims[i], -i)
            if best is None or key > best_key:
                best, best_key = i, key
        selected.append(best)
        remaining.remove(best)
    return selected
