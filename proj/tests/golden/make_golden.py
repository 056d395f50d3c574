"""Independent oracle for `lfd score-attrs` on the bundled dialogue fixture.

Recomputes every attribute from its definition, working on whitespace tokens
rather than vocabulary ids, and writes the CSV the CLI is expected to produce.

    python3 tests/golden/make_golden.py tests/data/dialogue_train.tsv > tests/golden/dialogue_attrs.csv
"""

import math
import sys
from collections import Counter

import numpy as np

BANDWIDTH = 0.8
EMBED_DIM = 256
OVERLAP_N = 2
MAX_TOKENS = 100


def read_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            x, y = line.split("\t")
            x, y = x.split(), y.split()
            if not y or len(x) > MAX_TOKENS or len(y) > MAX_TOKENS:
                continue
            pairs.append(("%06d" % lineno, x, y))
    return pairs


def avg_frequency(pairs):
    counts = Counter(t for _, _, y in pairs for t in y)
    return [sum(counts[t] for t in y) / len(y) for _, _, y in pairs]


def repetition(y):
    seen, repeats = set(), 0
    for t in y:
        repeats += t in seen
        seen.add(t)
    return repeats / len(y)


def ngrams(seq, n):
    return {tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)}


def context_overlap(x, y, n):
    gy = ngrams(y, n)
    return len(gy & ngrams(x, n)) / len(gy)


def fnv1a(data):
    h = 1469598103934665603
    for b in data:
        h ^= b
        h = (h * 1099511628211) % (1 << 64)
    return h


def embed(text):
    padded = (" " + text + " ").encode("utf-8")
    v = np.zeros(EMBED_DIM)
    for i in range(len(padded) - 2):
        v[fnv1a(padded[i:i + 3]) % EMBED_DIM] += 1.0
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def mean_shift(points):
    """Flat kernel; returns a partition as a list of cluster labels."""
    pts = np.array(points)
    modes = []
    for p in pts:
        mode = p.copy()
        for _ in range(300):
            inside = np.sum((pts - mode) ** 2, axis=1) <= BANDWIDTH ** 2
            new = pts[inside].mean(axis=0)
            shift = np.linalg.norm(new - mode)
            mode = new
            if shift < 1e-4 * BANDWIDTH:
                break
        modes.append(mode)
    parent = list(range(len(modes)))

    def root(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for a in range(len(modes)):
        for b in range(a + 1, len(modes)):
            if np.sum((modes[a] - modes[b]) ** 2) < 0.25 * BANDWIDTH ** 2:
                ra, rb = root(a), root(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    return [root(i) for i in range(len(modes))]


def source_entropy(pairs):
    ctx = mean_shift([embed(" ".join(x)) for _, x, _ in pairs])
    resp = mean_shift([embed(" ".join(y)) for _, _, y in pairs])
    by_response = {}
    for c, r in zip(ctx, resp):
        by_response.setdefault(r, Counter())[c] += 1
    entropy = {}
    for r, counts in by_response.items():
        total = sum(counts.values())
        entropy[r] = max(0.0, -sum(k / total * math.log2(k / total) for k in counts.values()))
    return [entropy[r] for r in resp]


def main(path):
    pairs = read_pairs(path)
    rows = []
    rows += [(pid, "avg_frequency", v) for (pid, _, _), v in zip(pairs, avg_frequency(pairs))]
    rows += [(pid, "repetition", repetition(y)) for pid, _, y in pairs]
    rows += [(pid, "source_entropy", v) for (pid, _, _), v in zip(pairs, source_entropy(pairs))]
    rows += [(pid, "context_overlap", context_overlap(x, y, OVERLAP_N)) for pid, x, y in pairs if len(y) >= OVERLAP_N]
    print("example_id,metric,value")
    for pid, metric, value in rows:
        print("%s,%s,%s" % (pid, metric, repr(float(value))))


if __name__ == "__main__":
    main(sys.argv[1])
