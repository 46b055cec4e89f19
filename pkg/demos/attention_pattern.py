# Windowed attention with a handful of global tokens, next to plain dense softmax.
import numpy as np

from splat.attention import allowed_pairs, attention_score_count, windowed_global_attention

rng = np.random.default_rng(0)
n, d = 12, 8
q, k, v = (rng.standard_normal((n, d)) for _ in range(3))

# half-window 2: token i sees i-2 .. i+2
_, w = windowed_global_attention(q, k, v, None, 2, return_weights=True)
print("nonzero weights per row, no globals:", (w[0] > 0).sum(axis=1))

# make tokens 9..11 global, the way description tokens are in a joint input
g = np.zeros(n, bool)
g[9:] = True
_, wg = windowed_global_attention(q, k, v, g, 2, return_weights=True)
print("nonzero weights per row, 3 globals:", (wg[0] > 0).sum(axis=1))
print((wg[0] > 0).astype(int))

# a window wider than the sequence is ordinary dense attention
s = q @ k.T / np.sqrt(d)
dense = np.exp(s - s.max(1, keepdims=True))
dense = dense / dense.sum(1, keepdims=True) @ v
out = windowed_global_attention(q, k, v, None, n).data
print("max |windowed - dense| at full window:", np.abs(out - dense).max())

# how many query-key scores the kernel evaluates, against the quadratic count
for N, ww, ng in [(512, 16, 40), (2048, 16, 40), (4096, 256, 100)]:
    c = attention_score_count(N, ww, ng)
    print(f"N={N:5d} w={ww:3d} globals={ng:3d}: {c:9d} scores vs {N * N:9d} dense "
          f"(bound {N * (2 * ww + 1) + 2 * N * ng})")

rows, cols, *_ = allowed_pairs(6, 1, np.array([0, 0, 0, 0, 0, 1], bool))
print("pairs for N=6, w=1, last token global:", list(zip(rows.tolist(), cols.tolist())))
