"""Independent brute-force reference implementations used as test oracles.

Everything here is written straight from the documented definitions with
the dumbest workable algorithm (exhaustive enumeration, explicit loops,
rank-by-counting instead of sorting) and shares no code with the
package. Speed is irrelevant; being obviously correct is the point.

Corpus items are plain (candidate_tokens, [reference_tokens, ...]) pairs.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


# ---------------------------------------------------------------------------
# caption metrics


def _grams(tokens, n):
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bleu_reference(items, max_n=4):
    """Corpus BLEU_1..max_n: clipped matches and totals summed over items,
    brevity penalty from per-item closest reference length (ties shorter)."""
    clipped = [0] * max_n
    total = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, refs in items:
        cand_len += len(cand)
        best = None
        for ref in refs:
            if (best is None
                    or abs(len(ref) - len(cand)) < abs(best - len(cand))
                    or (abs(len(ref) - len(cand)) == abs(best - len(cand)) and len(ref) < best)):
                best = len(ref)
        ref_len += best
        for n in range(1, max_n + 1):
            cand_grams = _grams(cand, n)
            for gram in set(cand_grams):
                most = max((_grams(ref, n).count(gram) for ref in refs), default=0)
                clipped[n - 1] += min(cand_grams.count(gram), most)
            total[n - 1] += len(cand_grams)
    if cand_len == 0:
        return (0.0,) * max_n
    bp = min(1.0, math.exp(1.0 - ref_len / cand_len))
    out = []
    for k in range(1, max_n + 1):
        ps = [clipped[n] / total[n] if total[n] > 0 else 0.0 for n in range(k)]
        if any(p == 0.0 for p in ps):
            out.append(0.0)
        else:
            out.append(bp * math.exp(sum(math.log(p) for p in ps) / k))
    return tuple(out)


def _lcs_recursive(a, b):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def rouge_l_reference(items, beta=1.2):
    """Mean LCS F-measure; max precision and max recall over references."""
    scores = []
    for cand, refs in items:
        if not cand:
            scores.append(0.0)
            continue
        p_max = max(_lcs_recursive(tuple(cand), tuple(r)) / len(cand) for r in refs)
        r_max = max(_lcs_recursive(tuple(cand), tuple(r)) / len(r) for r in refs if r)
        denom = r_max + beta * beta * p_max
        scores.append(0.0 if denom == 0.0 else (1.0 + beta * beta) * p_max * r_max / denom)
    return sum(scores) / len(scores)


def alignment_reference(cand, ref):
    """(matches, min chunks) by enumerating EVERY maximal one-to-one
    exact-token matching and taking the chunk minimum."""
    words = set(cand) & set(ref)
    if not words:
        return 0, 0
    cand_pos = {w: [i for i, t in enumerate(cand) if t == w] for w in words}
    ref_pos = {w: [j for j, t in enumerate(ref) if t == w] for w in words}
    m = sum(min(len(cand_pos[w]), len(ref_pos[w])) for w in words)
    per_word = []
    for w in sorted(words):
        q = min(len(cand_pos[w]), len(ref_pos[w]))
        options = []
        for cs in itertools.combinations(cand_pos[w], q):
            for rs in itertools.permutations(ref_pos[w], q):
                options.append(tuple(zip(cs, rs)))
        per_word.append(options)
    best = None
    for combo in itertools.product(*per_word):
        pairs = sorted(pair for group in combo for pair in group)
        chunks = 0
        prev_c = prev_r = -2
        for c, r in pairs:
            if not (c == prev_c + 1 and r == prev_r + 1):
                chunks += 1
            prev_c, prev_r = c, r
        if best is None or chunks < best:
            best = chunks
    return m, best


def meteor_reference(items, alpha=0.9, beta=3.0, gamma=0.5):
    scores = []
    for cand, refs in items:
        best = 0.0
        for ref in refs:
            m, chunks = alignment_reference(cand, ref)
            if m == 0:
                continue
            p = m / len(cand)
            r = m / len(ref)
            f = p * r / (alpha * p + (1.0 - alpha) * r)
            best = max(best, f * (1.0 - gamma * (chunks / m) ** beta))
        scores.append(best)
    return sum(scores) / len(scores)


def cider_d_reference(items, max_n=4, sigma=6.0):
    """Per-item CIDEr-D list: tf-idf n-gram vectors (df over items whose
    references contain the gram, floor 1), clipped cosine per reference,
    Gaussian length penalty, x10, mean over refs then over n."""
    num = len(items)
    df = [dict() for _ in range(max_n)]
    for _, refs in items:
        for n in range(1, max_n + 1):
            seen = set()
            for ref in refs:
                seen.update(_grams(ref, n))
            for g in seen:
                df[n - 1][g] = df[n - 1].get(g, 0) + 1

    def tfidf(tokens, n):
        vec = {}
        for g in _grams(tokens, n):
            vec[g] = vec.get(g, 0) + 1
        return {g: c * math.log(num / max(1, df[n - 1].get(g, 0))) for g, c in vec.items()}

    per_item = []
    for cand, refs in items:
        acc = []
        for n in range(1, max_n + 1):
            w_cand = tfidf(cand, n)
            norm_cand = math.sqrt(sum(v * v for v in w_cand.values()))
            sims = []
            for ref in refs:
                w_ref = tfidf(ref, n)
                norm_ref = math.sqrt(sum(v * v for v in w_ref.values()))
                if norm_cand == 0.0 or norm_ref == 0.0:
                    sims.append(0.0)
                    continue
                overlap = sum(min(v, w_ref[g]) * w_ref[g] for g, v in w_cand.items() if g in w_ref)
                delta = len(cand) - len(ref)
                sims.append(overlap / (norm_cand * norm_ref) * math.exp(-(delta * delta) / (2.0 * sigma * sigma)))
            acc.append(sum(sims) / len(sims))
        per_item.append(10.0 * sum(acc) / max_n)
    return per_item


# ---------------------------------------------------------------------------
# retrieval metrics


def ranks_reference(scores, ground_truth):
    """1-based rank of each query's true clip under 'descending score,
    ties by ascending index' -- by counting, not sorting."""
    ranks = []
    for qi, truth in enumerate(ground_truth):
        row = scores[qi]
        s = row[truth]
        better = 0
        for j in range(len(row)):
            if row[j] > s or (row[j] == s and j < truth):
                better += 1
        ranks.append(better + 1)
    return ranks


def retrieval_reference(scores, ground_truth):
    """(R1, R5, R10, mAP10) with each recall cutoff clamped to N."""
    ranks = ranks_reference(scores, ground_truth)
    q = len(ranks)
    n = len(scores[0])

    def recall(k):
        k = min(k, n)
        return sum(1 for r in ranks if r <= k) / q

    ap = np.array([1.0 / r if r <= 10 else 0.0 for r in ranks], dtype=np.float64)
    return recall(1), recall(5), recall(10), float(np.mean(ap))


# ---------------------------------------------------------------------------
# audio tower forward


def encode_audio_reference(frames, config, params):
    """Straight-line forward pass of the audio tower, written from the
    layer equations with explicit loops (convolution included)."""
    p = {name: np.asarray(t.data, dtype=np.float64) for name, t in params.items()}
    x = np.asarray(frames, dtype=np.float64)

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    for i, spec in enumerate(config.audio_tower):
        if spec.kind == "dense":
            w, b = p[f"tower{i}.w"], p[f"tower{i}.b"]
            x = np.array([w @ row + b for row in x])
        elif spec.kind == "conv1d":
            kern, bias = p[f"tower{i}.kernels"], p[f"tower{i}.bias"]
            c_out, c_in, width = kern.shape
            half = (width - 1) // 2
            t_len = x.shape[0]
            y = np.zeros((t_len, c_out))
            for t in range(t_len):
                for o in range(c_out):
                    acc = bias[o]
                    for c in range(c_in):
                        for j in range(width):
                            src = t - half + j
                            if 0 <= src < t_len:
                                acc += kern[o, c, j] * x[src, c]
                    y[t, o] = acc
            x = y
        elif spec.kind == "relu":
            x = np.maximum(x, 0.0)
        elif spec.kind == "tanh_act":
            x = np.tanh(x)
        elif spec.kind == "sigmoid_act":
            x = sigmoid(x)
        elif spec.kind == "max_pool_time":
            stride = spec.pool_stride
            y = []
            for lo in range(0, x.shape[0], stride):
                y.append(x[lo : lo + stride].max(axis=0))
            x = np.array(y)
        elif spec.kind == "mean_pool_time":
            stride = spec.pool_stride
            y = []
            for lo in range(0, x.shape[0], stride):
                y.append(x[lo : lo + stride].mean(axis=0))
            x = np.array(y)
        else:
            raise AssertionError(f"reference does not model {spec.kind!r}")

    if config.recurrent_cell == "gru":
        h = np.zeros(config.embed_dim)
        states = []
        for t in range(x.shape[0]):
            z = sigmoid(p["gru.w_z"] @ x[t] + p["gru.u_z"] @ h + p["gru.b_z"])
            r = sigmoid(p["gru.w_r"] @ x[t] + p["gru.u_r"] @ h + p["gru.b_r"])
            h_tilde = np.tanh(p["gru.w_h"] @ x[t] + p["gru.u_h"] @ (r * h) + p["gru.b_h"])
            h = (1.0 - z) * h + z * h_tilde
            states.append(h)
        x = np.array(states)
    elif config.recurrent_cell == "lstm":
        h = np.zeros(config.embed_dim)
        c = np.zeros(config.embed_dim)
        states = []
        for t in range(x.shape[0]):
            i_g = sigmoid(p["lstm.w_i"] @ x[t] + p["lstm.u_i"] @ h + p["lstm.b_i"])
            f_g = sigmoid(p["lstm.w_f"] @ x[t] + p["lstm.u_f"] @ h + p["lstm.b_f"])
            o_g = sigmoid(p["lstm.w_o"] @ x[t] + p["lstm.u_o"] @ h + p["lstm.b_o"])
            g = np.tanh(p["lstm.w_g"] @ x[t] + p["lstm.u_g"] @ h + p["lstm.b_g"])
            c = f_g * c + i_g * g
            h = o_g * np.tanh(c)
            states.append(h)
        x = np.array(states)

    out = x.sum(axis=0) / x.shape[0]
    if config.projection is not None:
        out = p["proj_audio.w"] @ out + p["proj_audio.b"]
        if config.projection.activation == "relu":
            out = np.maximum(out, 0.0)
    return out
