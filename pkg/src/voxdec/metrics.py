"""Evaluation battery: pixel correlation, SSIM, n-way identification,
embedding distance, METEOR / ROUGE for captions, and the sentence dedup
post-step for generated text.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Rng


# ---- vision metrics ----


def pixcorr(a: np.ndarray, b: np.ndarray) -> float | None:
    """Pearson correlation of flattened pixels; None when either image is
    constant (undefined, reported as missing)."""
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError("image sizes disagree")
    xc = x - x.mean()
    yc = y - y.mean()
    nx = float(np.sqrt(np.sum(xc**2)))
    ny = float(np.sqrt(np.sum(yc**2)))
    if nx == 0.0 or ny == 0.0:
        return None
    return float(np.dot(xc, yc) / (nx * ny))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


_SSIM_WINDOW = _gaussian_window()
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5, L=1)."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("image sizes disagree")
    win = _SSIM_WINDOW
    size = win.shape[0]
    if x.shape[0] < size or x.shape[1] < size:
        raise ValueError("image smaller than the SSIM window")
    xs = np.lib.stride_tricks.sliding_window_view(x, (size, size))
    ys = np.lib.stride_tricks.sliding_window_view(y, (size, size))
    mu_x = np.einsum("ijkl,kl->ij", xs, win)
    mu_y = np.einsum("ijkl,kl->ij", ys, win)
    xx = np.einsum("ijkl,kl->ij", xs * xs, win) - mu_x**2
    yy = np.einsum("ijkl,kl->ij", ys * ys, win) - mu_y**2
    xy = np.einsum("ijkl,kl->ij", xs * ys, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * xy + _SSIM_C2)
    den = (mu_x**2 + mu_y**2 + _SSIM_C1) * (xx + yy + _SSIM_C2)
    return float((num / den).mean())


def _pearson_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ac = a - a.mean(axis=-1, keepdims=True)
    bc = b - b.mean(axis=-1, keepdims=True)
    num = np.sum(ac * bc, axis=-1)
    den = np.sqrt(np.sum(ac**2, axis=-1) * np.sum(bc**2, axis=-1))
    return num / np.where(den == 0.0, 1.0, den)


def _cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    num = np.sum(a * b, axis=-1)
    den = np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1)
    return num / np.where(den == 0.0, 1.0, den)


def nway_identification(true_embeds: np.ndarray, pred_embeds: np.ndarray,
                        n_way: int = 2, rng: Rng | None = None, trials: int = 100,
                        similarity: str = "pearson") -> tuple[float, np.ndarray]:
    """For each item, success means corr(pred_i, true_i) beats corr(pred_i,
    true_j) for every sampled distractor j. Distractors are drawn without
    replacement per trial; results average over items and trials.

    Returns (overall rate, per-item rates).
    """
    T = np.atleast_2d(np.asarray(true_embeds, dtype=np.float64))
    P = np.atleast_2d(np.asarray(pred_embeds, dtype=np.float64))
    if T.shape != P.shape:
        raise ValueError("true/pred embedding shapes disagree")
    n, d = T.shape
    if d < 2:
        raise ValueError("embeddings need at least two dimensions")
    if n < n_way:
        raise ValueError(f"need at least {n_way} items for {n_way}-way identification")
    if rng is None:
        rng = Rng(0)
    simfn = _pearson_rows if similarity == "pearson" else _cosine_rows
    sim = simfn(P[:, None, :], T[None, :, :])  # (n, n): pred_i vs true_j
    per_item = np.zeros(n)
    others = [np.delete(np.arange(n), i) for i in range(n)]
    for i in range(n):
        own = sim[i, i]
        wins = 0
        for _ in range(trials):
            distract = rng.choice(others[i], size=n_way - 1, replace=False)
            if np.all(own > sim[i, distract]):
                wins += 1
        per_item[i] = wins / trials
    return float(per_item.mean()), per_item


def embedding_distance(true_embeds: np.ndarray, pred_embeds: np.ndarray) -> float:
    """Mean over items of (1 - Pearson correlation) in embedding space."""
    T = np.atleast_2d(np.asarray(true_embeds, dtype=np.float64))
    P = np.atleast_2d(np.asarray(pred_embeds, dtype=np.float64))
    if T.shape != P.shape:
        raise ValueError("true/pred embedding shapes disagree")
    return float(np.mean(1.0 - _pearson_rows(T, P)))


# ---- text metrics ----


def _chunk_count(pairs: list[tuple[int, int]]) -> int:
    """Chunks of an alignment: runs contiguous and increasing in both strings."""
    pairs = sorted(pairs)
    chunks = 0
    prev = None
    for h, r in pairs:
        if prev is None or h != prev[0] + 1 or r != prev[1] + 1:
            chunks += 1
        prev = (h, r)
    return chunks


def _min_chunks(ref: list, hyp: list) -> tuple[int, int]:
    """Exact-match alignment maximizing matches, then minimizing chunks.

    Branch-and-bound over per-position candidate matches; caption-scale
    sequences keep this tiny.
    """
    candidates = [[j for j, r in enumerate(ref) if r == h] for h in hyp]
    ref_counts: dict = {}
    hyp_counts: dict = {}
    for w in ref:
        ref_counts[w] = ref_counts.get(w, 0) + 1
    for w in hyp:
        hyp_counts[w] = hyp_counts.get(w, 0) + 1
    m = sum(min(c, ref_counts.get(w, 0)) for w, c in hyp_counts.items())
    if m == 0:
        return 0, 0

    # how many matches are still reachable from position h onward
    potential = [0] * (len(hyp) + 1)
    for h in range(len(hyp) - 1, -1, -1):
        potential[h] = potential[h + 1] + (1 if candidates[h] else 0)

    best = [m + 1]

    def search(h_pos: int, used: set, pairs: list, matched: int):
        if best[0] == 1 or matched + potential[h_pos] < m:
            return
        if matched == m:
            best[0] = min(best[0], _chunk_count(pairs))
            return
        for j in candidates[h_pos]:
            if j not in used:
                used.add(j)
                pairs.append((h_pos, j))
                search(h_pos + 1, used, pairs, matched + 1)
                pairs.pop()
                used.remove(j)
        search(h_pos + 1, used, pairs, matched)

    search(0, set(), [], 0)
    return m, best[0]


def meteor(ref, hyp) -> float:
    """Exact-unigram METEOR: F_mean 10PR/(R+9P) with the cubic chunk penalty."""
    ref = list(ref)
    hyp = list(hyp)
    if not ref or not hyp:
        raise ValueError("sequences must be nonempty")
    m, chunks = _min_chunks(ref, hyp)
    if m == 0:
        return 0.0
    p = m / len(hyp)
    r = m / len(ref)
    fmean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return float(fmean * (1.0 - penalty))


def rouge1(ref, hyp) -> float:
    """F1 of clipped unigram overlap counts."""
    ref = list(ref)
    hyp = list(hyp)
    if not ref or not hyp:
        raise ValueError("sequences must be nonempty")
    ref_counts: dict = {}
    for w in ref:
        ref_counts[w] = ref_counts.get(w, 0) + 1
    hyp_counts: dict = {}
    for w in hyp:
        hyp_counts[w] = hyp_counts.get(w, 0) + 1
    overlap = sum(min(c, ref_counts.get(w, 0)) for w, c in hyp_counts.items())
    if overlap == 0:
        return 0.0
    p = overlap / len(hyp)
    r = overlap / len(ref)
    return float(2.0 * p * r / (p + r))


def _lcs_len(a: list, b: list) -> int:
    dp = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, start=1):
            cur = dp[j]
            dp[j] = prev + 1 if x == y else max(dp[j], dp[j - 1])
            prev = cur
    return dp[-1]


def rougeL(ref, hyp) -> float:
    """F1 from the longest common subsequence."""
    ref = list(ref)
    hyp = list(hyp)
    if not ref or not hyp:
        raise ValueError("sequences must be nonempty")
    lcs = _lcs_len(ref, hyp)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return float(2.0 * p * r / (p + r))


def dedup_sentences(text: str) -> str:
    """Drop repeated sentences (case/whitespace-insensitive), keeping the
    first occurrence and its original casing."""
    parts = [s.strip() for s in text.split(".")]
    kept = []
    seen = set()
    for part in parts:
        if not part:
            continue
        key = " ".join(part.lower().split())
        if key not in seen:
            seen.add(key)
            kept.append(part)
    return ". ".join(kept) + ("." if kept else "")
