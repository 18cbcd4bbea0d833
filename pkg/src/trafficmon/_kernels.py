"""Numba kernels for the per-pixel mixture models and mask labeling.

Model state is float32; all arithmetic is float64 on widened values, with
scalar-sequential reductions (no pairwise tricks), so a plain-Python
reference that follows the same formulas reproduces every mask bit-exactly.
Components are kept sorted by descending weight; ties keep insertion order.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOG_TWO_PI = math.log(2.0 * math.pi)
NEG_INF = float("-inf")


@njit(cache=True)
def classify_gfm(frame, bgw, bgm, bgv, bgn, gm, gv, gcount, gconst, glogw,
                 match_sq, est_w, mask_out, seed_out):
    """Bayes-rule foreground mask plus the high-residual seeding mask.

    Foreground iff  log p(x|fg) + log(1 - w1)  >  log p(x|bg) + log(w1),
    where p(x|bg) uses the top-weight per-pixel component and p(x|fg) the
    global component maximizing weighted density. Ties go to background.

    A pixel seeds when no established background component (weight at
    least est_w) lies within the match radius; components still being
    confirmed do not count as background support.

    The shared -d/2*log(2pi) term cancels between the two sides and is
    dropped from both. gconst[l] = log w_l - 0.5*logdet_l and glogw[l] =
    log w_l are precomputed per frame (the global model is frozen during
    classification), so picking the component by
    score = -0.5*q + gconst[l] matches argmax of weighted density.
    """
    h, w, d = frame.shape
    for i in range(h):
        for j in range(w):
            count = np.int64(bgn[i, j])
            # background side: top component only
            w1 = np.float64(bgw[i, j, 0]) if count > 0 else 0.0
            log_prior_bg = math.log(w1) if w1 > 0.0 else NEG_INF
            pf = 1.0 - w1
            log_prior_fg = math.log(pf) if pf > 0.0 else NEG_INF
            if count > 0:
                qb = 0.0
                det = 1.0
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(bgm[i, j, 0, dd])
                    qb += diff * diff / np.float64(bgv[i, j, 0, dd])
                    det *= np.float64(bgv[i, j, 0, dd])
                logpb = -0.5 * qb - 0.5 * math.log(det)
            else:
                logpb = NEG_INF
            # foreground side: argmax of weighted density over global components
            best_score = NEG_INF
            best_l = -1
            for l in range(gcount):
                q = 0.0
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(gm[l, dd])
                    q += diff * diff / np.float64(gv[l, dd])
                score = -0.5 * q + gconst[l]
                if score > best_score:
                    best_score = score
                    best_l = l
            best_logp = best_score - glogw[best_l] if best_l >= 0 else NEG_INF
            fg_side = best_logp + log_prior_fg
            bg_side = logpb + log_prior_bg
            mask_out[i, j] = 1 if fg_side > bg_side else 0
            # seed: no established background component within the match radius
            seeded = 1
            for k in range(count):
                if np.float64(bgw[i, j, k]) < est_w:
                    continue
                q = 0.0
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(bgm[i, j, k, dd])
                    q += diff * diff / np.float64(bgv[i, j, k, dd])
                if q <= match_sq:
                    seeded = 0
                    break
            seed_out[i, j] = seeded


@njit(cache=True)
def _sort_desc(weights, means, variances, count):
    """Stable insertion sort of one pixel's components by descending weight."""
    for a in range(1, count):
        wkey = weights[a]
        k = means.shape[1]
        # stash component a
        mtmp = np.empty(k, dtype=means.dtype)
        vtmp = np.empty(k, dtype=variances.dtype)
        for dd in range(k):
            mtmp[dd] = means[a, dd]
            vtmp[dd] = variances[a, dd]
        b = a - 1
        while b >= 0 and weights[b] < wkey:
            weights[b + 1] = weights[b]
            for dd in range(k):
                means[b + 1, dd] = means[b, dd]
                variances[b + 1, dd] = variances[b, dd]
            b -= 1
        weights[b + 1] = wkey
        for dd in range(k):
            means[b + 1, dd] = mtmp[dd]
            variances[b + 1, dd] = vtmp[dd]


@njit(cache=True)
def gmm_update(frame, bgw, bgm, bgv, bgn, update_mask, lr, match_sq,
               init_var, var_floor, new_weight):
    """One EMA step of the per-pixel background mixtures.

    Pixels with update_mask == 0 are skipped (their background stays frozen
    while they are occupied by foreground). The best-matching component is
    updated; with no match the lowest-weight component is replaced.
    """
    h, w, d = frame.shape
    kmax = bgw.shape[2]
    for i in range(h):
        for j in range(w):
            if update_mask[i, j] == 0:
                continue
            count = np.int64(bgn[i, j])
            best = -1
            bestq = np.inf
            for k in range(count):
                q = 0.0
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(bgm[i, j, k, dd])
                    q += diff * diff / np.float64(bgv[i, j, k, dd])
                if q <= match_sq and q < bestq:
                    best = k
                    bestq = q
            if best == 0 and count == 1:
                # single matched component: weight renormalizes to exactly 1
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(bgm[i, j, 0, dd])
                    bgm[i, j, 0, dd] = np.float32(np.float64(bgm[i, j, 0, dd]) + lr * diff)
                    nv = (1.0 - lr) * np.float64(bgv[i, j, 0, dd]) + lr * diff * diff
                    if nv < var_floor:
                        nv = var_floor
                    bgv[i, j, 0, dd] = np.float32(nv)
                bgw[i, j, 0] = np.float32(1.0)
                continue
            if best >= 0:
                for k in range(count):
                    o = 1.0 if k == best else 0.0
                    bgw[i, j, k] = np.float32((1.0 - lr) * np.float64(bgw[i, j, k]) + lr * o)
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(bgm[i, j, best, dd])
                    bgm[i, j, best, dd] = np.float32(np.float64(bgm[i, j, best, dd]) + lr * diff)
                    nv = (1.0 - lr) * np.float64(bgv[i, j, best, dd]) + lr * diff * diff
                    if nv < var_floor:
                        nv = var_floor
                    bgv[i, j, best, dd] = np.float32(nv)
            else:
                if count < kmax:
                    slot = count
                    bgn[i, j] = count + 1
                    count += 1
                else:
                    slot = count - 1  # lowest weight, components sorted
                for dd in range(d):
                    bgm[i, j, slot, dd] = np.float32(frame[i, j, dd])
                    v0 = init_var if init_var > var_floor else var_floor
                    bgv[i, j, slot, dd] = np.float32(v0)
                bgw[i, j, slot] = np.float32(1.0 if count == 1 else new_weight)
            total = 0.0
            for k in range(count):
                total += np.float64(bgw[i, j, k])
            if total > 0.0:
                for k in range(count):
                    bgw[i, j, k] = np.float32(np.float64(bgw[i, j, k]) / total)
            _sort_desc(bgw[i, j], bgm[i, j], bgv[i, j], count)


@njit(cache=True)
def ziv_classify(frame, zw, zm, zv, zn, match_sq, bg_cum, mask_out):
    """Foreground mask of the adaptive mixture (no state change).

    A pixel is background iff it matches one of the top components whose
    cumulative weight (before adding the component) does not exceed bg_cum.
    """
    h, w, d = frame.shape
    for i in range(h):
        for j in range(w):
            count = np.int64(zn[i, j])
            is_bg = 0
            acc = 0.0
            for k in range(count):
                if acc > bg_cum:
                    break
                q = 0.0
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(zm[i, j, k, dd])
                    q += diff * diff / np.float64(zv[i, j, k, dd])
                if q <= match_sq:
                    is_bg = 1
                    break
                acc += np.float64(zw[i, j, k])
            mask_out[i, j] = 0 if is_bg else 1


@njit(cache=True)
def ziv_update(frame, zw, zm, zv, zn, alpha, bias, match_sq, init_var, var_floor):
    """One adaptive-mixture step: EMA toward the match, negative-bias pruning.

    Components whose weight is driven to zero are removed, so the per-pixel
    component count adapts between 1 and K.
    """
    h, w, d = frame.shape
    kmax = zw.shape[2]
    for i in range(h):
        for j in range(w):
            count = np.int64(zn[i, j])
            best = -1
            bestq = np.inf
            for k in range(count):
                q = 0.0
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(zm[i, j, k, dd])
                    q += diff * diff / np.float64(zv[i, j, k, dd])
                if q <= match_sq and q < bestq:
                    best = k
                    bestq = q
            if best == 0 and count == 1:
                # single matched component: survives pruning, renormalizes to 1
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(zm[i, j, 0, dd])
                    zm[i, j, 0, dd] = np.float32(np.float64(zm[i, j, 0, dd]) + alpha * diff)
                    nv = (1.0 - alpha) * np.float64(zv[i, j, 0, dd]) + alpha * diff * diff
                    if nv < var_floor:
                        nv = var_floor
                    zv[i, j, 0, dd] = np.float32(nv)
                zw[i, j, 0] = np.float32(1.0)
                continue
            if best >= 0:
                for k in range(count):
                    o = 1.0 if k == best else 0.0
                    nw = np.float64(zw[i, j, k]) + alpha * (o - np.float64(zw[i, j, k])) - alpha * bias
                    if nw < 0.0:
                        nw = 0.0
                    zw[i, j, k] = np.float32(nw)
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(zm[i, j, best, dd])
                    zm[i, j, best, dd] = np.float32(np.float64(zm[i, j, best, dd]) + alpha * diff)
                    nv = (1.0 - alpha) * np.float64(zv[i, j, best, dd]) + alpha * diff * diff
                    if nv < var_floor:
                        nv = var_floor
                    zv[i, j, best, dd] = np.float32(nv)
                # drop pruned components, preserving order
                keep = 0
                for k in range(count):
                    if np.float64(zw[i, j, k]) > 0.0:
                        if keep != k:
                            zw[i, j, keep] = zw[i, j, k]
                            for dd in range(d):
                                zm[i, j, keep, dd] = zm[i, j, k, dd]
                                zv[i, j, keep, dd] = zv[i, j, k, dd]
                        keep += 1
                count = keep if keep > 0 else 1
                zn[i, j] = count
            else:
                if count < kmax:
                    slot = count
                    zn[i, j] = count + 1
                    count += 1
                else:
                    slot = count - 1
                for dd in range(d):
                    zm[i, j, slot, dd] = np.float32(frame[i, j, dd])
                    v0 = init_var if init_var > var_floor else var_floor
                    zv[i, j, slot, dd] = np.float32(v0)
                zw[i, j, slot] = np.float32(1.0 if count == 1 else alpha)
            total = 0.0
            for k in range(count):
                total += np.float64(zw[i, j, k])
            if total > 0.0:
                for k in range(count):
                    zw[i, j, k] = np.float32(np.float64(zw[i, j, k]) / total)
            _sort_desc(zw[i, j], zm[i, j], zv[i, j], count)


@njit(cache=True)
def ziv_step(frame, zw, zm, zv, zn, alpha, bias, match_sq, init_var,
             var_floor, bg_cum, mask_out):
    """Fused classify-then-update pass over the adaptive mixture.

    Per pixel this equals ziv_classify on the incoming state followed by
    ziv_update; fusing skips one full scan of the component arrays.
    """
    h, w, d = frame.shape
    kmax = zw.shape[2]
    for i in range(h):
        for j in range(w):
            count = np.int64(zn[i, j])
            # classification against the pre-update state
            is_bg = 0
            acc = 0.0
            for k in range(count):
                if acc > bg_cum:
                    break
                q = 0.0
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(zm[i, j, k, dd])
                    q += diff * diff / np.float64(zv[i, j, k, dd])
                if q <= match_sq:
                    is_bg = 1
                    break
                acc += np.float64(zw[i, j, k])
            mask_out[i, j] = 0 if is_bg else 1
            # update, identical to ziv_update
            best = -1
            bestq = np.inf
            for k in range(count):
                q = 0.0
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(zm[i, j, k, dd])
                    q += diff * diff / np.float64(zv[i, j, k, dd])
                if q <= match_sq and q < bestq:
                    best = k
                    bestq = q
            if best == 0 and count == 1:
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(zm[i, j, 0, dd])
                    zm[i, j, 0, dd] = np.float32(np.float64(zm[i, j, 0, dd]) + alpha * diff)
                    nv = (1.0 - alpha) * np.float64(zv[i, j, 0, dd]) + alpha * diff * diff
                    if nv < var_floor:
                        nv = var_floor
                    zv[i, j, 0, dd] = np.float32(nv)
                zw[i, j, 0] = np.float32(1.0)
                continue
            if best >= 0:
                for k in range(count):
                    o = 1.0 if k == best else 0.0
                    nw = np.float64(zw[i, j, k]) + alpha * (o - np.float64(zw[i, j, k])) - alpha * bias
                    if nw < 0.0:
                        nw = 0.0
                    zw[i, j, k] = np.float32(nw)
                for dd in range(d):
                    diff = np.float64(frame[i, j, dd]) - np.float64(zm[i, j, best, dd])
                    zm[i, j, best, dd] = np.float32(np.float64(zm[i, j, best, dd]) + alpha * diff)
                    nv = (1.0 - alpha) * np.float64(zv[i, j, best, dd]) + alpha * diff * diff
                    if nv < var_floor:
                        nv = var_floor
                    zv[i, j, best, dd] = np.float32(nv)
                keep = 0
                for k in range(count):
                    if np.float64(zw[i, j, k]) > 0.0:
                        if keep != k:
                            zw[i, j, keep] = zw[i, j, k]
                            for dd in range(d):
                                zm[i, j, keep, dd] = zm[i, j, k, dd]
                                zv[i, j, keep, dd] = zv[i, j, k, dd]
                        keep += 1
                count = keep if keep > 0 else 1
                zn[i, j] = count
            else:
                if count < kmax:
                    slot = count
                    zn[i, j] = count + 1
                    count += 1
                else:
                    slot = count - 1
                for dd in range(d):
                    zm[i, j, slot, dd] = np.float32(frame[i, j, dd])
                    v0 = init_var if init_var > var_floor else var_floor
                    zv[i, j, slot, dd] = np.float32(v0)
                zw[i, j, slot] = np.float32(1.0 if count == 1 else alpha)
            total = 0.0
            for k in range(count):
                total += np.float64(zw[i, j, k])
            if total > 0.0:
                for k in range(count):
                    zw[i, j, k] = np.float32(np.float64(zw[i, j, k]) / total)
            _sort_desc(zw[i, j], zm[i, j], zv[i, j], count)


@njit(cache=True)
def gfm_update(xs, gw, gm, gv, glogdet, gcount, capacity, lr, create_sq,
               init_var, var_floor):
    """Sequential global-model update over foreground samples (row-major).

    Each sample is assigned to the component maximizing weighted density;
    if that component is farther than the creation threshold a new one is
    created, evicting the lowest-weight component at capacity.
    """
    m_samples, d = xs.shape
    count = gcount
    for s in range(m_samples):
        assigned = -1
        best_score = NEG_INF
        bestq = np.inf
        for l in range(count):
            wl = np.float64(gw[l])
            if wl <= 0.0:
                continue
            q = 0.0
            for dd in range(d):
                diff = np.float64(xs[s, dd]) - np.float64(gm[l, dd])
                q += diff * diff / np.float64(gv[l, dd])
            score = -0.5 * q - 0.5 * d * LOG_TWO_PI - 0.5 * glogdet[l] + math.log(wl)
            if score > best_score:
                best_score = score
                assigned = l
                bestq = q
        if assigned >= 0 and bestq <= create_sq:
            for l in range(count):
                o = 1.0 if l == assigned else 0.0
                gw[l] = np.float32((1.0 - lr) * np.float64(gw[l]) + lr * o)
            logdet = 0.0
            for dd in range(d):
                diff = np.float64(xs[s, dd]) - np.float64(gm[assigned, dd])
                gm[assigned, dd] = np.float32(np.float64(gm[assigned, dd]) + lr * diff)
                nv = (1.0 - lr) * np.float64(gv[assigned, dd]) + lr * diff * diff
                if nv < var_floor:
                    nv = var_floor
                gv[assigned, dd] = np.float32(nv)
                logdet += math.log(np.float64(gv[assigned, dd]))
            glogdet[assigned] = logdet
        else:
            if count < capacity:
                slot = count
                count += 1
            else:
                slot = 0
                wmin = np.float64(gw[0])
                for l in range(1, count):
                    if np.float64(gw[l]) < wmin:
                        wmin = np.float64(gw[l])
                        slot = l
            logdet = 0.0
            for dd in range(d):
                gm[slot, dd] = np.float32(xs[s, dd])
                v0 = init_var if init_var > var_floor else var_floor
                gv[slot, dd] = np.float32(v0)
                logdet += math.log(np.float64(gv[slot, dd]))
            glogdet[slot] = logdet
            gw[slot] = np.float32(1.0 if count == 1 else lr)
        total = 0.0
        for l in range(count):
            total += np.float64(gw[l])
        if total > 0.0:
            for l in range(count):
                gw[l] = np.float32(np.float64(gw[l]) / total)
    return count


@njit(cache=True)
def label_components(mask):
    """8-connected labeling; labels follow row-major discovery order (1-based)."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = np.empty(h * w // 2 + 2, dtype=np.int32)
    nxt = 1
    for i in range(h):
        for j in range(w):
            if mask[i, j] == 0:
                continue
            # neighbors already scanned: NW, N, NE, W
            lbl = 0
            for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1)):
                ni, nj = i + dy, j + dx
                if 0 <= ni < h and 0 <= nj < w and labels[ni, nj] > 0:
                    r = labels[ni, nj]
                    while parent[r] != r:
                        r = parent[r]
                    if lbl == 0 or r < lbl:
                        if lbl != 0 and r != lbl:
                            parent[lbl] = r
                        lbl = r
                    elif r != lbl:
                        parent[r] = lbl
            if lbl == 0:
                parent[nxt] = nxt
                lbl = nxt
                nxt += 1
            labels[i, j] = lbl
    # second pass: resolve roots, renumber by first row-major appearance
    remap = np.zeros(nxt, dtype=np.int32)
    blobs = 0
    for i in range(h):
        for j in range(w):
            if labels[i, j] == 0:
                continue
            r = labels[i, j]
            while parent[r] != r:
                r = parent[r]
            if remap[r] == 0:
                blobs += 1
                remap[r] = blobs
            labels[i, j] = remap[r]
    return labels, blobs
