"""Losses: sparse categorical cross-entropy and CTC (forward-backward, log space)."""

from __future__ import annotations

import numpy as np


class LabelRangeError(ValueError):
    pass


class InfeasibleTargetError(ValueError):
    """Target cannot be aligned to the available timesteps."""


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def sparse_ce_with_grad(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax at the true class, plus d(loss)/d(logits)."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= c:
        raise LabelRangeError(f"labels must be in [0, {c})")
    lp = log_softmax(logits.astype(np.float64))
    loss = float(-lp[np.arange(n), labels].mean())
    grad = softmax(logits.astype(np.float64))
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype)


def sparse_ce(logits: np.ndarray, labels: np.ndarray) -> float:
    return sparse_ce_with_grad(logits, labels)[0]


def ctc_extend(target: np.ndarray, blank: int) -> tuple[np.ndarray, np.ndarray]:
    """Blank-interleaved label sequence and per-state skip-transition mask."""
    l = len(target)
    ext = np.full(2 * l + 1, blank, dtype=np.int64)
    ext[1::2] = target
    skip = np.zeros(len(ext), dtype=bool)
    for s in range(2, len(ext)):
        skip[s] = ext[s] != blank and ext[s] != ext[s - 2]
    return ext, skip


def ctc_min_frames(target) -> int:
    """Shortest T that can emit the target (repeats need a separating blank)."""
    t = list(target)
    return len(t) + sum(1 for a, b in zip(t, t[1:]) if a == b)


def _ctc_alpha(lp: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    t_len, s_len = lp.shape[0], len(ext)
    alpha = np.full((t_len, s_len), -np.inf)
    alpha[0, 0] = lp[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = lp[0, ext[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        m = prev.copy()
        m[1:] = np.logaddexp(m[1:], prev[:-1])
        m[2:] = np.where(skip[2:], np.logaddexp(m[2:], prev[:-2]), m[2:])
        alpha[t] = m + lp[t, ext]
    return alpha


def _ctc_beta(lp: np.ndarray, ext: np.ndarray, skip: np.ndarray) -> np.ndarray:
    # beta excludes the emission at its own timestep
    t_len, s_len = lp.shape[0], len(ext)
    beta = np.full((t_len, s_len), -np.inf)
    beta[t_len - 1, s_len - 1] = 0.0
    if s_len > 1:
        beta[t_len - 1, s_len - 2] = 0.0
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, ext]
        m = nxt.copy()
        m[:-1] = np.logaddexp(m[:-1], nxt[1:])
        m[:-2] = np.where(skip[2:], np.logaddexp(m[:-2], nxt[2:]), m[:-2])
        beta[t] = m
    return beta


def _check_ctc_inputs(logits, target, blank):
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise ValueError(f"ctc expects [T, classes] logits, got shape {logits.shape}")
    classes = logits.shape[1]
    if blank is None:
        blank = classes - 1
    target = np.asarray(target, dtype=np.int64)
    if target.size and (target.min() < 0 or target.max() >= classes):
        raise LabelRangeError(f"target symbols must be in [0, {classes})")
    if np.any(target == blank):
        raise LabelRangeError("target may not contain the blank symbol")
    if logits.shape[0] < ctc_min_frames(target):
        raise InfeasibleTargetError(
            f"target of length {len(target)} needs >= {ctc_min_frames(target)} frames, "
            f"got {logits.shape[0]}"
        )
    return logits, target, blank


def ctc_loss(logits: np.ndarray, target, blank: int | None = None) -> float:
    """-log p(target | logits) marginalized over all CTC alignments."""
    logits, target, blank = _check_ctc_inputs(logits, target, blank)
    lp = log_softmax(logits.astype(np.float64))
    ext, skip = ctc_extend(target, blank)
    alpha = _ctc_alpha(lp, ext, skip)
    s_len = len(ext)
    tail = alpha[-1, s_len - 1]
    if s_len > 1:
        tail = np.logaddexp(tail, alpha[-1, s_len - 2])
    return float(-tail)


def ctc_loss_with_grad(logits: np.ndarray, target, blank: int | None = None):
    """CTC loss and its gradient with respect to the logits."""
    logits, target, blank = _check_ctc_inputs(logits, target, blank)
    lp = log_softmax(logits.astype(np.float64))
    ext, skip = ctc_extend(target, blank)
    alpha = _ctc_alpha(lp, ext, skip)
    beta = _ctc_beta(lp, ext, skip)
    s_len = len(ext)
    log_p = alpha[-1, s_len - 1]
    if s_len > 1:
        log_p = np.logaddexp(log_p, alpha[-1, s_len - 2])
    loss = float(-log_p)

    gamma = np.exp(alpha + beta - log_p)  # [T, S] posterior over extended states
    t_len, classes = lp.shape
    occ = np.zeros((t_len, classes))
    np.add.at(occ.T, ext, gamma.T)
    grad = (softmax(logits.astype(np.float64)) - occ).astype(logits.dtype)
    return loss, grad


def ctc_greedy_decode(
    logits: np.ndarray, blank: int | None = None
) -> tuple[list[int], list[float]]:
    """Best-path decode: per-step argmax, collapse repeats, drop blanks.

    Each emitted symbol's confidence is the max softmax probability across
    the contiguous run of timesteps that produced it.
    """
    logits = np.asarray(logits)
    if blank is None:
        blank = logits.shape[1] - 1
    probs = softmax(logits.astype(np.float64))
    steps = probs.argmax(axis=1)
    seq: list[int] = []
    conf: list[float] = []
    prev = -1
    for t, k in enumerate(steps):
        k = int(k)
        if k != blank and k != prev:
            seq.append(k)
            conf.append(float(probs[t, k]))
        elif k != blank and k == prev:
            conf[-1] = max(conf[-1], float(probs[t, k]))
        prev = k
    return seq, conf
