"""Training objectives with exact parameter gradients.

Logit-level losses (distillation KL, information maximization, cross
entropy) return the scalar and its gradient on the logits; parameter-level
losses (mixup consistency, output divergence, weighted gradient
discrepancy) run the network themselves and return the gradient on the
flat parameter vector. Everything is written with the dual-aware ops so
each gradient computation doubles as an exact Hessian-vector-product
closure when fed Dual parameters.

Batch reductions are arithmetic means. Pseudo-label targets, mixup
targets and the entropy weight of the gradient-discrepancy term are all
treated as constants (no gradient flows into them).
"""

from dataclasses import dataclass

import numpy as np

from . import duals as dm
from .errors import InvalidInputError
from .network import backward_pass, forward_pass
from .simplex import KL_CLAMP

NORM_EPS = 1e-12

WG_FORMS = ("cosine", "one-minus-cosine-negated")


@dataclass
class LossBreakdown:
    """Per-component loss values for one batch or epoch; None means not computed.

    Satisfies dt = kd + mix - im and sr = epsilon*od + zeta*wg whenever the
    participating components are present (absent ones count as 0).
    """

    kd: float = None
    mix: float = None
    im: float = None
    dt: float = None
    od: float = None
    wg: float = None
    sr: float = None
    cm: float = None
    self_ce: float = None
    total: float = None

    def to_dict(self):
        return {
            "kd": self.kd,
            "mix": self.mix,
            "im": self.im,
            "dt": self.dt,
            "od": self.od,
            "wg": self.wg,
            "sr": self.sr,
            "cm": self.cm,
            "self_ce": self.self_ce,
            "total": self.total,
        }


def _clamp_renorm_rows(rows):
    rows = np.asarray(rows, dtype=float)
    q = np.maximum(rows, KL_CLAMP)
    return q / q.sum(axis=1, keepdims=True)


def _check_batch_rows(rows, logits, name):
    rv = np.asarray(dm.value(rows), dtype=float)
    lv = dm.value(logits)
    if rv.shape != lv.shape:
        raise InvalidInputError(f"{name} shape {rv.shape} does not match logits shape {lv.shape}")
    return rv


def kd_value_and_logit_grad(pseudo_rows, logits):
    """Distillation loss: mean KL(pseudo_row || softmax(logit_row)).

    Pseudo-labels are constants; the gradient flows into the logits only.
    """
    yt = _clamp_renorm_rows(_check_batch_rows(pseudo_rows, logits, "pseudo-labels"))
    p = dm.softmax_rows(logits)
    n = yt.shape[0]
    per_row = dm.asum(yt * (np.log(yt) - dm.log(p)), axis=1)
    value = dm.amean(per_row)
    dlogits = (p - yt) / n
    return value, dlogits


def im_value_and_logit_grad(logits):
    """Information-maximization term: entropy of the batch-mean prediction
    minus the mean per-sample entropy. Positive values mean diverse and
    confident predictions; the stage-one objective subtracts this term.
    """
    lv = dm.value(logits)
    if lv.ndim != 2 or lv.shape[0] == 0:
        raise InvalidInputError("information-maximization loss needs a non-empty (n, C) batch")
    n = lv.shape[0]
    p = dm.softmax_rows(logits)
    pbar = dm.amean(p, axis=0)
    log_pbar = dm.log(pbar)
    h_marginal = -dm.asum(pbar * log_pbar)
    log_p = dm.log(p)
    h_rows = -dm.asum(p * log_p, axis=1)
    h_conditional = dm.amean(h_rows)
    value = h_marginal - h_conditional

    row_dot = dm.asum(p * log_pbar, axis=1, keepdims=True)
    d_marginal = -(p * (log_pbar - row_dot)) / n
    d_conditional = -(p * (log_p + h_rows[:, None])) / n
    dlogits = d_marginal - d_conditional
    return value, dlogits


def im_value(prediction_rows):
    """Information-maximization value straight from probability rows."""
    rows = np.asarray(prediction_rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise InvalidInputError("information-maximization loss needs a non-empty (n, C) batch")
    eps_safe = np.where(rows > 0, rows, 1.0)
    h_rows = -np.sum(rows * np.where(rows > 0, np.log(eps_safe), 0.0), axis=1)
    pbar = rows.mean(axis=0)
    pb_safe = np.where(pbar > 0, pbar, 1.0)
    h_marginal = -np.sum(pbar * np.where(pbar > 0, np.log(pb_safe), 0.0))
    return float(h_marginal - h_rows.mean())


def ce_value_and_logit_grad(labels, logits):
    """Cross entropy against hard labels: mean of -ln softmax(logits)[label]."""
    lv = dm.value(logits)
    labels = np.asarray(labels)
    n, c = lv.shape
    if labels.shape != (n,):
        raise InvalidInputError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InvalidInputError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    p = dm.softmax_rows(logits)
    picked = p[np.arange(n), labels]
    value = dm.amean(-dm.log(dm.clamp_min(picked, KL_CLAMP)))
    onehot = np.eye(c)[labels]
    dlogits = (p - onehot) / n
    return value, dlogits


# -- parameter-level losses -------------------------------------------------


def kd_loss(layout, theta, x, pseudo_rows):
    """Distillation loss through the full network; gradient on theta."""
    logits, _, cache = forward_pass(layout, theta, x)
    value, dlogits = kd_value_and_logit_grad(pseudo_rows, logits)
    return value, backward_pass(layout, theta, cache, dlogits)


def im_loss(layout, theta, x):
    """Information-maximization term through the full network; gradient on theta."""
    logits, _, cache = forward_pass(layout, theta, x)
    value, dlogits = im_value_and_logit_grad(logits)
    return value, backward_pass(layout, theta, cache, dlogits)


def ce_loss(layout, theta, x, labels):
    """Hard-label cross entropy through the full network; gradient on theta."""
    logits, _, cache = forward_pass(layout, theta, x)
    value, dlogits = ce_value_and_logit_grad(labels, logits)
    return value, backward_pass(layout, theta, cache, dlogits)


def draw_mixup_randomness(rng, n):
    """Seeded mixup pairing (a uniform random derangement) and Beta(0.3, 0.3) weights."""
    if n < 2:
        return None, None
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            break
    lam = rng.beta(0.3, 0.3, size=n)
    return perm, lam


def mixup_loss(layout, theta, x, pairing, lam, base_predictions=None):
    """Mixup consistency: KL between the prediction on a mixed input and the
    same mixture of the model's own (detached) predictions; gradient on theta.

    pairing and lam come from draw_mixup_randomness so callers control the
    random stream. base_predictions (the per-sample rows to mix into
    targets) default to the model's current predictions on x and are always
    treated as constants; finite-difference probes should pass them
    explicitly so the target stays frozen across perturbations. A batch of
    one sample has no partner and scores 0.
    """
    xv = np.asarray(dm.value(x), dtype=float)
    n = xv.shape[0]
    if n < 2:
        return 0.0, dm.zeros_like_flat(layout.param_count, theta)
    pairing = np.asarray(pairing)
    lam = np.asarray(lam, dtype=float)
    if pairing.shape != (n,) or lam.shape != (n,):
        raise InvalidInputError("mixup pairing/weights do not match the batch size")
    if np.any(pairing == np.arange(n)):
        raise InvalidInputError("mixup pairing must be a derangement (no fixed points)")

    if base_predictions is None:
        logits_plain, _, _ = forward_pass(layout, dm.value(theta), xv)
        base_predictions = dm.softmax_rows(logits_plain)
    p_det = np.asarray(base_predictions, dtype=float)
    if p_det.shape[0] != n:
        raise InvalidInputError("base predictions do not match the batch size")
    lam_col = lam[:, None]
    targets = _clamp_renorm_rows(lam_col * p_det + (1.0 - lam_col) * p_det[pairing])

    x_mix = lam_col * xv + (1.0 - lam_col) * xv[pairing]
    logits_mix, _, cache = forward_pass(layout, theta, x_mix)
    p = dm.softmax_rows(logits_mix)
    r = dm.log(p) - np.log(targets)
    per_row = dm.asum(p * r, axis=1)
    value = dm.amean(per_row)
    dlogits = p * (r - per_row[:, None]) / n
    return value, backward_pass(layout, theta, cache, dlogits)


def _od_two_slot(layout, theta_sub, theta_full, mask, x):
    """Output-divergence loss with separate parameter slots per branch.

    Returns (value, grad through the subnetwork branch, grad through the
    full branch, subnetwork prediction rows). Evaluating both slots at the
    same point gives the loss and its two path-restricted gradients;
    seeding the slots with different tangents gives the doubled-space
    Hessian-vector products needed by the gradient-discrepancy loss.
    """
    logits_s, _, cache_s = forward_pass(layout, theta_sub, x, kept=mask.kept)
    logits_f, _, cache_f = forward_pass(layout, theta_full, x)
    p = dm.softmax_rows(logits_s)
    q = dm.softmax_rows(logits_f)
    m = 0.5 * (p + q)
    log_m = dm.log(m)
    u = 0.5 * (dm.log(p) - log_m)
    w = 0.5 * (dm.log(q) - log_m)
    per_row = dm.asum(p * u, axis=1) + dm.asum(q * w, axis=1)
    value = dm.amean(per_row)
    n = dm.value(logits_s).shape[0]
    dlog_s = p * (u - dm.asum(p * u, axis=1, keepdims=True)) / n
    dlog_f = q * (w - dm.asum(q * w, axis=1, keepdims=True)) / n
    g_sub = backward_pass(layout, theta_sub, cache_s, dlog_s)
    g_full = backward_pass(layout, theta_full, cache_f, dlog_f)
    return value, g_sub, g_full, p


def od_loss(layout, theta, mask, x):
    """Jensen-Shannon divergence between subnetwork and full-network
    predictions, averaged over the batch; gradient flows through both paths
    into the shared parameters.
    """
    value, g_sub, g_full, _ = _od_two_slot(layout, theta, theta, mask, x)
    return value, g_sub + g_full


def shared_coordinates(layout, mask):
    """Boolean selector over theta for coordinates on the subnetwork path."""
    sel = np.zeros(layout.param_count, dtype=bool)
    off = 0
    kept = mask.kept
    for l, (out, inp) in enumerate(layout.layer_shapes()):
        block = np.zeros((out, inp), dtype=bool)
        block[: kept[l + 1], : kept[l]] = True
        sel[off : off + out * inp] = block.ravel()
        off += out * inp
        sel[off : off + out][: kept[l + 1]] = True
        off += out
    return sel


def wg_loss(layout, theta, mask, x, form="cosine"):
    """Entropy-weighted discrepancy between the two path gradients of the
    output-divergence loss.

    The weight 1 + exp(-mean entropy of subnetwork predictions) is a
    constant factor (no gradient). The cosine is taken over the two
    path-restricted gradients on their shared coordinates; its exact
    parameter gradient comes from one doubled-space forward-over-reverse
    pass. With form="cosine" the loss is weight * cos (minimization pushes
    the paths apart); "one-minus-cosine-negated" flips the sign of the
    cosine term, giving weight * (1 - cos). If either path gradient has
    norm < 1e-12 (e.g. gamma = 1) the loss is 0 with zero gradient.

    Returns (value, grad, weight, cos).
    """
    if form not in WG_FORMS:
        raise InvalidInputError(f"unknown wg form {form!r}")
    theta = np.asarray(theta, dtype=float)
    _, g_sub, g_full, p_sub = _od_two_slot(layout, theta, theta, mask, x)
    h_mean = float(np.mean(-np.sum(p_sub * np.log(p_sub), axis=1)))
    weight = 1.0 + np.exp(-h_mean)

    sel = shared_coordinates(layout, mask)
    gs = g_sub[sel]
    gf = g_full[sel]
    ns = np.linalg.norm(gs)
    nf = np.linalg.norm(gf)
    if ns < NORM_EPS or nf < NORM_EPS:
        return 0.0, np.zeros_like(theta), weight, 0.0
    cos = float(np.dot(gf, gs) / (nf * ns))

    d_cos_d_gf = gs / (nf * ns) - cos * gf / (nf * nf)
    d_cos_d_gs = gf / (nf * ns) - cos * gs / (ns * ns)
    seed_full = np.zeros_like(theta)
    seed_full[sel] = d_cos_d_gf
    seed_sub = np.zeros_like(theta)
    seed_sub[sel] = d_cos_d_gs

    # forward-over-reverse on the two-slot loss: each slot's tangent is the
    # cosine's partial w.r.t. that slot's gradient; the sum of the two
    # gradient tangents is the exact parameter gradient of the cosine.
    _, g_sub_d, g_full_d, _ = _od_two_slot(
        layout, dm.Dual(theta, seed_sub), dm.Dual(theta, seed_full), mask, x
    )
    grad_cos = dm.tangent(g_sub_d) + dm.tangent(g_full_d)

    if form == "cosine":
        return weight * cos, weight * grad_cos, weight, cos
    return weight * (1.0 - cos), -weight * grad_cos, weight, cos


def sr_value(od, wg, epsilon, zeta):
    """Subnetwork-rectification total: epsilon * od + zeta * wg."""
    return epsilon * od + zeta * wg


def stage_one_batch(layout, theta, mask, x, pseudo_rows, *, epsilon, zeta,
                    pairing, lam, use_kd=True, use_mix=True, use_im=True,
                    use_sr=True, wg_form="cosine"):
    """Stage-one objective on one batch: (kd + mix - im) + (eps*od + zeta*wg).

    Shares one full-network forward pass between the distillation, the
    information-maximization term and the full branch of the output
    divergence. Returns (LossBreakdown, gradient on theta).
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    grad = np.zeros_like(theta)
    bd = LossBreakdown()

    logits, _, cache = forward_pass(layout, theta, x)
    dlogits_full = np.zeros((n, layout.class_count))
    if use_kd:
        kd_val, d_kd = kd_value_and_logit_grad(pseudo_rows, logits)
        bd.kd = float(kd_val)
        dlogits_full += d_kd
    if use_im:
        im_val, d_im = im_value_and_logit_grad(logits)
        bd.im = float(im_val)
        dlogits_full -= d_im

    if use_sr:
        od_val, g_sub, g_full, _ = _od_two_slot(layout, theta, theta, mask, x)
        bd.od = float(od_val)
        grad += epsilon * (g_sub + g_full)
        wg_val, g_wg, _, _ = wg_loss(layout, theta, mask, x, form=wg_form)
        bd.wg = float(wg_val)
        grad += zeta * g_wg
        bd.sr = epsilon * bd.od + zeta * bd.wg

    grad += backward_pass(layout, theta, cache, dlogits_full)

    if use_mix:
        mix_val, g_mix = mixup_loss(layout, theta, x, pairing, lam)
        bd.mix = float(mix_val)
        grad += g_mix

    def _val(v):
        return 0.0 if v is None else v

    bd.dt = _val(bd.kd) + _val(bd.mix) - _val(bd.im)
    bd.total = bd.dt + _val(bd.sr)
    return bd, grad
