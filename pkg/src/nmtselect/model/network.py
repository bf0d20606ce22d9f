"""Attention encoder-decoder: teacher-forced NLL and its exact gradient.

Layout: a bidirectional multi-layer encoder (LSTM or GRU) produces
annotations ``[fw_i; bw_i]``; the decoder stack is initialised from a tanh
projection of the final forward and backward top-layer states. Each decoder
output state queries the annotations through additive scoring
``v . tanh(Wq s_t + Wk h_i)``, and ``tanh(Wc [s_t; ctx_t] + bc)`` feeds the
output softmax. Recurrent time loops live in :mod:`nmtselect.kernels`.
"""
from dataclasses import dataclass, field

import numpy as np

from .. import kernels


class NonFiniteError(FloatingPointError):
    pass


class StaleRecordError(RuntimeError):
    pass


@dataclass
class ForwardRecord:
    nll: np.ndarray           # (B,) per-sentence NLL in nats
    n_tokens: np.ndarray      # (B,) target tokens incl. EOS
    step_nll: np.ndarray      # (B, T) per-step cross-entropy, 0 on padding
    version: int
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def total(self):
        return float(self.nll.sum())


def _length_mask(lengths, size):
    return np.arange(size)[None, :] < np.asarray(lengths)[:, None]


def _dropout_masks(rng, p, dtype, shapes):
    keep = 1.0 - p
    return [(rng.random(s) < keep).astype(dtype) / dtype.type(keep) for s in shapes]


def _run_rnn(cell, zx, w_h, h0, mask, reverse):
    """Returns (hs, cache) for one recurrent layer/direction."""
    if cell == "lstm":
        c0 = np.zeros_like(h0)
        acts, cs, hs = kernels.lstm_forward(zx, w_h, h0, c0, mask, reverse)
        return hs, (acts, cs, hs, c0)
    acts, zh, hs = kernels.gru_forward(zx, w_h, h0, mask, reverse)
    return hs, (acts, zh, hs)


def _rnn_backward(cell, cache, w_h, h0, mask, dhs, reverse):
    """Returns (dzx, dw_h, dh0)."""
    if cell == "lstm":
        acts, cs, hs, c0 = cache
        dzx, dwh, dh0, _ = kernels.lstm_backward(acts, cs, hs, w_h, h0, c0, mask, dhs, reverse)
        return dzx, dwh, dh0
    acts, zh, hs = cache
    return kernels.gru_backward(acts, zh, hs, w_h, h0, mask, dhs, reverse)


def encode(params, src, src_len, drop=None):
    """Run the encoder on padded ``src`` (B, S).

    Returns a dict with annotations ``K`` (B, S, 2H), projected keys ``kp``,
    the source mask, the decoder initial states and the forward caches.
    """
    cfg = params.config
    H = cfg.hidden_dim
    dtype = params.dtype
    B, S = src.shape
    smask_t = _length_mask(src_len, S).T.astype(np.uint8)        # (S, B)
    x = params["src_emb"][src.T]                                  # (S, B, E)
    if drop is not None:
        x = x * drop["src"]
    layers = []
    for layer in range(cfg.encoder_layers):
        outs, caches = [], []
        for d, reverse in (("fw", False), ("bw", True)):
            pre = f"enc.{layer}.{d}."
            zx = x @ params[pre + "Wx"] + params[pre + "b"]
            h0 = np.zeros((B, H), dtype=dtype)
            hs, cache = _run_rnn(cfg.cell, zx, params[pre + "Wh"], h0, smask_t, reverse)
            outs.append(hs)
            caches.append(cache)
        out = np.concatenate(outs, axis=2)                        # (S, B, 2H)
        layers.append({"x": x, "caches": caches, "out": out})
        x = out
        if layer + 1 < cfg.encoder_layers and drop is not None:
            x = x * drop[f"enc{layer + 1}"]
    top = layers[-1]["out"]
    final = np.concatenate([top[S - 1, :, :H], top[0, :, H:]], axis=1)   # (B, 2H)
    init = np.tanh(final @ params["init.W"] + params["init.b"])           # (B, L*H)
    K = np.ascontiguousarray(top.transpose(1, 0, 2))
    return {
        "K": K,
        "kp": K @ params["att.Wk"],
        "smask": smask_t.T.astype(bool),
        "h0": [np.ascontiguousarray(init[:, l * H:(l + 1) * H]) for l in range(cfg.dec_layers)],
        "final": final,
        "init": init,
        "layers": layers,
        "smask_t": smask_t,
    }


def attend(params, q, kp, K, smask):
    """Additive attention. q (B, T, A); kp (B, S, A); K (B, S, 2H)."""
    tt = np.tanh(kp[:, None, :, :] + q[:, :, None, :])             # (B, T, S, A)
    e = tt @ params["att.v"]                                      # (B, T, S)
    e = np.where(smask[:, None, :], e, -np.inf)
    e = e - e.max(axis=2, keepdims=True)
    w = np.exp(e)
    alpha = w / w.sum(axis=2, keepdims=True)
    ctx = alpha @ K                                               # (B, T, 2H)
    return ctx, alpha, tt


def _readout(params, s_top, ctx):
    u = np.concatenate([s_top, ctx], axis=2)                      # (B, T, 3H)
    o = np.tanh(u @ params["comb.W"] + params["comb.b"])
    logits = o @ params["out.W"] + params["out.b"]
    return u, o, logits


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward_nll(params, batch, dropout_on=False, seed=0, batch_index=None):
    """Teacher-forced per-sentence NLL of ``batch`` under ``params``."""
    cfg = params.config
    dtype = params.dtype
    H, E = cfg.hidden_dim, cfg.embedding_dim
    B, S = batch.src.shape
    T = batch.tgt_in.shape[1]
    for arr, vocab, side in ((batch.src, cfg.src_vocab_size, "source"),
                             ((batch.tgt_in, batch.tgt_out), cfg.tgt_vocab_size, "target")):
        for a in (arr if isinstance(arr, tuple) else (arr,)):
            if a.size and (a.min() < 0 or a.max() >= vocab):
                raise IndexError(f"{side} token id out of range for vocabulary of {vocab}")

    drop = None
    if dropout_on and cfg.dropout > 0:
        rng = np.random.default_rng(seed)
        names = ["src"] + [f"enc{l}" for l in range(1, cfg.encoder_layers)]
        names += ["tgt"] + [f"dec{l}" for l in range(1, cfg.dec_layers)]
        shapes = [(S, B, E)] + [(S, B, 2 * H)] * (cfg.encoder_layers - 1)
        shapes += [(T, B, E)] + [(T, B, H)] * (cfg.dec_layers - 1)
        drop = dict(zip(names, _dropout_masks(rng, cfg.dropout, dtype, shapes)))

    enc = encode(params, batch.src, batch.src_len, drop)

    ones = np.ones((T, B), dtype=np.uint8)
    x = params["tgt_emb"][batch.tgt_in.T]                         # (T, B, E)
    if drop is not None:
        x = x * drop["tgt"]
    dec_layers = []
    for layer in range(cfg.dec_layers):
        pre = f"dec.{layer}."
        zx = x @ params[pre + "Wx"] + params[pre + "b"]
        hs, cache = _run_rnn(cfg.cell, zx, params[pre + "Wh"], enc["h0"][layer], ones, False)
        dec_layers.append({"x": x, "cache": cache})
        x = hs
        if layer + 1 < cfg.dec_layers and drop is not None:
            x = x * drop[f"dec{layer + 1}"]
    s_top = np.ascontiguousarray(hs.transpose(1, 0, 2))           # (B, T, H)

    q = s_top @ params["att.Wq"]
    ctx, alpha, tt = attend(params, q, enc["kp"], enc["K"], enc["smask"])
    u, o, logits = _readout(params, s_top, ctx)
    logp = log_softmax(logits)

    tmask = _length_mask(batch.tgt_len, T)
    picked = np.take_along_axis(logp, batch.tgt_out[:, :, None], axis=2)[:, :, 0]
    step_nll = np.where(tmask, -picked, 0.0)
    if not np.isfinite(step_nll).all():
        bad_b, bad_t = np.argwhere(~np.isfinite(step_nll))[0]
        where = "" if batch_index is None else f"batch {batch_index}, "
        raise NonFiniteError(f"non-finite activation in {where}sentence row {bad_b}, step {bad_t}")
    nll = step_nll.sum(axis=1)

    cache = {
        "batch": batch, "drop": drop, "enc": enc, "dec_layers": dec_layers,
        "s_top": s_top, "ctx": ctx, "alpha": alpha, "tt": tt, "u": u, "o": o,
        "logp": logp, "tmask": tmask,
    }
    return ForwardRecord(nll=nll, n_tokens=batch.tgt_len.copy(), step_nll=step_nll,
                         version=params.version, cache=cache)


def _acc_rows(table_grad, ids, rows):
    np.add.at(table_grad, ids.reshape(-1), rows.reshape(-1, rows.shape[-1]))


def backward(params, record):
    """Exact gradients of the token-mean batch NLL w.r.t. every tensor."""
    if record.version != params.version:
        raise StaleRecordError(
            f"forward record is from parameter version {record.version}, "
            f"parameters are at version {params.version}")
    cfg = params.config
    H = cfg.hidden_dim
    c = record.cache
    batch, drop, enc = c["batch"], c["drop"], c["enc"]
    B, S = batch.src.shape
    T = batch.tgt_in.shape[1]
    V = cfg.tgt_vocab_size
    dtype = params.dtype
    g = {name: np.zeros_like(arr) for name, arr in params.items()}

    n_tok = int(record.n_tokens.sum())
    dlogits = np.exp(c["logp"])
    bi, ti = np.nonzero(c["tmask"])
    dlogits[bi, ti, batch.tgt_out[bi, ti]] -= 1.0
    dlogits *= (c["tmask"][:, :, None] / n_tok).astype(dtype)

    o, u = c["o"], c["u"]
    g["out.W"] = o.reshape(-1, H).T @ dlogits.reshape(-1, V)
    g["out.b"] = dlogits.sum(axis=(0, 1))
    dpre_o = (dlogits @ params["out.W"].T) * (1.0 - o * o)
    g["comb.W"] = u.reshape(-1, 3 * H).T @ dpre_o.reshape(-1, H)
    g["comb.b"] = dpre_o.sum(axis=(0, 1))
    du = dpre_o @ params["comb.W"].T
    ds_top = du[:, :, :H]
    dctx = du[:, :, H:]

    K, alpha, tt = enc["K"], c["alpha"], c["tt"]
    dalpha = dctx @ K.transpose(0, 2, 1)                          # (B, T, S)
    dK = alpha.transpose(0, 2, 1) @ dctx                          # (B, S, 2H)
    de = alpha * (dalpha - (alpha * dalpha).sum(axis=2, keepdims=True))
    g["att.v"] = np.einsum("bts,btsa->a", de, tt)
    dpre = de[..., None] * params["att.v"] * (1.0 - tt * tt)      # (B, T, S, A)
    dkp = dpre.sum(axis=1)
    dq = dpre.sum(axis=2)
    g["att.Wk"] = K.reshape(-1, 2 * H).T @ dkp.reshape(-1, H)
    dK += dkp @ params["att.Wk"].T
    g["att.Wq"] = c["s_top"].reshape(-1, H).T @ dq.reshape(-1, H)
    ds_top = ds_top + dq @ params["att.Wq"].T

    # decoder stack, top-down
    ones = np.ones((T, B), dtype=np.uint8)
    dh = np.ascontiguousarray(ds_top.transpose(1, 0, 2))          # (T, B, H)
    dh0s = [None] * cfg.dec_layers
    for layer in range(cfg.dec_layers - 1, -1, -1):
        pre = f"dec.{layer}."
        rec = c["dec_layers"][layer]
        dzx, dwh, dh0 = _rnn_backward(cfg.cell, rec["cache"], params[pre + "Wh"],
                                      enc["h0"][layer], ones, dh, False)
        dh0s[layer] = dh0
        g[pre + "Wh"] += dwh
        G = dzx.shape[2]
        g[pre + "Wx"] += rec["x"].reshape(-1, rec["x"].shape[2]).T @ dzx.reshape(-1, G)
        g[pre + "b"] += dzx.sum(axis=(0, 1))
        dx = dzx @ params[pre + "Wx"].T
        if layer > 0:
            dh = dx * drop[f"dec{layer}"] if drop is not None else dx
        else:
            if drop is not None:
                dx = dx * drop["tgt"]
            _acc_rows(g["tgt_emb"], batch.tgt_in.T, dx)

    dinit = np.concatenate(dh0s, axis=1) * (1.0 - enc["init"] ** 2)
    g["init.W"] = enc["final"].T @ dinit
    g["init.b"] = dinit.sum(axis=0)
    dfinal = dinit @ params["init.W"].T

    # encoder, top-down
    dout = np.ascontiguousarray(dK.transpose(1, 0, 2))            # (S, B, 2H)
    dout[S - 1, :, :H] += dfinal[:, :H]
    dout[0, :, H:] += dfinal[:, H:]
    smask_t = enc["smask_t"]
    for layer in range(cfg.encoder_layers - 1, -1, -1):
        rec = enc["layers"][layer]
        x = rec["x"]
        dx = np.zeros_like(x)
        for k, (d, reverse) in enumerate((("fw", False), ("bw", True))):
            pre = f"enc.{layer}.{d}."
            h0 = np.zeros((B, H), dtype=dtype)
            dzx, dwh, _ = _rnn_backward(cfg.cell, rec["caches"][k], params[pre + "Wh"], h0,
                                        smask_t, dout[:, :, k * H:(k + 1) * H], reverse)
            G = dzx.shape[2]
            g[pre + "Wh"] += dwh
            g[pre + "Wx"] += x.reshape(-1, x.shape[2]).T @ dzx.reshape(-1, G)
            g[pre + "b"] += dzx.sum(axis=(0, 1))
            dx += dzx @ params[pre + "Wx"].T
        if layer > 0:
            dout = dx * drop[f"enc{layer}"] if drop is not None else dx
        else:
            if drop is not None:
                dx = dx * drop["src"]
            _acc_rows(g["src_emb"], batch.src.T, dx)
    return {k: np.ascontiguousarray(v, dtype=dtype) for k, v in g.items()}


# -- incremental decoding -------------------------------------------------

def init_decoder_state(params, enc):
    """Decoder recurrent state (per layer h, c) for every encoder row."""
    hs = [h.copy() for h in enc["h0"]]
    cs = [np.zeros_like(h) for h in hs] if params.config.cell == "lstm" else None
    return {"h": hs, "c": cs}


def decoder_step(params, enc, state, rows, prev_tokens):
    """One decoder step for hypotheses mapped to encoder ``rows``.

    ``state`` holds per-layer arrays aligned with ``rows``. Returns
    ``(log_probs (N, V), new_state)``.
    """
    cfg = params.config
    N = len(rows)
    ones = np.ones((1, N), dtype=np.uint8)
    x = params["tgt_emb"][np.asarray(prev_tokens)][None]          # (1, N, E)
    new_h, new_c = [], [] if state["c"] is not None else None
    for layer in range(cfg.dec_layers):
        pre = f"dec.{layer}."
        zx = x @ params[pre + "Wx"] + params[pre + "b"]
        h0 = state["h"][layer]
        if cfg.cell == "lstm":
            _, cs, hs = kernels.lstm_forward(zx, params[pre + "Wh"], h0, state["c"][layer],
                                             ones, False)
            new_c.append(cs[0])
        else:
            _, _, hs = kernels.gru_forward(zx, params[pre + "Wh"], h0, ones, False)
        new_h.append(hs[0])
        x = hs
    s_top = hs.transpose(1, 0, 2)                                 # (N, 1, H)
    q = s_top @ params["att.Wq"]
    ctx, _, _ = attend(params, q, enc["kp"][rows], enc["K"][rows], enc["smask"][rows])
    _, _, logits = _readout(params, s_top, ctx)
    return log_softmax(logits[:, 0, :]), {"h": new_h, "c": new_c}


def select_state(state, index):
    return {"h": [h[index] for h in state["h"]],
            "c": None if state["c"] is None else [c[index] for c in state["c"]]}
