"""Latent diffusion engine: noise schedule, dual-conditioned cross-attention
denoiser, the noise-prediction training loop, and the deterministic
partial-noising sampler, plus the end-to-end reconstruction and captioning
pipelines that stitch the regressors and codecs together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Graph, Rng, Tensor, adam_step, grad_of
from .metrics import dedup_sentences
from .world import (
    ImageLatentCodec,
    TextLatentCodec,
    TokenSeq,
    decode_image_latent,
    decode_text_latent,
)


class DivergenceError(RuntimeError):
    """Training loss left the finite range."""


# ---- schedule ----


@dataclass(frozen=True)
class Schedule:
    """Linear betas with cumulative retention alphabar, alphabar[0] = 1."""

    T: int
    betas: np.ndarray      # (T,), betas[i] is beta_{i+1}
    alphas: np.ndarray     # (T,)
    alphabar: np.ndarray   # (T+1,)


def make_schedule(T: int = 100, beta_1: float = 1e-4, beta_T: float = 0.02) -> Schedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_1 < beta_T < 1.0:
        raise ValueError("need 0 < beta_1 < beta_T < 1")
    betas = np.linspace(beta_1, beta_T, T)
    alphas = 1.0 - betas
    alphabar = np.concatenate([[1.0], np.cumprod(alphas)])
    if not np.all(np.diff(alphabar) < 0):
        raise ValueError("alphabar must decrease strictly")
    return Schedule(T=T, betas=betas, alphas=alphas, alphabar=alphabar)


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray, schedule: Schedule) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError("latent and noise shapes disagree")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [0, {schedule.T}]")
    ab = schedule.alphabar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


# ---- denoiser ----


@dataclass(frozen=True)
class DenoiserConfig:
    latent_dim: int
    token_dim: int = 8
    width: int = 32
    blocks: int = 2
    heads: int = 4
    ff_mult: int = 4
    ctx_dim: int = 16

    @property
    def n_tokens(self) -> int:
        if self.latent_dim % self.token_dim != 0:
            raise ValueError("latent_dim must split into whole tokens")
        return self.latent_dim // self.token_dim

    @property
    def head_dim(self) -> int:
        if self.width % self.heads != 0:
            raise ValueError("width must split across heads")
        return self.width // self.heads


def init_denoiser_params(cfg: DenoiserConfig, rng: Rng) -> dict[str, np.ndarray]:
    w, td, cd, ff = cfg.width, cfg.token_dim, cfg.ctx_dim, cfg.ff_mult * cfg.width

    def lin(shape, fan_in):
        return rng.normal(shape) / np.sqrt(fan_in)

    params: dict[str, np.ndarray] = {
        "embed.w": lin((td, w), td),
        "embed.b": np.zeros(w),
        "null_ctx": rng.normal((1, cd)) * 0.5,
    }
    for i in range(cfg.blocks):
        p = f"b{i}"
        params[f"{p}.ln1.g"] = np.ones(w)
        params[f"{p}.ln1.b"] = np.zeros(w)
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{p}.attn.{name}"] = lin((w, w), w)
        params[f"{p}.ln2.g"] = np.ones(w)
        params[f"{p}.ln2.b"] = np.zeros(w)
        params[f"{p}.cross.wq"] = lin((w, w), w)
        params[f"{p}.cross.wk"] = lin((cd, w), cd)
        params[f"{p}.cross.wv"] = lin((cd, w), cd)
        params[f"{p}.cross.wo"] = lin((w, w), w)
        params[f"{p}.ln3.g"] = np.ones(w)
        params[f"{p}.ln3.b"] = np.zeros(w)
        params[f"{p}.ff.w1"] = lin((w, ff), w)
        params[f"{p}.ff.b1"] = np.zeros(ff)
        params[f"{p}.ff.w2"] = lin((ff, w), ff)
        params[f"{p}.ff.b2"] = np.zeros(w)
    params["final.ln.g"] = np.ones(w)
    params["final.ln.b"] = np.zeros(w)
    # zero-init output so the untrained net predicts zero noise
    params["out.w"] = np.zeros((w, td))
    params["out.b"] = np.zeros(td)
    return params


@dataclass
class Denoiser:
    config: DenoiserConfig
    params: dict[str, np.ndarray]
    mix_mode: str = "output"   # "output" mixes branch outputs, "scores" joint-softmaxes

    @staticmethod
    def create(cfg: DenoiserConfig, rng: Rng, mix_mode: str = "output") -> "Denoiser":
        return Denoiser(config=cfg, params=init_denoiser_params(cfg, rng), mix_mode=mix_mode)


def _resolve_contexts(ctx_i, ctx_t, mix: float, null_ctx: np.ndarray):
    """Missing contexts fall back to the learned null token and the mix is
    forced to route all weight to the present branch (or to a single shared
    null branch when both are absent)."""
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must be in [0, 1]")
    if ctx_i is None and ctx_t is None:
        return null_ctx, null_ctx, 1.0
    if ctx_i is None:
        return null_ctx, ctx_t, 0.0
    if ctx_t is None:
        return ctx_i, null_ctx, 1.0
    return ctx_i, ctx_t, float(mix)


def _heads_attention_graph(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Multi-head attention from full-width q, k, v via column slices."""
    d = q.data.shape[1] // heads
    outs = [ad.attention(ad.slice_cols(q, h * d, (h + 1) * d),
                         ad.slice_cols(k, h * d, (h + 1) * d),
                         ad.slice_cols(v, h * d, (h + 1) * d))
            for h in range(heads)]
    merged = outs[0]
    for part in outs[1:]:
        merged = ad.concat(merged, part, axis=1)
    return merged


def denoiser_forward(den: Denoiser, z: Tensor, t: int, ctx_i: np.ndarray | None,
                     ctx_t: np.ndarray | None, mix: float, leaves: dict[str, Tensor],
                     trace: list | None = None) -> Tensor:
    """Graph-building forward pass for one latent vector. ``leaves`` holds the
    parameter tensors registered on the caller's Graph."""
    cfg = den.config
    P = leaves
    ci, ct, mix = _resolve_contexts(ctx_i, ctx_t, mix, P["null_ctx"])

    tokens = ad.matmul(ad.reshape(z, (cfg.n_tokens, cfg.token_dim)), P["embed.w"]) + P["embed.b"]
    temb = ad.time_embedding(t, cfg.width)[None, :]
    h = tokens + Tensor(temb)

    for i in range(cfg.blocks):
        p = f"b{i}"
        x = ad.layer_norm(h, P[f"{p}.ln1.g"], P[f"{p}.ln1.b"])
        a = _heads_attention_graph(ad.matmul(x, P[f"{p}.attn.wq"]),
                                   ad.matmul(x, P[f"{p}.attn.wk"]),
                                   ad.matmul(x, P[f"{p}.attn.wv"]), cfg.heads)
        h = h + ad.matmul(a, P[f"{p}.attn.wo"])

        x = ad.layer_norm(h, P[f"{p}.ln2.g"], P[f"{p}.ln2.b"])
        q = ad.matmul(x, P[f"{p}.cross.wq"])
        ci_t = ci if isinstance(ci, Tensor) else Tensor(ci)
        ct_t = ct if isinstance(ct, Tensor) else Tensor(ct)

        if den.mix_mode == "output":
            want_both = trace is not None
            a_img = a_txt = None
            if mix > 0.0 or want_both:
                a_img = _heads_attention_graph(q, ad.matmul(ci_t, P[f"{p}.cross.wk"]),
                                               ad.matmul(ci_t, P[f"{p}.cross.wv"]), cfg.heads)
            if mix < 1.0 or want_both:
                a_txt = _heads_attention_graph(q, ad.matmul(ct_t, P[f"{p}.cross.wk"]),
                                               ad.matmul(ct_t, P[f"{p}.cross.wv"]), cfg.heads)
            # exact endpoint collapse: a single branch is used verbatim
            if mix == 1.0:
                mixed = a_img
            elif mix == 0.0:
                mixed = a_txt
            else:
                mixed = ad.scale(a_img, mix) + ad.scale(a_txt, 1.0 - mix)
            if trace is not None:
                trace.append({"layer": i,
                              "a_img": a_img.data.copy(),
                              "a_txt": a_txt.data.copy(),
                              "mixed": mixed.data.copy()})
        else:
            mixed = _scores_mix_graph(q, ci_t, ct_t, mix, P, p)
        h = h + ad.matmul(mixed, P[f"{p}.cross.wo"])

        x = ad.layer_norm(h, P[f"{p}.ln3.g"], P[f"{p}.ln3.b"])
        hidden = ad.gelu(ad.matmul(x, P[f"{p}.ff.w1"]) + P[f"{p}.ff.b1"])
        h = h + ad.matmul(hidden, P[f"{p}.ff.w2"]) + P[f"{p}.ff.b2"]

    x = ad.layer_norm(h, P["final.ln.g"], P["final.ln.b"])
    out = ad.matmul(x, P["out.w"]) + P["out.b"]
    return ad.reshape(out, (cfg.latent_dim,))


def _scores_mix_graph(q, ci_t, ct_t, mix, P, p):
    """Joint softmax over both key sets with log-mix biases on the logits."""
    d = q.data.shape[1]
    ki = ad.matmul(ci_t, P[f"{p}.cross.wk"])
    kt = ad.matmul(ct_t, P[f"{p}.cross.wk"])
    vi = ad.matmul(ci_t, P[f"{p}.cross.wv"])
    vt = ad.matmul(ct_t, P[f"{p}.cross.wv"])
    if mix == 1.0:
        probs = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(ki)), 1 / np.sqrt(d)), -1)
        return ad.matmul(probs, vi)
    if mix == 0.0:
        probs = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(kt)), 1 / np.sqrt(d)), -1)
        return ad.matmul(probs, vt)
    si = ad.scale(ad.matmul(q, ad.transpose(ki)), 1 / np.sqrt(d)) + Tensor(np.log(mix))
    st = ad.scale(ad.matmul(q, ad.transpose(kt)), 1 / np.sqrt(d)) + Tensor(np.log(1 - mix))
    probs = ad.softmax(ad.concat(si, st, axis=1), -1)
    return ad.matmul(probs, ad.concat(vi, vt, axis=0))


def _np_ctx(ctx, batch_ok=True) -> np.ndarray:
    ctx = np.asarray(ctx, dtype=np.float64)
    if ctx.ndim == 2:
        return ctx[None, :, :]
    return ctx


def denoiser_forward_np(den: Denoiser, z: np.ndarray, t, ctx_i, ctx_t, mix: float,
                        trace: list | None = None) -> np.ndarray:
    """Batched plain-numpy twin of the graph forward (inference path).

    z is (batch, latent); contexts broadcast as (tokens, ctx_dim) or
    (batch, tokens, ctx_dim). Kept in lockstep with ``denoiser_forward``; a
    regression test pins the two paths together.
    """
    cfg = den.config
    P = den.params
    ci, ct, mix = _resolve_contexts(ctx_i, ctx_t, mix, P["null_ctx"])
    ci, ct = _np_ctx(ci), _np_ctx(ct)

    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    B = z.shape[0]
    tokens = z.reshape(B, cfg.n_tokens, cfg.token_dim) @ P["embed.w"] + P["embed.b"]
    if np.ndim(t) == 0:
        temb = ad.time_embedding(int(t), cfg.width)[None, None, :]
    else:
        temb = np.stack([ad.time_embedding(int(ti), cfg.width) for ti in np.asarray(t)])[:, None, :]
    h = tokens + temb

    def ln(x, g, b):
        return ad.layer_norm_np(x, g, b)[0]

    def heads_attention(q, k, v):
        H, d = cfg.heads, cfg.head_dim
        qs = np.swapaxes(q.reshape(*q.shape[:-1], H, d), -3, -2)
        ks = np.swapaxes(k.reshape(*k.shape[:-1], H, d), -3, -2)
        vs = np.swapaxes(v.reshape(*v.shape[:-1], H, d), -3, -2)
        out = ad.attention_np(qs, ks, vs)
        out = np.swapaxes(out, -3, -2)
        return out.reshape(*out.shape[:-2], H * d)

    for i in range(cfg.blocks):
        p = f"b{i}"
        x = ln(h, P[f"{p}.ln1.g"], P[f"{p}.ln1.b"])
        a = heads_attention(x @ P[f"{p}.attn.wq"], x @ P[f"{p}.attn.wk"], x @ P[f"{p}.attn.wv"])
        h = h + a @ P[f"{p}.attn.wo"]

        x = ln(h, P[f"{p}.ln2.g"], P[f"{p}.ln2.b"])
        q = x @ P[f"{p}.cross.wq"]
        if den.mix_mode == "output":
            want_both = trace is not None
            a_img = a_txt = None
            if mix > 0.0 or want_both:
                a_img = heads_attention(q, ci @ P[f"{p}.cross.wk"], ci @ P[f"{p}.cross.wv"])
            if mix < 1.0 or want_both:
                a_txt = heads_attention(q, ct @ P[f"{p}.cross.wk"], ct @ P[f"{p}.cross.wv"])
            if mix == 1.0:
                mixed = a_img
            elif mix == 0.0:
                mixed = a_txt
            else:
                mixed = mix * a_img + (1.0 - mix) * a_txt
            if trace is not None:
                trace.append({"layer": i, "a_img": a_img.copy(),
                              "a_txt": a_txt.copy(), "mixed": mixed.copy()})
        else:
            mixed = _scores_mix_np(q, ci, ct, mix, P, p)
        h = h + mixed @ P[f"{p}.cross.wo"]

        x = ln(h, P[f"{p}.ln3.g"], P[f"{p}.ln3.b"])
        h = h + ad.gelu_np(x @ P[f"{p}.ff.w1"] + P[f"{p}.ff.b1"]) @ P[f"{p}.ff.w2"] + P[f"{p}.ff.b2"]

    x = ln(h, P["final.ln.g"], P["final.ln.b"])
    out = x @ P["out.w"] + P["out.b"]
    return out.reshape(B, cfg.latent_dim)


def _scores_mix_np(q, ci, ct, mix, P, p):
    d = q.shape[-1]
    ki, vi = ci @ P[f"{p}.cross.wk"], ci @ P[f"{p}.cross.wv"]
    kt, vt = ct @ P[f"{p}.cross.wk"], ct @ P[f"{p}.cross.wv"]
    if mix == 1.0:
        return ad.softmax_np(q @ np.swapaxes(ki, -1, -2) / np.sqrt(d), -1) @ vi
    if mix == 0.0:
        return ad.softmax_np(q @ np.swapaxes(kt, -1, -2) / np.sqrt(d), -1) @ vt
    si = q @ np.swapaxes(ki, -1, -2) / np.sqrt(d) + np.log(mix)
    st = q @ np.swapaxes(kt, -1, -2) / np.sqrt(d) + np.log(1 - mix)
    B = max(si.shape[0], st.shape[0])
    si, st = np.broadcast_to(si, (B, *si.shape[1:])), np.broadcast_to(st, (B, *st.shape[1:]))
    probs = ad.softmax_np(np.concatenate([si, st], axis=-1), -1)
    ti = ki.shape[-2]
    vi_b = np.broadcast_to(vi, (B, *vi.shape[-2:]))
    vt_b = np.broadcast_to(vt, (B, *vt.shape[-2:]))
    return probs[..., :ti] @ vi_b + probs[..., ti:] @ vt_b


# ---- training ----


@dataclass
class TrainResult:
    denoiser: Denoiser
    loss_history: list[float] = field(default_factory=list)      # per batch
    epoch_losses: list[float] = field(default_factory=list)


def train_denoiser(latents: np.ndarray, cond_pairs: list, schedule: Schedule,
                   epochs: int, rng: Rng, cfg: DenoiserConfig | None = None,
                   lr: float = 5e-3, batch_size: int = 16, null_rate: float = 0.1,
                   train_mix: float = 0.5, mix_mode: str = "output",
                   lr_final: float | None = None,
                   ema_decay: float | None = 0.999) -> TrainResult:
    """Minimize the noise-prediction loss with Adam over sampled (t, eps).

    A fixed fraction of examples trains with both contexts nulled so the
    latent-only sampling path stays well-defined. The returned parameters are
    an exponential moving average over optimization steps (sampling quality is
    far more sensitive to parameter noise than the loss is); pass
    ``ema_decay=None`` for the raw final iterate.
    """
    Z = np.asarray(latents, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ValueError("latents must be a nonempty (n, d) array")
    if len(cond_pairs) != Z.shape[0]:
        raise ValueError("one condition pair per latent required")
    if cfg is None:
        cfg = DenoiserConfig(latent_dim=Z.shape[1])
    den = Denoiser.create(cfg, rng, mix_mode=mix_mode)
    state = AdamState(lr=lr)
    result = TrainResult(denoiser=den)
    ema = {k: v.copy() for k, v in den.params.items()} if ema_decay else None

    n = Z.shape[0]
    for epoch in range(epochs):
        if lr_final is not None and epochs > 1:
            state.lr = lr * (lr_final / lr) ** (epoch / (epochs - 1))
        order = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            graph = Graph()
            leaves = graph.param_dict(den.params)
            total = None
            try:
                for j in idx:
                    t = int(rng.integers(1, schedule.T + 1))
                    eps = rng.normal((Z.shape[1],))
                    drop = bool(rng.uniform() < null_rate)
                    ci, ct = (None, None) if drop else cond_pairs[j]
                    z_t = forward_diffuse(Z[j], t, eps, schedule)
                    eps_hat = denoiser_forward(den, Tensor(z_t), t, ci, ct, train_mix, leaves)
                    item_loss = ad.mse(eps_hat, eps)
                    total = item_loss if total is None else total + item_loss
                total = ad.scale(total, 1.0 / len(idx))
                grads = grad_of(graph, total)
                den.params, state = adam_step(den.params, grads, state)
                if ema is not None:
                    # warmup keeps the average from clinging to the random init
                    d = min(ema_decay, (1.0 + state.t) / (10.0 + state.t))
                    for k, v in den.params.items():
                        ema[k] = d * ema[k] + (1.0 - d) * v
            except ad.NonFiniteError as err:
                raise DivergenceError(
                    f"training diverged at epoch {epoch}, batch {lo // batch_size}: {err}"
                ) from err
            loss_val = total.data.item()
            result.loss_history.append(loss_val)
            epoch_losses.append(loss_val)
        result.epoch_losses.append(float(np.mean(epoch_losses)))
    if ema is not None:
        den.params = ema
    return result


# ---- deterministic sampler ----


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    strength: float = 0.75
    mix: float = 0.6
    seed: int = 0
    pipeline: str = "image"

    def __post_init__(self):
        if not 0.0 <= self.mix <= 1.0:
            raise ValueError("mix must be in [0, 1]")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must be in [0, 1]")
        if self.strength > 0 and self.steps < 1:
            raise ValueError("steps must be >= 1 when strength > 0")
        if self.pipeline not in ("image", "text"):
            raise ValueError("pipeline must be 'image' or 'text'")


def sampler_timesteps(schedule: Schedule, steps: int) -> np.ndarray:
    """Evenly spaced timestep ladder 0..T used at inference."""
    taus = np.unique(np.round(np.linspace(0, schedule.T, steps + 1)).astype(int))
    return taus


def ddim_sample(den: Denoiser, schedule: Schedule, z_in: np.ndarray | None,
                config: SamplerConfig, ctx_i, ctx_t, rng: Rng,
                n_items: int | None = None) -> np.ndarray:
    """Noise the input latent part-way up the ladder, then run the
    deterministic reverse update back to t=0. strength 0 is the identity;
    strength 1 with no input starts from a standard normal draw."""
    taus = sampler_timesteps(schedule, config.steps)
    start = int(round(config.strength * (len(taus) - 1)))
    if z_in is None:
        if config.strength != 1.0:
            raise ValueError("a latent input is required when strength < 1")
        if n_items is None:
            raise ValueError("n_items required when sampling from pure noise")
        z = rng.normal((n_items, den.config.latent_dim))
    else:
        z_in = np.atleast_2d(np.asarray(z_in, dtype=np.float64))
        if start == 0:
            return z_in.copy()
        tau0 = int(taus[start])
        eps = rng.normal(z_in.shape)
        z = forward_diffuse(z_in, tau0, eps, schedule)

    ab = schedule.alphabar
    for idx in range(start, 0, -1):
        tau, tau_prev = int(taus[idx]), int(taus[idx - 1])
        eps_hat = denoiser_forward_np(den, z, tau, ctx_i, ctx_t, config.mix)
        z0_hat = (z - np.sqrt(1.0 - ab[tau]) * eps_hat) / np.sqrt(ab[tau])
        z = np.sqrt(ab[tau_prev]) * z0_hat + np.sqrt(1.0 - ab[tau_prev]) * eps_hat
    return z


# ---- latent standardization (diffusion operates in unit-scale space) ----


@dataclass(frozen=True)
class LatentStats:
    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(Z: np.ndarray) -> "LatentStats":
        Z = np.asarray(Z, dtype=np.float64)
        std = Z.std(axis=0)
        return LatentStats(mean=Z.mean(axis=0), std=np.where(std < 1e-6, 1.0, std))

    def forward(self, Z: np.ndarray) -> np.ndarray:
        return (np.asarray(Z, dtype=np.float64) - self.mean) / self.std

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean


# ---- end-to-end pipelines ----


def reconstruct_image(regressors: dict, voxels: np.ndarray, image_codec: ImageLatentCodec,
                      den: Denoiser, schedule: Schedule, stats: LatentStats,
                      config: SamplerConfig, rng: Rng,
                      use_z: bool = True, use_ci: bool = True, use_ct: bool = True):
    """Predict latent and conditions from voxels, sample, decode to images.

    Returns (images (n, 32, 32), info dict with the predicted quantities).
    """
    V = np.atleast_2d(np.asarray(voxels, dtype=np.float64))
    n = V.shape[0]
    z_pred = regressors["z_i"].predict(V)
    ci = regressors["c_i"].predict(V).reshape(n, -1, den.config.ctx_dim) if use_ci else None
    ct = regressors["c_t"].predict(V).reshape(n, -1, den.config.ctx_dim) if use_ct else None
    if use_z:
        z0 = ddim_sample(den, schedule, stats.forward(z_pred), config, ci, ct, rng)
    else:
        cfg = SamplerConfig(steps=config.steps, strength=1.0, mix=config.mix,
                            seed=config.seed, pipeline=config.pipeline)
        z0 = ddim_sample(den, schedule, None, cfg, ci, ct, rng, n_items=n)
    z_final = stats.inverse(z0)
    images = np.stack([decode_image_latent(image_codec, z) for z in z_final])
    return images, {"z_pred": z_pred, "z_final": z_final, "c_i": ci, "c_t": ct}


def generate_caption(regressors: dict, voxels: np.ndarray, text_codec: TextLatentCodec,
                     den: Denoiser, schedule: Schedule, stats: LatentStats,
                     config: SamplerConfig, rng: Rng,
                     use_z: bool = True, use_ci: bool = True, use_ct: bool = True):
    """Text twin of ``reconstruct_image``; captions pass through sentence dedup.

    Returns (list of TokenSeq, list of caption texts, info dict).
    """
    V = np.atleast_2d(np.asarray(voxels, dtype=np.float64))
    n = V.shape[0]
    z_pred = regressors["z_t"].predict(V)
    ci = regressors["c_i"].predict(V).reshape(n, -1, den.config.ctx_dim) if use_ci else None
    ct = regressors["c_t"].predict(V).reshape(n, -1, den.config.ctx_dim) if use_ct else None
    if use_z:
        z0 = ddim_sample(den, schedule, stats.forward(z_pred), config, ci, ct, rng)
    else:
        cfg = SamplerConfig(steps=config.steps, strength=1.0, mix=config.mix,
                            seed=config.seed, pipeline=config.pipeline)
        z0 = ddim_sample(den, schedule, None, cfg, ci, ct, rng, n_items=n)
    z_final = stats.inverse(z0)
    seqs: list[TokenSeq] = [decode_text_latent(text_codec, z) for z in z_final]
    texts = [dedup_sentences(seq.text) for seq in seqs]
    return seqs, texts, {"z_pred": z_pred, "z_final": z_final, "c_i": ci, "c_t": ct}
