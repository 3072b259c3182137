"""Acceptance gate: every criterion at its stated tolerance, one printed
pass/fail line each. Heavy end-to-end runs are shared via session fixtures.

Run with `pytest tests/test_acceptance.py -v -s` to watch the lines appear.
"""

import copy
import time
from contextlib import contextmanager

import numpy as np
import pytest

from voxdec import autodiff as ad
from voxdec import metrics as mx
from voxdec.autodiff import Graph, Rng, Tensor, grad_of
from voxdec.config import ExperimentConfig, validate
from voxdec.diffusion import (
    Denoiser,
    DenoiserConfig,
    SamplerConfig,
    ddim_sample,
    denoiser_forward,
    denoiser_forward_np,
    forward_diffuse,
    make_schedule,
    train_denoiser,
)
from voxdec.harness import (
    cmd_ablate,
    cmd_decode,
    cmd_evaluate,
    cmd_gen_data,
    cmd_roi_probe,
    cmd_train,
    load_dataset,
    load_models,
)
from voxdec.ridge import ridge_fit, standardize_apply, standardize_fit
from voxdec.world import decode_image_latent, encode_image_latent

from test_metrics import meteor_oracle

pytestmark = pytest.mark.acceptance


@contextmanager
def criterion(n: int, label: str):
    try:
        yield
    except Exception:
        print(f"FAIL criterion-{n}: {label}")
        raise
    print(f"PASS criterion-{n}: {label}")


# ---- shared end-to-end runs ----


@pytest.fixture(scope="session")
def sigma0_run(tmp_path_factory):
    """Noiseless identifiability run: ridge-only decode at strength 0."""
    cfg = ExperimentConfig()
    cfg.brain.sigma_scale = 0.0
    cfg.ridge.lambda_fixed = 1e-8
    cfg.diffusion.strength = 0.0
    cfg.diffusion.epochs = 1   # the denoiser is never invoked at strength 0
    cfg.data.train_repeats = 1
    validate(cfg)
    out = tmp_path_factory.mktemp("sigma0")
    cmd_gen_data(cfg, out)
    train_manifest = cmd_train(cfg, out)
    cmd_decode(cfg, out)
    eval_manifest = cmd_evaluate(cfg, out)
    return cfg, out, train_manifest, eval_manifest


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """Pinned-seed realistic-noise run: oracle path, full path, ablations, probe."""
    cfg = ExperimentConfig()
    validate(cfg)
    out = tmp_path_factory.mktemp("default")
    cmd_gen_data(cfg, out)
    t0 = time.monotonic()
    cmd_train(cfg, out)

    oracle_cfg = copy.deepcopy(cfg)
    oracle_cfg.diffusion.strength = 0.0
    cmd_decode(oracle_cfg, out, variant="full")
    oracle_summary = cmd_evaluate(oracle_cfg, out, variant="full")["summary"]

    cmd_decode(cfg, out, variant="full")
    full_summary = cmd_evaluate(cfg, out, variant="full")["summary"]
    core_elapsed = time.monotonic() - t0

    ablate_manifest = cmd_ablate(cfg, out)
    probe_manifest = cmd_roi_probe(cfg, out)
    return {
        "cfg": cfg,
        "out": out,
        "oracle": oracle_summary,
        "full": full_summary,
        "ablate": ablate_manifest["summaries"],
        "probe": probe_manifest["rows"],
        "core_elapsed": core_elapsed,
    }


# ---- criterion 1: gradient correctness ----


def test_criterion_1_gradients():
    with criterion(1, "denoiser layers pass finite-difference checks (<1e-4, 20 probes, <30s)"):
        t0 = time.monotonic()
        h = 1e-5
        worst = 0.0

        # per-layer-type checks on random inputs in [-1, 1]
        rng = np.random.default_rng(11)

        def fd_check(build, arrays):
            nonlocal worst
            graph = Graph()
            leaves = {k: graph.param(k, v) for k, v in arrays.items()}
            loss = build(leaves)
            grads = grad_of(graph, loss)
            for name, arr in arrays.items():
                flat = arr.reshape(-1)
                idxs = rng.choice(flat.size, size=min(4, flat.size), replace=False)
                for i in idxs:
                    keep = flat[i]
                    flat[i] = keep + h
                    g2 = Graph()
                    up = build({k: g2.param(k, v) for k, v in arrays.items()}).data.item()
                    flat[i] = keep - h
                    g3 = Graph()
                    down = build({k: g3.param(k, v) for k, v in arrays.items()}).data.item()
                    flat[i] = keep
                    numeric = (up - down) / (2 * h)
                    a = grads[name].reshape(-1)[i]
                    worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-3))

        layer_builds = {
            "matmul": lambda P: ad.mean(ad.matmul(P["a"], P["b"])),
            "softmax": lambda P: ad.mean(ad.mul(ad.softmax(P["a"], -1), P["b"])),
            "attention": lambda P: ad.mean(ad.attention(P["q"], P["k"], P["v"])),
            "layer_norm": lambda P: ad.mean(ad.mul(
                ad.layer_norm(P["a"], P["g"], P["bias"]), P["b"])),
            "gelu": lambda P: ad.mean(ad.gelu(P["a"])),
            "add_scale": lambda P: ad.mean(ad.scale(P["a"] + P["b"], 1.7)),
        }
        for build in layer_builds.values():
            arrays = {
                "a": rng.uniform(-1, 1, (4, 4)), "b": rng.uniform(-1, 1, (4, 4)),
                "q": rng.uniform(-1, 1, (3, 4)), "k": rng.uniform(-1, 1, (5, 4)),
                "v": rng.uniform(-1, 1, (5, 4)),
                "g": rng.uniform(0.5, 1.5, (4,)), "bias": rng.uniform(-1, 1, (4,)),
            }
            fd_check(build, arrays)

        # 20 random directional probes through the full denoiser loss
        cfg = DenoiserConfig(latent_dim=8, token_dim=4, width=16, blocks=2)
        den = Denoiser.create(cfg, Rng(21))
        den.params["out.w"] = Rng(22).normal(den.params["out.w"].shape) * 0.1
        for probe in range(20):
            prng = Rng.child(100, probe)
            z = prng.normal((8,))
            eps = prng.normal((8,))
            ci = prng.normal((5, 16))
            ct = prng.normal((3, 16))
            mix = float(prng.uniform())
            t = 1 + int(prng.integers(0, 100))

            def loss_of(params):
                graph = Graph()
                leaves = graph.param_dict(params)
                out = denoiser_forward(den, Tensor(z), t, ci, ct, mix, leaves)
                return graph, ad.mse(out, eps)

            graph, loss = loss_of(den.params)
            grads = grad_of(graph, loss)
            direction = {k: prng.normal(v.shape) for k, v in den.params.items()}
            up_params = {k: v + h * direction[k] for k, v in den.params.items()}
            down_params = {k: v - h * direction[k] for k, v in den.params.items()}
            numeric = (loss_of(up_params)[1].data.item()
                       - loss_of(down_params)[1].data.item()) / (2 * h)
            analytic = sum(float(np.sum(grads[k] * direction[k])) for k in grads)
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-3))

        elapsed = time.monotonic() - t0
        assert worst < 1e-4, f"max relative gradient error {worst}"
        assert elapsed < 30.0, f"gradient suite took {elapsed:.1f}s"


# ---- criterion 2: ridge oracle equivalence ----


def test_criterion_2_ridge_oracle():
    with criterion(2, "SVD ridge matches normal equations on 50 random problems (<1e-8)"):
        rng = np.random.default_rng(2024)
        for _ in range(50):
            n = int(rng.integers(10, 101))
            p = int(rng.integers(2, 65))
            q = int(rng.integers(1, 17))
            lam = float(10 ** rng.uniform(-3, 3))
            X = rng.normal(size=(n, p))
            Y = rng.normal(size=(n, q))
            model = ridge_fit(X, Y, lam)
            stats = standardize_fit(X)
            Xs = standardize_apply(stats, X)
            W = np.linalg.solve(Xs.T @ Xs + lam * np.eye(p), Xs.T @ (Y - Y.mean(axis=0)))
            rel = np.linalg.norm(model.weights - W) / max(np.linalg.norm(W), 1e-12)
            assert rel < 1e-8, rel

        # shrinkage limit
        X = rng.normal(size=(40, 12))
        Y = rng.normal(size=(40, 4))
        assert (np.linalg.norm(ridge_fit(X, Y, 1e12).weights)
                < 1e-6 * np.linalg.norm(ridge_fit(X, Y, 1e-3).weights))

        # identity designs
        n = 10
        Y = rng.normal(size=(n, 2))
        model = ridge_fit(np.eye(n), Y, 1e-12)
        np.testing.assert_allclose(model.predict(np.eye(n)), Y, atol=1e-6)
        from voxdec.ridge import StandardizeStats
        stats = StandardizeStats(mean=np.zeros(n), std=np.ones(n))
        model = ridge_fit(np.eye(n), Y, 1.0, stats=stats)
        np.testing.assert_allclose(model.weights, (Y - Y.mean(axis=0)) / 2.0, atol=1e-10)


# ---- criterion 3: diffusion identities ----


def test_criterion_3_diffusion_identities():
    with criterion(3, "forward variance, mix endpoints bitwise, per-layer linearity, strength-0, determinism"):
        schedule = make_schedule()
        rng = np.random.default_rng(3)
        n = 100_000
        z0 = rng.normal(size=n)
        eps = rng.normal(size=n)
        for t in range(1, schedule.T + 1):
            zt = forward_diffuse(z0, t, eps, schedule)
            assert abs(zt.var() - 1.0) < 0.02, t

        # a briefly trained denoiser so weights are not all zero
        trng = Rng(5)
        Z = trng.normal((32, 16))
        conds = [(trng.normal((5, 16)), trng.normal((3, 16))) for _ in range(32)]
        den = train_denoiser(Z, conds, schedule, epochs=2, rng=Rng(6), batch_size=8).denoiser

        srng = Rng(7)
        z = srng.normal((16,))
        ci, ct = srng.normal((5, 16)), srng.normal((3, 16))
        other = srng.normal((3, 16))
        assert np.array_equal(denoiser_forward_np(den, z, 9, ci, ct, 1.0),
                              denoiser_forward_np(den, z, 9, ci, other, 1.0))
        assert np.array_equal(denoiser_forward_np(den, z, 9, ci, ct, 0.0),
                              denoiser_forward_np(den, z, 9, srng.normal((5, 16)), ct, 0.0))

        for mix in (0.0, 0.25, 0.5, 0.75, 1.0):
            trace = []
            denoiser_forward_np(den, z, 4, ci, ct, mix, trace=trace)
            for rec in trace:
                resid = rec["mixed"] - (mix * rec["a_img"] + (1 - mix) * rec["a_txt"])
                assert np.max(np.abs(resid)) < 1e-10

        batch = srng.normal((3, 16))
        out = ddim_sample(den, schedule, batch, SamplerConfig(strength=0.0, mix=0.5),
                          ci, ct, Rng(1))
        assert np.array_equal(out, batch)

        cfg = SamplerConfig(steps=25, strength=0.75, mix=0.6)
        a = ddim_sample(den, schedule, batch, cfg, ci, ct, Rng(2))
        b = ddim_sample(den, schedule, batch, cfg, ci, ct, Rng(2))
        assert np.array_equal(a, b)


# ---- criterion 4: generative sanity on a Gaussian mixture ----


def test_criterion_4_gaussian_mixture():
    with criterion(4, "2-component mixture: weights and means within 10%, <5 min"):
        t0 = time.monotonic()
        rng = Rng(101)
        w = np.array([0.35, 0.65])
        mu = np.stack([np.full(8, 1.2), np.full(8, -1.2)])
        n_train = 4096
        comp = (rng.uniform((n_train,)) < w[1]).astype(int)
        Z = mu[comp] + rng.normal((n_train, 8))
        conds = [(None, None)] * n_train
        # steep schedule so the trained terminal marginal is standard normal;
        # single-head slim net: no contexts to read, keeps the run under budget
        sch = make_schedule(T=100, beta_1=1e-3, beta_T=0.2)
        cfg_net = DenoiserConfig(latent_dim=8, token_dim=4, width=32, blocks=2,
                                 heads=1, ff_mult=2)
        result = train_denoiser(Z, conds, sch, epochs=20, rng=Rng(7), batch_size=32,
                                lr=5e-3, lr_final=2.5e-4, null_rate=1.0, cfg=cfg_net)
        samples = ddim_sample(result.denoiser, sch, None,
                              SamplerConfig(steps=50, strength=1.0, mix=0.5),
                              None, None, Rng(55), n_items=10_000)
        d0 = np.linalg.norm(samples - mu[0], axis=1)
        d1 = np.linalg.norm(samples - mu[1], axis=1)
        assign = (d1 < d0).astype(int)
        w_hat = np.array([(assign == 0).mean(), (assign == 1).mean()])
        assert np.all(np.abs(w_hat - w) <= 0.10), w_hat
        for c in (0, 1):
            m_hat = samples[assign == c].mean(axis=0)
            rel = np.linalg.norm(m_hat - mu[c]) / np.linalg.norm(mu[c])
            assert rel <= 0.10, (c, rel)
        elapsed = time.monotonic() - t0
        assert elapsed < 300.0, f"mixture run took {elapsed:.1f}s"


# ---- criterion 5: metric identities and oracles ----


def test_criterion_5_metric_identities():
    with criterion(5, "metric identities exact; METEOR matches exhaustive oracle; 2-way sanity"):
        rng = np.random.default_rng(55)
        img = rng.uniform(size=(32, 32))
        assert mx.pixcorr(img, img) == pytest.approx(1.0, abs=1e-12)
        assert mx.ssim(img, img) == pytest.approx(1.0, abs=1e-12)
        s = ["a", "b", "c", "d"]
        assert mx.rouge1(s, s) == 1.0
        assert mx.rougeL(s, s) == 1.0
        assert mx.meteor(s, s) == pytest.approx(0.9921875, abs=1e-12)

        vocab = list("abcde")
        for _ in range(200):
            ref = [vocab[i] for i in rng.integers(0, 5, rng.integers(1, 7))]
            hyp = [vocab[i] for i in rng.integers(0, 5, rng.integers(1, 7))]
            assert mx.meteor(ref, hyp) == pytest.approx(meteor_oracle(ref, hyp),
                                                        abs=1e-12), (ref, hyp)

        T = rng.normal(size=(50, 8))
        rate, _ = mx.nway_identification(T, T.copy(), rng=Rng(1), trials=100)
        assert rate == 1.0
        P = rng.normal(size=(50, 8))
        rate, _ = mx.nway_identification(T, P, rng=Rng(2), trials=100)
        sigma = np.sqrt(0.25 / 50)
        assert abs(rate - 0.5) <= 3 * sigma + 0.05, rate


# ---- criterion 6: identifiability end-to-end at sigma 0 ----


def test_criterion_6_identifiability(sigma0_run):
    with criterion(6, "sigma=0: R^2 >= 0.999 x4, PixCorr at PCA ceiling, 100% caption match"):
        cfg, out, train_manifest, eval_manifest = sigma0_run
        for key, r2 in train_manifest["heldout_r2"].items():
            assert r2 >= 0.999, (key, r2)

        # PCA round-trip ceiling over the PGM-quantized test set
        ds = load_dataset(out)
        models = load_models(out)
        ceiling_vals = []
        for item, img in zip(ds.test["items"], ds.images("test")):
            rt = decode_image_latent(models.image_codec,
                                     encode_image_latent(models.image_codec, img))
            quant = np.rint(rt * 255) / 255
            ceiling_vals.append(mx.pixcorr(img, quant))
        ceiling = float(np.mean([v for v in ceiling_vals if v is not None]))
        achieved = eval_manifest["summary"]["image"]["PixCorr"]
        assert achieved >= ceiling - 0.01, (achieved, ceiling)
        assert eval_manifest["summary"]["caption_exact_match"] == 1.0


# ---- criterion 7: realistic-noise end-to-end ----


def test_criterion_7_realistic_noise(default_run):
    with criterion(7, "default sigma: oracle IdH>=0.85 IdT>=0.75, full within 0.05, <30 min"):
        oracle = default_run["oracle"]
        full = default_run["full"]
        o_idh = oracle["image"]["Ident-High"]
        o_idt = oracle["text"]["Ident-Text"]
        assert o_idh >= 0.85, o_idh
        assert o_idt >= 0.75, o_idt
        f_idh = full["image"]["Ident-High"]
        f_idt = full["text"]["Ident-Text"]
        assert f_idh >= o_idh - 0.05, (f_idh, o_idh)
        assert f_idt >= o_idt - 0.05, (f_idt, o_idt)
        assert default_run["core_elapsed"] < 1800.0, default_run["core_elapsed"]


# ---- criterion 8: ablation orderings ----


def test_criterion_8_ablation_orderings(default_run):
    with criterion(8, "only_z best on PixCorr/SSIM; full IdH >= every single-condition variant"):
        s = default_run["ablate"]
        pix = {v: s[v]["image"]["PixCorr"] for v in s}
        ssim_ = {v: s[v]["image"]["SSIM"] for v in s}
        assert pix["only_z"] >= max(pix.values()) - 1e-12, pix
        assert ssim_["only_z"] >= max(ssim_.values()) - 1e-12, ssim_
        idh = {v: s[v]["image"]["Ident-High"] for v in s}
        for single in ("only_z", "only_ci", "only_ct"):
            assert idh["full"] >= idh[single], (single, idh)


# ---- criterion 9: ROI probe ----


def test_criterion_9_roi_probe(default_run):
    with criterion(9, "all four ROIs decode their own category at k=3; word caption has token"):
        rows = default_run["probe"]
        at3 = {r["roi"]: r for r in rows if r["gain"] == 3.0}
        assert set(at3) == {"face", "word", "place", "body"}
        for roi, row in at3.items():
            assert row["decoded"] == roi, (roi, row)
        assert at3["word"]["caption_has_category"], at3["word"]
