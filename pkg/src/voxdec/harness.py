"""Experiment orchestration: dataset generation, pipeline training, decoding,
evaluation, the seven-variant ablation matrix, and the ROI probe, each
emitting a manifest of every artifact it wrote.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import Rng
from .brain import (
    BrainModel,
    average_repeats,
    build_brain,
    calibrate_sigma,
    roi_activation_pattern,
    simulate_voxels,
)
from .config import VARIANTS, ExperimentConfig, config_hash, to_dict
from .diffusion import (
    Denoiser,
    DenoiserConfig,
    LatentStats,
    SamplerConfig,
    Schedule,
    generate_caption,
    make_schedule,
    reconstruct_image,
    train_denoiser,
)
from .io_utils import read_json, read_pgm, write_csv, write_json, write_pgm
from .metrics import (
    embedding_distance,
    meteor,
    nway_identification,
    pixcorr,
    rouge1,
    rougeL,
    ssim,
)
from .ridge import RidgeModel, StandardizeStats, cv_select_lambda, r2_score, ridge_fit
from .world import (
    CATEGORIES,
    Scene,
    SceneObject,
    TokenSeq,
    build_text_codec,
    canonical_caption,
    embed_image_cond,
    embed_text_cond,
    encode_image_latent,
    encode_text_latent,
    enumerate_scenes,
    fit_image_codec,
    ImageLatentCodec,
    TextLatentCodec,
    nearest_scene,
    patch_means,
    recover_semantics,
    render,
    scene_multihot,
    semantic_global_token,
    stimulus_features,
)


class ArtifactError(RuntimeError):
    """A required input artifact is missing or inconsistent (exit code 3)."""


# variant -> (use latent input, use image condition, use text condition)
VARIANT_FLAGS = {
    "full": (True, True, True),
    "only_z": (True, False, False),
    "only_ci": (False, True, False),
    "only_ct": (False, False, True),
    "wo_z": (False, True, True),
    "wo_ci": (True, False, True),
    "wo_ct": (True, True, False),
}

IMAGE_METRIC_COLUMNS = ["PixCorr", "SSIM", "Ident-Low", "Ident-High", "Dist-High"]
TEXT_METRIC_COLUMNS = ["Meteor", "Rouge-1", "Rouge-L", "Ident-Text"]


def _manifest(cfg: ExperimentConfig, command: str, artifacts: dict, out: Path) -> dict:
    # artifact paths are stored relative to the output root so reruns into
    # different directories stay byte-identical
    rel = {k: str(Path(v).relative_to(out)) for k, v in sorted(artifacts.items())}
    return {
        "command": command,
        "config": to_dict(cfg),
        "config_hash": config_hash(cfg),
        "versions": {
            "voxdec": __version__,
            "numpy": np.__version__,
            "python": "%d.%d" % sys.version_info[:2],
        },
        "artifacts": rel,
    }


def _write_manifest(cfg, command, artifacts, out: Path) -> dict:
    manifest = _manifest(cfg, command, artifacts, out)
    path = out / f"manifest_{command}.json"
    write_json(path, manifest)
    return manifest


def resolve_out(cfg: ExperimentConfig, override: str | None = None) -> Path:
    """Output root: CLI flag beats the VOXDEC_OUT env var beats the config."""
    import os

    if override:
        return Path(override)
    env = os.environ.get("VOXDEC_OUT")
    if env:
        return Path(env)
    return Path(cfg.output_dir)


# ---- scene (de)serialization ----


def scene_to_dict(scene: Scene) -> dict:
    return {
        "objects": [
            {"category": o.category, "intensity": o.intensity,
             "quadrant": o.quadrant, "size": o.size}
            for o in scene.objects
        ],
        "seed": scene.seed,
        "scene_id": scene.scene_id,
    }


def scene_from_dict(d: dict) -> Scene:
    objs = tuple(SceneObject(o["category"], o["intensity"], o["quadrant"], o["size"])
                 for o in d["objects"])
    return Scene(objects=objs, seed=d.get("seed", 0))


def split_scene_space(cfg: ExperimentConfig) -> tuple[list[Scene], list[Scene]]:
    """Disjoint train/test scene pools from the finite scene space."""
    scenes = enumerate_scenes()
    order = Rng.child(cfg.world.seed, 0).permutation(len(scenes))
    n_test = max(cfg.eval.n_way, int(round(cfg.world.holdout_fraction * len(scenes))))
    test_pool = [scenes[i] for i in order[:n_test]]
    train_pool = [scenes[i] for i in order[n_test:]]
    return train_pool, test_pool


# ---- gen-data ----


def cmd_gen_data(cfg: ExperimentConfig, out: Path) -> dict:
    out = Path(out)
    data_dir = out / "dataset"
    (data_dir / "images_train").mkdir(parents=True, exist_ok=True)
    (data_dir / "images_test").mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}

    train_pool, test_pool = split_scene_space(cfg)

    # calibrate voxel noise against the train-pool feature spread
    pool_feats = np.stack([stimulus_features(s, render(s)) for s in train_pool])
    base = build_brain(Rng(cfg.brain.seed), nonlinear=cfg.brain.nonlinear)
    sigma = calibrate_sigma(base.weights, pool_feats, target_r2=cfg.brain.target_r2,
                            repeats=cfg.data.max_test_repeats)
    sigma = sigma * cfg.brain.sigma_scale
    brain = BrainModel(weights=base.weights, roi=base.roi, sigma=sigma,
                       seed=cfg.brain.seed, nonlinear=cfg.brain.nonlinear)

    brain_path = data_dir / "brain.json"
    write_json(brain_path, {
        "seed": cfg.brain.seed,
        "sigma_scale": cfg.brain.sigma_scale,
        "target_r2": cfg.brain.target_r2,
        "nonlinear": cfg.brain.nonlinear,
        "weights": brain.weights.tolist(),
        "roi": list(brain.roi),
        "sigma": brain.sigma.tolist(),
    })
    artifacts["brain"] = brain_path

    def build_split(name: str, pool: list[Scene], n_items: int, split_key: int):
        sampler = Rng.child(cfg.world.seed, split_key)
        items = []
        repeat_counts: dict[int, int] = {}
        for idx in range(n_items):
            scene = pool[int(sampler.integers(0, len(pool)))]
            img = render(scene)
            cap = canonical_caption(scene)
            img_name = f"img_{name}_{idx:05d}.pgm"
            write_pgm(data_dir / f"images_{name}" / img_name, img)
            item_rng = Rng.child(cfg.data.noise_seed, split_key, idx)
            if name == "train":
                repeats = cfg.data.train_repeats
            else:
                u = float(item_rng.uniform())
                cum = np.cumsum(cfg.data.test_repeat_probs)
                repeats = 1 + int(np.searchsorted(cum, u, side="right"))
                repeats = min(repeats, cfg.data.max_test_repeats)
            trials = simulate_voxels(brain, scene, img, item_rng, repeats=repeats)
            repeat_counts[repeats] = repeat_counts.get(repeats, 0) + 1
            item = {
                "index": idx,
                "scene": scene_to_dict(scene),
                "caption_text": cap.text,
                "caption_tokens": list(cap.tokens),
                "image": img_name,
                "repeats": repeats,
                "trials": [t.values.tolist() for t in trials],
                "averaged": average_repeats(trials).values.tolist(),
            }
            items.append(item)
        payload = {
            "split": name,
            "n_items": n_items,
            "scene_pool_size": len(pool),
            "sigma_scale": cfg.brain.sigma_scale,
            "target_r2": cfg.brain.target_r2,
            "repeat_distribution": {str(k): v for k, v in sorted(repeat_counts.items())},
            "items": items,
        }
        path = data_dir / f"{name}.json"
        write_json(path, payload)
        artifacts[name] = path
        for item in items:
            artifacts[f"image_{name}_{item['index']:05d}"] = (
                data_dir / f"images_{name}" / item["image"])

    build_split("train", train_pool, cfg.data.train_items, 1)
    build_split("test", test_pool, cfg.data.test_items, 2)
    return _write_manifest(cfg, "gen-data", artifacts, out)


# ---- artifact loading ----


def _require(path: Path) -> Path:
    if not Path(path).exists():
        raise ArtifactError(f"missing artifact: {path}")
    return Path(path)


@dataclass
class Dataset:
    train: dict
    test: dict
    brain: BrainModel
    data_dir: Path

    def images(self, split: str) -> list[np.ndarray]:
        payload = self.train if split == "train" else self.test
        return [read_pgm(self.data_dir / f"images_{split}" / item["image"])
                for item in payload["items"]]

    def scenes(self, split: str) -> list[Scene]:
        payload = self.train if split == "train" else self.test
        return [scene_from_dict(item["scene"]) for item in payload["items"]]

    def voxel_rows(self, split: str) -> np.ndarray:
        """Training uses per-trial rows; test uses the repeat-averaged pattern."""
        if split == "train":
            rows = []
            for item in self.train["items"]:
                rows.extend(item["trials"])
            return np.array(rows)
        return np.array([item["averaged"] for item in self.test["items"]])


_DATASET_CACHE: dict = {}


def load_dataset(out: Path) -> Dataset:
    data_dir = Path(out) / "dataset"
    key = str(data_dir)
    stamp = tuple(_require(data_dir / f"{s}.json").stat().st_mtime_ns
                  for s in ("train", "test"))
    cached = _DATASET_CACHE.get(key)
    if cached is not None and cached[0] == stamp:
        return cached[1]
    train = read_json(data_dir / "train.json")
    test = read_json(data_dir / "test.json")
    b = read_json(_require(data_dir / "brain.json"))
    brain = BrainModel(weights=np.array(b["weights"]), roi=tuple(b["roi"]),
                       sigma=np.array(b["sigma"]), seed=b["seed"],
                       nonlinear=b.get("nonlinear", False))
    ds = Dataset(train=train, test=test, brain=brain, data_dir=data_dir)
    _DATASET_CACHE.clear()
    _DATASET_CACHE[key] = (stamp, ds)
    return ds


# ---- train ----


def _ridge_to_dict(model: RidgeModel, lam_grid_mse) -> dict:
    return {
        "weights": model.weights.tolist(),
        "intercept": model.intercept.tolist(),
        "lambda": model.lam,
        "x_mean": model.stats.mean.tolist(),
        "x_std": model.stats.std.tolist(),
        "cv_mse": None if lam_grid_mse is None else list(lam_grid_mse),
    }


def _ridge_from_dict(d: dict) -> RidgeModel:
    return RidgeModel(weights=np.array(d["weights"]), intercept=np.array(d["intercept"]),
                      lam=d["lambda"],
                      stats=StandardizeStats(mean=np.array(d["x_mean"]),
                                             std=np.array(d["x_std"])))


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    out = Path(out)
    ds = load_dataset(out)
    models_dir = out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}

    train_scenes = ds.scenes("train")
    train_images = ds.images("train")
    X = ds.voxel_rows("train")
    reps = cfg.data.train_repeats

    def per_trial(values: np.ndarray) -> np.ndarray:
        # one target row per stored voxel trial
        return np.repeat(values, reps, axis=0) if reps > 1 else values

    image_codec = fit_image_codec(train_images)
    text_codec = build_text_codec()

    ZI = per_trial(np.stack([encode_image_latent(image_codec, im) for im in train_images]))
    ZT = per_trial(np.stack([
        encode_text_latent(text_codec, TokenSeq(tuple(item["caption_tokens"])))
        for item in ds.train["items"]]))
    CI = per_trial(np.stack([
        embed_image_cond(im, scene_multihot(s), len(s.objects)).reshape(-1)
        for s, im in zip(train_scenes, train_images)]))
    CT = per_trial(np.stack([
        embed_text_cond(TokenSeq(tuple(item["caption_tokens"]))).reshape(-1)
        for item in ds.train["items"]]))

    regressors = {}
    lambdas = {}
    for key, Y in (("z_i", ZI), ("z_t", ZT), ("c_i", CI), ("c_t", CT)):
        if cfg.ridge.lambda_fixed is not None:
            lam, mse = float(cfg.ridge.lambda_fixed), None
        else:
            lam, mse = cv_select_lambda(X, Y, grid=cfg.ridge.grid, k=cfg.ridge.folds,
                                        seed=cfg.ridge.seed)
        model = ridge_fit(X, Y, lam)
        regressors[key] = model
        lambdas[key] = lam
        path = models_dir / f"ridge_{key}.json"
        write_json(path, _ridge_to_dict(model, mse))
        artifacts[f"ridge_{key}"] = path

    codec_path = models_dir / "image_codec.json"
    write_json(codec_path, {
        "mean": image_codec.mean.tolist(),
        "components": image_codec.components.tolist(),
        "explained_variance": image_codec.explained_variance.tolist(),
    })
    artifacts["image_codec"] = codec_path

    text_path = models_dir / "text_codec.json"
    write_json(text_path, {
        "embed": text_codec.embed.tolist(),
        "pos_weights": text_codec.pos_weights.tolist(),
        "corpus": [{"tokens": list(s.tokens), "text": s.text} for s in text_codec.corpus],
        "encodings": text_codec.encodings.tolist(),
    })
    artifacts["text_codec"] = text_path

    schedule = make_schedule(cfg.diffusion.T, cfg.diffusion.beta_1, cfg.diffusion.beta_T)
    sched_path = models_dir / "schedule.json"
    write_json(sched_path, {"T": schedule.T, "beta_1": cfg.diffusion.beta_1,
                            "beta_T": cfg.diffusion.beta_T,
                            "betas": schedule.betas.tolist(),
                            "alphabar": schedule.alphabar.tolist()})
    artifacts["schedule"] = sched_path

    # denoisers train in standardized latent space with the true conditions
    zi_rows = np.stack([encode_image_latent(image_codec, im) for im in train_images])
    zt_rows = np.stack([
        encode_text_latent(text_codec, TokenSeq(tuple(item["caption_tokens"])))
        for item in ds.train["items"]])
    stats_image = LatentStats.fit(zi_rows)
    stats_text = LatentStats.fit(zt_rows)
    conds = [
        (embed_image_cond(im, scene_multihot(s), len(s.objects)),
         embed_text_cond(TokenSeq(tuple(item["caption_tokens"]))))
        for s, im, item in zip(train_scenes, train_images, ds.train["items"])
    ]

    log_rows = []
    denoisers = {}
    for name, Z, stats, key, pipe_mix in (
            ("image", zi_rows, stats_image, 0, cfg.diffusion.mix_image),
            ("text", zt_rows, stats_text, 1, cfg.diffusion.mix_text)):
        train_mix = cfg.diffusion.train_mix if cfg.diffusion.train_mix is not None else pipe_mix
        result = train_denoiser(
            stats.forward(Z), conds, schedule, epochs=cfg.diffusion.epochs,
            rng=Rng.child(cfg.diffusion.seed, key),
            lr=cfg.diffusion.lr, batch_size=cfg.diffusion.batch_size,
            null_rate=cfg.diffusion.null_rate, train_mix=train_mix,
            mix_mode=cfg.diffusion.mix_mode, lr_final=cfg.diffusion.lr / 10.0)
        denoisers[name] = result.denoiser
        for epoch, loss in enumerate(result.epoch_losses):
            log_rows.append([name, epoch, loss])
        path = models_dir / f"denoiser_{name}.json"
        write_json(path, {
            "latent_dim": result.denoiser.config.latent_dim,
            "token_dim": result.denoiser.config.token_dim,
            "width": result.denoiser.config.width,
            "blocks": result.denoiser.config.blocks,
            "heads": result.denoiser.config.heads,
            "ff_mult": result.denoiser.config.ff_mult,
            "ctx_dim": result.denoiser.config.ctx_dim,
            "mix_mode": result.denoiser.mix_mode,
            "params": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                       for k, v in result.denoiser.params.items()},
            "loss_initial": result.loss_history[0],
            "loss_final": result.epoch_losses[-1],
        })
        artifacts[f"denoiser_{name}"] = path

    stats_path = models_dir / "latent_stats.json"
    write_json(stats_path, {
        "image": {"mean": stats_image.mean.tolist(), "std": stats_image.std.tolist()},
        "text": {"mean": stats_text.mean.tolist(), "std": stats_text.std.tolist()},
    })
    artifacts["latent_stats"] = stats_path

    log_path = models_dir / "train_log.csv"
    write_csv(log_path, ["pipeline", "epoch", "loss"], log_rows)
    artifacts["train_log"] = log_path

    manifest = _manifest(cfg, "train", artifacts, out)
    manifest["lambda_selected"] = lambdas
    manifest["heldout_r2"] = _heldout_r2(cfg, ds, regressors, image_codec, text_codec)
    path = out / "manifest_train.json"
    write_json(path, manifest)
    return manifest


def _heldout_r2(cfg, ds: Dataset, regressors, image_codec, text_codec) -> dict:
    test_scenes = ds.scenes("test")
    test_images = ds.images("test")
    V = ds.voxel_rows("test")
    targets = {
        "z_i": np.stack([encode_image_latent(image_codec, im) for im in test_images]),
        "z_t": np.stack([
            encode_text_latent(text_codec, TokenSeq(tuple(item["caption_tokens"])))
            for item in ds.test["items"]]),
        "c_i": np.stack([
            embed_image_cond(im, scene_multihot(s), len(s.objects)).reshape(-1)
            for s, im in zip(test_scenes, test_images)]),
        "c_t": np.stack([
            embed_text_cond(TokenSeq(tuple(item["caption_tokens"]))).reshape(-1)
            for item in ds.test["items"]]),
    }
    return {k: r2_score(targets[k], regressors[k].predict(V)) for k in targets}


@dataclass
class TrainedModels:
    regressors: dict
    image_codec: ImageLatentCodec
    text_codec: TextLatentCodec
    denoisers: dict
    schedule: Schedule
    stats: dict  # pipeline -> LatentStats


def load_models(out: Path) -> TrainedModels:
    models_dir = Path(out) / "models"
    regressors = {k: _ridge_from_dict(read_json(_require(models_dir / f"ridge_{k}.json")))
                  for k in ("z_i", "z_t", "c_i", "c_t")}
    c = read_json(_require(models_dir / "image_codec.json"))
    image_codec = ImageLatentCodec(mean=np.array(c["mean"]),
                                   components=np.array(c["components"]),
                                   explained_variance=np.array(c["explained_variance"]))
    t = read_json(_require(models_dir / "text_codec.json"))
    text_codec = TextLatentCodec(
        embed=np.array(t["embed"]), pos_weights=np.array(t["pos_weights"]),
        corpus=tuple(TokenSeq(tuple(e["tokens"])) for e in t["corpus"]),
        encodings=np.array(t["encodings"]))
    denoisers = {}
    for name in ("image", "text"):
        d = read_json(_require(models_dir / f"denoiser_{name}.json"))
        cfg = DenoiserConfig(latent_dim=d["latent_dim"], token_dim=d["token_dim"],
                             width=d["width"], blocks=d["blocks"], heads=d["heads"],
                             ff_mult=d["ff_mult"], ctx_dim=d["ctx_dim"])
        params = {k: np.array(v["data"]).reshape(v["shape"])
                  for k, v in d["params"].items()}
        denoisers[name] = Denoiser(config=cfg, params=params, mix_mode=d["mix_mode"])
    s = read_json(_require(models_dir / "schedule.json"))
    schedule = Schedule(T=s["T"], betas=np.array(s["betas"]),
                        alphas=1.0 - np.array(s["betas"]),
                        alphabar=np.array(s["alphabar"]))
    ls = read_json(_require(models_dir / "latent_stats.json"))
    stats = {k: LatentStats(mean=np.array(v["mean"]), std=np.array(v["std"]))
             for k, v in ls.items()}
    return TrainedModels(regressors=regressors, image_codec=image_codec,
                         text_codec=text_codec, denoisers=denoisers,
                         schedule=schedule, stats=stats)


# ---- decode ----


def decode_patterns(cfg: ExperimentConfig, models: TrainedModels, voxels: np.ndarray,
                    variant: str, seed_key: int = 0):
    """Run both pipelines on a batch of voxel patterns under a variant policy."""
    if variant not in VARIANT_FLAGS:
        raise ArtifactError(f"unknown variant {variant!r}")
    use_z, use_ci, use_ct = VARIANT_FLAGS[variant]
    img_cfg = SamplerConfig(steps=cfg.diffusion.steps, strength=cfg.diffusion.strength,
                            mix=cfg.diffusion.mix_image, seed=cfg.diffusion.seed,
                            pipeline="image")
    txt_cfg = SamplerConfig(steps=cfg.diffusion.steps, strength=cfg.diffusion.strength,
                            mix=cfg.diffusion.mix_text, seed=cfg.diffusion.seed,
                            pipeline="text")
    vi = VARIANTS.index(variant)
    images, img_info = reconstruct_image(
        models.regressors, voxels, models.image_codec, models.denoisers["image"],
        models.schedule, models.stats["image"], img_cfg,
        Rng.child(cfg.diffusion.seed, 2, vi, seed_key),
        use_z=use_z, use_ci=use_ci, use_ct=use_ct)
    seqs, texts, txt_info = generate_caption(
        models.regressors, voxels, models.text_codec, models.denoisers["text"],
        models.schedule, models.stats["text"], txt_cfg,
        Rng.child(cfg.diffusion.seed, 3, vi, seed_key),
        use_z=use_z, use_ci=use_ci, use_ct=use_ct)
    return images, seqs, texts, img_info, txt_info


def cmd_decode(cfg: ExperimentConfig, out: Path, variant: str | None = None) -> dict:
    out = Path(out)
    variant = variant or cfg.variant
    ds = load_dataset(out)
    models = load_models(out)
    pred_dir = out / "predictions" / variant
    pred_dir.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}

    V = ds.voxel_rows("test")
    images, seqs, texts, img_info, txt_info = decode_patterns(cfg, models, V, variant)

    items = []
    for idx in range(V.shape[0]):
        img_name = f"recon_{idx:05d}.pgm"
        write_pgm(pred_dir / img_name, images[idx])
        artifacts[f"recon_{idx:05d}"] = pred_dir / img_name
        snapped = nearest_scene(images[idx])
        items.append({
            "index": idx,
            "scene_id": ds.test["items"][idx]["scene"]["scene_id"],
            "image": img_name,
            "caption_text": texts[idx],
            "caption_tokens": list(seqs[idx].tokens),
            "pred_semantic": semantic_global_token(snapped).tolist(),
            "snapped_scene_id": snapped.scene_id,
            "pred_z_image": img_info["z_pred"][idx].tolist(),
            "pred_z_text": txt_info["z_pred"][idx].tolist(),
        })
    pred_path = pred_dir / "predictions.json"
    write_json(pred_path, {"variant": variant, "n_items": len(items), "items": items})
    artifacts["predictions"] = pred_path
    return _write_manifest(cfg, f"decode-{variant}", artifacts, out)


# ---- evaluate ----


def _tokenize_text(text: str) -> list[str]:
    return text.replace(".", " ").lower().split()


def cmd_evaluate(cfg: ExperimentConfig, out: Path, variant: str | None = None) -> dict:
    out = Path(out)
    variant = variant or cfg.variant
    ds = load_dataset(out)
    pred_dir = out / "predictions" / variant
    preds = read_json(_require(pred_dir / "predictions.json"))
    if preds["n_items"] != len(ds.test["items"]):
        raise ArtifactError(
            f"prediction count {preds['n_items']} != ground-truth count {len(ds.test['items'])}")

    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}

    gt_images = ds.images("test")
    gt_scenes = ds.scenes("test")
    recon_images = [read_pgm(_require(pred_dir / item["image"])) for item in preds["items"]]

    true_low = np.stack([patch_means(im) for im in gt_images])
    pred_low = np.stack([patch_means(im) for im in recon_images])
    true_high = np.stack([semantic_global_token(s) for s in gt_scenes])
    pred_high = np.stack([np.array(item["pred_semantic"]) for item in preds["items"]])

    _, ident_low = nway_identification(true_low, pred_low, n_way=cfg.eval.n_way,
                                       rng=Rng.child(cfg.eval.seed, 0),
                                       trials=cfg.eval.trials,
                                       similarity=cfg.eval.similarity)
    _, ident_high = nway_identification(true_high, pred_high, n_way=cfg.eval.n_way,
                                        rng=Rng.child(cfg.eval.seed, 1),
                                        trials=cfg.eval.trials,
                                        similarity=cfg.eval.similarity)

    image_rows = []
    for i, item in enumerate(preds["items"]):
        pc = pixcorr(gt_images[i], recon_images[i])
        sv = ssim(gt_images[i], recon_images[i])
        dist = embedding_distance(true_high[i][None, :], pred_high[i][None, :])
        image_rows.append([item["index"], pc, sv, float(ident_low[i]),
                           float(ident_high[i]), dist])

    def summary_row(rows, label="mean"):
        cols = []
        for j in range(1, len(rows[0])):
            vals = [r[j] for r in rows if r[j] is not None]
            cols.append(float(np.mean(vals)) if vals else None)
        return [label] + cols

    image_summary = summary_row(image_rows)
    img_csv = reports / f"image_metrics_{variant}.csv"
    write_csv(img_csv, ["item"] + IMAGE_METRIC_COLUMNS, image_rows + [image_summary])
    artifacts["image_metrics"] = img_csv

    # text metrics over rendered caption words; identification happens in the
    # frozen sentence-embedding space of the text codec
    codec = _TEXT_CODEC_CACHE.setdefault("codec", build_text_codec())
    true_text_embed = np.stack([
        encode_text_latent(codec, TokenSeq(tuple(item["caption_tokens"])))
        for item in ds.test["items"]])
    pred_text_embed = np.stack([
        encode_text_latent(codec, TokenSeq(tuple(p["caption_tokens"])))
        for p in preds["items"]])
    _, ident_text = nway_identification(true_text_embed, pred_text_embed,
                                        n_way=cfg.eval.n_way,
                                        rng=Rng.child(cfg.eval.seed, 2),
                                        trials=cfg.eval.trials,
                                        similarity=cfg.eval.similarity)

    text_rows = []
    exact = 0
    for i, (item, p) in enumerate(zip(ds.test["items"], preds["items"])):
        ref = _tokenize_text(item["caption_text"])
        hyp = _tokenize_text(p["caption_text"])
        text_rows.append([p["index"], meteor(ref, hyp), rouge1(ref, hyp),
                          rougeL(ref, hyp), float(ident_text[i])])
        exact += int(tuple(p["caption_tokens"]) == tuple(item["caption_tokens"]))
    text_summary = summary_row(text_rows)
    txt_csv = reports / f"text_metrics_{variant}.csv"
    write_csv(txt_csv, ["item"] + TEXT_METRIC_COLUMNS, text_rows + [text_summary])
    artifacts["text_metrics"] = txt_csv

    summary = {
        "variant": variant,
        "image": dict(zip(IMAGE_METRIC_COLUMNS, image_summary[1:])),
        "text": dict(zip(TEXT_METRIC_COLUMNS, text_summary[1:])),
        "caption_exact_match": exact / len(text_rows),
    }
    sum_path = reports / f"summary_{variant}.json"
    write_json(sum_path, summary)
    artifacts["summary"] = sum_path

    md_path = reports / f"summary_{variant}.md"
    md = ["| Model | " + " | ".join(IMAGE_METRIC_COLUMNS) + " |",
          "|" + "---|" * (len(IMAGE_METRIC_COLUMNS) + 1),
          "| " + variant + " | " + " | ".join(
              "-" if v is None else f"{v:.3f}" for v in image_summary[1:]) + " |",
          "",
          "| Model | " + " | ".join(TEXT_METRIC_COLUMNS) + " |",
          "|" + "---|" * (len(TEXT_METRIC_COLUMNS) + 1),
          "| " + variant + " | " + " | ".join(
              "-" if v is None else f"{v:.3f}" for v in text_summary[1:]) + " |"]
    md_path.write_text("\n".join(md) + "\n")
    artifacts["summary_md"] = md_path

    manifest = _manifest(cfg, f"evaluate-{variant}", artifacts, out)
    manifest["summary"] = summary
    write_json(out / f"manifest_evaluate-{variant}.json", manifest)
    return manifest


_TEXT_CODEC_CACHE: dict = {}


# ---- ablate ----


def cmd_ablate(cfg: ExperimentConfig, out: Path) -> dict:
    out = Path(out)
    artifacts: dict = {}
    summaries = {}
    for variant in VARIANTS:
        cmd_decode(cfg, out, variant=variant)
        manifest = cmd_evaluate(cfg, out, variant=variant)
        summaries[variant] = manifest["summary"]

    reports = out / "reports"
    img_rows = [[v] + [summaries[v]["image"][c] for c in IMAGE_METRIC_COLUMNS]
                for v in VARIANTS]
    img_path = reports / "ablation_image.csv"
    write_csv(img_path, ["variant"] + IMAGE_METRIC_COLUMNS, img_rows)
    artifacts["ablation_image"] = img_path

    txt_rows = [[v] + [summaries[v]["text"][c] for c in TEXT_METRIC_COLUMNS]
                for v in VARIANTS]
    txt_path = reports / "ablation_text.csv"
    write_csv(txt_path, ["variant"] + TEXT_METRIC_COLUMNS, txt_rows)
    artifacts["ablation_text"] = txt_path

    manifest = _manifest(cfg, "ablate", artifacts, out)
    manifest["summaries"] = summaries
    write_json(out / "manifest_ablate.json", manifest)
    return manifest


# ---- roi probe ----


def cmd_roi_probe(cfg: ExperimentConfig, out: Path) -> dict:
    out = Path(out)
    ds = load_dataset(out)
    models = load_models(out)
    reports = out / "reports"
    probe_dir = out / "predictions" / "roi_probe"
    probe_dir.mkdir(parents=True, exist_ok=True)
    reports.mkdir(parents=True, exist_ok=True)
    artifacts: dict = {}

    train_voxels = ds.voxel_rows("train")
    base_mean = train_voxels.mean(axis=0)
    base_std = train_voxels.std(axis=0)

    rows = []
    for ri, roi in enumerate(("face", "word", "place", "body")):
        for gi, gain in enumerate(cfg.roi_gains):
            pattern = roi_activation_pattern(ds.brain, roi, float(gain), base_mean, base_std)
            images, seqs, texts, img_info, _ = decode_patterns(
                cfg, models, pattern.values[None, :], "full",
                seed_key=100 + ri * 16 + gi)
            img_name = f"probe_{roi}_k{gain:g}.pgm"
            write_pgm(probe_dir / img_name, images[0])
            artifacts[f"probe_{roi}_k{gain:g}"] = probe_dir / img_name
            # the decoded semantic embedding is the predicted global condition
            # token; invert the frozen projection and take the top category
            global_tok = img_info["c_i"][0][-1]
            sem = recover_semantics(global_tok)
            decoded_cat = CATEGORIES[int(np.argmax(sem[:len(CATEGORIES)]))]
            snapped = nearest_scene(images[0])
            caption_words = seqs[0].words
            rows.append([roi, float(gain), decoded_cat, int(decoded_cat == roi),
                         int(roi in caption_words), snapped.objects[0].category,
                         texts[0]])

    csv_path = reports / "roi_probe.csv"
    write_csv(csv_path, ["roi", "gain", "decoded_category", "category_correct",
                         "caption_has_category", "recon_nearest_category", "caption"], rows)
    artifacts["roi_probe"] = csv_path
    manifest = _manifest(cfg, "roi-probe", artifacts, out)
    manifest["rows"] = [
        {"roi": r[0], "gain": r[1], "decoded": r[2], "correct": bool(r[3]),
         "caption_has_category": bool(r[4]), "recon_nearest": r[5]} for r in rows]
    write_json(out / "manifest_roi-probe.json", manifest)
    return manifest
