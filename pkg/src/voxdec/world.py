"""Synthetic stimulus universe: parametric scenes, patch-aligned renders,
slot-grammar captions, and the frozen codecs / condition embedders.

Everything downstream leans on one structural fact: images are piecewise
constant on the sixteen 8x8 patches and caption slots have fixed attribute
roles, so pixels, text latents and both condition embeddings are exactly
linear in the 32-dim stimulus feature vector (patch means, attribute
multi-hot, object count). That linearity is what makes the end-to-end
decoding chain provable rather than merely plausible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Rng

# ---- enumerations and frozen constants ----

CATEGORIES = ("face", "word", "place", "body", "food", "vehicle")
SIZES = ("small", "large")
INTENSITY_WORDS = {1: "dim", 2: "soft", 3: "bright"}
INTENSITY_VALUE = {1: 0.30, 2: 0.55, 3: 0.80}
QUADRANTS = (1, 2, 3, 4)
QUAD_TOKENS = {1: "top-left", 2: "top-right", 3: "bottom-left", 4: "bottom-right"}
QUAD_TEXT = {1: "top left", 2: "top right", 3: "bottom left", 4: "bottom right"}
STYLE_WORDS = ("photo", "sketch")
BLANK = "~"
BACKGROUND = 0.1

IMAGE_SIZE = 32
PATCH = 8
PATCH_GRID = IMAGE_SIZE // PATCH          # 4x4 grid of patches
N_PATCHES = PATCH_GRID * PATCH_GRID       # 16
N_COMPONENTS = 32                          # image latent width
TEXT_LATENT_DIM = 16
COND_DIM = 16
CAPTION_SLOTS = 8

VOCAB = (
    BLANK,
    *SIZES,
    *(INTENSITY_WORDS[i] for i in (1, 2, 3)),
    *CATEGORIES,
    *(QUAD_TOKENS[q] for q in QUADRANTS),
    *STYLE_WORDS,
)
TOKEN_INDEX = {w: i for i, w in enumerate(VOCAB)}

_PLURAL = {"face": "faces", "word": "words", "place": "places",
           "body": "bodies", "food": "foods", "vehicle": "vehicles"}

# which two patches of a quadrant a small glyph lights; one pair per category
_SMALL_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

# caption slot j contributes with weight POS_WEIGHTS[j] to the text latent
POS_WEIGHTS = 0.9 ** np.arange(CAPTION_SLOTS)

_GLYPH_SEED = 1337
_EMBED_SEED = 4242
_PATCH_PROJ_SEED = 2718
_SEMANTIC_PROJ_SEED = 3141


# each category's large glyph shades its quadrant's 2x2 patch block with a
# two-bright/two-dim pattern; the six weight-2 corners keep categories far
# apart under voxel noise
_GLYPH_LO, _GLYPH_HI = 0.35, 0.95
_CORNERS = ((1, 1, 0, 0), (1, 0, 1, 0), (1, 0, 0, 1),
            (0, 1, 1, 0), (0, 1, 0, 1), (0, 0, 1, 1))


def _build_glyphs() -> dict:
    table = {}
    for ci, cat in enumerate(CATEGORIES):
        base = np.array([_GLYPH_HI if b else _GLYPH_LO for b in _CORNERS[ci]])
        table[(cat, "large")] = base
        small = np.zeros(4)
        for j in _SMALL_PAIRS[ci]:
            small[j] = base[j]
        table[(cat, "small")] = small
    # no two glyph patterns may be proportional, else scenes could render alike
    pats = list(table.values())
    for i in range(len(pats)):
        for j in range(i + 1, len(pats)):
            a = pats[i] / np.linalg.norm(pats[i])
            b = pats[j] / np.linalg.norm(pats[j])
            if abs(float(a @ b)) > 1.0 - 1e-6:
                raise AssertionError("glyph table degenerate: proportional patterns")
    return table


GLYPHS = _build_glyphs()

EMBED_TABLE = np.random.default_rng(_EMBED_SEED).standard_normal((len(VOCAB), TEXT_LATENT_DIM))

_proj_rng = np.random.default_rng(_PATCH_PROJ_SEED)
PATCH_DIRECTIONS = _proj_rng.standard_normal((N_PATCHES, COND_DIM))
PATCH_DIRECTIONS /= np.linalg.norm(PATCH_DIRECTIONS, axis=1, keepdims=True)

SEMANTIC_PROJ = np.random.default_rng(_SEMANTIC_PROJ_SEED).standard_normal((COND_DIM, 16)) / 4.0
if np.linalg.cond(SEMANTIC_PROJ) > 1e6:
    raise AssertionError("semantic projection near-singular")

NULL_PAD = np.zeros(COND_DIM)  # designated constant pad for short captions


# ---- scenes ----


@dataclass(frozen=True)
class SceneObject:
    category: str
    intensity: int
    quadrant: int
    size: str


@dataclass(frozen=True)
class Scene:
    """One or two objects; two-object scenes share category/intensity/size and
    occupy distinct quadrants (stored ascending)."""

    objects: tuple[SceneObject, ...]
    seed: int = 0

    def __post_init__(self):
        if not 1 <= len(self.objects) <= 2:
            raise ValueError("scene must hold 1 or 2 objects")
        for o in self.objects:
            if o.category not in CATEGORIES or o.size not in SIZES:
                raise ValueError(f"bad object attributes: {o}")
            if o.intensity not in (1, 2, 3) or o.quadrant not in QUADRANTS:
                raise ValueError(f"bad object attributes: {o}")
        if len(self.objects) == 2:
            a, b = self.objects
            if a.quadrant >= b.quadrant:
                raise ValueError("two-object scenes store ascending distinct quadrants")
            if (a.category, a.intensity, a.size) != (b.category, b.intensity, b.size):
                raise ValueError("two-object scenes share category/intensity/size")

    @property
    def scene_id(self) -> str:
        o = self.objects[0]
        quads = "".join(str(obj.quadrant) for obj in self.objects)
        return f"{o.category}|{o.intensity}|{o.size}|q{quads}"


def sample_scene(rng: Rng) -> Scene:
    """Uniform draw over the scene space; 1 vs 2 objects at 50/50."""
    count = 1 + int(rng.integers(0, 2))
    cat = CATEGORIES[int(rng.integers(0, len(CATEGORIES)))]
    intensity = 1 + int(rng.integers(0, 3))
    size = SIZES[int(rng.integers(0, 2))]
    if count == 1:
        quads = [int(rng.integers(1, 5))]
    else:
        quads = sorted(int(q) for q in rng.choice(np.array(QUADRANTS), size=2, replace=False))
    seed = int(rng.integers(0, 2**31 - 1))
    objs = tuple(SceneObject(cat, intensity, q, size) for q in quads)
    return Scene(objects=objs, seed=seed)


def enumerate_scenes() -> list[Scene]:
    """The full finite scene space, in a fixed deterministic order."""
    scenes = []
    for cat in CATEGORIES:
        for intensity in (1, 2, 3):
            for size in SIZES:
                for q in QUADRANTS:
                    scenes.append(Scene((SceneObject(cat, intensity, q, size),)))
                for i, qa in enumerate(QUADRANTS):
                    for qb in QUADRANTS[i + 1:]:
                        scenes.append(Scene((SceneObject(cat, intensity, qa, size),
                                             SceneObject(cat, intensity, qb, size))))
    return scenes


# ---- rendering ----

_QUAD_PATCHES = {
    1: ((0, 0), (0, 1), (1, 0), (1, 1)),
    2: ((0, 2), (0, 3), (1, 2), (1, 3)),
    3: ((2, 0), (2, 1), (3, 0), (3, 1)),
    4: ((2, 2), (2, 3), (3, 2), (3, 3)),
}


def render(scene: Scene) -> np.ndarray:
    """32x32 grayscale image, constant on each 8x8 patch."""
    img = np.full((IMAGE_SIZE, IMAGE_SIZE), BACKGROUND)
    for obj in scene.objects:
        glyph = GLYPHS[(obj.category, obj.size)]
        level = INTENSITY_VALUE[obj.intensity]
        for k, (pi, pj) in enumerate(_QUAD_PATCHES[obj.quadrant]):
            if glyph[k] > 0.0:
                val = BACKGROUND + level * glyph[k]
                img[pi * PATCH:(pi + 1) * PATCH, pj * PATCH:(pj + 1) * PATCH] = val
    return np.clip(img, 0.0, 1.0)


def patch_means(img: np.ndarray) -> np.ndarray:
    """Row-major means of the sixteen 8x8 patches."""
    blocks = img.reshape(PATCH_GRID, PATCH, PATCH_GRID, PATCH)
    return blocks.mean(axis=(1, 3)).reshape(-1)


# ---- stimulus features (shared with the encoding model) ----

MULTIHOT_DIM = len(CATEGORIES) + 3 + len(QUADRANTS) + len(SIZES)  # 15
FEATURE_DIM = N_PATCHES + MULTIHOT_DIM + 1  # 32


def scene_multihot(scene: Scene) -> np.ndarray:
    """Binary attribute indicators: category(6), intensity(3), quadrant(4), size(2)."""
    m = np.zeros(MULTIHOT_DIM)
    o = scene.objects[0]
    m[CATEGORIES.index(o.category)] = 1.0
    m[6 + o.intensity - 1] = 1.0
    for obj in scene.objects:
        m[9 + obj.quadrant - 1] = 1.0
    m[13 + SIZES.index(o.size)] = 1.0
    return m


def stimulus_features(scene: Scene, img: np.ndarray) -> np.ndarray:
    return np.concatenate([patch_means(img), scene_multihot(scene), [float(len(scene.objects))]])


# ---- captions ----


@dataclass(frozen=True)
class TokenSeq:
    """Fixed eight-slot caption: size, intensity, category, four quadrant
    slots (token or blank), style. Text rendering drops the blanks."""

    tokens: tuple[int, ...]

    def __post_init__(self):
        if not 3 <= len(self.tokens) <= CAPTION_SLOTS:
            raise ValueError("caption length must be in [3, 8]")
        for t in self.tokens:
            if not 0 <= t < len(VOCAB):
                raise ValueError(f"token index {t} out of vocabulary")

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(VOCAB[t] for t in self.tokens)

    @property
    def text(self) -> str:
        return render_caption_text(self)


def style_of(scene: Scene) -> str:
    """Template rule: dim and bright scenes caption as a photo, soft as a sketch.

    Keyed to a single attribute so the style word stays a linear readout of the
    intensity indicators; the dataset never needs per-item template coin flips.
    """
    return "photo" if scene.objects[0].intensity != 2 else "sketch"


def caption_with_style(scene: Scene, style: str) -> TokenSeq:
    if style not in STYLE_WORDS:
        raise ValueError(f"unknown caption style {style!r}")
    o = scene.objects[0]
    words = [o.size, INTENSITY_WORDS[o.intensity], o.category]
    occupied = {obj.quadrant for obj in scene.objects}
    for q in QUADRANTS:
        words.append(QUAD_TOKENS[q] if q in occupied else BLANK)
    words.append(style)
    return TokenSeq(tuple(TOKEN_INDEX[w] for w in words))


def canonical_caption(scene: Scene) -> TokenSeq:
    """The scene's one dataset caption (style fixed by the template rule)."""
    return caption_with_style(scene, style_of(scene))


def caption_of(scene: Scene, rng: Rng) -> TokenSeq:
    """A grammar caption with the paraphrase style chosen by the rng."""
    style = STYLE_WORDS[int(rng.integers(0, len(STYLE_WORDS)))]
    return caption_with_style(scene, style)


def render_caption_text(seq: TokenSeq) -> str:
    words = [w for w in seq.words if w != BLANK]
    style = words[-1]
    size, inten, cat = words[0], words[1], words[2]
    quads = [w for w in words[3:-1]]
    quad_text = " and the ".join(QUAD_TEXT[_QUAD_FROM_TOKEN[q]] for q in quads)
    if len(quads) == 1:
        return f"a {style} of a {size} {inten} {cat} in the {quad_text}."
    return f"a {style} of two {size} {inten} {_PLURAL[cat]} in the {quad_text}."


_QUAD_FROM_TOKEN = {tok: q for q, tok in QUAD_TOKENS.items()}


def caption_corpus() -> list[TokenSeq]:
    """Every grammar caption (both paraphrase styles of every scene shape)."""
    corpus = []
    seen = set()
    for scene in enumerate_scenes():
        for style in STYLE_WORDS:
            seq = caption_with_style(scene, style)
            if seq.tokens not in seen:
                seen.add(seq.tokens)
                corpus.append(seq)
    return corpus


# ---- image latent codec (PCA) ----


@dataclass(frozen=True)
class ImageLatentCodec:
    mean: np.ndarray               # (1024,)
    components: np.ndarray         # (32, 1024), orthonormal rows
    explained_variance: np.ndarray  # (32,)


def fit_image_codec(images: list[np.ndarray] | np.ndarray, n_components: int = N_COMPONENTS) -> ImageLatentCodec:
    X = np.stack([np.asarray(im).reshape(-1) for im in images])
    if X.shape[0] < n_components:
        raise ValueError(f"need at least {n_components} images, got {X.shape[0]}")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:n_components]
    # fix the sign convention so fits are reproducible across BLAS builds
    for i in range(n_components):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    var = np.zeros(n_components)
    var[: min(n_components, s.size)] = s[:n_components] ** 2 / max(X.shape[0] - 1, 1)
    gram = components @ components.T
    if not np.allclose(gram, np.eye(n_components), atol=1e-8):
        raise AssertionError("PCA components not orthonormal")
    return ImageLatentCodec(mean=mean, components=components, explained_variance=var)


def encode_image_latent(codec: ImageLatentCodec, img: np.ndarray) -> np.ndarray:
    flat = np.asarray(img).reshape(-1)
    if flat.shape[0] != codec.mean.shape[0]:
        raise ValueError("image size does not match codec")
    return codec.components @ (flat - codec.mean)


def decode_image_latent(codec: ImageLatentCodec, z: np.ndarray, clamp: bool = True) -> np.ndarray:
    z = np.asarray(z).reshape(-1)
    if z.shape[0] != codec.components.shape[0]:
        raise ValueError("latent size does not match codec")
    flat = codec.mean + codec.components.T @ z
    img = flat.reshape(IMAGE_SIZE, IMAGE_SIZE)
    return np.clip(img, 0.0, 1.0) if clamp else img


# ---- text latent codec ----


@dataclass(frozen=True)
class TextLatentCodec:
    embed: np.ndarray          # (vocab, 16)
    pos_weights: np.ndarray    # (8,)
    corpus: tuple[TokenSeq, ...]
    encodings: np.ndarray      # (len(corpus), 16)


def encode_text_latent(codec: TextLatentCodec, seq: TokenSeq) -> np.ndarray:
    z = np.zeros(codec.embed.shape[1])
    for j, tok in enumerate(seq.tokens):
        if not 0 <= tok < codec.embed.shape[0]:
            raise ValueError(f"token {tok} out of vocabulary")
        z += codec.pos_weights[j] * codec.embed[tok]
    return z


def decode_text_latent(codec: TextLatentCodec, z: np.ndarray) -> TokenSeq:
    """Nearest corpus caption by cosine similarity; ties go to the lowest index."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    norms = np.linalg.norm(codec.encodings, axis=1) * max(np.linalg.norm(z), 1e-300)
    sims = codec.encodings @ z / norms
    return codec.corpus[int(np.argmax(sims))]


def build_text_codec() -> TextLatentCodec:
    corpus = tuple(caption_corpus())
    enc = np.stack([
        sum(POS_WEIGHTS[j] * EMBED_TABLE[t] for j, t in enumerate(seq.tokens))
        for seq in corpus
    ])
    # injectivity over the corpus, checked at build time
    normed = enc / np.linalg.norm(enc, axis=1, keepdims=True)
    sims = normed @ normed.T
    np.fill_diagonal(sims, -1.0)
    if float(sims.max()) > 1.0 - 1e-10:
        raise AssertionError("text encoding not injective over the caption corpus")
    return TextLatentCodec(embed=EMBED_TABLE.copy(), pos_weights=POS_WEIGHTS.copy(),
                           corpus=corpus, encodings=enc)


# ---- condition embedders ----

N_IMAGE_TOKENS = N_PATCHES + 1   # 16 patch tokens + 1 global semantic token
N_TEXT_TOKENS = CAPTION_SLOTS + 1  # 8 word slots + 1 global mean token


def embed_image_cond(img: np.ndarray, multihot: np.ndarray, n_objects: float) -> np.ndarray:
    """C_I: per-patch tokens scale frozen directions by the patch mean; the
    global token is a frozen projection of the semantic multi-hot + count."""
    p = patch_means(np.asarray(img))
    tokens = p[:, None] * PATCH_DIRECTIONS
    sem = np.concatenate([np.asarray(multihot, dtype=np.float64), [float(n_objects)]])
    global_tok = SEMANTIC_PROJ @ sem
    return np.vstack([tokens, global_tok[None, :]])


def embed_text_cond(seq: TokenSeq) -> np.ndarray:
    """C_T: one frozen embedding per word slot (null-padded) + global mean."""
    slots = np.tile(NULL_PAD, (CAPTION_SLOTS, 1))
    for j, tok in enumerate(seq.tokens):
        slots[j] = EMBED_TABLE[tok]
    global_tok = slots.mean(axis=0)
    return np.vstack([slots, global_tok[None, :]])


def semantic_global_token(scene: Scene) -> np.ndarray:
    sem = np.concatenate([scene_multihot(scene), [float(len(scene.objects))]])
    return SEMANTIC_PROJ @ sem


def recover_semantics(global_token: np.ndarray) -> np.ndarray:
    """Invert the frozen semantic projection back to [multi-hot; count]."""
    return np.linalg.solve(SEMANTIC_PROJ, np.asarray(global_token, dtype=np.float64))


def nearest_scene(img: np.ndarray, scenes: list[Scene] | None = None,
                  scene_patch_matrix: np.ndarray | None = None) -> Scene:
    """Snap an arbitrary image to the closest canonical scene by patch means."""
    if scenes is None:
        scenes = enumerate_scenes()
    if scene_patch_matrix is None:
        scene_patch_matrix = np.stack([patch_means(render(s)) for s in scenes])
    p = patch_means(np.asarray(img))
    d = np.linalg.norm(scene_patch_matrix - p[None, :], axis=1)
    return scenes[int(np.argmin(d))]
