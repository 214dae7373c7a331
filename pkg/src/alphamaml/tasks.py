"""Episodic task distributions: Omniglot, sinusoid regression, Gaussian blobs."""
from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

TASK_KINDS = ("omniglot", "sinusoid", "blobs")
SPLITS = ("meta_train", "meta_test")

OMNIGLOT_INSTANCES = 20
OMNIGLOT_TRAIN_CHARS = 1200
IMAGE_SIZE = 28
CACHE_MAGIC = b"OMNI1"
_CACHE_HEADER = struct.Struct("<5sIIIIIQ")

SINE_AMPLITUDE = (0.1, 5.0)
SINE_PHASE = (0.0, np.pi)
SINE_X = (-5.0, 5.0)
BLOB_CENTER_RANGE = 5.0


@dataclass
class Episode:
    train_inputs: np.ndarray
    train_targets: np.ndarray
    test_inputs: np.ndarray
    test_targets: np.ndarray
    task_id: int = 0
    # (class key, instance index) pairs; empty for synthetic tasks
    train_instances: list = field(default_factory=list, repr=False)
    test_instances: list = field(default_factory=list, repr=False)
    info: dict = field(default_factory=dict)


@dataclass
class OmniglotStore:
    """Decoded Omniglot characters with a fixed train/test split.

    ``images`` is uint8 of shape (n_chars, 20, 28, 28), strokes bright.
    """

    alphabets: list
    characters: list
    images: np.ndarray
    is_train: np.ndarray
    split_seed: int = 0
    rotations: bool = True

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.uint8)
        self.is_train = np.asarray(self.is_train, dtype=bool)
        n = len(self.characters)
        if self.images.shape[0] != n or len(self.alphabets) != n or self.is_train.shape != (n,):
            raise ValueError("OmniglotStore: inconsistent character counts")
        self._classes = {}

    @property
    def n_characters(self) -> int:
        return len(self.characters)

    @property
    def n_instances(self) -> int:
        return self.images.shape[1]

    @property
    def multiplicity(self) -> int:
        return 4 if self.rotations else 1

    def split_characters(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        mask = self.is_train if split == "meta_train" else ~self.is_train
        return np.flatnonzero(mask)

    def classes(self, split: str) -> np.ndarray:
        """(character index, quarter turns) pairs forming the classes of ``split``."""
        if split not in self._classes:
            chars = self.split_characters(split)
            rots = np.arange(self.multiplicity)
            grid = np.stack(np.meshgrid(chars, rots, indexing="ij"), axis=-1).reshape(-1, 2)
            self._classes[split] = grid
        return self._classes[split]

    def image(self, char: int, inst: int, rot: int) -> np.ndarray:
        img = self.images[char, inst]
        return np.rot90(img, k=int(rot)) if rot else img

    def to_bytes(self) -> bytes:
        n, k, h, w = self.images.shape
        parts = [_CACHE_HEADER.pack(CACHE_MAGIC, n, k, h, w, int(self.is_train.sum()), self.split_seed)]
        for alpha, char, tr in zip(self.alphabets, self.characters, self.is_train):
            for s in (alpha, char):
                b = s.encode("utf-8")
                parts.append(struct.pack("<H", len(b)) + b)
            parts.append(struct.pack("<B", int(tr)))
        parts.append(self.images.tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, rotations: bool = True) -> "OmniglotStore":
        if len(buf) < _CACHE_HEADER.size or buf[:5] != CACHE_MAGIC:
            raise ValueError("not an Omniglot cache file (bad magic)")
        _, n, k, h, w, n_train, seed = _CACHE_HEADER.unpack_from(buf, 0)
        off = _CACHE_HEADER.size
        alphabets, chars, flags = [], [], []
        for _ in range(n):
            names = []
            for _ in range(2):
                (ln,) = struct.unpack_from("<H", buf, off)
                off += 2
                names.append(buf[off:off + ln].decode("utf-8"))
                off += ln
            alphabets.append(names[0])
            chars.append(names[1])
            flags.append(bool(buf[off]))
            off += 1
        size = n * k * h * w
        if len(buf) - off != size:
            raise ValueError(f"Omniglot cache truncated: expected {size} image bytes, found {len(buf) - off}")
        images = np.frombuffer(buf, dtype=np.uint8, count=size, offset=off).reshape(n, k, h, w).copy()
        store = cls(alphabets, chars, images, np.array(flags), split_seed=seed, rotations=rotations)
        if int(store.is_train.sum()) != n_train:
            raise ValueError("Omniglot cache header disagrees with split flags")
        return store

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, rotations: bool = True) -> "OmniglotStore":
        return cls.from_bytes(Path(path).read_bytes(), rotations=rotations)


def _downsample(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        small = im.convert("L").resize((IMAGE_SIZE, IMAGE_SIZE), Image.Resampling.BOX)
        arr = np.asarray(small, dtype=np.uint8)
    # source images are dark strokes on white
    return 255 - arr


def _find_character_dirs(root: Path) -> list[Path]:
    dirs = sorted({p.parent for p in root.rglob("*.png")})
    return dirs


def ingest_omniglot(root_path, cache_path=None, n_train: int = OMNIGLOT_TRAIN_CHARS,
                    split_seed: int = 0, rotations: bool = True) -> OmniglotStore:
    """Decode an Omniglot image tree (or reload its cache).

    Character directories are the directories holding ``.png`` files and
    their parents name the alphabet, so both the flat
    ``<root>/<alphabet>/<character>`` layout and the original
    ``images_background``/``images_evaluation`` pair are accepted.
    """
    if cache_path is not None and Path(cache_path).exists():
        return OmniglotStore.load(cache_path, rotations=rotations)
    root = Path(root_path) if root_path is not None else None
    if root is None or not root.is_dir():
        raise FileNotFoundError(
            f"Omniglot directory {root_path!r} not found; expected "
            "<root>/<alphabet>/<character>/<instance>.png (pass --data-root)"
        )
    alphabets, chars, images = [], [], []
    for cdir in _find_character_dirs(root):
        files = sorted(cdir.glob("*.png"))
        if len(files) != OMNIGLOT_INSTANCES:
            log.warning("skipping %s: %d instances (expected %d)", cdir, len(files), OMNIGLOT_INSTANCES)
            continue
        alphabets.append(cdir.parent.name)
        chars.append(cdir.name)
        images.append(np.stack([_downsample(f) for f in files]))
    if not chars:
        raise FileNotFoundError(f"no Omniglot characters found under {root}")
    n = len(chars)
    if n_train >= n:
        raise ValueError(f"n_train={n_train} leaves no test characters ({n} found)")
    order = np.random.default_rng(split_seed).permutation(n)
    is_train = np.zeros(n, dtype=bool)
    is_train[order[:n_train]] = True
    store = OmniglotStore(alphabets, chars, np.stack(images), is_train,
                          split_seed=split_seed, rotations=rotations)
    if cache_path is not None:
        store.save(cache_path)
    return store


@dataclass
class TaskDistribution:
    kind: str
    n_way: int = 5
    k_shot: int = 1
    q_query: int = 15
    split: str = "meta_train"
    rng_seed: int = 0
    store: OmniglotStore | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.n_way < 1 or self.k_shot < 1 or self.q_query < 1:
            raise ValueError("n_way, k_shot and q_query must be positive")
        if self.kind == "omniglot":
            if self.store is None:
                raise ValueError("omniglot tasks need an OmniglotStore")
            if self.k_shot + self.q_query > self.store.n_instances:
                raise ValueError(
                    f"k_shot + q_query = {self.k_shot + self.q_query} exceeds "
                    f"{self.store.n_instances} instances per class"
                )
            n_cls = len(self.store.classes(self.split))
            if self.n_way > n_cls:
                raise ValueError(f"n_way={self.n_way} exceeds {n_cls} classes in {self.split}")

    @property
    def n_outputs(self) -> int:
        return 1 if self.kind == "sinusoid" else self.n_way

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)

    def with_split(self, split: str, rng_seed: int | None = None) -> "TaskDistribution":
        return TaskDistribution(self.kind, self.n_way, self.k_shot, self.q_query, split,
                                self.rng_seed if rng_seed is None else rng_seed, self.store)


def _sample_omniglot(dist: TaskDistribution, rng: np.random.Generator) -> Episode:
    store = dist.store
    classes = store.classes(dist.split)
    chosen = classes[rng.choice(len(classes), size=dist.n_way, replace=False)]
    K, Q = dist.k_shot, dist.q_query
    xs_tr, xs_te, tr_inst, te_inst = [], [], [], []
    for char, rot in chosen:
        inst = rng.choice(store.n_instances, size=K + Q, replace=False)
        key = (int(char), int(rot))
        imgs = np.stack([store.image(char, i, rot) for i in inst])
        xs_tr.append(imgs[:K])
        xs_te.append(imgs[K:])
        tr_inst += [(key, int(i)) for i in inst[:K]]
        te_inst += [(key, int(i)) for i in inst[K:]]
    scale = 1.0 / 255.0
    x_tr = np.concatenate(xs_tr)[:, None].astype(np.float64) * scale
    x_te = np.concatenate(xs_te)[:, None].astype(np.float64) * scale
    y_tr = np.repeat(np.arange(dist.n_way), K)
    y_te = np.repeat(np.arange(dist.n_way), Q)
    return Episode(x_tr, y_tr, x_te, y_te, task_id=int(rng.integers(2**31)),
                   train_instances=tr_inst, test_instances=te_inst)


def sine_targets(x, amplitude, phase):
    return amplitude * np.sin(x + phase)


def _sample_sinusoid(dist: TaskDistribution, rng: np.random.Generator) -> Episode:
    amp = rng.uniform(*SINE_AMPLITUDE)
    phase = rng.uniform(*SINE_PHASE)
    x = rng.uniform(*SINE_X, size=(dist.k_shot + dist.q_query, 1))
    y = sine_targets(x, amp, phase)
    K = dist.k_shot
    return Episode(x[:K], y[:K], x[K:], y[K:], task_id=int(rng.integers(2**31)),
                   info={"amplitude": amp, "phase": phase})


def _sample_blobs(dist: TaskDistribution, rng: np.random.Generator) -> Episode:
    N, K, Q = dist.n_way, dist.k_shot, dist.q_query
    centers = rng.uniform(-BLOB_CENTER_RANGE, BLOB_CENTER_RANGE, size=(N, 2))
    pts = centers[:, None, :] + rng.normal(size=(N, K + Q, 2))
    x_tr = pts[:, :K].reshape(-1, 2)
    x_te = pts[:, K:].reshape(-1, 2)
    return Episode(x_tr, np.repeat(np.arange(N), K), x_te, np.repeat(np.arange(N), Q),
                   task_id=int(rng.integers(2**31)))


_SAMPLERS = {"omniglot": _sample_omniglot, "sinusoid": _sample_sinusoid, "blobs": _sample_blobs}


def sample_episode(dist: TaskDistribution, rng: np.random.Generator) -> Episode:
    return _SAMPLERS[dist.kind](dist, rng)


def make_batch(dist: TaskDistribution, meta_batch_size: int, rng: np.random.Generator) -> list[Episode]:
    if meta_batch_size < 1:
        raise ValueError("meta_batch_size must be at least 1")
    return [sample_episode(dist, rng) for _ in range(meta_batch_size)]


def write_synthetic_omniglot(root, n_alphabets: int = 3, chars_per_alphabet: int = 5,
                             seed: int = 0, size: int = 105, n_instances: int = OMNIGLOT_INSTANCES) -> Path:
    """Write a small Omniglot-shaped PNG tree of random stroke glyphs.

    Each character is a random polyline; its instances are jittered redraws.
    Meant for tests and demos when the real dataset is not available.
    """
    from PIL import Image, ImageDraw

    root = Path(root)
    rng = np.random.default_rng(seed)
    for a in range(n_alphabets):
        for c in range(chars_per_alphabet):
            cdir = root / f"alphabet{a:02d}" / f"character{c + 1:02d}"
            cdir.mkdir(parents=True, exist_ok=True)
            proto = rng.uniform(0.15, 0.85, size=(rng.integers(3, 6), 2)) * size
            for i in range(n_instances):
                pts = proto + rng.normal(0, 0.03 * size, size=proto.shape)
                im = Image.new("L", (size, size), 255)
                ImageDraw.Draw(im).line([tuple(p) for p in pts], fill=0, width=max(2, size // 20))
                im.convert("1").save(cdir / f"{a:02d}{c:02d}_{i + 1:02d}.png")
    return root
