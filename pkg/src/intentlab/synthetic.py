"""Synthetic fixtures with planted, fully-known structure.

The image fixture plants a class-specific color signature either inside a
small object block (first half of the classes) or in the surrounding
context (second half), with exact object/context masks. It is small enough
to train on CPU in seconds yet rich enough to expose whether the
localization loss actually steers CAM mass away from forbidden regions.
"""

from __future__ import annotations

import colorsys
import os

import numpy as np
from PIL import Image

from .hashtags import save_hashtag_table, Hashtag
from .masks import MaskPair, write_mask_pair
from .taxonomy import NUM_CLASSES
from .training import ManifestRow, write_manifest

def object_context_split(num_classes: int = NUM_CLASSES):
    """The fixture's planted grouping: first half object-coded, rest context."""
    half = num_classes // 2
    return tuple(range(half)), tuple(range(half, num_classes))


SYNTHETIC_OBJECT_CLASSES, SYNTHETIC_CONTEXT_CLASSES = object_context_split()


def _palette(n: int) -> np.ndarray:
    """n well-separated colors: a coarse RGB grid, then hue-wheel extras.

    Grid colors differ by at least 127 in some channel, which keeps the
    class signatures far apart relative to the additive pixel noise.
    """
    grid = [(r, g, b) for r in (0, 127, 255) for g in (0, 127, 255)
            for b in (0, 127, 255)]
    grid.remove((127, 127, 127))  # reserved for the neutral fill
    colors = grid[:n]
    i = 0
    while len(colors) < n:
        extra = tuple(int(round(c * 255))
                      for c in colorsys.hsv_to_rgb((i + 0.5) / 13, 1.0, 1.0))
        if extra not in colors:
            colors.append(extra)
        i += 1
    return np.asarray(colors, dtype=np.uint8)


def make_synthetic_dataset(out_dir, n_images: int = 200, image_size: int = 32,
                           block_size: int = 14, seed: int = 0,
                           noise_level: int = 6,
                           num_classes: int = NUM_CLASSES) -> str:
    """Write images, masks and a manifest; returns the manifest path.

    Image i carries exactly one positive class (i mod num_classes).
    Object-coded classes paint their signature color into a randomly placed
    block; context-coded classes paint it into everything outside the
    block. The block rectangle is the object mask and the context mask is
    its exact complement.
    """
    rng = np.random.default_rng(seed)
    palette = _palette(num_classes)
    object_classes, _ = object_context_split(num_classes)
    gray = np.array([128, 128, 128], dtype=np.uint8)
    images_dir = os.path.join(out_dir, "images")
    masks_dir = os.path.join(out_dir, "masks")
    os.makedirs(images_dir, exist_ok=True)
    os.makedirs(masks_dir, exist_ok=True)
    rows = []
    for i in range(n_images):
        class_id = i % num_classes
        top = int(rng.integers(1, image_size - block_size))
        left = int(rng.integers(1, image_size - block_size))
        block = np.zeros((image_size, image_size), dtype=bool)
        block[top:top + block_size, left:left + block_size] = True
        image = np.empty((image_size, image_size, 3), dtype=np.uint8)
        if class_id in object_classes:
            image[:] = gray
            image[block] = palette[class_id]
        else:
            image[:] = palette[class_id]
            image[block] = gray
        noise = rng.integers(-noise_level, noise_level + 1, size=image.shape)
        image = np.clip(image.astype(np.int16) + noise, 0, 255).astype(np.uint8)

        name = f"img_{i:05d}"
        Image.fromarray(image).save(os.path.join(images_dir, name + ".png"))
        pair_dir = os.path.join(masks_dir, name)
        os.makedirs(pair_dir, exist_ok=True)
        write_mask_pair(pair_dir, MaskPair(mask_object=block, mask_context=~block,
                                           mode="complement"))
        bits = [0] * num_classes
        bits[class_id] = 1
        rows.append(ManifestRow(image_path=os.path.join("images", name + ".png"),
                                labels=tuple(bits),
                                mask_dir=os.path.join("masks", name)))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(manifest_path, rows)
    return manifest_path


def make_hashtag_corpus(out_dir, n_train: int = 300, n_val: int = 60,
                        dim: int = 12, n_topics: int = 6, seed: int = 0) -> dict:
    """Write a topic-clustered post corpus for neighbor-count sweeps.

    Each topic owns a handful of dictionary words and an embedding cluster;
    posts sample their vector near the topic center and tag themselves with
    1- and 2-word concatenations of topic vocabulary. Labels mark the topic
    id as the positive class in a 28-bit string.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    vocab = {t: [f"topic{t}word{j}" for j in range(3)] for t in range(n_topics)}
    all_words = [w for words in vocab.values() for w in words]
    centers = rng.normal(size=(n_topics, dim)) * 3.0

    emb_dim = dim
    word_vectors = {}
    for t, words in vocab.items():
        for w in words:
            word_vectors[w] = centers[t][:emb_dim] + rng.normal(size=emb_dim) * 0.1

    def make_posts(count, prefix):
        ids, vectors, tags, labels = [], [], {}, {}
        for i in range(count):
            topic = i % n_topics
            post_id = f"{prefix}{i:04d}"
            ids.append(post_id)
            vectors.append(centers[topic] + rng.normal(size=dim) * 0.3)
            words = vocab[topic]
            post_tags = [Hashtag(words[int(rng.integers(len(words)))])]
            if rng.random() < 0.7:
                a, b = rng.integers(len(words), size=2)
                post_tags.append(Hashtag(words[int(a)] + words[int(b)]))
            tags[post_id] = post_tags
            bits = [0] * NUM_CLASSES
            bits[topic] = 1
            labels[post_id] = "".join(map(str, bits))
        return ids, np.asarray(vectors), tags, labels

    def write_vectors(path, ids, vectors):
        with open(path, "w") as fh:
            for pid, vec in zip(ids, vectors):
                fh.write(pid + " " + " ".join(repr(float(x)) for x in vec) + "\n")

    def write_labels(path, labels):
        with open(path, "w") as fh:
            for pid in sorted(labels):
                fh.write(f"{pid}\t{labels[pid]}\n")

    train_ids, train_vecs, train_tags, train_labels = make_posts(n_train, "tr")
    val_ids, val_vecs, _, val_labels = make_posts(n_val, "va")

    paths = {
        "train_vectors": os.path.join(out_dir, "train_vectors.txt"),
        "train_tags": os.path.join(out_dir, "train_tags.tsv"),
        "train_labels": os.path.join(out_dir, "train_labels.tsv"),
        "val_vectors": os.path.join(out_dir, "val_vectors.txt"),
        "val_labels": os.path.join(out_dir, "val_labels.tsv"),
        "dictionary": os.path.join(out_dir, "dictionary.txt"),
        "embeddings": os.path.join(out_dir, "embeddings.txt"),
    }
    write_vectors(paths["train_vectors"], train_ids, train_vecs)
    write_vectors(paths["val_vectors"], val_ids, val_vecs)
    save_hashtag_table(paths["train_tags"], train_tags)
    write_labels(paths["train_labels"], train_labels)
    write_labels(paths["val_labels"], val_labels)
    with open(paths["dictionary"], "w") as fh:
        for word in all_words:
            fh.write(word + "\n")
    with open(paths["embeddings"], "w") as fh:
        for word, vec in word_vectors.items():
            fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")
    return paths
