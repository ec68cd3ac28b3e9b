"""Synthetic knowledge-separability world.

Generates a dataset whose labels are decidable only through the
knowledge graph: each record's text and caption mention surface topic
words, each topic word links to a pool of planted marker concepts, and
the label is the majority marker class over the record's one-hop
neighborhood. Individual words are ambiguous; only the combination
resolved through the graph decides the label. The record-level
embeddings carry a deliberately weak label signal, the teacher caption
embedding a stronger one, and the context vector is label-blind but
correlated with which markers are actually in the neighborhood (so
relevance ranking is informative yet noisy).

Everything is derived from one seeded generator, so identical specs
produce identical files byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import BlobWriter, write_manifest, write_node_embeddings

FILLER_TEXT_WORDS = ("image", "shows", "with", "scene", "overlay", "style")


@dataclass(frozen=True)
class SynthSpec:
    n_records: int = 400
    dim: int = 16
    n_words: int = 40
    n_hazard: int = 60  # planted-relevant marker pool, class 1
    n_benign: int = 60  # planted-relevant marker pool, class 0
    n_filler: int = 200
    markers_per_word: int = 12
    fillers_per_word: int = 40
    words_per_record: int = 3
    marker_strength: float = 1.0
    personal_strength: float = 0.7
    filler_scale: float = 0.5
    weak_shift: float = 0.25
    caption_shift: float = 0.9
    record_noise: float = 1.0
    caption_noise: float = 0.4
    context_marker_frac: float = 0.5
    context_signal: float = 1.0
    context_noise: float = 0.35
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    seed: int = 7

    @property
    def n_markers(self) -> int:
        return self.n_hazard + self.n_benign


@dataclass
class SynthWorld:
    spec: SynthSpec
    kg_path: Path
    node_embeddings_path: Path
    manifest_path: Path
    labels: dict[str, int] = field(default_factory=dict)
    splits: dict[str, str] = field(default_factory=dict)
    record_embeddings: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    neighborhood_markers: dict[str, list[str]] = field(default_factory=dict)
    marker_axis: np.ndarray | None = None  # the planted class direction u


def _word_label(i: int) -> str:
    return f"topic_{i:02d}"


def _hazard_label(i: int) -> str:
    return f"hazard_cue_{i:03d}"


def _benign_label(i: int) -> str:
    return f"benign_cue_{i:03d}"


def _filler_label(i: int) -> str:
    return f"filler_{i:03d}"


def generate(spec: SynthSpec, out_dir: str | Path) -> SynthWorld:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    hazard = [_hazard_label(i) for i in range(spec.n_hazard)]
    benign = [_benign_label(i) for i in range(spec.n_benign)]
    fillers = [_filler_label(i) for i in range(spec.n_filler)]
    words = [_word_label(i) for i in range(spec.n_words)]

    # -- wiring: each word links to a biased mix of markers plus fillers
    relations = ("associated_with", "related_to", "part_of")
    word_markers: dict[str, list[str]] = {}
    word_fillers: dict[str, list[str]] = {}
    edges: list[tuple[str, str, str]] = []
    for j, word in enumerate(words):
        hazard_share = (j % 5) / 4.0  # words range from fully benign to fully hazardous
        n_haz = int(round(spec.markers_per_word * hazard_share))
        haz_pick = list(rng.choice(spec.n_hazard, size=n_haz, replace=False))
        ben_pick = list(rng.choice(spec.n_benign, size=spec.markers_per_word - n_haz, replace=False))
        markers = [hazard[i] for i in haz_pick] + [benign[i] for i in ben_pick]
        word_markers[word] = markers
        picked_fillers = [fillers[i] for i in rng.choice(spec.n_filler, size=spec.fillers_per_word, replace=False)]
        word_fillers[word] = picked_fillers
        for n, neighbor in enumerate(markers + picked_fillers):
            edges.append((word, relations[n % len(relations)], neighbor))
    # marker-to-marker rings give hop-2 traversals something to find
    for pool in (hazard, benign):
        for i, label in enumerate(pool):
            edges.append((label, "related_to", pool[(i + 1) % len(pool)]))

    kg_path = out_dir / "kg.tsv"
    with open(kg_path, "w", encoding="utf-8") as fh:
        fh.write("# synthetic separability world\n")
        for head, rel, tail in edges:
            fh.write(f"{head}\t{rel}\t{tail}\t1.0\n")

    # -- node embeddings: markers carry +/- mu * u plus a personal vector.
    # Personal vectors are centered within each pool so that a mean over
    # any marker subset carries no pool-level (= label-level) component:
    # the context vector built from them identifies which markers are
    # nearby without leaking the label itself.
    u = rng.normal(size=spec.dim)
    u /= np.linalg.norm(u)
    personal: dict[str, np.ndarray] = {}
    table: dict[str, np.ndarray] = {}
    for pool in (hazard, benign):
        raw = rng.normal(size=(len(pool), spec.dim)) * spec.personal_strength / np.sqrt(spec.dim)
        raw = raw - raw.mean(axis=0)
        for label, p in zip(pool, raw):
            personal[label] = p
    for label in hazard + benign:
        sign = 1.0 if label.startswith("hazard") else -1.0
        table[label] = sign * spec.marker_strength * u + personal[label]
    for label in fillers + words:
        table[label] = rng.normal(size=spec.dim) * spec.filler_scale / np.sqrt(spec.dim)
    node_path = out_dir / "node_embeddings.txt"
    write_node_embeddings(table, node_path)

    # -- records: word triples rejected until the graph majority matches
    #    the alternating target label, keeping classes balanced
    g_img = rng.normal(size=spec.dim)
    g_img /= np.linalg.norm(g_img)
    g_txt = rng.normal(size=spec.dim)
    g_txt /= np.linalg.norm(g_txt)
    g_cap = rng.normal(size=spec.dim)
    g_cap /= np.linalg.norm(g_cap)

    world = SynthWorld(
        spec=spec,
        kg_path=kg_path,
        node_embeddings_path=node_path,
        manifest_path=out_dir / "manifest.jsonl",
        marker_axis=u,
    )
    writer = BlobWriter()
    rows = []
    n_train = int(round(spec.n_records * spec.train_fraction))
    n_val = int(round(spec.n_records * spec.val_fraction))

    for idx in range(spec.n_records):
        target = idx % 2
        for _attempt in range(200):
            picked = rng.choice(spec.n_words, size=spec.words_per_record, replace=False)
            chosen = [words[i] for i in sorted(picked)]
            marker_bag: list[str] = []
            for word in chosen:
                marker_bag.extend(word_markers[word])
            n_haz = sum(1 for m in marker_bag if m.startswith("hazard"))
            n_ben = len(marker_bag) - n_haz
            if n_haz == n_ben:
                continue
            label = 1 if n_haz > n_ben else 0
            if label == target:
                break
        else:
            raise RuntimeError("could not balance synthetic labels; adjust the generator parameters")

        record_id = f"m{idx:04d}"
        shift = 2 * label - 1
        e_img = spec.weak_shift * shift * g_img + rng.normal(size=spec.dim) * spec.record_noise
        e_txt = spec.weak_shift * shift * g_txt + rng.normal(size=spec.dim) * spec.record_noise
        w_cap = spec.caption_shift * shift * g_cap + rng.normal(size=spec.dim) * spec.caption_noise

        unique_markers = sorted(set(marker_bag))
        keep = max(1, int(round(len(unique_markers) * spec.context_marker_frac)))
        sampled = [unique_markers[i] for i in rng.choice(len(unique_markers), size=keep, replace=False)]
        context = spec.context_signal * np.mean([personal[m] for m in sampled], axis=0)
        context = context + rng.normal(size=spec.dim) * spec.context_noise / np.sqrt(spec.dim)

        if idx < n_train:
            split = "train"
        elif idx < n_train + n_val:
            split = "val"
        else:
            split = "test"

        text = f"image shows {chosen[0]} with {chosen[1]} overlay"
        caption = f"a scene about {chosen[2]} in plain style"
        for name, vec in (
            ("e_img", e_img), ("e_txt", e_txt), ("w_caption", w_cap), ("context_vec", context)
        ):
            writer.add(f"{record_id}/{name}", vec)
        rows.append(
            {
                "id": record_id,
                "text": text,
                "caption": caption,
                "label": label,
                "split": split,
                "embeddings": {
                    name: {"blob": "embeddings.bin", "key": f"{record_id}/{name}"}
                    for name in ("e_img", "e_txt", "w_caption", "context_vec")
                },
            }
        )
        world.labels[record_id] = label
        world.splits[record_id] = split
        world.record_embeddings[record_id] = {
            "e_img": e_img, "e_txt": e_txt, "w_caption": w_cap, "context_vec": context
        }
        world.neighborhood_markers[record_id] = unique_markers

    writer.save(out_dir / "embeddings.bin")
    write_manifest(world.manifest_path, rows, dims={name: spec.dim for name in
                   ("e_img", "e_txt", "w_caption", "context_vec")})
    return world


def embedding_signal_auc(world: SynthWorld, split: str = "train") -> float:
    """Linear-probe AUC of the record embeddings alone: a logistic fit
    on [e_img || e_txt], evaluated on the test split.

    This is the ceiling of the no-knowledge weak signal; the generator
    aims it well below the graph signal.
    """
    ids_train = [r for r, s in world.splits.items() if s == split]
    ids_test = [r for r, s in world.splits.items() if s == "test"]
    X = np.array([
        np.concatenate([world.record_embeddings[r]["e_img"], world.record_embeddings[r]["e_txt"]])
        for r in ids_train
    ])
    y = np.array([world.labels[r] for r in ids_train], dtype=float)
    Xt = np.array([
        np.concatenate([world.record_embeddings[r]["e_img"], world.record_embeddings[r]["e_txt"]])
        for r in ids_test
    ])
    yt = np.array([world.labels[r] for r in ids_test])

    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(300):
        z = X @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        grad_w = X.T @ (p - y) / len(y) + 1e-3 * w
        grad_b = float(np.mean(p - y))
        w -= 0.5 * grad_w
        b -= 0.5 * grad_b

    from .metrics import auc

    return auc(Xt @ w + b, yt)
