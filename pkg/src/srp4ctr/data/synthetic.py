"""Planted-preference synthetic corpora.

Users hold a few interest categories and a small repertoire of favourite
items; items hold latent vectors clustered by category and Zipf-distributed
popularity.  Sequences mix repeat consumption, a fixed within-category
successor chain and fresh interest-driven draws, so masked items are
predictable from context.  A click label is a thresholded logistic utility whose signal is
the best behavior-weighted similarity between the candidate and any history
item, i.e. it depends on the candidate and the history jointly.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .types import CtrExample, InteractionEvent, InteractionSequence, Vocab


class ConfigError(ValueError):
    pass


N_GENDERS = 2
N_HOURS = 24
N_EXTRA_BUCKETS = 8


@dataclass(frozen=True)
class SyntheticConfig:
    n_users: int = 2000
    n_items: int = 500
    n_categories: int = 50
    n_price_buckets: int = 10
    num_item_features: int = 3
    num_behavior_features: int = 2
    n_behavior_types: int = 4
    n_count_buckets: int = 5
    n_age_buckets: int = 6
    max_len: int = 50
    min_len: int = 20
    latent_dim: int = 16
    zipf_exponent: float = 1.0
    interests_per_user: int = 3
    repertoire_size: int = 4
    repeat_prob: float = 0.4
    transition_prob: float = 0.4
    candidates_per_user: int = 20
    positive_rate: float = 0.3
    noise_scale: float = 0.1
    tail_fraction: float = 0.2

    def validate(self) -> None:
        if self.num_item_features < 1 or self.num_behavior_features < 1:
            raise ConfigError("need at least one item and one behavior feature")
        if self.n_items < self.num_item_features or self.n_items < self.n_categories:
            raise ConfigError(
                f"item vocabulary ({self.n_items}) smaller than the {self.num_item_features} "
                f"feature spaces / {self.n_categories} categories it must populate"
            )
        if min(self.n_categories, self.n_price_buckets, self.n_behavior_types, self.n_count_buckets) < 1:
            raise ConfigError("every categorical feature needs at least one real id")
        if not 2 <= self.min_len <= self.max_len:
            raise ConfigError("need 2 <= min_len <= max_len")
        if not 0 < self.positive_rate < 1:
            raise ConfigError("positive_rate must lie in (0, 1)")
        if not 1 <= self.interests_per_user <= self.n_categories:
            raise ConfigError("interests_per_user must lie in [1, n_categories]")
        if self.n_users < 1 or self.candidates_per_user < 1:
            raise ConfigError("need at least one user and one candidate")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be non-negative")
        if self.repertoire_size < 1 or min(self.repeat_prob, self.transition_prob) < 0 or self.repeat_prob + self.transition_prob > 1:
            raise ConfigError("need repertoire_size >= 1 and repeat_prob + transition_prob <= 1")

    def vocab(self) -> Vocab:
        item = [self.n_items + 1, self.n_categories + 1, self.n_price_buckets + 1]
        item += [N_EXTRA_BUCKETS + 1] * max(0, self.num_item_features - 3)
        beh = [self.n_behavior_types + 1, self.n_count_buckets + 1]
        beh += [N_EXTRA_BUCKETS + 1] * max(0, self.num_behavior_features - 2)
        return Vocab(
            tuple(item[: self.num_item_features]),
            tuple(beh[: self.num_behavior_features]),
            (N_GENDERS + 1, self.n_age_buckets + 1, N_HOURS + 1),
        )


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _buckets(values: np.ndarray, n: int) -> np.ndarray:
    """1-based quantile buckets."""
    edges = np.quantile(values, np.linspace(0, 1, n + 1)[1:-1]) if n > 1 else np.array([])
    return 1 + np.searchsorted(edges, values, side="right")


class _World:
    def __init__(self, cfg: SyntheticConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.latent_dim
        centers = _unit(rng.standard_normal((cfg.n_categories, d)))
        # item index 0..n_items-1 maps to id index+1
        self.category = rng.permutation(np.arange(cfg.n_items) % cfg.n_categories)
        self.latent = _unit(centers[self.category] + 0.5 * rng.standard_normal((cfg.n_items, d)) / np.sqrt(d))
        ranks = rng.permutation(cfg.n_items) + 1
        self.popularity = 1.0 / ranks.astype(float) ** cfg.zipf_exponent
        self.popularity /= self.popularity.sum()
        price_raw = self.latent @ _unit(rng.standard_normal(d)) + 0.3 * rng.standard_normal(cfg.n_items)
        self.price = _buckets(price_raw, cfg.n_price_buckets)
        self.extra = [
            _buckets(self.latent @ _unit(rng.standard_normal(d)), N_EXTRA_BUCKETS)
            for _ in range(max(0, cfg.num_item_features - 3))
        ]
        self.members = [np.flatnonzero(self.category == c) for c in range(cfg.n_categories)]
        self.successor = np.empty(cfg.n_items, dtype=np.int64)
        for members in self.members:
            # one cycle through the category
            cycle = rng.permutation(members)
            self.successor[cycle] = np.roll(cycle, -1)
        cat_pop = np.array([self.popularity[m].sum() for m in self.members])
        self.category_popularity = cat_pop / cat_pop.sum()
        # each age bucket favours a few categories
        self.age_favourites = [
            rng.choice(cfg.n_categories, size=min(3, cfg.n_categories), replace=False)
            for _ in range(cfg.n_age_buckets)
        ]

    def item_features(self, i: int) -> tuple[int, ...]:
        feats = [i + 1, int(self.category[i]) + 1, int(self.price[i])]
        feats += [int(e[i]) for e in self.extra]
        return tuple(feats[: self.cfg.num_item_features])

    def draw_item(self, category: int, rng: np.random.Generator, uniform_mix: float = 0.0) -> int:
        members = self.members[category]
        p = self.popularity[members]
        p = p / p.sum()
        if uniform_mix:
            p = (1 - uniform_mix) * p + uniform_mix / len(members)
        return int(rng.choice(members, p=p))


def _behavior_type(strength: float, noise: float, n_types: int) -> int:
    cuts = np.linspace(-0.3, 0.9, n_types + 1)[1:-1]
    return 1 + int(np.searchsorted(cuts, strength + noise, side="right"))


def generate_synthetic(config: SyntheticConfig | None = None, seed: int = 0, *, with_affinity: bool = False):
    """Return ``(pretrain_sequences, finetune_examples)``; a pure function of ``(config, seed)``.

    ``with_affinity`` appends the noiseless affinity of every example.
    """
    cfg = config or SyntheticConfig()
    cfg.validate()
    rng = np.random.default_rng(seed)
    world = _World(cfg, rng)

    sequences: list[InteractionSequence] = []
    users = []
    for u in range(cfg.n_users):
        age = int(rng.integers(cfg.n_age_buckets))
        gender = int(rng.integers(N_GENDERS))
        hour = int(rng.integers(N_HOURS))
        favourite = int(rng.choice(world.age_favourites[age]))
        others = rng.choice(cfg.n_categories, size=cfg.interests_per_user, replace=False, p=world.category_popularity)
        others = [int(c) for c in others if c != favourite]
        interests = np.array([favourite] + others[: cfg.interests_per_user - 1])
        weights = rng.dirichlet(np.ones(len(interests)))
        pref = _unit(weights @ _unit(np.stack([world.latent[world.members[c]].mean(0) for c in interests])))

        repertoire = [world.draw_item(int(rng.choice(interests, p=weights)), rng) for _ in range(cfg.repertoire_size)]
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        items = np.empty(length, dtype=np.int64)
        events = []
        for t in range(length):
            r = rng.random()
            if r < cfg.repeat_prob:
                item = repertoire[int(rng.integers(len(repertoire)))]
            elif t > 0 and r < cfg.repeat_prob + cfg.transition_prob:
                item = int(world.successor[items[t - 1]])
            else:
                cat = int(rng.choice(interests, p=weights)) if rng.random() > 0.1 else int(rng.integers(cfg.n_categories))
                item = world.draw_item(cat, rng)
            items[t] = item
            strength = float(pref @ world.latent[item])
            btype = _behavior_type(strength, 0.15 * rng.standard_normal(), cfg.n_behavior_types)
            count = 1 + min(cfg.n_count_buckets - 1, int(rng.poisson(np.exp(1.2 * strength))))
            beh = [btype, count]
            beh += [
                int(np.clip(1 + np.floor((strength + 1.0) * N_EXTRA_BUCKETS / 2 + rng.standard_normal()), 1, N_EXTRA_BUCKETS))
                for _ in range(max(0, cfg.num_behavior_features - 2))
            ]
            events.append(InteractionEvent(world.item_features(item), tuple(beh[: cfg.num_behavior_features])))
        seq = InteractionSequence(u, tuple(events))
        sequences.append(seq)
        users.append((seq, items, interests, weights, (gender + 1, age + 1, hour + 1)))

    examples: list[tuple[InteractionSequence, int, tuple[int, ...], float]] = []
    for seq, items, interests, weights, context in users:
        hist_latent = world.latent[items]
        type_weight = np.array([0.25 + 0.75 * (e.behavior_features[0] - 1) / max(1, cfg.n_behavior_types - 1) for e in seq.events])
        for k in range(cfg.candidates_per_user):
            if k % 2 == 0:
                cat = int(rng.choice(interests, p=weights))
            else:
                cat = int(rng.integers(cfg.n_categories))
            target = world.draw_item(cat, rng, uniform_mix=0.5)
            affinity = float(np.max((hist_latent @ world.latent[target]) * type_weight))
            examples.append((seq, target, context, affinity))

    affinity = np.array([a for *_, a in examples])
    utility = affinity + cfg.noise_scale * rng.logistic(size=len(affinity))
    threshold = np.quantile(utility, 1.0 - cfg.positive_rate)
    finetune = [
        CtrExample(seq, world.item_features(target), context, int(u > threshold))
        for (seq, target, context, _), u in zip(examples, utility)
    ]
    if with_affinity:
        return sequences, finetune, affinity
    return sequences, finetune


def item_frequencies(sequences: Iterable[InteractionSequence]) -> Counter:
    """Interaction count per primary item id."""
    counts: Counter = Counter()
    for seq in sequences:
        counts.update(e.item_features[0] for e in seq.events)
    return counts


def tail_items(frequency: dict[int, int], fraction: float = 0.2) -> set[int]:
    """The ``fraction`` of ids with the lowest counts (ties broken by id)."""
    if not frequency:
        raise ValueError("empty frequency table")
    ranked = sorted(frequency, key=lambda i: (frequency[i], i))
    k = int(round(fraction * len(ranked)))
    if k == 0:
        raise ValueError("tail subset is empty for this frequency table")
    return set(ranked[:k])


def config_dict(cfg: SyntheticConfig) -> dict:
    return asdict(cfg)


def corpus_digest(records: Sequence) -> str:
    from .io import format_record

    h = hashlib.sha256()
    for rec in records:
        h.update(format_record(rec).encode())
        h.update(b"\n")
    return h.hexdigest()
