"""Synthetic request logs with planted sequence-interest and cross-item effects.

Generative story, one request at a time in global chronological order:

1. A user is drawn. Every user has static observable ids (segment, age) and
   a hidden preference vector over item categories.
2. Each of the K candidate items gets a quality score
   ``q = base(item, user segment, hour) + alpha * affinity``, where the
   affinity combines the hidden preference for the item's category with the
   user's panoramic sequence (how often, and in which hour, the user engaged
   with that category before).
3. The ``slots`` best items by ``q`` are exposed.
4. An exposed item is clicked with probability
   ``sigmoid(bias + q_i - gamma * comp_i + eps_i)`` where ``comp_i`` is the
   strongest (or summed) quality among the *other* exposed items and
   ``eps_i`` is latent Gaussian noise.
5. Exposed items are appended to the user's history (impression, click or
   order), which feeds later requests through the panoramic sequence.

Everything is a pure function of :class:`GenConfig`; per-request randomness
comes from generators seeded with ``(seed, request index)``.
"""

from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    FieldSchema, RequestSample, Schema, build_panoramic_sequence, K_MAX,
)

# field ids of the synthetic schema
F_SEGMENT, F_AGE, F_CATEGORY, F_BRAND, F_PRICE, F_MATCH, F_HOUR, F_DEVICE = range(1, 9)
N_MATCH_BUCKETS = 5
N_AGES = 5


@dataclass(frozen=True)
class GenConfig:
    n_users: int = 2000
    n_requests: int = 10000
    k_min: int = 4
    k_max: int = 12
    slots: int = 3
    n_max: int = 64
    n_categories: int = 8
    n_brands: int = 20
    n_prices: int = 5
    n_segments: int = 6
    n_hours: int = 4
    n_devices: int = 3
    alpha: float = 1.0
    gamma: float = 1.0
    noise_std: float = 0.5
    click_bias: float = 0.0
    competition: str = "max"
    include_impressions: bool = True
    order_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0 or self.noise_std < 0:
            raise ValueError("alpha, gamma and noise_std must be >= 0")
        if not 1 <= self.k_min <= self.k_max <= K_MAX:
            raise ValueError(f"need 1 <= k_min <= k_max <= {K_MAX}")
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if self.competition not in ("max", "sum"):
            raise ValueError("competition must be 'max' or 'sum'")
        if self.n_users < 1 or self.n_requests < 1:
            raise ValueError("need at least one user and one request")

    def with_(self, **kw) -> "GenConfig":
        return dataclasses.replace(self, **kw)

    # ---- plain-text key=value form

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str) -> "GenConfig":
        return cls(**parse_fields(cls, text))


def parse_fields(cls, text: str) -> dict:
    """Parse ``key=value`` lines for dataclass ``cls``; unknown keys raise ``KeyError``."""
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ValueError(f"line without '=': {raw!r}")
        if key not in types:
            raise KeyError(key)
        out[key] = coerce(value, types[key])
    return out


def coerce(value: str, typ):
    name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
    if name == "bool":
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if name == "int":
        return int(value)
    if name == "float":
        return float(value)
    return value


def make_schema(gen: GenConfig) -> Schema:
    return Schema([
        FieldSchema(F_SEGMENT, "user", gen.n_segments + 1),
        FieldSchema(F_AGE, "user", N_AGES + 1),
        FieldSchema(F_CATEGORY, "item", gen.n_categories + 1),
        FieldSchema(F_BRAND, "item", gen.n_brands + 1),
        FieldSchema(F_PRICE, "item", gen.n_prices + 1),
        FieldSchema(F_MATCH, "cross", N_MATCH_BUCKETS + 1),
        FieldSchema(F_HOUR, "context", gen.n_hours + 1),
        FieldSchema(F_DEVICE, "context", gen.n_devices + 1),
    ])


@dataclass
class World:
    """Latent tables shared by all requests (drawn once from the seed)."""

    brand_q: np.ndarray
    price_q: np.ndarray
    segment_cat: np.ndarray
    hour_cat: np.ndarray
    match_edges: np.ndarray
    user_segment: np.ndarray
    user_age: np.ndarray
    user_pref: np.ndarray


def make_world(gen: GenConfig) -> World:
    rng = np.random.default_rng([gen.seed, 0])
    segment_cat = rng.normal(0.0, 0.7, (gen.n_segments, gen.n_categories))
    return World(
        brand_q=rng.normal(0.0, 0.8, gen.n_brands),
        price_q=rng.normal(0.0, 0.5, gen.n_prices),
        segment_cat=segment_cat,
        hour_cat=rng.normal(0.0, 0.4, (gen.n_hours, gen.n_categories)),
        match_edges=np.quantile(segment_cat, np.linspace(0, 1, N_MATCH_BUCKETS + 1)[1:-1]),
        user_segment=rng.integers(0, gen.n_segments, gen.n_users),
        user_age=rng.integers(0, N_AGES, gen.n_users),
        user_pref=rng.normal(0.0, 1.0, (gen.n_users, gen.n_categories)),
    )


def history_affinity(seq_item: np.ndarray, seq_ctx: np.ndarray, seq_action: np.ndarray,
                     categories: np.ndarray, hour_id: int) -> np.ndarray:
    """Per-candidate engagement share of its category in the behaviour sequence.

    Clicks weigh 1, orders 2, impressions nothing; engagements recorded in the
    same hour as the current request count double.
    """
    if len(seq_action) == 0:
        return np.zeros(len(categories))
    weight = np.where(seq_action == 2, 2.0, np.where(seq_action == 1, 1.0, 0.0))
    weight = weight * (1.0 + (seq_ctx[:, 0] == hour_id))
    beh_cat = seq_item[:, 0]
    hits = (beh_cat[None, :] == categories[:, None]) @ weight
    return hits / (1.0 + weight.sum())


def competition_term(q: np.ndarray, exposed: np.ndarray, mode: str = "max") -> np.ndarray:
    """Strongest (or summed) quality among the other exposed items; 0 without competitors."""
    comp = np.zeros(len(q))
    idx = np.nonzero(exposed)[0]
    for i in idx:
        others = q[idx[idx != i]]
        if len(others):
            comp[i] = others.max() if mode == "max" else others.sum()
    return comp


def click_probabilities(q, exposed, eps, gamma: float, bias: float = 0.0, mode: str = "max") -> np.ndarray:
    """Exact click probability of every item; unexposed items get 0."""
    q = np.asarray(q, dtype=float)
    exposed = np.asarray(exposed).astype(bool)
    logit = bias + q - gamma * competition_term(q, exposed, mode) + np.asarray(eps, dtype=float)
    p = 1.0 / (1.0 + np.exp(-logit))
    return np.where(exposed, p, 0.0)


def expose_top(q: np.ndarray, slots: int) -> np.ndarray:
    order = np.argsort(-q, kind="stable")
    y = np.zeros(len(q), dtype=np.int64)
    y[order[:slots]] = 1
    return y


@dataclass
class Latent:
    q: np.ndarray
    eps: np.ndarray
    p_click: np.ndarray


@dataclass
class SyntheticDataset:
    gen: GenConfig
    schema: Schema
    samples: list[RequestSample]
    latent: dict[int, Latent]


def generate(gen: GenConfig) -> SyntheticDataset:
    """Generate requests together with the latent quantities the oracle needs."""
    world = make_world(gen)
    schema = make_schema(gen)
    histories: dict[int, list[tuple[RequestSample, int, int]]] = {}
    samples: list[RequestSample] = []
    latent: dict[int, Latent] = {}
    keep_actions = None if gen.include_impressions else (1, 2)
    for r in range(gen.n_requests):
        rng = np.random.default_rng([gen.seed, 1, r])
        u = int(rng.integers(gen.n_users))
        seg, age = int(world.user_segment[u]), int(world.user_age[u])
        hour, device = int(rng.integers(gen.n_hours)), int(rng.integers(gen.n_devices))
        k = int(rng.integers(gen.k_min, gen.k_max + 1))
        cat = rng.integers(0, gen.n_categories, k)
        brand = rng.integers(0, gen.n_brands, k)
        price = rng.integers(0, gen.n_prices, k)
        match = np.searchsorted(world.match_edges, world.segment_cat[seg, cat])
        eps = rng.normal(0.0, gen.noise_std, k)
        coin = rng.random(k)
        order_coin = rng.random(k)

        history = histories.setdefault(u, [])
        behaviors = build_panoramic_sequence(history, gen.n_max, keep_actions)
        user_ids = np.array([seg + 1, age + 1])
        ctx_ids = np.array([hour + 1, device + 1])
        item_ids = np.stack([cat + 1, brand + 1, price + 1], axis=1)
        cross_ids = (match + 1).reshape(-1, 1)
        draft = RequestSample.build(r, user_ids, ctx_ids, behaviors, [], schema)

        base = (world.brand_q[brand] + world.price_q[price]
                + world.segment_cat[seg, cat] + world.hour_cat[hour, cat])
        hist = history_affinity(draft.seq_item - 1, draft.seq_ctx - 1, draft.seq_action, cat, hour)
        q = base + gen.alpha * (world.user_pref[u, cat] + 2.0 * hist)
        y_exp = expose_top(q, gen.slots)
        p = click_probabilities(q, y_exp, eps, gen.gamma, gen.click_bias, gen.competition)
        y_clk = ((coin < p) & (y_exp == 1)).astype(np.int64)

        sample = draft.replace(
            item_fields=item_ids.astype(np.int64), cross_fields=cross_ids.astype(np.int64),
            y_exp=y_exp, y_clk=y_clk,
        )
        samples.append(sample)
        latent[r] = Latent(q=q, eps=eps, p_click=p)
        for i in np.nonzero(y_exp)[0]:
            action = (2 if order_coin[i] < gen.order_rate else 1) if y_clk[i] else 0
            history.append((sample, int(i), action))
        if keep_actions is None and len(history) > gen.n_max:
            del history[:-gen.n_max]
    return SyntheticDataset(gen, schema, samples, latent)


def generate_dataset(gen: GenConfig) -> list[RequestSample]:
    return generate(gen).samples


@functools.lru_cache(maxsize=4)
def _cached(gen: GenConfig) -> SyntheticDataset:
    return generate(gen)


class UnknownRequestError(KeyError):
    pass


def oracle_click_prob(request: RequestSample, gen: GenConfig) -> np.ndarray:
    """True click probability of each item in ``request`` as generated under ``gen``."""
    ds = _cached(gen)
    lat = ds.latent.get(request.request_id)
    if lat is None or ds.samples[request.request_id] != request:
        raise UnknownRequestError(f"request {request.request_id} was not produced by this GenConfig")
    return lat.p_click.copy()


def write_gen_config(path, gen: GenConfig) -> None:
    Path(path).write_text(gen.to_text())


def read_gen_config(path) -> GenConfig:
    return GenConfig.from_text(Path(path).read_text())
