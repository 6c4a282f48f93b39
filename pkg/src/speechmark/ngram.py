"""Class-conditional N-gram language models and perplexity scoring.

Two smoothers are provided: Katz back-off with Good-Turing discounts and
interpolated Kneser-Ney with a fixed absolute discount. Both produce full
conditional distributions over the predictable vocabulary, so every context
is normalized by construction.
"""

from __future__ import annotations

import enum
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ConsistencyError, FormatError, ScoringError, TrainingError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
MAX_ORDER = 4
FORMAT_TAG = "speechmark-ngram"
FORMAT_VERSION = 1


class Smoothing(enum.Enum):
    GOOD_TURING = "good_turing"
    KNESER_NEY = "kneser_ney"

    @classmethod
    def parse(cls, value) -> "Smoothing":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {"gt": cls.GOOD_TURING, "good_turing": cls.GOOD_TURING, "katz": cls.GOOD_TURING,
                   "kn": cls.KNESER_NEY, "kneser_ney": cls.KNESER_NEY}
        if key not in aliases:
            raise ConfigurationError(f"unknown smoothing {value!r}")
        return aliases[key]

    @property
    def title(self) -> str:
        return {"good_turing": "Good-Turing", "kneser_ney": "Kneser-Ney"}[self.value]


# --- Good-Turing ----------------------------------------------------------

def counts_of_counts(counts) -> dict[int, int]:
    """Map each count value r to n_r, the number of events seen exactly r times."""
    return dict(sorted(Counter(c for c in counts if c > 0).items()))


def loglog_fit(coc: dict[int, int]) -> tuple[float, float]:
    """Least-squares fit of ``log n_r = a + b log r`` over observed r.

    The slope is capped below -1 so that smoothed adjusted counts stay under
    the raw counts; with fewer than two points the slope defaults to -2.
    """
    rs = np.array([r for r, n in coc.items() if n > 0], dtype=float)
    ns = np.array([coc[int(r)] for r in rs], dtype=float)
    if len(rs) >= 2:
        slope, intercept = np.polyfit(np.log(rs), np.log(ns), 1)
    else:
        slope = -2.0
        intercept = math.log(ns[0]) - slope * math.log(rs[0]) if len(rs) else 0.0
    slope = min(slope, -1.0 - 1e-3)
    return float(intercept), float(slope)


def good_turing_adjust(coc: dict[int, int], r: int, cutoff: int = 5, n_unseen: float | None = None) -> float:
    """Adjusted count ``r* = (r + 1) n_{r+1} / n_r``.

    Counts at or above ``cutoff`` pass through unchanged. When ``n_{r+1}`` is
    zero below the cutoff, both counts-of-counts come from a log-log
    regression instead. ``r = 0`` needs the number of unseen events.
    """
    if r < 0:
        raise ValueError(f"count must be non-negative, got {r}")
    if r >= cutoff:
        return float(r)
    if r == 0:
        if not n_unseen:
            raise ConfigurationError("r = 0 requires the number of unseen events")
        return coc.get(1, 0) / n_unseen
    n_r = coc.get(r, 0)
    if n_r == 0:
        raise ConsistencyError(f"count {r} queried but n_{r} = 0")
    n_next = coc.get(r + 1, 0)
    if n_next > 0:
        return (r + 1) * n_next / n_r
    a, b = loglog_fit(coc)
    smooth = lambda x: math.exp(a + b * math.log(x))  # noqa: E731
    return (r + 1) * smooth(r + 1) / smooth(r)


def katz_discounts(coc: dict[int, int], cutoff: int = 5) -> tuple[dict[int, float], bool]:
    """Discount ratios d_r for ``1 <= r < cutoff`` and whether they conserve mass.

    ``d_r = 1 - lam * (1 - r*/r)`` with ``lam`` chosen so the mass removed from
    seen events totals n_1/N, which is Katz's renormalization when every r*
    comes straight from the counts of counts. If that is ill-posed (no
    singletons, or a ratio outside (0, 1)) the regression-smoothed ratios
    r*/r are used as they are.
    """
    adjustable = [r for r in coc if 1 <= r < cutoff]
    n1 = coc.get(1, 0)
    if n1 > 0 and adjustable:
        star = {r: good_turing_adjust(coc, r, cutoff) for r in adjustable}
        removed = sum(coc[r] * (r - star[r]) for r in adjustable)
        if removed > 0:
            lam = n1 / removed
            disc = {r: 1.0 - lam * (1.0 - star[r] / r) for r in adjustable}
            if all(0.0 < d < 1.0 for d in disc.values()):
                return disc, True

    _, b = loglog_fit(coc)
    return {r: (1.0 + 1.0 / r) ** (b + 1.0) for r in adjustable}, False


def good_turing_unseen_mass(coc: dict[int, int], cutoff: int = 5) -> float:
    """Fraction of total probability reserved for unseen events at one order."""
    disc, _ = katz_discounts(coc, cutoff)
    total = sum(r * n for r, n in coc.items())
    kept = sum(n * r * disc.get(r, 1.0) for r, n in coc.items())
    return 1.0 - kept / total


# --- model ----------------------------------------------------------------

def _backoff_floor(total: float) -> float:
    # minimum mass every seen context leaves for unseen outcomes; vanishes as the context count grows
    return 0.5 / (total + 1.0)


class NgramModel:
    """Order-N word model; immutable once built.

    ``counts`` holds the highest-order n-gram counts (tuples of N tokens)
    collected over padded sequences; every lower-order table is its
    marginal over the leftmost token.
    """

    def __init__(self, order: int, smoothing, vocab, counts: dict, discount: float = 0.75,
                 katz_cutoff: int = 5, unk_threshold: int = 1):
        if not 1 <= order <= MAX_ORDER:
            raise ConfigurationError(f"order must be in [1, {MAX_ORDER}], got {order}")
        self.order = order
        self.smoothing = Smoothing.parse(smoothing)
        if self.smoothing is Smoothing.KNESER_NEY and not 0.0 <= discount <= 1.0:
            raise ConfigurationError(f"Kneser-Ney discount must be in [0, 1], got {discount}")
        self.discount = float(discount)
        self.katz_cutoff = int(katz_cutoff)
        self.unk_threshold = int(unk_threshold)
        self.vocab = tuple(sorted(set(vocab) | {BOS, EOS, UNK}))
        self.counts = {tuple(k): int(v) for k, v in counts.items() if v > 0}
        self.outcomes = tuple(tok for tok in self.vocab if tok != BOS)
        self._index = {tok: i for i, tok in enumerate(self.outcomes)}
        self._vocab_set = frozenset(self.vocab)
        self._build_tables()
        self._cache: dict = {}

    def _build_tables(self):
        # tables[j][context] -> {word index: count}, for j = 1..order
        raw = {self.order: defaultdict(dict)}
        for gram, c in self.counts.items():
            raw[self.order][gram[:-1]][self._index[gram[-1]]] = c
        for j in range(self.order - 1, 0, -1):
            table = defaultdict(lambda: defaultdict(int))
            for ctx, followers in raw[j + 1].items():
                for w, c in followers.items():
                    table[ctx[1:]][w] += c
            raw[j] = {ctx: dict(f) for ctx, f in table.items()}
        self._raw = {j: dict(t) for j, t in raw.items()}
        self._totals = {j: {ctx: sum(f.values()) for ctx, f in t.items()} for j, t in self._raw.items()}
        self.counts_of_counts = {
            j: counts_of_counts(c for f in t.values() for c in f.values()) for j, t in self._raw.items()
        }

        if self.smoothing is Smoothing.KNESER_NEY:
            cont = {}
            for j in range(1, self.order):
                table = defaultdict(lambda: defaultdict(int))
                for ctx, followers in self._raw[j + 1].items():
                    for w in followers:
                        table[ctx[1:]][w] += 1
                cont[j] = {ctx: dict(f) for ctx, f in table.items()}
            self._kn = {j: (self._raw[j] if j == self.order else cont[j]) for j in range(1, self.order + 1)}
            self._discounts = None
        else:
            self._kn = None
            self._discounts = {j: katz_discounts(self.counts_of_counts[j], self.katz_cutoff)[0]
                               for j in self._raw}

    # -- mapping helpers

    def map_token(self, tok: str) -> str:
        return tok if tok in self._vocab_set and tok != BOS else UNK

    def padded(self, tokens) -> list[str]:
        return [BOS] * (self.order - 1) + [self.map_token(t) for t in tokens] + [EOS]

    def _context(self, context) -> tuple:
        ctx = [t if t == BOS else self.map_token(t) for t in context][-(self.order - 1):] if self.order > 1 else []
        return tuple([BOS] * (self.order - 1 - len(ctx)) + ctx)

    # -- distributions

    def distribution(self, context=()) -> np.ndarray:
        """Conditional distribution over ``self.outcomes`` given up to N-1 previous tokens."""
        return self._dist(self.order, self._context(context))

    def _dist(self, j: int, ctx: tuple) -> np.ndarray:
        key = (j, ctx)
        hit = self._cache.get(key)
        if hit is None:
            if self.smoothing is Smoothing.KNESER_NEY:
                hit = self._kn_dist(j, ctx)
            else:
                hit = self._katz_dist(j, ctx)
            hit.setflags(write=False)
            self._cache[key] = hit
        return hit

    def _uniform(self) -> np.ndarray:
        return np.full(len(self.outcomes), 1.0 / len(self.outcomes))

    def _kn_dist(self, j: int, ctx: tuple) -> np.ndarray:
        lower = self._uniform() if j == 1 else self._dist(j - 1, ctx[1:])
        followers = self._kn[j].get(ctx)
        if not followers:
            return lower
        total = sum(followers.values())
        idx = np.fromiter(followers.keys(), dtype=int, count=len(followers))
        cnt = np.fromiter(followers.values(), dtype=float, count=len(followers))
        vec = np.zeros(len(self.outcomes))
        vec[idx] = np.maximum(cnt - self.discount, 0.0) / total
        gamma = np.minimum(cnt, self.discount).sum() / total
        return vec + gamma * lower

    def _katz_dist(self, j: int, ctx: tuple) -> np.ndarray:
        lower = self._uniform() if j == 1 else self._dist(j - 1, ctx[1:])
        followers = self._raw[j].get(ctx)
        if not followers:
            return lower
        total = self._totals[j][ctx]
        disc = self._discounts[j]
        idx = np.fromiter(followers.keys(), dtype=int, count=len(followers))
        cnt = np.fromiter(followers.values(), dtype=float, count=len(followers))
        d = np.array([disc.get(int(c), 1.0) for c in cnt])
        vec = np.zeros(len(self.outcomes))
        vec[idx] = d * cnt / total

        unseen = lower.copy()
        unseen[idx] = 0.0
        unseen_total = unseen.sum()
        if unseen_total <= 1e-12:
            return vec / vec.sum()
        seen_mass = vec.sum()
        floor = _backoff_floor(total)
        if 1.0 - seen_mass < floor:
            vec *= (1.0 - floor) / seen_mass
            seen_mass = 1.0 - floor
        return vec + (1.0 - seen_mass) * unseen / unseen_total

    # -- scoring

    def prob(self, word: str, context=()) -> float:
        w = word if word == EOS else self.map_token(word)
        return float(self.distribution(context)[self._index[w]])

    def token_probs(self, tokens) -> np.ndarray:
        """Probabilities of each scored token: the words then the end token."""
        seq = self.padded(tokens)
        n = self.order - 1
        return np.array([
            self._dist(self.order, tuple(seq[i - n:i]))[self._index[seq[i]]]
            for i in range(n, len(seq))
        ])

    def log_prob(self, tokens) -> float:
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(self.token_probs(tokens))))

    def perplexity(self, tokens) -> float:
        """``exp(-mean log P)`` over the words plus the end token (start padding excluded)."""
        tokens = list(tokens)
        if not tokens:
            raise ScoringError("cannot score an empty token sequence")
        return math.exp(-self.log_prob(tokens) / (len(tokens) + 1))

    # -- persistence

    def save(self, path) -> None:
        lines = [
            f"{FORMAT_TAG} {FORMAT_VERSION}",
            f"order {self.order}",
            f"smoothing {self.smoothing.value}",
            f"discount {self.discount!r}",
            f"katz_cutoff {self.katz_cutoff}",
            f"unk_threshold {self.unk_threshold}",
            f"vocab {len(self.vocab)}",
            *self.vocab,
            f"counts {len(self.counts)}",
            *(f"{' '.join(g)}\t{c}" for g, c in sorted(self.counts.items())),
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NgramModel":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        try:
            tag, version = lines[0].split()
            if tag != FORMAT_TAG or int(version) != FORMAT_VERSION:
                raise FormatError(f"{path}: not a {FORMAT_TAG} v{FORMAT_VERSION} file")
            fields = dict(line.split(" ", 1) for line in lines[1:6])
            n_vocab = int(lines[6].split()[1])
            vocab = lines[7:7 + n_vocab]
            n_counts = int(lines[7 + n_vocab].split()[1])
            counts = {}
            for line in lines[8 + n_vocab: 8 + n_vocab + n_counts]:
                gram, c = line.rsplit("\t", 1)
                counts[tuple(gram.split(" "))] = int(c)
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}: malformed n-gram model ({exc})") from None
        return cls(int(fields["order"]), fields["smoothing"], vocab, counts,
                   discount=float(fields["discount"]), katz_cutoff=int(fields["katz_cutoff"]),
                   unk_threshold=int(fields["unk_threshold"]))


def train_ngram(corpus, order: int, smoothing="good_turing", discount: float = 0.75,
                unk_threshold: int = 1, katz_cutoff: int = 5) -> NgramModel:
    """Count order-N grams over padded sentences.

    Each sequence gets N-1 start tokens and one end token; words seen fewer
    than ``unk_threshold`` times are replaced by the unknown token.
    """
    corpus = [list(seq) for seq in corpus]
    if not corpus or not any(corpus):
        raise TrainingError("cannot train an n-gram model on an empty corpus")
    if not 1 <= order <= MAX_ORDER:
        raise ConfigurationError(f"order must be in [1, {MAX_ORDER}], got {order}")
    freq = Counter(tok for seq in corpus for tok in seq)
    vocab = {tok for tok, c in freq.items() if c >= unk_threshold and tok not in (BOS, EOS)}
    vocab_set = vocab | {UNK, EOS}

    counts = Counter()
    for seq in corpus:
        padded = [BOS] * (order - 1) + [tok if tok in vocab_set else UNK for tok in seq] + [EOS]
        for i in range(order - 1, len(padded)):
            counts[tuple(padded[i - order + 1:i + 1])] += 1
    return NgramModel(order, smoothing, vocab, counts, discount=discount,
                      katz_cutoff=katz_cutoff, unk_threshold=unk_threshold)


@dataclass(frozen=True)
class PerplexityPair:
    ppl_dementia: float
    ppl_control: float

    @property
    def log_values(self) -> np.ndarray:
        return np.log([self.ppl_dementia, self.ppl_control])


def score_case(model_dem: NgramModel, model_con: NgramModel, tokens) -> PerplexityPair:
    if (model_dem.order, model_dem.smoothing) != (model_con.order, model_con.smoothing):
        raise ConfigurationError("class models must share order and smoothing")
    return PerplexityPair(model_dem.perplexity(tokens), model_con.perplexity(tokens))
