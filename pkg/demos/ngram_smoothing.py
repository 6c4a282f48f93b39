"""Good-Turing/Katz versus Kneser-Ney on two small Markov-chain corpora.

Each class gets its own word chain. A bigram model is trained per class and
per smoother, and held-out sentences from both chains are scored against
both class models. The log ratio of the two perplexities is the feature the
classifier sees.
"""

import numpy as np

from speechmark.ngram import Smoothing, score_case, train_ngram
from speechmark.synth import WORDS, markov_chain, sample_sentence

rng = np.random.default_rng(7)
chains = {"A": markov_chain(rng, len(WORDS)), "B": markov_chain(rng, len(WORDS))}


def corpus(name, n):
    start, trans = chains[name]
    return [sample_sentence(rng, start, trans) for _ in range(n)]


train = {name: corpus(name, 150) for name in chains}
held_out = {name: [w for s in corpus(name, 40) for w in s] for name in chains}

for smoothing in Smoothing:
    models = {name: train_ngram(train[name], order=2, smoothing=smoothing) for name in chains}
    print(f"\n{smoothing.title}")

    # Every conditional distribution sums to one, including the unseen contexts.
    worst = max(abs(models["A"].distribution(ctx).sum() - 1.0) for ctx in [(), ("the",), ("zzz",)])
    print(f"  max |sum - 1| over a few contexts: {worst:.1e}")

    for name, tokens in held_out.items():
        pair = score_case(models["A"], models["B"], tokens)
        ratio = np.log(pair.ppl_dementia / pair.ppl_control)
        print(f"  held-out {name}: ppl_A {pair.ppl_dementia:7.2f}  ppl_B {pair.ppl_control:7.2f}  log ratio {ratio:+.3f}")
