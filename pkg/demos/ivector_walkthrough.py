"""From waveform to i-vector on a handful of synthetic recordings.

Two acoustic sources differ only in where their noise bands sit. MFCCs are
pooled to train a small UBM. Each recording is then summarized by its
Baum-Welch statistics and projected to a low-rank i-vector. Cosine
similarity between i-vectors should be higher within a source than across.
"""

import numpy as np

from speechmark.frontend import features_for
from speechmark.gmm import train_ubm
from speechmark.ivector import accumulate_stats, extract_ivector, train_t_matrix
from speechmark.synth import SOURCE_A, SOURCE_B, synth_audio

rng = np.random.default_rng(3)
signals = [(name, synth_audio(rng, src, duration=2.0))
           for name, src in (("A", SOURCE_A), ("B", SOURCE_B)) for _ in range(8)]
feats = [features_for(x) for _, x in signals]
print(f"{len(feats)} recordings, {feats[0].shape[0]} frames of {feats[0].shape[1]} coefficients each")

ubm = train_ubm(feats, k=8, iters=8, seed=0)
print("UBM log-likelihood by iteration:", " ".join(f"{h:.0f}" for h in ubm.history))

stats = [accumulate_stats(ubm, f) for f in feats]
# Zero-order statistics are soft frame counts, so they add up to the frame count.
print("sum of N_c minus frames:", max(abs(s.zero_order.sum() - s.n_frames) for s in stats))

tvm = train_t_matrix(stats, ubm, rank=4, iters=5, seed=0)
print("T-matrix objective:", " ".join(f"{h:.2f}" for h in tvm.history))

ivecs = np.array([extract_ivector(tvm, s) for s in stats])
unit = ivecs / np.linalg.norm(ivecs, axis=1, keepdims=True)
cos = unit @ unit.T
same = np.array([a == b for a, _ in signals for b, _ in signals]).reshape(cos.shape)
off_diag = ~np.eye(len(cos), dtype=bool)
print(f"mean cosine within source {cos[same & off_diag].mean():+.3f}, across {cos[~same].mean():+.3f}")
