"""Merge similar neighbouring frames until a frame budget is met."""

import numpy as np

from retcomp import make_rng
from retcomp.compressor import CompressConfig, compress_sequence, frame_similarity
from retcomp.synth import SynthConfig, gen_dataset

cfg = SynthConfig(events_per_video=8, event_len_lo=8, event_len_hi=8, num_samples=1)
_, (sample,) = gen_dataset(cfg, make_rng(1, "data"))
video = sample.video
print("input:", video.num_frames, "frames,", video.num_tokens, "tokens")

# %% neighbouring-frame similarity: high inside an event, low across a cut
sims = [frame_similarity(video.frames[t], video.frames[t + 1]) for t in range(video.num_frames - 1)]
print("min/max adjacent similarity:", round(min(sims), 3), round(max(sims), 3))

# %% sweep the per-window reduction rate with no global override
for rho in (0.25, 0.5, 0.75):
    out, rep = compress_sequence(video, CompressConfig(rho=rho, window_m=4, target_override=None))
    print(f"rho={rho}: windows -> {rep.pre_consolidation_frames} frames, final {out.num_frames}, token ratio {rep.token_ratio:.3f}")

# %% with a hard target of one frame everything collapses to a single summary frame
out, rep = compress_sequence(video, CompressConfig(target_override=1))
print("target 1:", rep.to_dict())
print("summary frame is close to the mean prototype:",
      np.allclose(out.frames[0], video.frames.mean(axis=0), atol=0.2))
