"""Train a toy linear student on compressed inputs with three objectives and compare."""

from dataclasses import replace

from retcomp.config import parse_config
from retcomp.core import make_rng
from retcomp.experiment import prepare, split, train
from retcomp.synth import gen_dataset

cfg = parse_config("", {"synth.num_samples": 300, "train.steps": 150, "train.eval_samples": 100})
_, samples = gen_dataset(cfg.synth, make_rng(cfg.run.seed, "data"))
data, held_out = split(prepare(samples, cfg), cfg.train.eval_samples)
print(f"{len(data)} training samples, {len(held_out)} held out")

# %% same seed, same batches; only the objective differs
for mode in ("cgrpo", "grpo", "sft"):
    run = replace(cfg, train=replace(cfg.train, mode=mode))
    _, hist = train(data, run, held_out)
    last = hist[-1]
    print(f"{mode:>5}: acc on compressed {last.eval_acc_comp:.3f}, on full {last.eval_acc_full:.3f}")

# %% with 0/1 correctness, the retention bonus multiplies every correct reward in a group
# by the same factor, so group-normalised advantages (and hence updates) match plain GRPO.
