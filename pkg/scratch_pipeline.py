"""Scratch experiment: short desk pipeline to calibrate defaults (not shipped)."""
import time

import numpy as np

from eegdiff.config import default_config, latent_geometry
from eegdiff.datakit import build_dataset, synth_generate
from eegdiff.evalkit import bootstrap_p, clap_score, embed_global
from eegdiff import trainer as tr

t0 = time.time()
cfg = default_config()
print("latent geometry", latent_geometry(cfg))
corpus = synth_generate(cfg.synth, cfg.seed)
split = build_dataset(corpus, cfg.preprocess, cfg.chunk_seconds,
                      cfg.split_ratios, cfg.ood_tracks)
print(f"splits train={len(split.train)} val={len(split.validation)} "
      f"test={len(split.test)} ood={len(split.ood)}  [{time.time()-t0:.0f}s]")

vae = tr.build_vae(cfg)
train_items = tr.select_subject(split.train, "0")
val_items = tr.select_subject(split.validation, "0")
test_items = tr.select_subject(split.test, "0")
data = tr.prepare(train_items, vae)
val = tr.prepare(val_items, vae, data.latent_scale)
test = tr.prepare(test_items, vae, data.latent_scale)
print("latent scale", data.latent_scale, "z std", data.z.std())
embedder = tr.make_embedder(cfg, data.grids)

sched = tr.build_schedule(cfg)

# --- short diffusion pretrain
import dataclasses
cfg = dataclasses.replace(cfg,
    train_diffusion=dataclasses.replace(cfg.train_diffusion, steps=800, val_interval=400),
    train_adapter=dataclasses.replace(cfg.train_adapter, steps=800, val_interval=400),
    train_baseline=dataclasses.replace(cfg.train_baseline, steps=800, val_interval=400))

unet = tr.build_unet(cfg)
log_d = tr.train_diffusion(cfg, unet, data, val, vae, embedder)
sm = tr.smoothed([v for _, v in log_d.losses])
print(f"diffusion: loss {sm[0]:.3f} -> {sm[-1]:.3f}  vals {log_d.validations}  "
      f"[{time.time()-t0:.0f}s]")

adapter = tr.build_adapter(cfg, unet, None)
log_a = tr.train_adapter(cfg, unet, adapter, data, val, vae, embedder)
sma = tr.smoothed([v for _, v in log_a.losses])
print(f"adapter: loss {sma[0]:.3f} -> {sma[-1]:.3f}  vals {log_a.validations}  "
      f"[{time.time()-t0:.0f}s]")

baseline = tr.build_baseline(cfg)
log_b = tr.train_baseline(cfg, baseline, data, val, vae, embedder)
smb = tr.smoothed([v for _, v in log_b.losses])
print(f"baseline: loss {smb[0]:.3f} -> {smb[-1]:.3f}  vals {log_b.validations}  "
      f"[{time.time()-t0:.0f}s]")

# --- test-set comparison
k = len(test.grids)
dec_adapter = tr.decode_conditioned(unet, adapter, vae, sched, data.latent_scale,
                                    test.y, test.s, 50, seed=999, use_subjects=False)
dec_uncond = tr.decode_unconditional(unet, vae, sched, data.latent_scale, k, 50, seed=999)
dec_base = tr.decode_baseline(baseline, vae, data.latent_scale, test.y)

def mean_clap(decoded):
    return float(np.mean([clap_score(embed_global(d, embedder), embed_global(g, embedder))
                          for d, g in zip(decoded, test.grids)]))

sa, su, sb = mean_clap(dec_adapter), mean_clap(dec_uncond), mean_clap(dec_base)
print(f"test mean clap: adapter {sa:.3f}  uncond {su:.3f}  baseline {sb:.3f}")

res = bootstrap_p([embed_global(d, embedder) for d in dec_adapter],
                  [embed_global(g, embedder) for g in test.grids],
                  clap_score, resamples=4000, seed=5)
print(f"adapter bootstrap p = {res.p_value:.4f}  observed {res.observed:.3f}")
print(f"total {time.time()-t0:.0f}s")
