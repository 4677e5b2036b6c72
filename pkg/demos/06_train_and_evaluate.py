"""Overfit a tiny model on a handful of scenes, end to end.

A quick-running miniature of the full pipeline: generate scenes, train with
the set-matching loss, watch the loss fall, then score the model with the
point-threshold metric.  Takes about a minute on a laptop CPU.
"""

import numpy as np

from laneshape import (
    Adam,
    GenConfig,
    LaneCurveModel,
    LossWeights,
    ModelConfig,
    evaluate,
    scaled_threshold,
    synth_generate,
    train_step,
)

gen = GenConfig(image_h=64, image_w=128, n_slots=5, focal_min=80.0,
                focal_max=120.0, horizon_margin=6.0, row_step=4)
scenes = synth_generate(seed=7, n_scenes=6, cfg=gen)
batch = [(s.image.astype(np.float64) / 255.0, s.gts) for s in scenes]

model = LaneCurveModel(
    ModelConfig(hidden_c=16, input_h=64, input_w=128, n_queries=5,
                backbone_channels=(2, 4, 8, 16)),
    seed=3)
optimizer = Adam(model.params, lr=2e-3)
weights = LossWeights()

print("step    loss")
for step in range(120):
    loss = train_step(model, optimizer, batch, weights, grad_clip=10.0)
    if step % 20 == 0 or step == 119:
        print(f"{step:5d}  {loss:9.3f}")

preds = [model.predict(img)[-1] for img, _ in batch]
result = evaluate(preds, [s.gts for s in scenes], gen.image_h,
                  scaled_threshold(gen.image_h))
print("\ntraining-set accuracy:", round(result.accuracy, 3),
      " fp:", round(result.fp_rate, 3), " fn:", round(result.fn_rate, 3))
print("(a real run uses hundreds of scenes and thousands of steps; see README)")
