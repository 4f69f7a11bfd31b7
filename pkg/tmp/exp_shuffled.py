import json, time, sys
import numpy as np
from deformrecon.synthetic import make_bump_scene, render_synthetic_frames, oracle_tracks
from deformrecon.tracking import sample_grid
from deformrecon.pipeline import densify_tracks, make_conditioner, predict_deformation, evaluate_bundle
from deformrecon.trainer import TrainConfig, train, split_frames
from deformrecon.metrics import deformation_errors

scene = make_bump_scene()
frames, gt = render_synthetic_frames(scene)
tracks = oracle_tracks(scene, sample_grid(64, 64, 16, 16))
dense = densify_tracks(tracks, 64, 64)
train_frames, _ = split_frames(frames)

schedule = dict(iterations=3000, rays_per_batch=192, samples_per_ray=16,
                learning_rate=5e-3, lr_decay=0.05, seed=0)

results = {}
for name, zero, p_clear in [("tracked_clean", False, 0.0),
                            ("zeroed_clean", True, 0.0),
                            ("tracked_abl", False, 0.3),
                            ("zeroed_abl", True, 0.3)]:
    cfg = TrainConfig(**schedule, zero_track_conditioning=zero, p_clear=p_clear)
    t0 = time.time()
    bundle, hist = train(train_frames, scene.intrinsics, dense, cfg)
    cond = make_conditioner(bundle, dense, scene.intrinsics, frames[0].pose)
    pred, valid = predict_deformation(bundle, frames[0], scene.intrinsics, cond,
                                      float(frames[7].time), 7)
    mse, maxse = deformation_errors(pred, gt.deformation[7], valid)
    results[name] = {"mse": mse, "maxse": maxse, "minutes": (time.time() - t0) / 60}
    print(name, results[name], flush=True)
    if name == "tracked_clean":
        bundle.save("tmp/ckpt_shuffled_tracked")
        rep = evaluate_bundle(bundle, frames, scene.intrinsics, dense, split="test",
                              gt_deformation_fields=gt.deformation)
        print("tracked_clean eval:", rep.per_frame[0], flush=True)

t_f = results["tracked_abl"]["mse"] / results["tracked_clean"]["mse"]
z_f = results["zeroed_abl"]["mse"] / results["zeroed_clean"]["mse"]
print(f"ordering1 zeroed>=tracked: {results['zeroed_clean']['mse']:.3e} >= {results['tracked_clean']['mse']:.3e} -> {results['zeroed_clean']['mse'] >= results['tracked_clean']['mse']}")
print(f"factors tracked {t_f:.3f} zeroed {z_f:.3f} -> tracked<=zeroed: {t_f <= z_f}")
with open("tmp/shuffled_results.json", "w") as f:
    json.dump(results, f)
