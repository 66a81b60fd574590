"""Small version of the network comparison.

    python3 demos/train_networks.py [out_dir]

Renders a reduced desk-scale dataset (32x32, 6 triplets per shape and
light), trains the supervised regressor (RN), the renderer-regularized one
(ITN) and its single-scattering variant (SSN), and prints held-out metrics.
At this size the numbers are noisy; the full-size run is the acceptance
suite.  Takes under a minute on one core.
"""

import sys
import tempfile

from invtransport.dataset import default_spec, gen_dataset
from invtransport.itn import TrainConfig, evaluate, examples_from, train

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="invtransport-")
ds = gen_dataset(default_spec(size=32, params_per_combo=6, spp=16), out)
examples = examples_from(ds, ds.split("train"))
print(f"{len(ds.records)} images in {out}, {len(examples)} for training")

configs = {
    "RN": TrainConfig(mode="RN", epochs=50),
    "ITN": TrainConfig(mode="ITN", epochs=50, warm_start_epochs=40, finetune_lr=1e-4),
    "SSN": TrainConfig(mode="SSN", epochs=50, warm_start_epochs=40, finetune_lr=1e-4),
}
for mode, cfg in configs.items():
    net, log = train(examples, cfg)
    row = evaluate(net, ds, ["test"], spp=16, seed=99)[0]
    print(f"{mode:3s}  rmse sigma_t {row.rmse_sigma_t:6.3f}  albedo {row.rmse_albedo:.3f}"
          f"  g {row.rmse_g:.3f}  appearance {row.appearance_rmse:.5f}"
          f"  1-MS-SSIM {row.one_minus_ms_ssim:.4f}")
