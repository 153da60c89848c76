"""Generate the synthetic shapes corpus and poke at the federated format.

Writes a small dataset to ./demo_out/scenes (PNG files + JSON splits) and a
contact sheet so you can eyeball what the detector trains on.
"""

from pathlib import Path

import numpy as np

from ovdet.data import SynthSpec, save_dataset, synth_dataset
from ovdet.data.federated import image_to_png_bytes

out = Path("demo_out/scenes")
out.mkdir(parents=True, exist_ok=True)

spec = SynthSpec(image_size=48, n_train=32, n_eval=8, max_objects=3,
                 held_out=("red triangle",))
data = synth_dataset(spec, np.random.default_rng(7))

print("categories:", data.categories)
print("held out:", data.held_out)
ex = data.eval[0]
print(f"\neval[0]: positives={sorted(ex.positive)}")
for inst in ex.instances:
    print(f"  box cx={inst.box.cx:.2f} cy={inst.box.cy:.2f} "
          f"w={inst.box.w:.2f} h={inst.box.h:.2f} labels={sorted(inst.labels)}")
print("caption:", data.eval_captions[0][1])

# the train split has every held-out annotation stripped, images kept
assert all("red triangle" not in inst.labels
           for e in data.train for inst in e.instances)

save_dataset(data.train, out / "train.json", data.categories, out / "images")
save_dataset(data.eval, out / "eval.json", data.categories, out / "images")

# contact sheet: 8 training scenes side by side
tiles = [e.image for e in data.train[:8]]
sheet = np.concatenate(tiles, axis=1)
(out / "contact_sheet.png").write_bytes(image_to_png_bytes(sheet))
print(f"\nwrote dataset + contact sheet under {out}/")
