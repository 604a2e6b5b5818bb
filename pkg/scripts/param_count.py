"""Print the trainable-parameter count of the default U-Net, layer by layer."""

from fsgcc_tde.unet import PUBLISHED_PARAMETER_COUNT, Architecture, UNetModel

arch = Architecture()
model = UNetModel.create(arch, seed=0)
for name, p in model.params.items():
    print(f"{name:<14} {str(p.shape):<20} {p.size:>8}")
total = model.parameter_count()
print(f"total {total} (published figure {PUBLISHED_PARAMETER_COUNT}, "
      f"difference {total - PUBLISHED_PARAMETER_COUNT:+d})")
print(f"architecture {arch}")
