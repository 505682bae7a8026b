"""Checking the hand-written backward passes against finite differences.

Both models are tiny here so every parameter entry is perturbed. The
errors printed are max relative errors per parameter tensor.
"""

from scenegnn.gradcheck import SMALL_CONFIG, check_recurrent, check_single_step

for name, res in (("single step", check_single_step(0, SMALL_CONFIG)),
                  ("recurrent, 3 frames", check_recurrent(0, SMALL_CONFIG))):
    print(f"{name}: {res.checked} entries, worst {res.max_error:.2e}")
    for param, err in sorted(res.per_param.items()):
        print(f"  {param:24s} {err:.2e}")
