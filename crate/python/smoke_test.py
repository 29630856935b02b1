"""Smoke test for the chanflip Python extension."""

import math
import random

import chanflip_py as cf


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    fmt = cf.FixedPointFormat(0.8)
    assert fmt.offset == 3 * fmt.limit
    assert close(fmt.step, fmt.unit / 2**23)

    rng = random.Random(0)
    values = [rng.uniform(-fmt.limit, fmt.limit) for _ in range(1000)]
    frame = cf.encode(values, 0.8)
    assert len(frame) == 5 + math.ceil(23 * 1000 / 8)
    back = cf.decode(frame)
    assert max(abs(a - b) for a, b in zip(values, back)) <= fmt.step

    noisy = cf.perturb_model(values, 0.8, 0.1, seed=7)
    assert noisy == cf.perturb_model(values, 0.8, 0.1, seed=7)
    assert noisy != back
    assert max(abs(v) for v in noisy) <= fmt.limit

    assert close(cf.required_ber(2.0, 10.0, 50, 0.02), 1 / 12)
    assert close(cf.required_ber_closed_form(2.0, 10.0, 50, 0.02), 1 / 11)
    pa = cf.artificial_ber(0.1, 0.02)
    assert close(cf.compose_ber(pa, 0.02), 0.1)
    assert close(cf.awgn_ber(0.0), 0.5 * math.erfc(1.0), 1e-10)

    assert cf.renyi_divergence_oracle(5, 0.5, 0.1, 2.0) <= cf.per_bit_divergence_bound(5, 0.5, 0.1, 2.0)
    assert close(cf.flipped_mean(1.5, 0.1), 1.5 - 0.2 * 2**-24)

    kappa = cf.estimate_kappa_bar([values[:64]], 1e-3, 50, 0.8)
    assert 0.0 < kappa < 23.0

    try:
        cf.encode([2.0], 0.8)
    except ValueError as e:
        assert "outside" in str(e)
    else:
        raise AssertionError("out-of-range value accepted")

    config = """
seeds = [0]
[task]
features = 7
clients = 3
samples_per_client = 100
test_samples = 200
[schedule]
iterations = 10
local_steps = 5
learning_rate = 0.1
[privacy]
lambda = 2.0
epsilon = 10.0
kappa_samples = 20
kappa_checkpoints = 2
[channel]
model = "fixed_range"
[[arms]]
name = "cn"
mechanism = "channel_native_bitflip"
"""
    records = cf.run_experiment(config)
    assert [r["round"] for r in records] == [0, 1, 2]
    assert all(not r["diverged"] for r in records)
    assert records[-1]["mean_ber"] > 0

    print("python smoke test passed")


if __name__ == "__main__":
    main()
