"""Smoke test for the commlab Python bindings.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/commlab-*.whl
"""

import math
import tempfile
from pathlib import Path

import commlab

CONFIG = """
method = "dial"
shared = true
seed = 3
episodes = 320
batch = 32
epsilon = 0.05
target_reset = 100
sigma = 2.0
embed = 16
message_bits = 1
eval_every = 160
eval_episodes = 100

[optimizer]
lr = 5e-3
decay = 0.95
eps = 1e-8

[env]
name = "switch"
n = 3
"""


def main():
    assert abs(commlab.switch_oracle(3) - 540 / 729) < 1e-12
    single, team = commlab.policy_space_exponent(10, 4)
    assert single == 88572 and team == 4 * 88572

    assert len(commlab.decodable_levels(2.0)) == 2
    assert commlab.channel([-1.0, 0.5], 0.0, train=False) == [0.0, 1.0]
    ys = commlab.channel([0.3] * 1000, 1.0, seed=5)
    assert all(0.0 < y < 1.0 for y in ys)
    assert abs(commlab.channel_cdf(0.5, 0.0, 1.0) - 0.5) < 1e-12
    assert math.isclose(commlab.channel_density(0.5, 0.0, 1.0), 4 / math.sqrt(2 * math.pi))

    demo = commlab.parity_demo()
    assert demo["td_exactly_zero"] and demo["all_gradients_nonzero"]

    checks = commlab.gradcheck()
    failed = [name for name, _, _, ok in checks if not ok]
    assert not failed, failed

    cfg = commlab.TrainConfig.from_toml(CONFIG)
    assert cfg.label == "dial-ps"
    with tempfile.TemporaryDirectory() as out:
        trainer = commlab.Trainer(cfg)
        curve = trainer.run(out)
        assert trainer.episodes_done == 320
        assert [row[0] for row in curve] == [0, 160, 320]
        assert (Path(out) / "curve.csv").is_file()
        ckpt = Path(out) / "checkpoints" / "final.ckpt"
        again = commlab.Trainer.from_checkpoint(cfg, str(ckpt))
        assert again.evaluate(200) == trainer.evaluate(200)

    try:
        commlab.TrainConfig.from_toml("method = 'telepathy'")
    except ValueError:
        pass
    else:
        raise AssertionError("bad config accepted")

    print("python smoke test ok:", len(checks), "gradient checks,", "final norm reward", round(curve[-1][2], 3))


if __name__ == "__main__":
    main()
