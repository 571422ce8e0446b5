"""Smoke test for the amoc extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import json
import math

import amoc


def main():
    assert abs(amoc.tv_distance([0.7, 0.2, 0.1], [0.5, 0.1, 0.4]) - 0.6) < 1e-12
    assert abs(amoc.kl_divergence([1.0, 0.0], [0.5, 0.5]) - math.log(2)) < 1e-6

    plan = amoc.plan_reconnection([2, 3, 7], 12)
    assert plan["junctions"] == [(1, 4), (6, 8)], plan
    assert plan["unfrozen_layers"] == [1, 6], plan

    specs = amoc.sample_candidate_specs(6, [2, 3], 5, 7)
    assert len(specs) == 10 and all(len(s) in (2, 3) for s in specs)

    (dom,) = amoc.generate(json.dumps({
        "vocab_size": 200, "n_domains": 1, "seed": 3,
        "sizes": {"train": 200, "dev": 50, "test": 50, "unlabeled": 0},
    }))
    train = dom["train"]
    model = amoc.LayerStackModel(200, 8, 2, 4, seed=1)
    trained = model.train(train, epochs=5, learning_rate=0.01)
    f1 = trained.macro_f1(dom["test"])
    print(f"{dom['name']}: test macro F1 {f1:.3f}")

    small = trained.compress([2, 3])
    assert small.active_layers() == [1, 4]
    assert small.trainable_parameter_count() < trained.trainable_parameter_count()
    texts = [tokens for tokens, _ in dom["dev"]]
    effect = amoc.average_effect(trained, small, texts)
    assert 0.0 <= effect <= 2.0
    assert amoc.average_effect(trained, trained, texts) == 0.0
    probs = trained.classify(texts[0])
    assert abs(sum(probs) - 1.0) < 1e-12
    assert amoc.LayerStackModel.from_bytes(trained.to_bytes()).classify(texts[0]) == probs

    x = [float(i) for i in range(20)]
    noise = [math.sin(3 * i) for i in range(20)]
    y = [2.0 + 0.5 * a for a in x]
    fit = amoc.ols(["x"], [x], y)
    assert abs(fit["coefficients"][1] - 0.5) < 1e-10 and abs(fit["r2"] - 1.0) < 1e-12
    y2 = [v + 0.1 * n for v, n in zip(y, noise)]
    selector = json.loads(amoc.stepwise(["x", "noise2"], [x, [n * n for n in noise]], y2))
    assert [t["name"] for t in selector["terms"]][0] == "x"

    assert amoc.spearman([1, 2, 2, 3], [10, 20, 20, 30]) == 1.0
    assert amoc.layer_frequency([[1, 2], [2, 3]], 4) == [0.5, 0.0, 0.5, 1.0]
    print("ok")


if __name__ == "__main__":
    main()
