"""Regenerate the JSON fixtures in this directory.

    python3 make_fixtures.py

Outputs are deterministic; the checked-in files are the result of running
this script unchanged.
"""

import json
from pathlib import Path

HERE = Path(__file__).resolve().parent


def dump(name, doc):
    (HERE / name).write_text(json.dumps(doc, indent=1) + "\n")


def layer(id_, kind, shape, inputs, kernel=None):
    d = {"id": id_, "kind": kind, "shape": shape, "inputs": inputs}
    if kernel:
        d["kernel"] = kernel
    return d


def speech_model():
    """Depthwise-separable keyword spotter: 5 compute blocks plus the head."""
    c = 300
    ls = [layer("input", "input", [49, 10, 1], [])]
    prev = "input"

    def conv_bn_relu(name, kind, kernel):
        nonlocal prev
        ls.append(layer(name, kind, [25, 5, c], [prev], kernel))
        ls.append(layer(name + "_bn", "batchnorm", [25, 5, c], [name]))
        ls.append(layer(name + "_relu", "activation", [25, 5, c], [name + "_bn"]))
        prev = name + "_relu"

    conv_bn_relu("conv1", "conv", [10, 4])
    conv_bn_relu("dw1", "depthwise-conv", [3, 3])
    conv_bn_relu("pw1", "conv", [1, 1])
    conv_bn_relu("dw2", "depthwise-conv", [3, 3])
    conv_bn_relu("pw2", "conv", [1, 1])
    ls.append(layer("pool", "pool", [c], [prev]))
    ls.append(layer("fc", "dense", [11], ["pool"]))
    ls.append(layer("softmax", "softmax", [11], ["fc"]))
    ls.append(layer("output", "output", [11], ["softmax"]))
    return {"name": "ds-cnn-speech", "layers": ls}


def speech_hardware():
    return {
        "processors": [
            {"id": "m0", "macs_per_second": 10e6, "mem_bytes": 2_000_000, "storage_bytes": 2_000_000,
             "active_power_mw": 8.0, "sleep_power_mw": 0.02},
            {"id": "m4f", "macs_per_second": 75e6, "mem_bytes": 2_000_000, "storage_bytes": 2_000_000,
             "active_power_mw": 40.0, "sleep_power_mw": 0.05},
        ],
        "links": [{"from": "m0", "to": "m4f", "bytes_per_second": 146_000.0}],
        "latency_budget_s": 2.5,
    }


def speech_synth():
    # ids are the block ids of the five exit locations plus the backbone head
    quality = {"conv1": (2.0, 3.0, 0.05, 0.7), "dw1": (5.0, 2.0, 0.1, 0.95),
               "pw1": (5.0, 2.0, 0.1, 0.97), "dw2": (5.0, 2.0, 0.1, 0.97),
               "pw2": (6.0, 2.0, 0.1, 0.98), "final": (8.0, 1.5, 0.2, 0.99)}
    return {
        "mode": "shared-noise",
        "samples": 2000,
        "correlation": 0.6,
        "seed": 7,
        "locations": [
            {"id": k, "alpha": a, "beta": b, "accuracy_at_zero": lo, "accuracy_at_one": hi}
            for k, (a, b, lo, hi) in quality.items()
        ],
    }


STAGES = [(3, 256, 32), (8, 512, 16), (59, 1024, 8), (3, 2048, 4)]


def resnet74_model():
    """Bottleneck ResNet with 73 residual units on 32x32 inputs."""
    ls = [layer("input", "input", [32, 32, 3], [])]
    ls.append(layer("stem", "conv", [32, 32, 64], ["input"], [3, 3]))
    ls.append(layer("stem_bn", "batchnorm", [32, 32, 64], ["stem"]))
    ls.append(layer("stem_relu", "activation", [32, 32, 64], ["stem_bn"]))
    prev = "stem_relu"
    for s, (units, width, size) in enumerate(STAGES, start=1):
        mid = width // 4
        hw = [size, size]
        for u in range(1, units + 1):
            p = f"s{s}u{u}"
            a = [
                layer(p + "_a", "conv", hw + [mid], [prev]),
                layer(p + "_a_bn", "batchnorm", hw + [mid], [p + "_a"]),
                layer(p + "_a_relu", "activation", hw + [mid], [p + "_a_bn"]),
                layer(p + "_b", "conv", hw + [mid], [p + "_a_relu"], [3, 3]),
                layer(p + "_b_bn", "batchnorm", hw + [mid], [p + "_b"]),
                layer(p + "_b_relu", "activation", hw + [mid], [p + "_b_bn"]),
                layer(p + "_c", "conv", hw + [width], [p + "_b_relu"]),
                layer(p + "_c_bn", "batchnorm", hw + [width], [p + "_c"]),
            ]
            ls.extend(a)
            skip = prev
            if u == 1:
                ls.append(layer(p + "_proj", "conv", hw + [width], [prev]))
                ls.append(layer(p + "_proj_bn", "batchnorm", hw + [width], [p + "_proj"]))
                skip = p + "_proj_bn"
            ls.append(layer(p + "_add", "add", hw + [width], [p + "_c_bn", skip]))
            ls.append(layer(p + "_relu", "activation", hw + [width], [p + "_add"]))
            prev = p + "_relu"
    ls.append(layer("pool", "pool", [2048], [prev]))
    ls.append(layer("fc", "dense", [10], ["pool"]))
    ls.append(layer("softmax", "softmax", [10], ["fc"]))
    ls.append(layer("output", "output", [10], ["softmax"]))
    return {"name": "resnet-74", "layers": ls}


def resnet74_hardware():
    big = 64_000_000_000
    return {
        "processors": [
            {"id": "cpu", "macs_per_second": 2e9, "mem_bytes": big, "storage_bytes": big,
             "active_power_mw": 3000.0, "sleep_power_mw": 100.0},
            {"id": "gpu", "macs_per_second": 50e9, "mem_bytes": big, "storage_bytes": big,
             "active_power_mw": 15000.0, "sleep_power_mw": 500.0},
            {"id": "cloud", "macs_per_second": 500e9, "mem_bytes": big, "storage_bytes": big,
             "active_power_mw": 0.0, "sleep_power_mw": 0.0},
        ],
        "links": [
            {"from": "cpu", "to": "gpu", "bytes_per_second": 4e9},
            {"from": "gpu", "to": "cloud", "bytes_per_second": 6.25e6},
        ],
        "latency_budget_s": 60.0,
    }


def block_ids():
    ids = ["stem"]
    for s, (units, _, _) in enumerate(STAGES, start=1):
        ids += [f"s{s}u{u}_add" for u in range(1, units + 1)]
    return ids


def resnet74_synth():
    ids = block_ids()
    locs = []
    for i, id_ in enumerate(ids):
        depth = i / (len(ids) - 1)
        locs.append({"id": id_, "alpha": round(1.5 + 4.0 * depth, 4), "beta": 2.0,
                     "accuracy_at_zero": 0.1, "accuracy_at_one": round(0.55 + 0.4 * depth, 4)})
    locs.append({"id": "final", "alpha": 8.0, "beta": 1.5, "accuracy_at_zero": 0.2, "accuracy_at_one": 0.97})
    return {"mode": "shared-noise", "samples": 300, "correlation": 0.5, "seed": 74, "locations": locs}


if __name__ == "__main__":
    dump("speech_model.json", speech_model())
    dump("speech_hardware.json", speech_hardware())
    dump("speech_synth.json", speech_synth())
    dump("resnet74_model.json", resnet74_model())
    dump("resnet74_hardware.json", resnet74_hardware())
    dump("resnet74_synth.json", resnet74_synth())
