"""Build the extension and run a small pipeline through it.

Usage: python3 python/smoke_test.py   (from the repository root)
"""

import json
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build():
    subprocess.run(["cargo", "build", "--release", "-p", "rejex-python"], cwd=ROOT, check=True)
    lib = os.path.join(ROOT, "target", "release", "libpyrejex.so")
    out = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(out, "pyrejex.so"))
    sys.path.insert(0, out)


def main():
    build()
    import pyrejex

    spec = {"n": 400, "d": 4, "c": 2, "class_weights": [0.5, 0.5],
            "relevant_features": [0, 1], "seed": 3, "separation": 1.0}
    data = pyrejex.Dataset.synthetic(json.dumps(spec))
    rest, test = data.split(0.25, 1)
    train, calib = rest.split(0.4, 2)
    train, (calib, test) = train.standardize([calib, test])

    model = pyrejex.Model.fit("gnb", train, 0)
    print("test accuracy", round(model.accuracy(test), 3))
    cp = pyrejex.ConformalPredictor(model, calib)
    theta = cp.knee_threshold(calib)
    print("knee threshold", round(theta, 3))

    creds = [cp.credibility(test.row(i)) for i in range(test.n_samples)]
    i = min(range(len(creds)), key=creds.__getitem__)
    label, cred, conf = cp.predict_with_reject(test.row(i), creds[i] + 0.05)
    assert label is None and abs(cred - creds[i]) < 1e-12
    assert len(cp.p_values(test.row(i))) == 2

    for mode in ("featimp", "cf"):
        explanation = json.loads(cp.explain(test.row(i), creds[i] + 0.05, mode, 7))
        print(mode, "sparsity", explanation["sparsity"])

    config = {
        "datasets": [{"source": "synthetic", "name": "toy", "spec": spec}],
        "classifiers": ["gnb"],
        "k_folds": 2,
        "max_explained_per_fold": 3,
        "explain": {"neighborhood": {"n_samples": 80}},
    }
    table = pyrejex.run_algorithmic(json.dumps(config), 1)
    assert table.startswith("classifier,dataset,metric,mean,variance,n_explained")
    table2, records = pyrejex.run_groundtruth(json.dumps(config), 1)
    assert "featimp_recall" in table2
    json.loads(records)
    print("smoke test ok")


if __name__ == "__main__":
    main()
