"""The whole pipeline through the ``fuse`` command line.

Equivalent shell session (after ``pip install -e .``):

    fuse synth --preset two-segment --seed 2 --out run/data
    fuse analyze --data run/data --L 50 --out run/analysis
    fuse optimize cem --data run/data --L 50 --out run/cem
    fuse optimize bayes --config run/bayes.json --data run/data --out run/bayes
    fuse eval --data run/data --L 50 --weights run/bayes/weights.json --out run/eval

Every command writes a JSON report into its --out directory. Here we call
the same entry point in-process and peek at what it wrote.

Run:  python3 demos/05_cli_pipeline.py    (about half a minute)
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from mcfusion.cli import main

run = Path(tempfile.mkdtemp(prefix="fuse-demo-"))
data = str(run / "data")


def fuse(*argv):
    print(f"\n$ fuse {' '.join(argv)}")
    code = main(list(argv))
    assert code == 0, f"exit status {code}"


fuse("synth", "--preset", "two-segment", "--seed", "2", "--out", data)
fuse("analyze", "--data", data, "--L", "50", "--out", str(run / "analysis"))
fuse("optimize", "cem", "--data", data, "--L", "50", "--out", str(run / "cem"))

# the BO stage starts from the CEM checkpoint; paths in a config file are
# taken relative to that file
(run / "bayes.json").write_text(json.dumps(
    {"L": 50, "bayes": {"alpha_cem": "cem/cem_checkpoint.json", "T": 10}}))
fuse("optimize", "bayes", "--config", str(run / "bayes.json"), "--data", data, "--out", str(run / "bayes"))
fuse("eval", "--data", data, "--L", "50", "--weights", str(run / "bayes" / "weights.json"),
     "--out", str(run / "eval"))

print(f"\nfiles under {run}:")
for p in sorted(run.rglob("*")):
    if p.is_file() and p.parent != run / "data":
        print(f"    {p.relative_to(run)}")

# a weights file that does not sum to 1 is rejected with status 1
bad = run / "bad.json"
bad.write_text(json.dumps({"weights": [0.5, 0.2, 0.05, 0.05]}))
print(f"\nweights summing to 0.8 -> exit status "
      f"{main(['eval', '--data', data, '--L', '50', '--weights', str(bad), '--out', str(run / 'x')])}")
