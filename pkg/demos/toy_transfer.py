"""
Toy run end to end: corpus -> training -> transfer -> evaluation
================================================================

Drives the same subcommands the `rlm` console script exposes.  The full
config trains for about 12 minutes on one core; pass a step count to try a
shorter run (quality drops accordingly).

    python demos/toy_transfer.py [steps] [workdir]
"""

import json
import sys
import tempfile
from pathlib import Path

from rlm.cli import main

root = Path(__file__).resolve().parents[1]
config = root / "configs" / "toy.json"
steps = sys.argv[1] if len(sys.argv) > 1 else None
work = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(tempfile.mkdtemp(prefix="rlm-toy-"))

main(["gen-corpus", "--config", str(config), "--out", str(work / "corpus")])

train = ["train", "--config", str(config), "--corpus", str(work / "corpus"), "--out", str(work / "run")]
if steps:
    train += ["--steps", steps]
main(train)

# a handful of negative sentences, rewritten as positive
pairs = [json.loads(l) for l in (work / "corpus" / "eval.jsonl").read_text().splitlines()]
neg = [p for p in pairs if p["style"] == "neg"][:6]
(work / "neg.txt").write_text("".join(" ".join(p["tokens"]) + "\n" for p in neg))
main(["transfer", "--checkpoint", str(work / "run" / "final.rlm"), "--config", str(config),
      "--input", str(work / "neg.txt"), "--style", "pos", "--output", str(work / "pos.jsonl")])
for line in (work / "pos.jsonl").read_text().splitlines():
    rec = json.loads(line)
    print(" ".join(rec["source"]), "\n   ->", " ".join(rec["tokens"]), rec["alignment"])

main(["eval", "--checkpoint", str(work / "run" / "final.rlm"), "--config", str(config),
      "--corpus", str(work / "corpus"), "--out", str(work / "eval")])
print("artifacts in", work)
