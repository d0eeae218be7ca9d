"""Drive every pipeline stage end to end on the bundled dataset.

Equivalent shell commands (the mock provider keeps it offline):

    bundlegen ingest   --run-dir out --dataset <data> --provider mock --mock-script <script>
    bundlegen embed    --run-dir out ... && bundlegen retrieve --run-dir out ...
    bundlegen demo     --run-dir out ... && bundlegen infer    --run-dir out ...
    bundlegen eval     --run-dir out ...

    python demos/06_full_pipeline.py
"""

import json
import tempfile
from pathlib import Path

import bundlegen as bg
from bundlegen.cli import main
from bundlegen.mockscripts import perfect_oracle_script

sessions, catalog, ground_truth = bg.load_dataset(bg.fixture_path())

with tempfile.TemporaryDirectory() as scratch:
    script_path = Path(scratch) / "perfect.json"
    perfect_oracle_script(sessions, catalog, ground_truth).save(script_path)
    run_dir = Path(scratch) / "run"

    args = ["--run-dir", str(run_dir), "--dataset", str(bg.fixture_path()),
            "--provider", "mock", "--mock-script", str(script_path)]
    for command in ("ingest", "embed", "retrieve", "demo", "infer", "eval"):
        assert main([command] + args) == 0, command

    neighbors = json.loads((run_dir / "retrieve" / "neighbors.json").read_text())
    print("\nretrieved neighbors:", neighbors)

    result = json.loads(next((run_dir / "infer").glob("result_*.json")).read_text())
    print("one session result:", json.dumps(result, indent=2)[:400], "...")

    print("\nrun directory artifacts:")
    for path in sorted(run_dir.rglob("*")):
        if path.is_file():
            print(" ", path.relative_to(run_dir))
