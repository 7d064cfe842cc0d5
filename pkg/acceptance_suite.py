import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from Script.config import LabConfig
from Script.errors import ParticleLabError
from Script.experiment import load_spec
from Script.runner import run
from Script.utils import write_rows_csv


class AcceptanceSuite:
    """Runs every shipped spec under Data/specs and fails if any experiment fails."""

    def __init__(self, argv: list[str]) -> None:
        self._cfg = LabConfig.from_env()
        self._argv = argv
        self._log = logging.getLogger("particle_lab.acceptance")

    def _spec_paths(self) -> list[Path]:
        names = [a for a in self._argv if not a.startswith("-")]
        paths = sorted(self._cfg.specs_dir.glob("*.kv")) + sorted(self._cfg.specs_dir.glob("*.json"))
        if names:
            paths = [p for p in paths if p.stem in names or p.name in names]
        return paths

    def _run_one(self, path: Path, out_dir: Path) -> dict:
        start = time.perf_counter()
        try:
            spec = load_spec(path)
            spec = replace(spec, out=str(out_dir / f"{path.stem}.{spec.format or self._cfg.output_format}"))
            code, result = run(spec, self._cfg)
            status = "passed" if code == 0 else "failed"
            rows = len(result.rows)
            error = ""
        except ParticleLabError as e:
            self._log.error("Spec %s failed: %s", path.name, e)
            status, rows, error = "error", 0, str(e)
        elapsed = time.perf_counter() - start
        self._log.info("%-28s %-7s %7.1fs", path.name, status, elapsed)
        return {"spec": path.name, "status": status, "rows": rows, "wall_clock_s": elapsed, "error": error}

    def run(self) -> int:
        paths = self._spec_paths()
        if not paths:
            print(f"No specs found in {self._cfg.specs_dir}")
            return 1

        out_dir = self._cfg.data_dir / "acceptance"
        self._log.info("Running %d specs into %s", len(paths), out_dir)
        summary = [self._run_one(p, out_dir) for p in paths]
        write_rows_csv(summary, out_dir / "summary.csv")

        failed = [s["spec"] for s in summary if s["status"] != "passed"]
        if failed:
            self._log.error("%d of %d specs failed: %s", len(failed), len(summary), ", ".join(failed))
            return 1
        self._log.info("All %d specs passed", len(summary))
        return 0


if __name__ == "__main__":
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    raise SystemExit(AcceptanceSuite(sys.argv[1:]).run())
