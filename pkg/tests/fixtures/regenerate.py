"""Rebuild the checked-in sample source and its recorded API fixtures.

Run from the repository root:  python3 tests/fixtures/regenerate.py
"""

import shutil
import sys
import tempfile
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

from wikidata_stub import StubWikidata, write_sample_source  # noqa: E402

from hypetkg.bench import BuildConfig, WikidataClient, build_benchmark  # noqa: E402


def main() -> None:
    source = HERE / "yago_sample"
    fixtures = HERE / "wikidata"
    write_sample_source(source)
    shutil.rmtree(fixtures, ignore_errors=True)
    client = WikidataClient(fixtures, mode="record", transport=StubWikidata(), min_interval=0.0, sleep=lambda s: None)
    with tempfile.TemporaryDirectory() as out:
        report = build_benchmark(BuildConfig(source, Path(out), map_yago_relations=True, workers=1), client)
    print(report.to_dict())
    print(f"{len(list(fixtures.glob('*.json')))} fixtures in {fixtures}")


if __name__ == "__main__":
    main()
