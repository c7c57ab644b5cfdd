#!/usr/bin/env python3
"""Write the synthetic rule-trigger fixture pack to a directory.

Usage: python scripts/build_fixture_pack.py [OUT_DIR]

The pack contains one trace bundle per detection rule plus a hardened
baseline, in the layout the ``analyze`` subcommand reads.  A manifest.json
maps each fixture domain to the rule it is expected to trigger.
"""

import json
import sys
from pathlib import Path

from sso_auditor.synth import build_fixture_pack


def main() -> int:
    out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("fixture-pack")
    manifest = build_fixture_pack(out_dir)
    print(f"wrote {len(manifest['fixtures'])} fixtures under {out_dir}")
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
