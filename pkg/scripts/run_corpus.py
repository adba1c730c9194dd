#!/usr/bin/env python3
"""Run the demonstration corpus and print the verdict table.

Usage: python scripts/run_corpus.py [directory]

Defaults to the corpus shipped inside the package.  Exit status 0 when
every entry's warnings match its manifest, 1 otherwise.
"""

import sys

from scvm.corpus import run_corpus
from scvm.report import ManifestError


def main(argv):
    directory = argv[1] if len(argv) > 1 else None
    try:
        result = run_corpus(directory)
    except ManifestError as exc:
        print(f"corpus error: {exc}", file=sys.stderr)
        return 2
    print(result.format_table())
    return 0 if result.all_passed else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv))
