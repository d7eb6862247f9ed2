"""Run every numerical verification suite and print one JSON report per line."""
import json
import sys

from coopo.verify import SUITES, run_suite


def main():
    ok = True
    for name in SUITES:
        rep = run_suite(name)
        ok &= bool(rep["pass"])
        print(json.dumps(rep, default=float))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
