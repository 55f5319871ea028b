"""Validate summary.json files against summary.schema.json."""
import json
import pathlib
import sys

try:
    import jsonschema
except ImportError:
    print("jsonschema not installed; skipping")
    sys.exit(77)

schema = json.loads((pathlib.Path(__file__).parent / "summary.schema.json").read_text())
status = 0
for path in sys.argv[1:]:
    doc = json.loads(pathlib.Path(path).read_text())
    errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.path))
    for e in errors:
        print(f"{path}: {'/'.join(map(str, e.path))}: {e.message}")
        status = 1
    if not errors:
        print(f"{path}: ok")
sys.exit(status)
