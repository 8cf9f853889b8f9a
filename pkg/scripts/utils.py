import csv
import io
import json
import os
import tempfile
from typing import Any, Iterable, List, Sequence
from pathlib import Path


def load_json_file(file_path: str) -> Any:
    """Load JSON from file. Missing files and decode errors propagate to the caller."""
    with open(file_path, 'r') as f:
        return json.load(f)


def write_text_atomic(text: str, output_path: str) -> None:
    """Write text through a temp file in the target directory, then rename it into place."""
    path = Path(output_path)
    path.parent.mkdir(exist_ok=True, parents=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, 'w', newline='') as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def dump_json(data: Any) -> str:
    """Canonical JSON text: sorted keys, indent=2, trailing newline."""
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def format_float(value: float) -> str:
    """Shortest round-trip representation; -inf/inf/nan spelled the way csv readers expect."""
    return repr(float(value))


def write_csv_output(header: Sequence[str], rows: Iterable[Sequence[Any]], output_path: str) -> None:
    """Write a CSV table with a header row. Floats are rendered with format_float."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    write_text_atomic(buffer.getvalue(), output_path)


def read_csv_rows(file_path: str) -> List[dict]:
    """Read a CSV file with a header row into a list of dicts."""
    with open(file_path, 'r', newline='') as f:
        return list(csv.DictReader(f))
