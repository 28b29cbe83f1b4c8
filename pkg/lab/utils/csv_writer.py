# lab/utils/csv_writer.py - DETERMINISTIC CSV AND key=value OUTPUT
import csv
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

PathLike = Union[str, Path]


def format_value(value: Any) -> str:
    """Shortest round-trip text for floats; nan/inf spelled out."""
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if value is None:
        return ''
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float) or hasattr(value, 'dtype'):
        number = float(value)
        if math.isnan(number):
            return 'nan'
        if math.isinf(number):
            return 'inf' if number > 0 else '-inf'
        return repr(number)
    return str(value)


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"Row of length {len(row)} under a header of {len(header)} in {path.name}")
            writer.writerow([format_value(v) for v in row])
    return path


def write_key_values(path: PathLike, values: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = ''.join(f"{key}={format_value(value)}\n" for key, value in values.items())
    path.write_text(text, encoding='utf-8')
    return path


def read_csv(path: PathLike) -> List[Dict[str, str]]:
    with Path(path).open(encoding='utf-8', newline='') as handle:
        return list(csv.DictReader(handle))


def read_key_values(path: PathLike) -> Dict[str, str]:
    values = {}
    for line in Path(path).read_text(encoding='utf-8').splitlines():
        if line:
            key, value = line.split('=', 1)
            values[key] = value
    return values
