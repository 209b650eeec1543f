"""Report serialization: JSON summaries and CSV tables.

Floats are written with `repr`, the shortest decimal form that parses back
to the identical double, so every emitted number survives a round trip
exactly and always carries at least full precision where it matters.
"""

import csv
import json
import time

from .errors import UsageError


def _rows_of(report):
    if hasattr(report, "to_rows"):
        return report.to_rows()
    if hasattr(report, "to_dict"):
        return [report.to_dict()]
    if isinstance(report, dict):
        return [report]
    if isinstance(report, list):
        return report
    raise UsageError("write_report: cannot serialize %r" % type(report).__name__)


def _summary_of(report):
    if hasattr(report, "to_dict"):
        return report.to_dict()
    if isinstance(report, dict):
        return report
    return {"rows": _rows_of(report)}


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, dict)):
        return json.dumps(value, sort_keys=True)
    return str(value)


def write_report(report, path, format="json"):
    """Write a report object; JSON keeps structure, CSV flattens to rows."""
    if format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_summary_of(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    if format != "csv":
        raise UsageError("write_report: format must be json or csv, got %r"
                         % (format,))
    rows = _rows_of(report)
    if not rows:
        raise UsageError("write_report: nothing to write")
    header = list(rows[0])
    for row in rows[1:]:
        for key in row:
            if key not in header:
                header.append(key)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(row.get(k)) for k in header])


def read_csv_rows(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def output_path(out_dir, experiment, fmt, timestamp=True, now=None):
    """`{experiment}-{timestamp}.{fmt}`, or no stamp for reproducible output."""
    if timestamp:
        stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime(now))
        name = "%s-%s.%s" % (experiment, stamp, fmt)
    else:
        name = "%s.%s" % (experiment, fmt)
    return "%s/%s" % (out_dir.rstrip("/") or ".", name)
