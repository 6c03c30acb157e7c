"""Reference fingerprints for the diff fixture corpus.

A deliberately small unified-diff reader (no validation) plus hashlib. The
canonical text is the path, a newline, then per hunk its normalized header
"@@ -s,c +s,c @@" and every body line (tag + text), with the no-newline marker
kept as its own line. Output: one "<diff file> <path> <sha256>" row per file,
frozen into tests/fixtures/diffs/fingerprints.txt.
"""
import hashlib
import pathlib
import re
import sys

HUNK = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def side(header):
    p = header[4:].split("\t")[0].strip()
    return p


def strip1(p):
    return p.split("/", 1)[1] if "/" in p else p


def file_path(old, new):
    if new == "/dev/null":
        return strip1(old)
    if old == "/dev/null":
        return strip1(new)
    if "/" in old and "/" in new and strip1(old) == strip1(new):
        return strip1(new)
    return new


def fingerprints(text):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    out = {}
    path = None
    buf = None
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            if path is not None:
                out[path] = buf
            path = file_path(side(line), side(lines[i + 1]))
            buf = path + "\n"
            i += 2
            continue
        m = HUNK.match(line)
        if m:
            os_, oc, ns, nc = m.group(1), m.group(2) or "1", m.group(3), m.group(4) or "1"
            buf += f"@@ -{os_},{oc} +{ns},{nc} @@\n"
            old_left, new_left = int(oc), int(nc)
            i += 1
            while old_left > 0 or new_left > 0 or (i < len(lines) and lines[i].startswith("\\")):
                body = lines[i]
                if body.startswith("\\"):
                    buf += "\\ No newline at end of file\n"
                else:
                    tag = body[0] if body else " "
                    if tag != "+":
                        old_left -= 1
                    if tag != "-":
                        new_left -= 1
                    buf += tag + body[1:] + "\n"
                i += 1
            continue
        i += 1
    if path is not None:
        out[path] = buf
    return {p: hashlib.sha256(b.encode("utf-8")).hexdigest() for p, b in out.items()}


def main():
    root = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).parent.parent / "fixtures" / "diffs")
    for diff in sorted(root.glob("*.diff")):
        for path, digest in sorted(fingerprints(diff.read_text(encoding="utf-8")).items()):
            print(f"{diff.name} {path} {digest}")


if __name__ == "__main__":
    main()
