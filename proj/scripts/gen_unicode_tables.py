"""Emit src/unicode_tables.inc: code point ranges for \\p{L}, \\p{N} and \\s as
matched by the `regex` module, which is what the reference GPT-2 tokenizer uses."""
import sys
import regex

CLASSES = [("kLetterRanges", r"\p{L}"), ("kNumberRanges", r"\p{N}"), ("kSpaceRanges", r"\s")]


def ranges(pattern):
    rx = regex.compile(pattern)
    out, start = [], None
    for cp in range(0x110000):
        hit = bool(rx.match(chr(cp)))
        if hit and start is None:
            start = cp
        elif not hit and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main(path):
    with open(path, "w") as f:
        f.write(f"// Generated by scripts/gen_unicode_tables.py (regex {regex.__version__}). Do not edit.\n\n")
        for name, pat in CLASSES:
            rs = ranges(pat)
            f.write(f"inline constexpr CodepointRange {name}[] = {{\n")
            for i in range(0, len(rs), 4):
                f.write("    " + " ".join(f"{{0x{a:05X}, 0x{b:05X}}}," for a, b in rs[i:i + 4]) + "\n")
            f.write("};\n\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/unicode_tables.inc")
