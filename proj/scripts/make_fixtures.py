"""Regenerate the bundled reference fixtures.

    python3 scripts/make_fixtures.py tokenizer   # tests/fixtures/tokenizer_corpus.jsonl
    python3 scripts/make_fixtures.py wordnet     # data/wordnet/{idm,sp,hp}.test.jsonl
    python3 scripts/make_fixtures.py tiny-model  # tests/fixtures/tiny_gpt2/*
    python3 scripts/make_fixtures.py tiny-eval   # tests/fixtures/tiny_eval{,_spans}.jsonl
    python3 scripts/make_fixtures.py gpt2 --out DIR  # GPT-2-small weights, config, reference digests

Requirements: transformers (slow GPT2Tokenizer), torch, safetensors,
transformer_lens, nltk with the WordNet 3.0 database on nltk.data.path.
Fixtures are committed; none of this runs during the C++ build.
"""
import argparse
import json
import os
import random
import re
import sys

import regex

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
VOCAB = os.path.join(ROOT, "data", "gpt2", "vocab.json")
MERGES = os.path.join(ROOT, "data", "gpt2", "merges.txt")
FIXTURES = os.path.join(ROOT, "tests", "fixtures")


def gpt2_tokenizer():
    from transformers import GPT2Tokenizer

    return GPT2Tokenizer(VOCAB, MERGES)


HAND_WRITTEN = [
    "",
    "hello world",
    "The capital of France is",
    "unbelievably fast",
    "mammal",
    "a domesticated carnivorous mammal is called a",
    "\"cat\" is a type of",
    "\"happy\" is a synonym of",
    "I don't think they'll go; she's sure we've won, I'm told, they'd agree.",
    "IT'S SHOUTING: DON'T 'S 'T 'RE",
    "Numbers 1234567890 and 3.14159 and 1,000,000 and 12th.",
    "   leading spaces",
    "trailing spaces   ",
    "tabs\tand\ttabs\t\tdouble",
    "line one\nline two\n\nline four\n",
    "windows\r\nline endings\r\n",
    "multiple     internal      spaces",
    "café naïve résumé façade",
    "日本語のテキストです",
    "emoji \U0001F642\U0001F680 in text \U0001F468‍\U0001F469‍\U0001F467",
    "Привет мир",
    "مرحبا بالعالم",
    "non breaking space and ideographic　space",
    "combining é marks and ﬁ ligature",
    "punctuation!!! ??? ... --- *** ### @@@",
    "https://example.com/path?query=1&other=two#frag",
    "email me at someone@example.org, thanks.",
    "mother-in-law, state-of-the-art, well-known",
    "U.S.A. and e.g. and i.e. are abbreviations.",
    "(parenthesised content) [brackets] {braces} <angles>",
    "$100 costs €90 or £75 today",
    "snake_case camelCase PascalCase kebab-case",
    "Greek αβγ ΔΩ letters",
    "Superscript² and fractions ½ ⅓",
    "Zero width​space and soft­hyphen",
    "Quotes “curly” and ‘single’ and «guillemets»",
    "Hindi नमस्ते दुनिया",
    "Korean 안녕하세요 세계",
    "Thai สวัสดี",
    "Mixed123abc456 and abc-123 and 4ever",
    " a",
    "a ",
    " ",
    "\n",
    "  \n  ",
    "'s",
    "x's y'S z'll",
    "Ġalready mapped byte char Ċ",
    "Supercalifragilisticexpialidocious antidisestablishmentarianism",
    "The quick brown fox jumps over the lazy dog.",
    "remaining after all deductions is called a",
    "lacking embellishment or ornamentation is called a",
    "make an effort or attempt is called a",
    "\"journal\" is a synonym of",
    "\"guama\" is a type of",
    "\"hexagon\" is a type of",
    "an institution of higher education created to educate and grant degrees is called a",
    "prepare for eating by applying heat is called a",
    "Tab\tat end\t",
    "end with newline and space \n ",
]


def cmd_tokenizer(args):
    import nltk  # noqa: F401  (only to fail early if WordNet is missing)
    from nltk.corpus import wordnet as wn

    tok = gpt2_tokenizer()
    texts = list(HAND_WRITTEN)
    rng = random.Random(7)
    defs = [s.definition() for s in wn.all_synsets()]
    rng.shuffle(defs)
    texts += defs[: 100 - len(texts)]
    assert len(texts) == 100
    path = os.path.join(FIXTURES, "tokenizer_corpus.jsonl")
    with open(path, "w", encoding="utf-8") as f:
        for t in texts:
            f.write(json.dumps({"text": t, "ids": tok.encode(t)}, ensure_ascii=True) + "\n")
    print("wrote", path)


def clean_definition(d):
    d = re.sub(r"\([^)]*\)", " ", d)
    d = re.sub(r"[^A-Za-z0-9 ]", " ", d)
    return re.sub(r"\s+", " ", d).strip()


def split_test(records, seed):
    """20% train; the remaining 80% split 10% validation / 90% test."""
    rng = random.Random(seed)
    records = list(records)
    rng.shuffle(records)
    n_train = len(records) // 5
    rest = records[n_train:]
    n_val = len(rest) // 10
    return rest[n_val:]


def cmd_wordnet(args):
    from nltk.corpus import wordnet as wn

    tok = gpt2_tokenizer()
    idm, sp, hp = [], [], []
    for s in wn.all_synsets():
        lemma = s.lemma_names()[0]
        if "_" in lemma:
            continue
        definition = clean_definition(s.definition())
        if definition:
            idm.append({"id": f"IDM-{s.name()}", "task": "IDM", "source_text": definition, "target": lemma})
        others = [l for l in s.lemma_names()[1:] if "_" not in l]
        if others:
            sp.append({"id": f"SP-{s.name()}", "task": "SP", "source_text": lemma, "target": others[0]})
        for h in s.hypernyms():
            hl = h.lemma_names()[0]
            if "_" not in hl:
                hp.append({"id": f"HP-{s.name()}", "task": "HP", "source_text": lemma, "target": hl})
                break

    os.makedirs(os.path.join(ROOT, "data", "wordnet"), exist_ok=True)
    for name, recs in (("idm", idm), ("sp", sp), ("hp", hp)):
        test = split_test(recs, args.seed)
        # Pre-filter to GPT-2 single-token targets to keep the bundled files small.
        test = [r for r in test if len(tok.encode(" " + r["target"])) == 1]
        path = os.path.join(ROOT, "data", "wordnet", f"{name}.test.jsonl")
        with open(path, "w", encoding="utf-8") as f:
            for r in test:
                f.write(json.dumps(r, ensure_ascii=True) + "\n")
        print(name, "synset records", len(recs), "test (single-token)", len(test), "->", path)


# ---------------------------------------------------------------- tiny model

TINY = dict(n_layer=6, n_embd=16, n_head=2, n_inner=64, n_positions=128, vocab_size=50257)
CROSSCHECK_PROMPTS = [
    "a domesticated carnivorous mammal is called a",
    "unbelievably fast runners outpaced everyone",
    "\"hexagon\" is a type of",
    "the quick brown fox jumps over the lazy dog",
    "prepare for eating by applying heat is called a",
]
CROSSCHECK_LAYER = 3
SAMPLE_STRIDE = 97


def byte_decoder():
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return {chr(c): b for b, c in zip(bs, cs)}


def token_byte_offsets(tok, ids):
    dec = byte_decoder()
    offs, pos = [], 0
    for i in ids:
        piece = tok.convert_ids_to_tokens(i)
        n = len(bytearray([dec[c] for c in piece]))
        offs.append((pos, pos + n))
        pos += n
    return offs


def word_ranges_reference(text, tok, ids):
    """Whitespace words; punctuation-only tokens stay singletons; runs of the
    remaining tokens inside one word form a group."""
    data = text.encode("utf-8")
    cls = []  # per byte: 's' space, 'w' letter/number, 'p' other
    for ch in text:
        c = "s" if regex.match(r"\s", ch) else ("w" if regex.match(r"[\p{L}\p{N}]", ch) else "p")
        cls.extend(c * len(ch.encode("utf-8")))
    word_of = []
    w = -1
    prev_space = True
    for c in cls:
        if c != "s" and prev_space:
            w += 1
        word_of.append(w if c != "s" else None)
        prev_space = c == "s"
    ranges, run = [], []

    def flush():
        if len(run) >= 2:
            ranges.append((run[0], run[-1]))
        run.clear()

    cur_word = None
    for t, (a, b) in enumerate(token_byte_offsets(tok, ids)):
        content = [k for k in range(a, b) if cls[k] != "s"]
        if not content:
            flush()
            cur_word = None
            continue
        word = word_of[content[0]]
        punct = all(cls[k] == "p" for k in content)
        if word != cur_word:
            flush()
            cur_word = word
        if punct:
            flush()
        else:
            run.append(t)
    flush()
    assert len(data) == sum(b - a for a, b in token_byte_offsets(tok, ids))
    return ranges


def write_crosscheck(model, vocab_size, path):
    import torch

    tok = gpt2_tokenizer()
    sample_ids = list(range(0, vocab_size, SAMPLE_STRIDE))
    records = []
    for prompt in CROSSCHECK_PROMPTS:
        ids = tok.encode(prompt)
        ranges = word_ranges_reference(prompt, tok, ids)
        groups, k = [], 0
        for s, e in ranges:
            groups += [(t, t) for t in range(k, s)]
            groups.append((s, e))
            k = e + 1
        groups += [(t, t) for t in range(k, len(ids))]

        def pool_mean(x, hook):
            return torch.stack([x[:, s:e + 1, :].mean(dim=1) for s, e in groups], dim=1)

        tokens = torch.tensor([ids])
        with torch.no_grad():
            plain = model(tokens, attention_mask=None)[0, -1]
            hooked = model.run_with_hooks(
                tokens, attention_mask=None,
                fwd_hooks=[(f"blocks.{CROSSCHECK_LAYER}.hook_resid_post", pool_mean)])
        assert hooked.shape[1] == len(groups)
        hooked = hooked[0, -1]

        def digest(x):
            x = x.double()
            return {"argmax": int(torch.argmax(x)), "sum": float(x.sum()), "sumsq": float((x * x).sum()),
                    "sampled": [float(x[i]) for i in sample_ids]}

        records.append({"prompt": prompt, "ids": ids, "word_ranges": ranges, "group_count": len(groups),
                        "plain": digest(plain), "hooked": digest(hooked)})

    meta = {"framework": "transformer_lens", "torch": torch.__version__, "layer": CROSSCHECK_LAYER,
            "site": "resid_post", "protocol": "mean", "granularity": "word", "sample_stride": SAMPLE_STRIDE}
    with open(path, "w") as fh:
        json.dump({"meta": meta, "records": records}, fh, indent=1)
        fh.write("\n")


def cmd_gpt2(args):
    # Needs the "gpt2" checkpoint from the Hugging Face hub or its local cache.
    from safetensors.torch import save_file
    from transformer_lens import HookedTransformer
    from transformers import GPT2LMHeadModel

    os.makedirs(args.out, exist_ok=True)
    hf = GPT2LMHeadModel.from_pretrained("gpt2")
    sd = {k: t.float().contiguous() for k, t in hf.transformer.state_dict().items()
          if not k.endswith(("attn.bias", "attn.masked_bias"))}
    save_file(sd, os.path.join(args.out, "model.safetensors"), metadata={"format": "pt"})
    c = hf.config
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump({"n_layers": c.n_layer, "d_model": c.n_embd, "n_heads": c.n_head, "d_mlp": 4 * c.n_embd,
                   "vocab_size": c.vocab_size, "max_positions": c.n_positions, "activation": "gelu_new",
                   "positional_scheme": "learned-absolute", "layer_norm_epsilon": c.layer_norm_epsilon}, fh,
                  indent=2)
        fh.write("\n")
    model = HookedTransformer.from_pretrained("gpt2", fold_ln=False, center_writing_weights=False,
                                              center_unembed=False, default_prepend_bos=False)
    model.eval()
    write_crosscheck(model, c.vocab_size, os.path.join(args.out, "crosscheck.json"))
    print("wrote", args.out)


def cmd_tiny_model(args):
    import torch
    from safetensors.torch import save_file
    from transformer_lens import HookedTransformer, HookedTransformerConfig

    torch.manual_seed(1234)
    d, nl, f, v, p = TINY["n_embd"], TINY["n_layer"], TINY["n_inner"], TINY["vocab_size"], TINY["n_positions"]

    def rnd(*shape, std=0.1):
        return (torch.randn(*shape) * std).float().contiguous()

    w = {"wte.weight": rnd(v, d, std=0.5), "wpe.weight": rnd(p, d, std=0.3)}
    for i in range(nl):
        w[f"h.{i}.ln_1.weight"] = 1.0 + rnd(d)
        w[f"h.{i}.ln_1.bias"] = rnd(d, std=0.05)
        w[f"h.{i}.attn.c_attn.weight"] = rnd(d, 3 * d, std=0.4)
        w[f"h.{i}.attn.c_attn.bias"] = rnd(3 * d, std=0.05)
        w[f"h.{i}.attn.c_proj.weight"] = rnd(d, d, std=0.3)
        w[f"h.{i}.attn.c_proj.bias"] = rnd(d, std=0.05)
        w[f"h.{i}.ln_2.weight"] = 1.0 + rnd(d)
        w[f"h.{i}.ln_2.bias"] = rnd(d, std=0.05)
        w[f"h.{i}.mlp.c_fc.weight"] = rnd(d, f, std=0.3)
        w[f"h.{i}.mlp.c_fc.bias"] = rnd(f, std=0.05)
        w[f"h.{i}.mlp.c_proj.weight"] = rnd(f, d, std=0.2)
        w[f"h.{i}.mlp.c_proj.bias"] = rnd(d, std=0.05)
    w["ln_f.weight"] = 1.0 + rnd(d)
    w["ln_f.bias"] = rnd(d, std=0.05)

    out = os.path.join(FIXTURES, "tiny_gpt2")
    os.makedirs(out, exist_ok=True)
    save_file(w, os.path.join(out, "model.safetensors"), metadata={"format": "pt"})
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump({"n_layers": nl, "d_model": d, "n_heads": TINY["n_head"], "d_mlp": f, "vocab_size": v,
                   "max_positions": p, "activation": "gelu", "positional_scheme": "learned-absolute",
                   "layer_norm_epsilon": 1e-5}, fh, indent=2)
        fh.write("\n")

    cfg = HookedTransformerConfig(n_layers=nl, d_model=d, d_head=d // TINY["n_head"], n_heads=TINY["n_head"],
                                  d_mlp=f, d_vocab=v, n_ctx=p, act_fn="gelu_new", normalization_type="LN",
                                  positional_embedding_type="standard", default_prepend_bos=False,
                                  dtype=torch.float32)
    model = HookedTransformer(cfg)
    nh, dh = TINY["n_head"], d // TINY["n_head"]
    sd = {"embed.W_E": w["wte.weight"], "pos_embed.W_pos": w["wpe.weight"],
          "ln_final.w": w["ln_f.weight"], "ln_final.b": w["ln_f.bias"],
          "unembed.W_U": w["wte.weight"].T.contiguous(), "unembed.b_U": torch.zeros(v)}
    for i in range(nl):
        qkv = w[f"h.{i}.attn.c_attn.weight"]
        q, k, vv = torch.tensor_split(qkv, 3, dim=1)
        bq, bk, bv = torch.tensor_split(w[f"h.{i}.attn.c_attn.bias"], 3)
        pre = f"blocks.{i}"
        sd[f"{pre}.ln1.w"], sd[f"{pre}.ln1.b"] = w[f"h.{i}.ln_1.weight"], w[f"h.{i}.ln_1.bias"]
        sd[f"{pre}.ln2.w"], sd[f"{pre}.ln2.b"] = w[f"h.{i}.ln_2.weight"], w[f"h.{i}.ln_2.bias"]
        sd[f"{pre}.attn.W_Q"] = q.reshape(d, nh, dh).permute(1, 0, 2).contiguous()
        sd[f"{pre}.attn.W_K"] = k.reshape(d, nh, dh).permute(1, 0, 2).contiguous()
        sd[f"{pre}.attn.W_V"] = vv.reshape(d, nh, dh).permute(1, 0, 2).contiguous()
        sd[f"{pre}.attn.b_Q"] = bq.reshape(nh, dh)
        sd[f"{pre}.attn.b_K"] = bk.reshape(nh, dh)
        sd[f"{pre}.attn.b_V"] = bv.reshape(nh, dh)
        sd[f"{pre}.attn.W_O"] = w[f"h.{i}.attn.c_proj.weight"].reshape(nh, dh, d).contiguous()
        sd[f"{pre}.attn.b_O"] = w[f"h.{i}.attn.c_proj.bias"]
        sd[f"{pre}.mlp.W_in"] = w[f"h.{i}.mlp.c_fc.weight"]
        sd[f"{pre}.mlp.b_in"] = w[f"h.{i}.mlp.c_fc.bias"]
        sd[f"{pre}.mlp.W_out"] = w[f"h.{i}.mlp.c_proj.weight"]
        sd[f"{pre}.mlp.b_out"] = w[f"h.{i}.mlp.c_proj.bias"]
    missing, unexpected = model.load_state_dict(sd, strict=False)
    missing = [m for m in missing if not m.endswith(("mask", "IGNORE"))]
    assert not missing and not unexpected, (missing, unexpected)
    model.eval()

    write_crosscheck(model, v, os.path.join(out, "crosscheck.json"))
    print("wrote", out)


SPLIT_WORDS = {"of", "that", "which", "who", "in", "for", "with", "to", "by", "from", "on", "or", "and", "as"}


def heuristic_spans(text):
    """Two-way split before the first function word; a stand-in for a level-1 constituency parse."""
    words = [(m.start(), m.end(), m.group()) for m in re.finditer(r"\S+", text)]
    if len(words) == 1:
        return [[words[0][0], words[0][1], "NP"]]
    for i, (_, _, w) in enumerate(words[1:], start=1):
        if w.lower() in SPLIT_WORDS:
            return [[words[0][0], words[i - 1][1], "NP"], [words[i][0], words[-1][1], "PP"]]
    return [[words[0][0], words[-1][1], "NP"]]


def cmd_tiny_eval(args):
    """Small dataset whose targets are partly the tiny model's own greedy predictions."""
    import torch
    from safetensors.torch import load_file
    from transformers import GPT2Config, GPT2LMHeadModel

    tiny = os.path.join(FIXTURES, "tiny_gpt2")
    cfg = GPT2Config(n_layer=TINY["n_layer"], n_embd=TINY["n_embd"], n_head=TINY["n_head"], n_inner=TINY["n_inner"],
                     n_positions=TINY["n_positions"], vocab_size=TINY["vocab_size"], activation_function="gelu_new",
                     layer_norm_epsilon=1e-5, tie_word_embeddings=True)
    model = GPT2LMHeadModel(cfg)
    state = {"transformer." + k: v for k, v in load_file(os.path.join(tiny, "model.safetensors")).items()}
    state["lm_head.weight"] = state["transformer.wte.weight"]
    model.load_state_dict(state, strict=False)
    model.eval()
    tok = gpt2_tokenizer()
    dec = byte_decoder()

    def prompt(r):
        if r["task"] == "IDM":
            return r["source_text"] + " is called a"
        kind = "a synonym of" if r["task"] == "SP" else "a type of"
        return '"' + r["source_text"] + '" is ' + kind

    items, spans = [], [{"meta": {"parser": "heuristic-split", "version": 1, "level": 1}}]
    per_task = {"IDM": 24, "SP": 8, "HP": 8}
    for task, n in per_task.items():
        with open(os.path.join(ROOT, "data", "wordnet", task.lower() + ".test.jsonl")) as fh:
            rows = [json.loads(line) for line in fh][:n * 3]
        kept = 0
        for r in rows:
            if kept == n:
                break
            if task == "IDM" and len(r["source_text"].split()) > 8:
                continue
            ids = tok.encode(prompt(r))
            with torch.no_grad():
                pred = int(torch.argmax(model(torch.tensor([ids])).logits[0, -1]))
            piece = bytes(dec[c] for c in tok.convert_ids_to_tokens(pred)).decode("utf-8", "replace")
            if kept % 3 != 2 and piece.startswith(" ") and piece[1:].isalpha() and tok.encode(piece) == [pred]:
                r = dict(r, target=piece[1:])
            items.append(r)
            spans.append({"id": r["id"], "spans": heuristic_spans(r["source_text"])})
            kept += 1
    for name, rows in (("tiny_eval.jsonl", items), ("tiny_eval_spans.jsonl", spans)):
        with open(os.path.join(FIXTURES, name), "w") as fh:
            for r in rows:
                fh.write(json.dumps(r) + "\n")
    print("wrote", len(items), "items")


def main():
    ap = argparse.ArgumentParser()
    sub = ap.add_subparsers(dest="cmd", required=True)
    sub.add_parser("tokenizer")
    w = sub.add_parser("wordnet")
    w.add_argument("--seed", type=int, default=13)
    sub.add_parser("tiny-model")
    sub.add_parser("tiny-eval")
    g = sub.add_parser("gpt2")
    g.add_argument("--out", required=True)
    args = ap.parse_args()
    {"tokenizer": cmd_tokenizer, "wordnet": cmd_wordnet, "tiny-model": cmd_tiny_model,
     "tiny-eval": cmd_tiny_eval, "gpt2": cmd_gpt2}[args.cmd](args)


if __name__ == "__main__":
    sys.exit(main())
