"""Converts a Hugging Face GPT-2 checkpoint into the files circuitbench reads.

Writes model.bin (flat f32 tensor file), vocab.json, merges.txt and
manifest.json (source, tensor name mapping, dtype conversions, SHA-256 of
every output). Re-running on the same source yields byte-identical files.

Usage: python3 convert_gpt2.py <checkpoint dir or hub id, e.g. gpt2> <out_dir>
"""
import hashlib
import json
import os
import shutil
import struct
import sys

import torch
from transformers import GPT2LMHeadModel

MAGIC = b"GPT2TNSR"
FORMAT_VERSION = 1


def tensor_map(n_layer):
    """(source name, canonical name) in the order the loader expects."""
    out = [("wte.weight", "wte"), ("wpe.weight", "wpe")]
    for l in range(n_layer):
        for src, dst in [
            ("ln_1.weight", "ln_1.g"), ("ln_1.bias", "ln_1.b"),
            ("attn.c_attn.weight", "attn.c_attn.w"), ("attn.c_attn.bias", "attn.c_attn.b"),
            ("attn.c_proj.weight", "attn.c_proj.w"), ("attn.c_proj.bias", "attn.c_proj.b"),
            ("ln_2.weight", "ln_2.g"), ("ln_2.bias", "ln_2.b"),
            ("mlp.c_fc.weight", "mlp.c_fc.w"), ("mlp.c_fc.bias", "mlp.c_fc.b"),
            ("mlp.c_proj.weight", "mlp.c_proj.w"), ("mlp.c_proj.bias", "mlp.c_proj.b"),
        ]:
            out.append((f"h.{l}.{src}", f"h.{l}.{dst}"))
    out += [("ln_f.weight", "ln_f.g"), ("ln_f.bias", "ln_f.b")]
    return out


def expected_shape(canonical, cfg):
    d, v, p = cfg.n_embd, cfg.vocab_size, cfg.n_positions
    tail = canonical.split(".", 2)[-1] if canonical.startswith("h.") else canonical
    return {
        "wte": (v, d), "wpe": (p, d), "ln_f.g": (d,), "ln_f.b": (d,),
        "ln_1.g": (d,), "ln_1.b": (d,), "ln_2.g": (d,), "ln_2.b": (d,),
        # Conv1D weights are already [in x out]
        "attn.c_attn.w": (d, 3 * d), "attn.c_attn.b": (3 * d,),
        "attn.c_proj.w": (d, d), "attn.c_proj.b": (d,),
        "mlp.c_fc.w": (d, 4 * d), "mlp.c_fc.b": (4 * d,),
        "mlp.c_proj.w": (4 * d, d), "mlp.c_proj.b": (d,),
    }[tail]


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tokenizer_file(source, name):
    """The released file, copied verbatim so the primary tokenizer sees it unchanged."""
    if os.path.isdir(source):
        path = os.path.join(source, name)
        if not os.path.isfile(path):
            raise SystemExit(f"error: checkpoint directory has no {name}")
        return path
    from huggingface_hub import hf_hub_download
    return hf_hub_download(source, name)


def convert(source, out_dir):
    model = GPT2LMHeadModel.from_pretrained(source, torch_dtype=torch.float32)
    cfg = model.config
    sd = model.transformer.state_dict()
    os.makedirs(out_dir, exist_ok=True)

    mapping, dtypes, body = [], set(), bytearray()
    for src, dst in tensor_map(cfg.n_layer):
        if src not in sd:
            raise SystemExit(f"error: checkpoint is missing tensor {src}")
        t = sd[src]
        if tuple(t.shape) != expected_shape(dst, cfg):
            raise SystemExit(f"error: tensor {src} has shape {list(t.shape)}, "
                             f"expected {list(expected_shape(dst, cfg))}")
        if t.dtype != torch.float32:
            dtypes.add(f"{t.dtype} -> float32")
        t = t.detach().to(torch.float32).contiguous()
        nb = dst.encode("utf-8")
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<B", t.dim()) + b"".join(struct.pack("<Q", s) for s in t.shape)
        body += t.numpy().astype("<f4").tobytes()
        mapping.append({"source": src, "canonical": dst})

    with open(os.path.join(out_dir, "model.bin"), "wb") as f:
        f.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(mapping)))
        f.write(body)
        f.write(hashlib.sha256(body).digest())

    for name in ("vocab.json", "merges.txt"):
        shutil.copyfile(tokenizer_file(source, name), os.path.join(out_dir, name))

    files = ["model.bin", "vocab.json", "merges.txt"]
    manifest = {
        "source": source,
        "revision": getattr(cfg, "_commit_hash", None),
        "config": {"n_layer": cfg.n_layer, "n_head": cfg.n_head, "d_model": cfg.n_embd,
                   "d_vocab": cfg.vocab_size, "n_ctx": cfg.n_positions},
        "tensors": mapping,
        "dtype_conversions": sorted(dtypes),
        "outputs": [{"path": f, "sha256": sha256_file(os.path.join(out_dir, f)),
                     "bytes": os.path.getsize(os.path.join(out_dir, f))} for f in files],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def main():
    if len(sys.argv) != 3:
        raise SystemExit(__doc__)
    m = convert(sys.argv[1], sys.argv[2])
    print(f"wrote {len(m['tensors'])} tensors ({m['config']['n_layer']} layers, "
          f"d_model {m['config']['d_model']}) to {sys.argv[2]}")


if __name__ == "__main__":
    main()
