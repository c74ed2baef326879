#!/usr/bin/env python3
"""Sidecar for the python-bridge provider.

Reads a JSON request file, runs the requested backbone op, writes FDT1
tensors into the request's workdir, and prints a one-line JSON reply.
Requires torch + diffusers + transformers and downloaded weights; the
"probe" op reports availability without loading anything heavy.

Ops: probe | caption | window_grid | image_embed | text_embed |
caption_embed
"""

import json
import struct
import sys
from pathlib import Path

TEMPLATES = [
    "itap of a {}.",
    "a bad photo of the {}.",
    "a origami {}.",
    "a photo of the large {}.",
    "a {} in a video game.",
    "art of the {}.",
    "a photo of the small {}.",
]


def write_fdt(path, array):
    import numpy as np

    arr = np.ascontiguousarray(array)
    if arr.dtype.kind == "f":
        arr = arr.astype("<f4")
        code = 0
    else:
        arr = arr.astype("u1")
        code = 1
    header = b"FDT1" + bytes([code, arr.ndim])
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())
    return str(path)


def reply(obj):
    print(json.dumps(obj))
    sys.exit(0)


def probe():
    try:
        import diffusers  # noqa: F401
        import torch  # noqa: F401
        import transformers  # noqa: F401
    except ImportError as e:
        reply({"ok": False, "error": f"missing package: {e.name}"})
    reply({"ok": True})


_CACHE = {}


def _device():
    import torch

    return "cuda" if torch.cuda.is_available() else "cpu"


def _clip(backbones):
    if "clip" not in _CACHE:
        from transformers import CLIPModel, CLIPProcessor

        name_map = {
            "clip-vit-b-16": "openai/clip-vit-base-patch16",
            "clip-vit-l-14": "openai/clip-vit-large-patch14",
        }
        name = name_map.get(backbones["multimodal"], backbones["multimodal"])
        _CACHE["clip"] = (CLIPModel.from_pretrained(name).to(_device()).eval(),
                          CLIPProcessor.from_pretrained(name))
    return _CACHE["clip"]


def _dino(backbones):
    if "dino" not in _CACHE:
        import torch

        name_map = {
            "dinov2-vit-b-14": "dinov2_vitb14",
            "dinov2-vit-l-14": "dinov2_vitl14",
        }
        name = name_map.get(backbones["visual"], backbones["visual"])
        model = torch.hub.load("facebookresearch/dinov2", name)
        _CACHE["dino"] = model.to(_device()).eval()
    return _CACHE["dino"]


def _load_ppm(path):
    import numpy as np
    from PIL import Image

    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def _dense_features(pixels, image_size, backbones):
    import numpy as np
    import torch
    from PIL import Image

    model = _dino(backbones)
    img = Image.fromarray(pixels).resize((image_size, image_size),
                                         Image.BILINEAR)
    x = torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0)
    mean = torch.tensor([0.485, 0.456, 0.406])
    std = torch.tensor([0.229, 0.224, 0.225])
    x = ((x - mean) / std).permute(2, 0, 1)[None].to(_device())
    with torch.no_grad():
        tokens = model.forward_features(x)["x_norm_patchtokens"][0]
    cells = image_size // 14
    return tokens.reshape(cells, cells, -1).cpu().numpy()


def op_caption(req):
    import numpy as np
    import torch
    from diffusers import StableDiffusionPipeline

    work = Path(req["workdir"])
    size = req["image_size"]
    name_map = {"stable-diffusion-2-1": "stabilityai/stable-diffusion-2-1"}
    gen_name = name_map.get(req["backbones"]["generator"],
                            req["backbones"]["generator"])
    if "sd" not in _CACHE:
        pipe = StableDiffusionPipeline.from_pretrained(
            gen_name, safety_checker=None)
        _CACHE["sd"] = pipe.to(_device())
    pipe = _CACHE["sd"]

    # capture per-step cross-attention probabilities from every attn2
    captured = []  # (step, layer, heads x q x tokens)
    step_box = {"step": 0}

    class Capture:
        def __init__(self, layer):
            self.layer = layer

        def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                     attention_mask=None, **kwargs):
            residual = hidden_states
            is_cross = encoder_hidden_states is not None
            states = encoder_hidden_states if is_cross else hidden_states
            q = attn.head_to_batch_dim(attn.to_q(hidden_states))
            k = attn.head_to_batch_dim(attn.to_k(states))
            v = attn.head_to_batch_dim(attn.to_v(states))
            probs = attn.get_attention_scores(q, k, attention_mask)
            if is_cross:
                captured.append((step_box["step"], self.layer,
                                 probs.detach().float().cpu()))
            out = torch.bmm(probs, v)
            out = attn.batch_to_head_dim(out)
            out = attn.to_out[0](out)
            out = attn.to_out[1](out)
            return out if out.shape == residual.shape else out

    procs = {}
    layer_ids = {}
    for i, name in enumerate(n for n in pipe.unet.attn_processors
                             if n.endswith("attn2.processor")):
        layer_ids[name] = i
        procs[name] = Capture(i)
    for name in pipe.unet.attn_processors:
        if name not in procs:
            procs[name] = pipe.unet.attn_processors[name]
    pipe.unet.set_attn_processor(procs)

    def on_step(ppl, step, timestep, cbk):
        step_box["step"] = step + 1
        return cbk

    generator = torch.Generator(device=_device()).manual_seed(req["seed"])
    result = pipe(req["caption_text"],
                  negative_prompt=", ".join(req["negative_prompts"]),
                  num_inference_steps=req["diffusion_steps"],
                  generator=generator,
                  callback_on_step_end=on_step)
    image = result.images[0].resize((size, size))
    pixels = np.asarray(image, dtype=np.uint8)
    (work / "image.rgb").write_bytes(pixels.tobytes())

    tokenizer = pipe.tokenizer
    enc = tokenizer(req["caption_text"], return_tensors="pt",
                    padding="max_length", truncation=True,
                    max_length=tokenizer.model_max_length)
    ids = enc.input_ids[0].tolist()
    n_tokens = sum(1 for t in ids if t != tokenizer.pad_token_id)
    noun_tokens = {}
    for noun in req["nouns"]:
        sub = tokenizer(noun, add_special_tokens=False).input_ids
        idx = []
        for start in range(len(ids) - len(sub) + 1):
            if ids[start:start + len(sub)] == sub:
                idx = list(range(start, start + len(sub)))
                break
        noun_tokens[noun] = idx or [0]

    # conditional half of the batch only; one FDT per (t, l, h, token)
    attention = []
    for step, layer, probs in captured:
        heads = probs.shape[0] // 2
        cond = probs[heads:]
        q = cond.shape[1]
        side = int(round(q ** 0.5))
        needed = sorted({t for toks in noun_tokens.values() for t in toks})
        for h in range(heads):
            for token in needed:
                grid = cond[h, :, token].reshape(side, side).numpy()
                rel = work / f"attn_{step}_{layer}_{h}_{token}.fdt"
                attention.append({
                    "t": step, "l": layer, "h": h, "token": token,
                    "path": write_fdt(rel, grid)})

    feats = _dense_features(pixels, size, req["backbones"])
    clip_model, clip_proc = _clip(req["backbones"])
    with torch.no_grad():
        cap_in = clip_proc(text=[req["caption_text"]], return_tensors="pt",
                           padding=True, truncation=True).to(_device())
        cap_embed = clip_model.get_text_features(**cap_in)[0].cpu().numpy()
        template_embeds = {}
        for noun in req["nouns"]:
            texts = [t.format(noun) for t in TEMPLATES]
            t_in = clip_proc(text=texts, return_tensors="pt",
                             padding=True).to(_device())
            mat = clip_model.get_text_features(**t_in).cpu().numpy()
            template_embeds[noun] = write_fdt(
                work / f"tmpl_{noun.replace(' ', '_')}.fdt", mat)

    reply({
        "ok": True,
        "image_hw": [size, size],
        "tokens": n_tokens,
        "noun_tokens": noun_tokens,
        "attention": attention,
        "feature_grid": write_fdt(work / "grid.fdt", feats),
        "caption_embed": write_fdt(work / "cap.fdt", cap_embed),
        "template_embeds": template_embeds,
        "image_rgb": str(work / "image.rgb"),
    })


def op_window_grid(req):
    work = Path(req["workdir"])
    pixels = _load_ppm(req["image"])
    top, left, win = req["top"], req["left"], req["window"]
    crop = pixels[top:top + win, left:left + win]
    feats = _dense_features(crop, req["image_size"], req["backbones"])
    reply({"ok": True, "grid": write_fdt(work / "grid.fdt", feats)})


def op_image_embed(req):
    import torch

    work = Path(req["workdir"])
    pixels = _load_ppm(req["image"])
    clip_model, clip_proc = _clip(req["backbones"])
    with torch.no_grad():
        inputs = clip_proc(images=pixels, return_tensors="pt").to(_device())
        embed = clip_model.get_image_features(**inputs)[0].cpu().numpy()
    reply({"ok": True, "embed": write_fdt(work / "embed.fdt", embed)})


def op_text_embed(req):
    import torch

    clip_model, clip_proc = _clip(req["backbones"])
    texts = [t.format(req["term"]) for t in TEMPLATES]
    with torch.no_grad():
        t_in = clip_proc(text=texts, return_tensors="pt",
                         padding=True).to(_device())
        mat = clip_model.get_text_features(**t_in).cpu().numpy()
    reply({"ok": True, "embed": mat.mean(axis=0).tolist()})


def op_caption_embed(req):
    import torch

    clip_model, clip_proc = _clip(req["backbones"])
    with torch.no_grad():
        t_in = clip_proc(text=[req["text"]], return_tensors="pt",
                         padding=True, truncation=True).to(_device())
        embed = clip_model.get_text_features(**t_in)[0].cpu().numpy()
    reply({"ok": True, "embed": embed.tolist()})


def main():
    req = json.loads(Path(sys.argv[1]).read_text())
    op = req.get("op")
    if op == "probe":
        probe()
    handlers = {
        "caption": op_caption,
        "window_grid": op_window_grid,
        "image_embed": op_image_embed,
        "text_embed": op_text_embed,
        "caption_embed": op_caption_embed,
    }
    if op not in handlers:
        reply({"ok": False, "error": f"unknown op {op!r}"})
    try:
        handlers[op](req)
    except Exception as e:  # surfaced per item by the TS side
        reply({"ok": False, "error": f"{type(e).__name__}: {e}"})


if __name__ == "__main__":
    main()
