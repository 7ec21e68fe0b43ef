#!/usr/bin/env python3
"""Reference values for the operator oracle test, computed with PyTorch in float64.

Each case stores its inputs, the forward output and the gradients of
sum(out * r) for a fixed random r. Regenerate with

    python3 tools/oracle/make_fixtures.py tests/fixtures/oracle.json
"""
import json
import sys

import torch
import torch.nn.functional as F

torch.manual_seed(20240611)
torch.set_default_dtype(torch.float64)


def enc(t):
    t = t.detach()
    return {"shape": list(t.shape), "data": [float(v) for v in t.reshape(-1).tolist()]}


def leaf(*shape, lo=-1.0, hi=1.0):
    return (torch.rand(*shape) * (hi - lo) + lo).requires_grad_(True)


def backprop(out, *inputs):
    r = torch.rand(out.shape) * 2 - 1
    (out * r).sum().backward()
    return enc(r), [enc(t.grad) for t in inputs]


def conv_cases():
    cases = []
    for n, ci, co, h, w, k, stride, pad, groups in [
        (2, 3, 4, 7, 7, 3, 1, 1, 1),
        (1, 4, 6, 9, 9, 3, 2, 1, 2),
        (2, 5, 5, 9, 9, 7, 1, 3, 5),
        (1, 2, 3, 6, 6, 1, 1, 0, 1),
        (1, 3, 2, 10, 10, 5, 1, 2, 1),
    ]:
        x, wt, b = leaf(n, ci, h, w), leaf(co, ci // groups, k, k), leaf(co)
        out = F.conv2d(x, wt, b, stride=stride, padding=pad, groups=groups)
        r, (gx, gw, gb) = backprop(out, x, wt, b)
        cases.append({"stride": stride, "pad": pad, "groups": groups, "x": enc(x), "w": enc(wt), "b": enc(b),
                      "out": enc(out), "r": r, "gx": gx, "gw": gw, "gb": gb})
    return cases


def conv_transpose_cases():
    cases = []
    for n, ci, co, h, k, stride in [(2, 3, 2, 4, 2, 2), (1, 4, 3, 3, 3, 2), (1, 2, 2, 5, 3, 1)]:
        x, wt, b = leaf(n, ci, h, h), leaf(ci, co, k, k), leaf(co)
        out = F.conv_transpose2d(x, wt, b, stride=stride)
        r, (gx, gw, gb) = backprop(out, x, wt, b)
        cases.append({"stride": stride, "x": enc(x), "w": enc(wt), "b": enc(b), "out": enc(out), "r": r,
                      "gx": gx, "gw": gw, "gb": gb})
    return cases


def pool_cases():
    cases = []
    for kind, k in [("max", 2), ("avg", 2), ("max", 4), ("avg", 4)]:
        x = leaf(2, 3, 8, 8)
        out = F.max_pool2d(x, k, k) if kind == "max" else F.avg_pool2d(x, k, k)
        r, (gx,) = backprop(out, x)
        cases.append({"kind": kind, "kernel": k, "x": enc(x), "out": enc(out), "r": r, "gx": gx})
    return cases


def bilinear_cases():
    cases = []
    for shape, s in [((1, 2, 3, 3), 2), ((2, 1, 4, 5), 4), ((1, 3, 2, 2), 8)]:
        x = leaf(*shape)
        out = F.interpolate(x, scale_factor=s, mode="bilinear", align_corners=True)
        r, (gx,) = backprop(out, x)
        cases.append({"scale": s, "x": enc(x), "out": enc(out), "r": r, "gx": gx})
    return cases


def batchnorm_cases():
    cases = []
    for training in (True, False):
        x, g, b = leaf(3, 4, 5, 5, lo=-2, hi=3), leaf(4), leaf(4)
        rm, rv = torch.rand(4) - 0.5, torch.rand(4) + 0.5
        rm0, rv0 = rm.clone(), rv.clone()
        out = F.batch_norm(x, rm, rv, g, b, training=training, momentum=0.1, eps=1e-5)
        r, (gx, gg, gb) = backprop(out, x, g, b)
        cases.append({"training": training, "x": enc(x), "gamma": enc(g), "beta": enc(b),
                      "running_mean_in": enc(rm0), "running_var_in": enc(rv0),
                      "running_mean_out": enc(rm), "running_var_out": enc(rv),
                      "out": enc(out), "r": r, "gx": gx, "ggamma": gg, "gbeta": gb})
    return cases


def layernorm_cases():
    x, g, b = leaf(2, 5, 8, lo=-3, hi=2), leaf(8), leaf(8)
    out = F.layer_norm(x, (8,), g, b, eps=1e-6)
    r, (gx, gg, gb) = backprop(out, x, g, b)
    return [{"x": enc(x), "gamma": enc(g), "beta": enc(b), "out": enc(out), "r": r, "gx": gx, "ggamma": gg,
             "gbeta": gb}]


def activation_cases():
    cases = []
    for name, fn in [("gelu", F.gelu), ("sigmoid", torch.sigmoid), ("softmax", lambda t: torch.softmax(t, -1))]:
        x = leaf(3, 4, 7, lo=-6, hi=6)
        out = fn(x)
        r, (gx,) = backprop(out, x)
        cases.append({"kind": name, "x": enc(x), "out": enc(out), "r": r, "gx": gx})
    return cases


def mhsa_cases():
    cases = []
    for n, t, d, heads in [(2, 6, 8, 2), (1, 9, 12, 3), (1, 4, 8, 1)]:
        x = leaf(n, t, d)
        ws = {k: leaf(d, d, lo=-0.5, hi=0.5) for k in ("wq", "wk", "wv", "wo")}
        bs = {k: leaf(d, lo=-0.2, hi=0.2) for k in ("bq", "bk", "bv", "bo")}

        def heads_of(z):
            return z.reshape(n, t, heads, d // heads).transpose(1, 2)

        q = heads_of(F.linear(x, ws["wq"], bs["bq"]))
        k = heads_of(F.linear(x, ws["wk"], bs["bk"]))
        v = heads_of(F.linear(x, ws["wv"], bs["bv"]))
        a = torch.softmax(q @ k.transpose(-1, -2) / (d // heads) ** 0.5, dim=-1)
        ctx = (a @ v).transpose(1, 2).reshape(n, t, d)
        out = F.linear(ctx, ws["wo"], bs["bo"])
        # Cross-check against the library implementation of the same layer.
        mha = torch.nn.MultiheadAttention(d, heads, batch_first=True)
        with torch.no_grad():
            mha.in_proj_weight.copy_(torch.cat([ws["wq"], ws["wk"], ws["wv"]]))
            mha.in_proj_bias.copy_(torch.cat([bs["bq"], bs["bk"], bs["bv"]]))
            mha.out_proj.weight.copy_(ws["wo"])
            mha.out_proj.bias.copy_(bs["bo"])
            assert torch.allclose(mha(x, x, x, need_weights=False)[0], out, atol=1e-12)
        r, grads = backprop(out, x, *ws.values())
        case = {"heads": heads, "x": enc(x), "out": enc(out), "r": r, "gx": grads[0]}
        case.update({k: enc(w) for k, w in ws.items()})
        case.update({k: enc(b) for k, b in bs.items()})
        case.update({"g" + k: g for k, g in zip(ws, grads[1:])})
        cases.append(case)
    return cases


def seg_loss_cases():
    cases = []
    for shape, smooth in [((2, 1, 6, 6), 1.0), ((3, 2, 4, 4), 1.0), ((1, 1, 5, 5), 0.5)]:
        z = leaf(*shape, lo=-4, hi=4)
        y = (torch.rand(shape) < 0.4).double()
        p = torch.sigmoid(z)
        pc = p.clamp(1e-7, 1 - 1e-7)
        bce = -(y * pc.log() + (1 - y) * (1 - pc).log()).mean()
        dims = (2, 3)
        dice = 1 - (2 * (p * y).sum(dims) + smooth) / (p.sum(dims) + y.sum(dims) + smooth)
        total = 0.5 * bce + dice.mean()
        assert torch.allclose(bce, F.binary_cross_entropy(pc, y))
        total.backward()
        cases.append({"smooth": smooth, "logits": enc(z), "target": enc(y), "bce": bce.item(), "dice": dice.mean().item(),
                      "total": total.item(), "gz": enc(z.grad)})
    return cases


def main():
    fixtures = {
        "generator": f"torch {torch.__version__}",
        "conv2d": conv_cases(),
        "conv_transpose2d": conv_transpose_cases(),
        "pool2d": pool_cases(),
        "bilinear": bilinear_cases(),
        "batchnorm2d": batchnorm_cases(),
        "layernorm": layernorm_cases(),
        "activation": activation_cases(),
        "mhsa": mhsa_cases(),
        "seg_loss": seg_loss_cases(),
    }
    with open(sys.argv[1] if len(sys.argv) > 1 else "oracle.json", "w") as f:
        json.dump(fixtures, f, separators=(",", ":"))


if __name__ == "__main__":
    main()
