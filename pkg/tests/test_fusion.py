"""Cross-modal decoder: configuration contract, layering, granularity."""

import pytest
import torch

from emofuse.encoders import ModalityFeature
from emofuse.fusion import CMDConfig, CMDLayer, CrossModalDecoder


def make_features(order="LVA", bsz=2, width=16, seed=0):
    torch.manual_seed(seed)
    feats = {}
    for i, letter in enumerate(order):
        tokens = torch.randn(bsz, 3 + i, width)
        feats[letter] = ModalityFeature(
            tokens=tokens, pooled=tokens.mean(dim=1),
            mask=torch.ones(bsz, 3 + i, dtype=torch.bool))
    return feats


def test_config_validation():
    CMDConfig(layers=2, hidden=16, heads=2, order="VA")
    with pytest.raises(ValueError, match="over 'LVA'"):
        CMDConfig(layers=1, hidden=16, heads=2, order="X")
    with pytest.raises(ValueError, match="repeat"):
        CMDConfig(layers=2, hidden=16, heads=2, order="VV")
    with pytest.raises(ValueError, match="must equal fused modality count"):
        CMDConfig(layers=3, hidden=16, heads=2, order="VA")
    with pytest.raises(ValueError, match="divisible"):
        CMDConfig(layers=1, hidden=15, heads=2, order="V")
    with pytest.raises(ValueError, match="kv_granularity"):
        CMDConfig(layers=1, hidden=16, heads=2, order="V", kv_granularity="both")


def test_decoder_has_one_layer_per_modality():
    for order in ("V", "LA", "LVA"):
        dec = CrossModalDecoder(CMDConfig(layers=len(order), hidden=16, heads=2,
                                          order=order))
        assert len(dec.layers) == len(order)


def test_decode_shapes_and_intermediates():
    torch.manual_seed(1)
    dec = CrossModalDecoder(CMDConfig(layers=3, hidden=16, heads=2, order="LVA"))
    target = torch.randn(2, 1, 16)
    out, states = dec.decode(target, make_features())
    assert out.shape == (2, 1, 16)
    assert len(states) == 3
    assert torch.equal(states[-1], out)
    # forward returns the final state only
    assert torch.equal(dec(target, make_features()), out)


def test_decode_rejects_wrong_feature_set():
    dec = CrossModalDecoder(CMDConfig(layers=2, hidden=16, heads=2, order="LV"))
    feats = make_features("LVA")
    with pytest.raises(ValueError, match="does not match provided"):
        dec.decode(torch.randn(1, 1, 16), feats)
    with pytest.raises(ValueError, match="width mismatch"):
        CMDLayer(16, 2)(torch.randn(1, 1, 8), torch.randn(1, 3, 8))


def test_zeroed_output_projections_make_decode_identity():
    # with every sublayer's output projection zeroed the residual stream is
    # the only signal path, so decode must return the target unchanged
    torch.manual_seed(2)
    dec = CrossModalDecoder(CMDConfig(layers=2, hidden=16, heads=2, order="VA"))
    with torch.no_grad():
        for layer in dec.layers:
            for attn in (layer.self_attn, layer.cross_attn):
                attn.out_proj.weight.zero_()
                attn.out_proj.bias.zero_()
            layer.mlp[2].weight.zero_()
            layer.mlp[2].bias.zero_()
    target = torch.randn(3, 1, 16)
    out, _ = dec.decode(target, make_features("VA", bsz=3))
    assert torch.equal(out, target)


def test_global_granularity_uses_pooled_vector():
    torch.manual_seed(3)
    token_dec = CrossModalDecoder(CMDConfig(layers=1, hidden=16, heads=2, order="V"))
    global_dec = CrossModalDecoder(CMDConfig(layers=1, hidden=16, heads=2, order="V",
                                             kv_granularity="global"))
    global_dec.load_state_dict(token_dec.state_dict())

    feats = make_features("V")
    target = torch.randn(2, 1, 16)
    out_global, _ = global_dec.decode(target, feats)
    out_token, _ = token_dec.decode(target, feats)
    assert not torch.allclose(out_global, out_token)

    # feeding the pooled vector as a one-token sequence reproduces "global"
    pooled_feats = {"V": ModalityFeature(
        tokens=feats["V"].pooled.unsqueeze(1),
        pooled=feats["V"].pooled,
        mask=torch.ones(2, 1, dtype=torch.bool))}
    out_manual, _ = token_dec.decode(target, pooled_feats)
    assert torch.allclose(out_global, out_manual, atol=1e-6)


def test_padded_source_tokens_do_not_affect_output():
    torch.manual_seed(4)
    dec = CrossModalDecoder(CMDConfig(layers=1, hidden=16, heads=2, order="A"))
    tokens = torch.randn(1, 4, 16)
    mask = torch.tensor([[True, True, False, False]])
    feats = {"A": ModalityFeature(tokens=tokens, pooled=tokens[:, :2].mean(1), mask=mask)}
    out1, _ = dec.decode(torch.zeros(1, 1, 16), feats)
    spoiled = tokens.clone()
    spoiled[:, 2:] = 123.0
    feats2 = {"A": ModalityFeature(tokens=spoiled, pooled=tokens[:, :2].mean(1), mask=mask)}
    out2, _ = dec.decode(torch.zeros(1, 1, 16), feats2)
    assert torch.allclose(out1, out2, atol=1e-6)
