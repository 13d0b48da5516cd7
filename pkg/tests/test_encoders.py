"""Tokenizer, language tower, connector, vision tower, and freeze masks."""

import numpy as np
import pytest

import minivla.nn.autodiff as ad
from minivla.encoders import (
    PAD_ID,
    UNK_ID,
    FreezeMask,
    Vocabulary,
    connect_language,
    default_vocabulary,
    encode_language,
    encode_views,
    tokenize,
)
from minivla.model import ModelConfig, init_model_params
from minivla.nn import OptimizerState, adam_step


@pytest.fixture(scope="module")
def vocab():
    return default_vocabulary()


@pytest.fixture(scope="module")
def cfg():
    return ModelConfig()


@pytest.fixture(scope="module")
def params(cfg, vocab):
    return init_model_params(cfg, len(vocab), seed=0, dtype=np.float64)


# ---------------------------------------------------------------------------
# tokenizer and vocabulary


def test_tokenize_open_the_drawer(vocab):
    instr = tokenize("open the drawer", vocab)
    assert instr.token_ids.shape == (16,)
    assert (instr.token_ids != PAD_ID).sum() == 3
    assert instr.keep.sum() == 3
    assert not instr.keep[3:].any()


def test_tokenize_deterministic(vocab):
    a = tokenize("push the red block to the left", vocab)
    b = tokenize("push the red block to the left", vocab)
    np.testing.assert_array_equal(a.token_ids, b.token_ids)


def test_tokenize_unknown_word_maps_to_unk(vocab):
    instr = tokenize("defenestrate the drawer", vocab)
    assert instr.token_ids[0] == UNK_ID
    assert instr.token_ids[1] != UNK_ID


def test_tokenize_rejects_empty(vocab):
    with pytest.raises(ValueError):
        tokenize("   ", vocab)


def test_tokenize_case_and_punctuation(vocab):
    a = tokenize("Open the drawer!", vocab)
    b = tokenize("open the drawer", vocab)
    np.testing.assert_array_equal(a.token_ids, b.token_ids)


def test_vocabulary_file_round_trip(tmp_path, vocab):
    path = str(tmp_path / "vocab.txt")
    vocab.save(path)
    lines = open(path).read().splitlines()
    assert lines[0] == "<pad>" and lines[1] == "<unk>"
    loaded = Vocabulary.load(path)
    assert loaded.tokens == vocab.tokens


# ---------------------------------------------------------------------------
# language tower


def test_encode_language_output_shape(params, cfg, vocab):
    instr = tokenize("open the drawer", vocab)
    out = encode_language(params, cfg, instr.token_ids[None], instr.keep[None])
    assert out.shape == (1, 16, 64)


def test_pad_positions_cannot_influence_content_positions(params, cfg, vocab):
    # masked-attention oracle: randomizing ids under the pad mask leaves
    # non-pad outputs unchanged
    instr = tokenize("close the drawer", vocab)
    ids2 = instr.token_ids.copy()
    rng = np.random.default_rng(0)
    ids2[~instr.keep] = rng.integers(2, len(vocab), size=(~instr.keep).sum())
    out1 = encode_language(params, cfg, instr.token_ids[None], instr.keep[None]).data
    out2 = encode_language(params, cfg, ids2[None], instr.keep[None]).data
    np.testing.assert_array_equal(out1[0, instr.keep], out2[0, instr.keep])


def test_connector_fixed_output_shape(params, cfg, vocab):
    for text in ("open the drawer", "push the red block to the left"):
        instr = tokenize(text, vocab)
        emb = encode_language(params, cfg, instr.token_ids[None], instr.keep[None])
        lat = connect_language(params, cfg, emb, instr.keep[None])
        assert lat.shape == (1, 8, 64)


def test_connector_sees_only_unmasked_tokens(params, cfg, vocab):
    # single visible key: latents are a function of that token alone
    rng = np.random.default_rng(1)
    ids = rng.integers(2, len(vocab), size=(1, 16)).astype(np.int32)
    keep = np.zeros((1, 16), dtype=bool)
    keep[0, 5] = True
    emb = encode_language(params, cfg, ids, np.ones_like(keep))
    lat1 = connect_language(params, cfg, emb, keep).data
    # scramble every masked embedding row; visible row unchanged
    emb2 = emb.data.copy()
    emb2[0, ~keep[0]] = rng.standard_normal(emb2[0, ~keep[0]].shape)
    lat2 = connect_language(params, cfg, ad.Tensor(emb2), keep).data
    np.testing.assert_allclose(lat1, lat2, rtol=1e-10, atol=1e-12)


def test_identical_token_sequences_give_identical_latents(params, cfg, vocab):
    instr = tokenize("turn on the light", vocab)
    emb1 = encode_language(params, cfg, instr.token_ids[None], instr.keep[None])
    lat1 = connect_language(params, cfg, emb1, instr.keep[None]).data
    emb2 = encode_language(params, cfg, instr.token_ids[None], instr.keep[None])
    lat2 = connect_language(params, cfg, emb2, instr.keep[None]).data
    assert np.array_equal(lat1, lat2)


# ---------------------------------------------------------------------------
# vision tower


def test_patch_count_and_token_shapes(params, cfg):
    rng = np.random.default_rng(2)
    two = rng.random((1, 2, 2, 3, 48, 48))
    one = rng.random((1, 1, 2, 3, 48, 48))
    assert encode_views(params, cfg, two).shape == (1, 144, 64)
    assert encode_views(params, cfg, one).shape == (1, 72, 64)


def test_zero_and_one_images_encode_differently(params, cfg):
    z = encode_views(params, cfg, np.zeros((1, 2, 2, 3, 48, 48))).data
    o = encode_views(params, cfg, np.ones((1, 2, 2, 3, 48, 48))).data
    assert np.abs(z - o).max() > 0


def test_encode_views_rejects_wrong_extent(params, cfg):
    from minivla.nn import ShapeError

    with pytest.raises(ShapeError):
        encode_views(params, cfg, np.zeros((1, 2, 2, 3, 32, 32)))


# ---------------------------------------------------------------------------
# stage-1 freeze contract


def test_stage1_freeze_keeps_non_final_vision_params_bit_identical(cfg, vocab):
    params = init_model_params(cfg, len(vocab), seed=1)
    # stage-1 vision freeze; the towers this loss never touches are frozen
    # too so the optimizer's populated-gradient precondition holds
    mask = FreezeMask.stage1(cfg)
    params.freeze_prefixes(mask.prefixes + ("lang.", "conn.", "fusion.", "policy."))
    before = {n: t.data.copy() for n, t in params.items()}

    rng = np.random.default_rng(3)
    frames = rng.random((2, 2, 2, 3, 48, 48))
    out = encode_views(params, cfg, frames)
    ad.backward(out.sum())
    adam_step(params, OptimizerState(lr=1e-2))

    changed, frozen_ok = [], True
    for n, t in params.items():
        same = t.data.tobytes() == before[n].tobytes()
        if n.startswith("vision.") and not n.startswith(f"vision.block{cfg.vision_blocks}."):
            frozen_ok &= same
        elif n.startswith(f"vision.block{cfg.vision_blocks}.") and not same:
            changed.append(n)
    assert frozen_ok
    assert changed  # the final block does train


def test_stage2_mask_unfreezes_everything(cfg, vocab):
    params = init_model_params(cfg, len(vocab), seed=2)
    FreezeMask.stage1(cfg).apply(params)
    assert params.frozen_names()
    FreezeMask.stage2().apply(params)
    assert not params.frozen_names()
