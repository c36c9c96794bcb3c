import os

import pytest


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    """A locally constructed miniature BERT saved to disk, so tests run with
    no model hub access. Weights are random but fixed by the torch seed."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    root = tmp_path_factory.mktemp("tiny-bert")
    vocab = [
        "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
        "a", "the", "book", "novel", "person", "##x", "##y",
        "thanks", "helps", "drives", "there", "to", "be", "of",
        "assistance", "expensive", "is", "has", "property",
    ]
    vocab_path = root / "vocab.txt"
    vocab_path.write_text("\n".join(vocab) + "\n", encoding="utf-8")
    tokenizer = BertTokenizerFast(vocab_file=str(vocab_path), do_lower_case=True)
    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    model = BertModel(config)
    model.eval()
    out = root / "model"
    model.save_pretrained(str(out))
    tokenizer.save_pretrained(str(out))
    return str(out)
