"""Unique-parameter counts for tied and untied encoders at BERT-base width.

Run: python3 demos/parameter_budget.py
"""

from delicate.model import ModelConfig, param_count

BASE = dict(vocab_size=42, hidden_size=768, num_heads=12, ffn_size=3072, max_seq_len=128)


def main():
    for layers in (3, 6, 12):
        untied = param_count(ModelConfig(num_layers=layers, **BASE))
        tied = param_count(ModelConfig(num_layers=layers, share_layers=True, **BASE))
        print(f"{layers:2d} layers: untied {untied / 1e6:6.2f}M  tied {tied / 1e6:5.2f}M  ratio {tied / untied:.3f}")
    block = param_count(ModelConfig(num_layers=2, **BASE)) - param_count(ModelConfig(num_layers=1, **BASE))
    print(f"one encoder block holds {block:,} parameters; sharing keeps exactly one")


if __name__ == "__main__":
    main()
