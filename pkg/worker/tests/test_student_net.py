import contextlib
import copy
import json
from pathlib import Path

import torch

from eval_worker.student_net import StudentNet, param_breakdown
from eval_worker.text_data import encode_batch

PRIMARY_FIXTURE = (
    Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "param_count_cases.json"
)


@contextlib.contextmanager
def reported(capsys, name):
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"[acceptance] {name}: FAIL", flush=True)
        raise
    else:
        with capsys.disabled():
            print(f"[acceptance] {name}: PASS", flush=True)


def test_count_parity_acceptance(capsys):
    """Every architecture in the shared fixture table must cost exactly the
    same number of parameters here as in the search engine's own model."""
    with reported(capsys, "worker-count-parity"):
        table = json.loads(PRIMARY_FIXTURE.read_text(encoding="utf-8"))
        assert table["format"] == "param-count-fixtures-v1"
        mismatches = []
        for case in table["cases"]:
            model = StudentNet(case["arch"], case["shape"])
            got = param_breakdown(model)
            if got != case["expected"]:
                mismatches.append((case["name"], case["expected"], got))
        assert not mismatches, f"parameter count mismatches: {mismatches}"


def test_forward_shape(simplest_record, shape, vocab):
    torch.manual_seed(0)
    model = StudentNet(simplest_record, shape).eval()
    sentences = [("honestly", "a", "lovely", "film"), ("not", "dull", "but", "witty")]
    tokens, mask = encode_batch(sentences, vocab, shape["max_positions"])
    with torch.no_grad():
        logits = model(tokens, mask)
        logits2, pooled = model.forward_with_block_outputs(tokens, mask)
    assert logits.shape == (2, shape["num_classes"])
    assert torch.equal(logits, logits2)
    assert len(pooled) == simplest_record["repeats"]
    assert all(p.shape == (2, simplest_record["hidden_width"]) for p in pooled)


def test_mul_merge_of_mixed_widths_runs(simplest_record, shape, vocab):
    record = copy.deepcopy(simplest_record)
    block = record["block"]
    block["nodes"][0]["output_width"] = 128
    block["nodes"][1]["output_width"] = 256
    block["nodes"][2].update(input_mode="mul", output_width=128)
    # v1 and v2 both read the input; v3 multiplies their (padded) outputs
    block["edges"] = [[0, 1], [0, 2], [1, 3], [2, 3], [3, 5]]
    torch.manual_seed(0)
    model = StudentNet(record, shape).eval()
    tokens, mask = encode_batch([("very", "messy", "staging")], vocab, shape["max_positions"])
    with torch.no_grad():
        logits = model(tokens, mask)
    assert logits.shape == (1, shape["num_classes"])
    assert torch.isfinite(logits).all()


def test_padding_does_not_change_width1_conv_logits(simplest_record, shape, vocab):
    """With width-1 convolutions and masked pooling, pad positions must be
    inert: the same sentence scores identically alone and padded in a batch."""
    torch.manual_seed(0)
    model = StudentNet(simplest_record, shape).eval()
    short = ("a", "charming", "premise")
    long = ("frankly", "the", "soundtrack", "is", "very", "grating", "overall")
    alone, alone_mask = encode_batch([short], vocab, shape["max_positions"])
    padded, padded_mask = encode_batch([short, long], vocab, shape["max_positions"])
    with torch.no_grad():
        solo = model(alone, alone_mask)
        batched = model(padded, padded_mask)
    assert torch.allclose(solo[0], batched[0], atol=1e-5)
