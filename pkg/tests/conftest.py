"""Shared oracles and fixtures."""

import numpy as np
import pytest

from digitrec.data import synth_digit_dataset


def fft_peak_hz(x, rate, pad_to=None):
    """Frequency of the largest magnitude bin, refined by parabolic interpolation.

    Independent of the package: a plain zero-padded, Hann-windowed FFT.
    """
    x = np.asarray(x, dtype=np.float64)
    n = pad_to or 8 * len(x)
    mag = np.abs(np.fft.rfft(x * np.hanning(len(x)), n))
    k = int(np.argmax(mag[1:-1])) + 1
    a, b, c = np.log(mag[k - 1 : k + 2] + 1e-300)
    delta = 0.5 * (a - c) / (a - 2 * b + c)
    return (k + delta) * rate / n


def snr_db(clean, mixed):
    """Re-measure SNR of ``mixed`` against ``clean`` directly from the samples."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(mixed, dtype=np.float64) - clean
    return 10 * np.log10(np.mean(clean**2) / np.mean(noise**2))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """10 synthetic clips per digit at 16 kHz."""
    out = tmp_path_factory.mktemp("corpus")
    return synth_digit_dataset(10, 16000, 7, out)


TINY_E2E = dict(in_coeffs=8, in_frames=8, cnn_channels=2, n_res_blocks=1,
                bridge_out=6, rnn_hidden=8, n_rnn_blocks=1)


def tiny_end_to_end_gradcheck(seed=0, h=1e-5):
    """Finite-difference check of the whole model on a tiny configuration.

    Parameters are the initializer's draw plus N(0, 0.3) noise so that no
    gradient is accidentally near zero. The first conv bias of each residual
    block is frozen: the layer norm right after it removes any per-channel
    constant, so its true gradient is exactly zero and only rounding noise
    would be compared.
    """
    from digitrec.model import ModelConfig, init_model, logits
    from digitrec.nn.functional import softmax_cross_entropy
    from digitrec.nn.gradcheck import grad_check
    from digitrec.rng import derive_rng

    cfg = ModelConfig(**TINY_E2E)
    rng = np.random.default_rng(seed)
    params = init_model(cfg, rng)
    for name, p in params.items():
        p.data = p.data + 0.3 * rng.standard_normal(p.shape)
        if name.endswith("conv1.bias") and name.startswith("res"):
            p.requires_grad = False
    names = list(params)
    x = rng.standard_normal((3, 1, cfg.in_coeffs, cfg.in_frames))
    y = np.array([1, 4, 7])

    def loss(*tensors):
        ps = dict(zip(names, tensors))
        out = logits(ps, cfg, x, training=True, rng=derive_rng(seed, "mask"))
        return softmax_cross_entropy(out, y)[0]

    return grad_check(loss, [params[n] for n in names], h=h, name="model")


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
