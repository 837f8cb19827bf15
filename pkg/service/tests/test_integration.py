"""End-to-end: the attack toolkit's HTTP client against a live service."""

import socket
import threading
import time

import numpy as np
import pytest
import uvicorn

from encoder_service.app import create_app
from encoder_service.model import EncoderBackend, ServiceConfig

from derag.encoder import EncoderClient, EncoderEndpoint


def free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture(scope="module")
def live_service():
    config = ServiceConfig(untrained=True, seed=3, max_batch=8)
    app = create_app(config, backend=EncoderBackend(config))
    port = free_port()
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 30
    import requests

    while time.time() < deadline:
        try:
            if requests.get(f"http://127.0.0.1:{port}/healthz", timeout=1).status_code == 200:
                break
        except requests.ConnectionError:
            time.sleep(0.1)
    else:
        raise RuntimeError("service did not come up")
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)


class TestClientAgainstLiveService:
    def test_info_and_dimension_validation(self, live_service):
        client = EncoderClient(EncoderEndpoint(base_url=live_service))
        info = client.info()
        assert info["dim"] == 768
        assert info["vocab_size"] == 30522

    def test_embed_batch_splits_transparently(self, live_service):
        client = EncoderClient(EncoderEndpoint(base_url=live_service, max_batch=2))
        texts = [f"sample number {i}" for i in range(5)]
        vectors = client.embed_batch(texts)
        assert len(vectors) == 5
        assert all(v.shape == (768,) for v in vectors)
        repeat = client.embed_batch(texts)
        for a, b in zip(vectors, repeat):
            np.testing.assert_array_equal(a, b)

    def test_mlm_candidates_descending(self, live_service):
        client = EncoderClient(EncoderEndpoint(base_url=live_service))
        cands = client.mlm_candidates("fill the blank", tail_len=2, top_k=10)
        probs = [p for _, p in cands]
        assert probs == sorted(probs, reverse=True)

    def test_nll_ppl_consistency_over_the_wire(self, live_service):
        client = EncoderClient(EncoderEndpoint(base_url=live_service))
        out = client.nll_and_ppl(["plain short text", "another sample"])
        assert len(out) == 2
        for nll, ppl in out:
            assert ppl == pytest.approx(np.exp(nll), rel=1e-9)
