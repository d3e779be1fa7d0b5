from __future__ import annotations

import math

import httpx
import numpy as np
import pytest

from scenes import obj, world_and_backend

from ordirs.dt_core import BBox, encode_rle, validate_frame
from ordirs.dt_core.stream import dumps_frame
from ordirs.errors import CassetteError, ConfigError, EmptyMaskError, ProtocolError, TransportError
from ordirs.perception import PipelineConfig
from ordirs.perception.contracts import Detection
from ordirs.perception.imaging import decode_depth_png, encode_depth_png
from ordirs.perception.live import Cassette, HttpBackend
from ordirs.perception.pipeline import build_dt_frame, build_dt_stream, detect, segment_box, suppress_duplicates
from ordirs.perception.server import PerceptionServer
from ordirs.synth_world import NoiseConfig

TABLE = obj("table", "operating table", (10, 10, 30, 20), 0.5, description="the operating table")
NURSE = obj("nurse", "nurse", (2, 2, 8, 12), 0.3, description="a nurse", attributes={"gown": "blue"})
MACHINE = obj("machine", "anesthesia machine", (32, 2, 38, 10), 0.8,
              description="an anesthesia machine with monitoring screens")


def test_detect_noiseless_table():
    world, be = world_and_backend([TABLE])
    dets = detect(be, world.image(0), PipelineConfig().lexicon)
    assert dets == [Detection("operating table", BBox(10, 10, 30, 20), 1.0)]


def test_detect_lexicon_gating():
    world, be = world_and_backend([TABLE])
    assert detect(be, world.image(0), ["nurse"]) == []


def test_jitter_is_deterministic():
    world, be = world_and_backend([TABLE, NURSE, MACHINE], NoiseConfig(seed=7, jitter_sigma=2.0))
    dets = detect(be, world.image(0), PipelineConfig().lexicon)
    assert len(dets) == 3
    assert any(d.bbox != world.frames[0].boxes["table"] for d in dets if d.label == "operating table")
    _, be2 = world_and_backend([TABLE, NURSE, MACHINE], NoiseConfig(seed=7, jitter_sigma=2.0))
    assert detect(be2, world.image(0), PipelineConfig().lexicon) == dets


ROOM = [
    obj("a", "operating table", (20, 40, 100, 80), 0.5),
    obj("b", "nurse", (110, 10, 150, 100), 0.4),
    obj("c", "door", (5, 5, 45, 35), 0.7),
]


def test_jitter_sigma_two_keeps_boxes_close():
    world, be = world_and_backend(ROOM, NoiseConfig(seed=7, jitter_sigma=2.0), width=160, height=120)
    dets = detect(be, world.image(0), PipelineConfig().lexicon)
    truth = {o.label: world.frames[0].boxes[o.name] for o in world.spec.objects}
    assert sorted(d.label for d in dets) == ["door", "nurse", "operating table"]
    for d in dets:
        assert d.bbox != truth[d.label]
        assert d.bbox.iou(truth[d.label]) > 0.8


def test_jittered_box_still_segments_exact_mask():
    world, be = world_and_backend(ROOM, NoiseConfig(seed=7, jitter_sigma=2.0), width=160, height=120)
    frame = build_dt_frame(world.image(0), 0, PipelineConfig(), be)
    truth = world.frames[0].masks
    by_label = {i.label: i for i in frame.instances}
    assert {k: v.mask for k, v in by_label.items()} == {"operating table": truth["a"], "nurse": truth["b"], "door": truth["c"]}
    assert all(0.5 < i.mask_confidence < 1.0 for i in frame.instances)


def test_segment_exact_box_and_beta():
    world, be = world_and_backend([TABLE])
    mask, beta = segment_box(be, world.image(0), BBox(10, 10, 30, 20))
    assert mask == world.frames[0].masks["table"]
    assert beta == 1.0


def test_segment_background_is_empty_mask_error():
    world, be = world_and_backend([TABLE])
    with pytest.raises(EmptyMaskError):
        segment_box(be, world.image(0), BBox(0, 0, 5, 5))


def test_segment_picks_larger_overlap():
    world, be = world_and_backend([TABLE, NURSE])
    # covers 4 nurse columns x 8 rows = 32 px and table 4x... (10..14, 10..12) = 8 px
    mask, _ = segment_box(be, world.image(0), BBox(4, 4, 14, 12))
    nurse = world.frames[0].masks["nurse"]
    table = world.frames[0].masks["table"]
    assert mask == nurse
    win = (slice(4, 12), slice(4, 14))
    from ordirs.dt_core import decode_rle

    assert decode_rle(nurse)[win].sum() > decode_rle(table)[win].sum()


def test_describe_and_attributes():
    world, be = world_and_backend([NURSE, MACHINE])
    img = world.image(0)
    assert be.describe_region(img, BBox(32, 2, 38, 10)) == "an anesthesia machine with monitoring screens"
    assert "blue gown" in be.describe_region(img, BBox(2, 2, 8, 12))


def test_depth_map_values():
    world, be = world_and_backend([TABLE, NURSE])
    d = be.estimate_depth(world.image(0))
    assert d[15, 20] == 0.5 and d[7, 5] == 0.3
    assert d[0, 39] == 1.0
    _, empty = world_and_backend([])
    flat = empty.estimate_depth(np.zeros((30, 40, 3), np.uint8))
    assert np.all(flat == flat.flat[0])


def test_build_dt_frame_matches_world_and_validates():
    world, be = world_and_backend([TABLE, NURSE])
    frame = build_dt_frame(world.image(0), 0, PipelineConfig(), be, video_id="scene")
    assert validate_frame(frame) == []
    assert len(frame.instances) == 2
    by_label = {i.label: i for i in frame.instances}
    assert by_label["nurse"].mask == world.frames[0].masks["nurse"]
    assert by_label["nurse"].depth.mean == 0.3 and by_label["nurse"].depth.std == 0.0
    assert by_label["nurse"].depth.pixel_count == by_label["nurse"].mask.area
    assert by_label["operating table"].description == "the operating table"


def test_captions_disabled_gives_empty_description():
    world, be = world_and_backend([NURSE])
    frame = build_dt_frame(world.image(0), 0, PipelineConfig(enable_captions=False), be)
    assert frame.instances[0].description == ""


def test_threshold_excludes_low_score():
    world, be = world_and_backend([TABLE, NURSE], NoiseConfig(score_overrides={"nurse": 0.25}))
    frame = build_dt_frame(world.image(0), 0, PipelineConfig(det_threshold=0.30), be)
    assert [i.label for i in frame.instances] == ["operating table"]


def test_score_noise_draw_decides_threshold():
    # find the authored half-normal draw independently and compare
    noise = NoiseConfig(seed=3, score_sigma=0.5)
    world, be = world_and_backend([TABLE, NURSE], noise)
    img = world.image(0)
    crc = __import__("zlib").crc32(np.ascontiguousarray(img).tobytes())
    expected = set()
    for idx, o in enumerate(world.spec.objects):
        rng = np.random.default_rng([3, crc, idx])
        score = 1.0 - abs(rng.normal(0.0, 0.5))
        if max(0.0, score) >= 0.3:
            expected.add(o.label)
    frame = build_dt_frame(img, 0, PipelineConfig(), be)
    assert {i.label for i in frame.instances} == expected


def test_threshold_monotone():
    world, be = world_and_backend([TABLE, NURSE, MACHINE], NoiseConfig(seed=1, score_sigma=0.4))
    img = world.image(0)
    counts = [len(build_dt_frame(img, 0, PipelineConfig(det_threshold=t), be).instances) for t in (0.0, 0.3, 0.6, 0.9)]
    assert counts == sorted(counts, reverse=True)


def test_max_instances_truncates():
    world, be = world_and_backend([TABLE, NURSE, MACHINE])
    frame = build_dt_frame(world.image(0), 0, PipelineConfig(max_instances=2), be)
    assert len(frame.instances) == 2


def test_depth_stats_example_three_pixels():
    class ThreePixel:
        identity = "three"

        def producer(self):
            return {}

        def detect(self, image, lexicon):
            return [Detection("nurse", BBox(0, 0, 3, 1), 0.9)]

        def segment_box(self, image, bbox):
            return encode_rle(np.array([[1, 1, 1]])), 0.9

        def describe_region(self, image, bbox):
            return "x"

        def estimate_depth(self, image):
            return np.array([[0.2, 0.4, 0.6]])

    frame = build_dt_frame(np.zeros((1, 3, 3), np.uint8), 0, PipelineConfig(), ThreePixel())
    d = frame.instances[0].depth
    oracle = math.sqrt(((0.2 - 0.4) ** 2 + 0 + (0.6 - 0.4) ** 2) / 3)
    assert d.mean == pytest.approx(0.4) and d.std == pytest.approx(oracle, abs=1e-6)
    assert round(d.std, 4) == 0.1633


def test_suppress_duplicates_keeps_higher():
    a = Detection("nurse", BBox(0, 0, 10, 10), 0.9)
    b = Detection("nurse", BBox(0, 0, 10, 10.5), 0.8)
    c = Detection("nurse", BBox(20, 0, 30, 10), 0.7)
    assert suppress_duplicates([b, a, c], 0.9) == [a, c]


def test_build_is_deterministic_and_parallel_safe():
    world, be = world_and_backend([TABLE, NURSE], NoiseConfig(seed=5, jitter_sigma=1.5), frames=4)
    imgs = [(t, world.image(t)) for t in range(4)]
    a = build_dt_stream(imgs, PipelineConfig(), be, video_id="v")
    b = build_dt_stream(imgs, PipelineConfig(), be, video_id="v", jobs=4)
    assert [dumps_frame(f) for f in a] == [dumps_frame(f) for f in b]


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(det_threshold=1.5)
    with pytest.raises(ConfigError):
        PipelineConfig(max_instances=0)
    with pytest.raises(ConfigError):
        PipelineConfig(lexicon=())


def test_depth_png_round_trip_precision():
    d = np.linspace(0, 1, 50).reshape(5, 10)
    back = decode_depth_png(encode_depth_png(d))
    assert np.max(np.abs(back - d)) <= 0.5 / 65535 + 1e-12


# -- wire protocol -----------------------------------------------------------


def test_http_backend_through_server_matches_in_process(tmp_path):
    world, be = world_and_backend([TABLE, NURSE])
    img = world.image(0)
    local = build_dt_frame(img, 0, PipelineConfig(), be)
    with PerceptionServer(be) as srv:
        eps = {c: srv.url for c in ("detect", "segment", "caption", "depth")}
        cassette = Cassette(tmp_path / "perc.jsonl", "record")
        remote_be = HttpBackend(eps, cassette=cassette)
        remote = build_dt_frame(img, 0, PipelineConfig(), remote_be)
        with pytest.raises(EmptyMaskError):
            remote_be.segment_box(img, BBox(0, 25, 5, 30))
    assert [i.mask for i in remote.instances] == [i.mask for i in local.instances]
    assert [i.bbox for i in remote.instances] == [i.bbox for i in local.instances]
    for r, l in zip(remote.instances, local.instances):
        assert r.depth.mean == pytest.approx(l.depth.mean, abs=1e-4)

    replay = HttpBackend({}, cassette=Cassette(tmp_path / "perc.jsonl", "replay"))
    again = build_dt_frame(img, 0, PipelineConfig(), replay)
    assert [i.to_dict() for i in again.instances] == [i.to_dict() for i in remote.instances]
    with pytest.raises(CassetteError):
        replay.detect(np.zeros((30, 40, 3), np.uint8), ["nurse"])


def _mock_backend(handler, retries=2):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    eps = {c: "http://svc" for c in ("detect", "segment", "caption", "depth")}
    sleeps = []
    return HttpBackend(eps, client=client, retries=retries, sleep=sleeps.append), sleeps


def test_retries_then_transport_error():
    calls = []

    def handler(request):
        calls.append(request.url.path)
        return httpx.Response(503)

    be, sleeps = _mock_backend(handler)
    with pytest.raises(TransportError) as exc:
        be.detect(np.zeros((2, 2, 3), np.uint8), ["nurse"])
    assert len(calls) == 3 and sleeps == [0.25, 0.5]
    assert exc.value.attempts == 3 and exc.value.route == "/detect"


def test_retry_recovers():
    state = {"n": 0}

    def handler(request):
        state["n"] += 1
        if state["n"] == 1:
            raise httpx.ConnectError("down")
        return httpx.Response(200, json={"detections": []})

    be, _ = _mock_backend(handler)
    assert be.detect(np.zeros((2, 2, 3), np.uint8), ["nurse"]) == []


def test_malformed_response_is_protocol_error():
    be, _ = _mock_backend(lambda r: httpx.Response(200, json={"detections": [{"label": "nurse"}]}))
    with pytest.raises(ProtocolError):
        be.detect(np.zeros((2, 2, 3), np.uint8), ["nurse"])


def test_live_backend_requires_endpoints():
    with pytest.raises(ConfigError):
        HttpBackend({"detect": "http://x"})
