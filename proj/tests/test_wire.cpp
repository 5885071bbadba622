// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <future>
#include <random>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "beeplan/errors.hpp"
#include "beeplan/specdec.hpp"
#include "beeplan/wire.hpp"

using namespace beeplan;

TEST_CASE("frame golden bytes: every header offset is pinned") {
  WireFrame frame;
  frame.msg_type = WireFrame::Type::PackedSd;
  frame.batch_id = 0x0102030405060708ull;
  frame.micro_index = 0xBEEF;
  frame.flags = WireFrame::kFlagCompressed | WireFrame::kFlagByteSplit;
  frame.payload = {0xAA, 0xBB};

  Bytes wire = encode_frame(frame);
  Bytes expected = {
      'B', 'B', 'F', '1',
      0x01,                                           // msg_type PackedSd
      0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01, // batch_id LE
      0xEF, 0xBE,                                     // micro_index LE
      0x03,                                           // flags
      0x02, 0x00, 0x00, 0x00,                         // payload_len LE
      0xAA, 0xBB,
  };
  CHECK(wire == expected);
  CHECK(wire.size() == kFrameHeaderSize + 2);

  WireFrame decoded = decode_frame(wire);
  CHECK(decoded.msg_type == WireFrame::Type::PackedSd);
  CHECK(decoded.batch_id == frame.batch_id);
  CHECK(decoded.micro_index == frame.micro_index);
  CHECK(decoded.flags == frame.flags);
  CHECK(decoded.payload == frame.payload);
}

TEST_CASE("decode_frame rejects corruption") {
  WireFrame frame;
  frame.payload = {1, 2, 3};
  Bytes wire = encode_frame(frame);

  Bytes bad_magic = wire;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_frame(bad_magic), FrameCorrupt);

  Bytes bad_type = wire;
  bad_type[4] = 9;
  CHECK_THROWS_AS(decode_frame(bad_type), FrameCorrupt);

  Bytes truncated(wire.begin(), wire.end() - 1);
  CHECK_THROWS_AS(decode_frame(truncated), FrameCorrupt);
}

TEST_CASE("a PackedSd frame carries the packed-batch encoding") {
  std::vector<HiddenStates> batch;
  batch.push_back({{1.5f, -2.0f}, {0.25f, 4.0f}});
  batch.push_back({{3.0f, 0.0f}});
  PackedBatch packed = pack(batch);

  WireFrame frame;
  frame.msg_type = WireFrame::Type::PackedSd;
  frame.batch_id = 3;
  frame.payload = encode_packed(packed);

  WireFrame decoded = decode_frame(encode_frame(frame));
  REQUIRE(decoded.msg_type == WireFrame::Type::PackedSd);
  PackedBatch restored = decode_packed(decoded.payload, 2);
  CHECK(restored.offsets == packed.offsets);
  CHECK(unpack(restored) == batch);
}

TEST_CASE("mutated frames decode to errors, never crashes") {
  std::mt19937_64 rng(21);
  WireFrame frame;
  frame.batch_id = 5;
  frame.payload.resize(64);
  for (auto& b : frame.payload) b = static_cast<std::uint8_t>(rng());
  Bytes valid = encode_frame(frame);
  for (int trial = 0; trial < 2000; ++trial) {
    Bytes fuzzed = valid;
    std::size_t flips = 1 + rng() % 6;
    for (std::size_t i = 0; i < flips; ++i)
      fuzzed[rng() % fuzzed.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
    if (trial % 4 == 0) fuzzed.resize(rng() % (fuzzed.size() + 1));
    try {
      WireFrame decoded = decode_frame(fuzzed);
      CHECK(decoded.payload.size() + kFrameHeaderSize == fuzzed.size());
    } catch (const FrameCorrupt&) {
    }
  }
}

TEST_CASE("ack and shutdown frames round-trip") {
  for (auto type : {WireFrame::Type::Activations, WireFrame::Type::PackedSd,
                    WireFrame::Type::Ack, WireFrame::Type::Shutdown}) {
    WireFrame frame;
    frame.msg_type = type;
    frame.batch_id = 7;
    WireFrame decoded = decode_frame(encode_frame(frame));
    CHECK(decoded.msg_type == type);
  }
}

TEST_CASE("loopback relay is bit-exact, with and without compression") {
  for (bool compress : {false, true}) {
    WireLocalConfig cfg;
    cfg.steps = 2;
    cfg.micro_batches = 4;
    cfg.payload_bytes = 64 * 1024;
    cfg.seed = 99;
    cfg.compress = compress;
    cfg.stage_count = 1;
    cfg.compute_ms = 1.0;
    WireLocalResult result = run_wire_local(cfg);
    CHECK(result.sink.payload_ok);
    CHECK(result.sink.frames_seen == 8);
    REQUIRE(result.hops.size() == 2);
    CHECK(result.hops[0].frames == 8);
    CHECK(result.hops[1].frames == 8);
    if (compress) CHECK(result.source.codec_ms_total > 0.0);
  }
}

TEST_CASE("compression shortens the shaped transfer on compressible data") {
  auto run = [&](bool compress) {
    WireLocalConfig cfg;
    cfg.steps = 3;
    cfg.micro_batches = 1;
    cfg.payload_bytes = 208200;
    cfg.seed = 11;
    cfg.compress = compress;
    cfg.stage_count = 0;
    cfg.shape.rate_bps = 20e6;
    return run_wire_local(cfg);
  };
  WireLocalResult plain = run(false);
  WireLocalResult squeezed = run(true);
  REQUIRE(plain.sink.payload_ok);
  REQUIRE(squeezed.sink.payload_ok);
  CHECK(squeezed.hops[0].transfer_ms_mean < plain.hops[0].transfer_ms_mean);
}

TEST_CASE("token bucket: 1 MB drains through 8 Mbps in about a second") {
  WireLocalConfig cfg;
  cfg.steps = 1;
  cfg.micro_batches = 1;
  cfg.payload_bytes = 1000000;
  cfg.stage_count = 0; // source straight into sink
  cfg.shape.rate_bps = 8e6;
  WireLocalResult result = run_wire_local(cfg);
  REQUIRE(result.source.sent.size() == 1);
  double drain = result.source.sent[0].t_sent_ms - result.source.sent[0].t_offer_ms;
  CHECK(drain > 900.0);
  CHECK(drain < 1100.0);
  CHECK(result.hops[0].transfer_ms_mean > 900.0);
  CHECK(result.hops[0].transfer_ms_mean < 1100.0);
}

TEST_CASE("latency shaping delays tiny frames by at least the configured lambda") {
  WireLocalConfig cfg;
  cfg.steps = 1;
  cfg.micro_batches = 1;
  cfg.payload_bytes = 128;
  cfg.stage_count = 0;
  cfg.shape.rate_bps = 0.0; // unshaped rate
  cfg.shape.latency_ms = 50.0;
  WireLocalResult result = run_wire_local(cfg);
  CHECK(result.hops[0].transfer_ms_mean >= 50.0);
}

TEST_CASE("unshaped link is a passthrough") {
  WireLocalConfig cfg;
  cfg.steps = 1;
  cfg.micro_batches = 2;
  cfg.payload_bytes = 32 * 1024;
  cfg.stage_count = 0;
  WireLocalResult result = run_wire_local(cfg);
  CHECK(result.sink.payload_ok);
  CHECK(result.end_to_end_ms < 250.0);
}

TEST_CASE("a sink facing garbage reports FrameCorrupt") {
  int listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(listen_fd >= 0);
  sockaddr_in sin{};
  sin.sin_family = AF_INET;
  sin.sin_port = 0;
  inet_pton(AF_INET, "127.0.0.1", &sin.sin_addr);
  REQUIRE(::bind(listen_fd, reinterpret_cast<sockaddr*>(&sin), sizeof(sin)) == 0);
  REQUIRE(::listen(listen_fd, 1) == 0);
  socklen_t len = sizeof(sin);
  ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&sin), &len);

  WireSinkConfig cfg;
  cfg.payload_bytes = 64;
  cfg.micro_batches = 1;
  cfg.listen_fd = listen_fd;
  auto sink = std::async(std::launch::async, [&] { return run_wire_sink(cfg); });

  int client = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(::connect(client, reinterpret_cast<sockaddr*>(&sin), sizeof(sin)) == 0);
  const char garbage[24] = "this is not a frame....";
  ::send(client, garbage, sizeof(garbage), 0);
  CHECK_THROWS_AS(sink.get(), FrameCorrupt);
  ::close(client);
  ::close(listen_fd);
}

TEST_CASE("a peer vanishing mid-stream reports ConnectionLost") {
  int listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(listen_fd >= 0);
  sockaddr_in sin{};
  sin.sin_family = AF_INET;
  sin.sin_port = 0;
  inet_pton(AF_INET, "127.0.0.1", &sin.sin_addr);
  REQUIRE(::bind(listen_fd, reinterpret_cast<sockaddr*>(&sin), sizeof(sin)) == 0);
  REQUIRE(::listen(listen_fd, 1) == 0);
  socklen_t len = sizeof(sin);
  ::getsockname(listen_fd, reinterpret_cast<sockaddr*>(&sin), &len);

  WireSinkConfig cfg;
  cfg.payload_bytes = 64;
  cfg.micro_batches = 1;
  cfg.listen_fd = listen_fd;
  auto sink = std::async(std::launch::async, [&] { return run_wire_sink(cfg); });

  int client = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(::connect(client, reinterpret_cast<sockaddr*>(&sin), sizeof(sin)) == 0);
  ::close(client); // clean close before any shutdown frame
  CHECK_THROWS_AS(sink.get(), ConnectionLost);
  ::close(listen_fd);
}
