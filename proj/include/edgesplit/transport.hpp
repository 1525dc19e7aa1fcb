/* Copyright 2026 The edgesplit Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "edgesplit/bits.hpp"
#include "edgesplit/error.hpp"
#include "edgesplit/executor.hpp"
#include "edgesplit/graph.hpp"

namespace edgesplit {

using Bytes = std::vector<std::uint8_t>;

inline bool is_wire_bits(int bits) { return bits == 1 || bits == 2 || bits == 4 || bits == 8; }

inline std::size_t packed_size(std::size_t count, int bits) {
  return (count * static_cast<std::size_t>(bits) + 7) / 8;
}

// Packs codes in flat row-major (channel-major) order, lowest bits first
// within each byte. The last byte is zero-padded.
inline Bytes pack_activations(std::span<const std::int32_t> codes, int bits) {
  if (!is_wire_bits(bits)) {
    throw TransportError("cannot pack at " + std::to_string(bits) + " bits");
  }
  Bytes out(packed_size(codes.size(), bits), 0);
  const std::int32_t limit = 1 << bits;
  const std::size_t per_byte = 8 / static_cast<std::size_t>(bits);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto v = codes[i];
    if (v < 0 || v >= limit) {
      throw TransportError("code " + std::to_string(v) + " at index " + std::to_string(i) +
                           " does not fit in " + std::to_string(bits) + " bits");
    }
    const auto shift = (i % per_byte) * static_cast<std::size_t>(bits);
    out[i / per_byte] |= static_cast<std::uint8_t>(v << shift);
  }
  return out;
}

inline std::vector<std::int32_t> unpack_activations(std::span<const std::uint8_t> bytes,
                                                    int bits, std::size_t count) {
  if (!is_wire_bits(bits)) {
    throw TransportError("cannot unpack at " + std::to_string(bits) + " bits");
  }
  if (bytes.size() != packed_size(count, bits)) {
    throw TransportError("payload of " + std::to_string(bytes.size()) + " bytes for " +
                         std::to_string(count) + " values at " + std::to_string(bits) +
                         " bits");
  }
  std::vector<std::int32_t> out(count);
  const std::size_t per_byte = 8 / static_cast<std::size_t>(bits);
  const unsigned mask = (1u << bits) - 1u;
  for (std::size_t i = 0; i < count; ++i) {
    const auto shift = (i % per_byte) * static_cast<std::size_t>(bits);
    out[i] = static_cast<std::int32_t>((bytes[i / per_byte] >> shift) & mask);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Messages.

struct ActivationMessage {
  std::uint32_t tensor_id = 0;
  std::uint8_t bits = 8;
  float scale = 1.0f;
  float zero_point = 0.0f;
  std::vector<std::int32_t> shape;
  Bytes payload;

  friend bool operator==(const ActivationMessage&, const ActivationMessage&) = default;
};

inline constexpr std::uint16_t kMessageMagic = 0x4153;
inline constexpr std::uint8_t kMessageVersion = 1;

enum class WireFault { kBadMagic, kBadVersion, kTruncated, kBadBits, kBadLength, kTrailingBytes };

class WireFormatError : public TransportError {
 public:
  WireFormatError(WireFault fault, const std::string& what)
      : TransportError(what), fault_(fault) {}
  WireFault fault() const noexcept { return fault_; }

 private:
  WireFault fault_;
};

// Fixed header bytes excluding the dims array.
inline constexpr std::size_t kMessageHeaderBytes = 2 + 1 + 1 + 4 + 4 + 4 + 1 + 4;

inline std::size_t message_size(std::size_t ndim, std::size_t payload) {
  return kMessageHeaderBytes + 4 * ndim + payload;
}

namespace detail {

class WireWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    out_.insert(out_.end(), raw, raw + sizeof(T));
  }
  void put_bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class WireReader {
 public:
  explicit WireReader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, in_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n, const char* field) {
    need(n, field);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* field) const {
    if (in_.size() - pos_ < n) {
      throw WireFormatError(WireFault::kTruncated,
                            std::string("message truncated in ") + field);
    }
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Bytes encode_message(const ActivationMessage& m) {
  if (!is_wire_bits(m.bits)) {
    throw WireFormatError(WireFault::kBadBits, "bits must be 1, 2, 4 or 8");
  }
  if (m.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw TransportError("too many dimensions");
  }
  std::size_t count = 1;
  for (auto d : m.shape) {
    if (d < 0) throw TransportError("negative dimension");
    count *= static_cast<std::size_t>(d);
  }
  if (m.payload.size() != packed_size(count, m.bits)) {
    throw WireFormatError(WireFault::kBadLength, "payload length does not match shape");
  }
  detail::WireWriter w;
  w.put(kMessageMagic);
  w.put(kMessageVersion);
  w.put(m.bits);
  w.put(m.tensor_id);
  w.put(m.scale);
  w.put(m.zero_point);
  w.put(static_cast<std::uint8_t>(m.shape.size()));
  for (auto d : m.shape) w.put(d);
  w.put(static_cast<std::uint32_t>(m.payload.size()));
  w.put_bytes(m.payload);
  return w.take();
}

inline ActivationMessage decode_message(std::span<const std::uint8_t> bytes) {
  detail::WireReader r(bytes);
  if (r.get<std::uint16_t>("magic") != kMessageMagic) {
    throw WireFormatError(WireFault::kBadMagic, "bad message magic");
  }
  if (r.get<std::uint8_t>("version") != kMessageVersion) {
    throw WireFormatError(WireFault::kBadVersion, "unsupported message version");
  }
  ActivationMessage m;
  m.bits = r.get<std::uint8_t>("bits");
  m.tensor_id = r.get<std::uint32_t>("tensor_id");
  m.scale = r.get<float>("scale");
  m.zero_point = r.get<float>("zero_point");
  const auto ndim = r.get<std::uint8_t>("ndim");
  std::size_t count = 1;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const auto d = r.get<std::int32_t>("dims");
    if (d < 0) throw WireFormatError(WireFault::kBadLength, "negative dimension");
    m.shape.push_back(d);
    count *= static_cast<std::size_t>(d);
  }
  const auto len = r.get<std::uint32_t>("payload_len");
  const auto payload = r.get_bytes(len, "payload");
  m.payload.assign(payload.begin(), payload.end());
  if (r.remaining() != 0) {
    throw WireFormatError(WireFault::kTrailingBytes, "trailing bytes after payload");
  }
  if (!is_wire_bits(m.bits)) {
    throw WireFormatError(WireFault::kBadBits, "bits must be 1, 2, 4 or 8");
  }
  if (len != packed_size(count, m.bits)) {
    throw WireFormatError(WireFault::kBadLength, "payload length does not match shape");
  }
  return m;
}

inline ActivationMessage to_message(const CrossingTensor& ct) {
  if (ct.producer < 0 || ct.producer > std::numeric_limits<std::uint32_t>::max()) {
    throw TransportError("tensor id " + std::to_string(ct.producer) + " not representable");
  }
  const int bits = ct.params.bits;
  if (!is_wire_bits(bits)) {
    throw TransportError("tensor of node " + std::to_string(ct.producer) + " crosses at " +
                         std::to_string(bits) + " bits, not transmittable");
  }
  ActivationMessage m;
  m.tensor_id = static_cast<std::uint32_t>(ct.producer);
  m.bits = static_cast<std::uint8_t>(bits);
  m.scale = static_cast<float>(ct.params.scale);
  m.zero_point = static_cast<float>(ct.params.zero_point);
  for (auto d : ct.dims) m.shape.push_back(static_cast<std::int32_t>(d));
  m.payload = pack_activations(ct.codes, bits);
  return m;
}

inline CrossingTensor from_message(const ActivationMessage& m) {
  CrossingTensor ct;
  ct.producer = m.tensor_id;
  for (auto d : m.shape) ct.dims.push_back(d);
  ct.params.bits = m.bits;
  ct.params.scale = m.scale;
  ct.params.zero_point = m.zero_point;
  ct.codes = unpack_activations(m.payload, m.bits, static_cast<std::size_t>(volume(ct.dims)));
  return ct;
}

// ---------------------------------------------------------------------------
// Channels: ordered, one-directional frame streams from edge to cloud.

class FrameSender {
 public:
  virtual ~FrameSender() = default;
  virtual void send(const Bytes& frame) = 0;
  virtual void close() = 0;
};

class FrameReceiver {
 public:
  virtual ~FrameReceiver() = default;
  // Next frame, or nullopt once the sender has closed and the stream is drained.
  virtual std::optional<Bytes> receive() = 0;
};

namespace detail {

struct FrameQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Bytes> frames;
  bool closed = false;
};

class QueueSender final : public FrameSender {
 public:
  explicit QueueSender(std::shared_ptr<FrameQueue> q) : q_(std::move(q)) {}
  ~QueueSender() override { close(); }
  void send(const Bytes& frame) override {
    {
      std::lock_guard lock(q_->mu);
      if (q_->closed) throw TransportError("send on closed channel");
      q_->frames.push_back(frame);
    }
    q_->cv.notify_one();
  }
  void close() override {
    {
      std::lock_guard lock(q_->mu);
      q_->closed = true;
    }
    q_->cv.notify_all();
  }

 private:
  std::shared_ptr<FrameQueue> q_;
};

class QueueReceiver final : public FrameReceiver {
 public:
  explicit QueueReceiver(std::shared_ptr<FrameQueue> q) : q_(std::move(q)) {}
  std::optional<Bytes> receive() override {
    std::unique_lock lock(q_->mu);
    q_->cv.wait(lock, [&] { return !q_->frames.empty() || q_->closed; });
    if (q_->frames.empty()) return std::nullopt;
    Bytes f = std::move(q_->frames.front());
    q_->frames.pop_front();
    return f;
  }

 private:
  std::shared_ptr<FrameQueue> q_;
};

}  // namespace detail

struct ChannelPair {
  std::unique_ptr<FrameSender> edge;
  std::unique_ptr<FrameReceiver> cloud;
};

inline ChannelPair in_process_channel() {
  auto q = std::make_shared<detail::FrameQueue>();
  return {std::make_unique<detail::QueueSender>(q), std::make_unique<detail::QueueReceiver>(q)};
}

// Owning socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  void shutdown_write() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
  }

 private:
  int fd_ = -1;
};

namespace detail {

[[noreturn]] inline void throw_errno(const std::string& what) {
  throw TransportError(what + ": " + std::strerror(errno));
}

inline sockaddr_in make_address(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw TransportError("invalid IPv4 address '" + host + "'");
  }
  return addr;
}

inline void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const auto w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw_errno("send");
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Returns false on a clean EOF before any byte; throws on EOF mid-read.
inline bool read_all(int fd, std::uint8_t* data, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const auto r = ::recv(fd, data + got, n - got, 0);
    if (r < 0) {
      if (errno == EINTR) continue;
      throw_errno("recv");
    }
    if (r == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

class TcpSender final : public FrameSender {
 public:
  explicit TcpSender(Socket s) : sock_(std::move(s)) {}
  ~TcpSender() override { close(); }
  void send(const Bytes& frame) override {
    if (!sock_.valid()) throw TransportError("send on closed channel");
    if (frame.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw TransportError("frame too large");
    }
    WireWriter w;
    w.put(static_cast<std::uint32_t>(frame.size()));
    const auto header = w.take();
    write_all(sock_.fd(), header.data(), header.size());
    write_all(sock_.fd(), frame.data(), frame.size());
  }
  void close() override {
    sock_.shutdown_write();
    sock_.reset();
  }

 private:
  Socket sock_;
};

class TcpReceiver final : public FrameReceiver {
 public:
  explicit TcpReceiver(Socket s) : sock_(std::move(s)) {}
  std::optional<Bytes> receive() override {
    std::uint8_t len_raw[4];
    if (!read_all(sock_.fd(), len_raw, 4)) return std::nullopt;
    const auto len = WireReader(len_raw).get<std::uint32_t>("frame length");
    Bytes frame(len);
    if (len > 0 && !read_all(sock_.fd(), frame.data(), len)) {
      throw TransportError("connection closed mid-frame");
    }
    return frame;
  }

 private:
  Socket sock_;
};

}  // namespace detail

// Listening TCP socket bound to host:port (port 0 picks an ephemeral port).
class TcpListener {
 public:
  explicit TcpListener(const std::string& host = "127.0.0.1", std::uint16_t port = 0) {
    sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!sock_.valid()) detail::throw_errno("socket");
    const int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    auto addr = detail::make_address(host, port);
    if (::bind(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      detail::throw_errno("bind " + host + ":" + std::to_string(port));
    }
    if (::listen(sock_.fd(), 1) != 0) detail::throw_errno("listen");
    socklen_t len = sizeof(addr);
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    host_ = host;
    port_ = ntohs(addr.sin_port);
  }

  const std::string& host() const { return host_; }
  std::uint16_t port() const { return port_; }

  std::unique_ptr<FrameReceiver> accept() {
    Socket c(::accept(sock_.fd(), nullptr, nullptr));
    if (!c.valid()) detail::throw_errno("accept");
    return std::make_unique<detail::TcpReceiver>(std::move(c));
  }

 private:
  Socket sock_;
  std::string host_;
  std::uint16_t port_ = 0;
};

inline std::unique_ptr<FrameSender> tcp_connect(const std::string& host, std::uint16_t port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) detail::throw_errno("socket");
  auto addr = detail::make_address(host, port);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    detail::throw_errno("connect " + host + ":" + std::to_string(port));
  }
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_unique<detail::TcpSender>(std::move(s));
}

// ---------------------------------------------------------------------------
// Split session.

struct SessionResult {
  std::vector<Tensor> outputs;
  std::vector<std::size_t> message_bytes;  // encoded size of each message, in send order
  std::vector<std::size_t> payload_bytes;
};

// Edge role: runs layers 1..n, sends one message per crossing tensor.
inline void run_edge_role(const SplitModel& model, const Tensor& x, FrameSender& out,
                          SessionResult* record = nullptr) {
  for (const auto& ct : model.run_edge(x)) {
    const auto msg = to_message(ct);
    const auto frame = encode_message(msg);
    if (record) {
      record->message_bytes.push_back(frame.size());
      record->payload_bytes.push_back(msg.payload.size());
    }
    out.send(frame);
  }
}

// Cloud role: receives the cut tensors in execution order and runs n+1..N.
inline std::vector<Tensor> run_cloud_role(const SplitModel& model, FrameReceiver& in) {
  std::map<NodeId, Tensor> received;
  for (auto id : boundary_cut(model.plan(), model.split_index()).crossing_tensors) {
    auto frame = in.receive();
    if (!frame) throw TransportError("channel closed mid-session");
    const auto ct = from_message(decode_message(*frame));
    if (ct.producer != id) {
      throw TransportError("expected tensor " + std::to_string(id) + ", received " +
                           std::to_string(ct.producer));
    }
    if (ct.dims != model.graph().node(id).out_shape) {
      throw TransportError("tensor " + std::to_string(id) + " arrived with shape " +
                           dims_to_string(ct.dims));
    }
    received[id] = SplitModel::reconstruct(ct);
  }
  return model.run_cloud(std::move(received));
}

// Runs both roles concurrently over the given channel ends. The edge role
// runs on its own thread; its failure closes the channel so the cloud side
// unblocks.
inline SessionResult run_split_session(const SplitModel& model, const Tensor& x,
                                       std::unique_ptr<FrameSender> edge_end,
                                       FrameReceiver& cloud_end) {
  SessionResult result;
  std::exception_ptr edge_error;
  std::thread edge([&] {
    try {
      run_edge_role(model, x, *edge_end, &result);
    } catch (...) {
      edge_error = std::current_exception();
    }
    edge_end->close();
  });
  std::exception_ptr cloud_error;
  try {
    result.outputs = run_cloud_role(model, cloud_end);
  } catch (...) {
    cloud_error = std::current_exception();
  }
  edge.join();
  if (edge_error) std::rethrow_exception(edge_error);
  if (cloud_error) std::rethrow_exception(cloud_error);
  return result;
}

inline SessionResult run_split_session(const LayerGraph& g, const Tensor& x, std::size_t n,
                                       const BitAssignment& bits) {
  const SplitModel model(g, n, bits);
  auto ch = in_process_channel();
  return run_split_session(model, x, std::move(ch.edge), *ch.cloud);
}

// Same session over a TCP loopback connection.
inline SessionResult run_split_session_tcp(const SplitModel& model, const Tensor& x,
                                           const std::string& host = "127.0.0.1",
                                           std::uint16_t port = 0) {
  TcpListener listener(host, port);
  // The backlog completes the handshake before accept().
  auto sender = tcp_connect(listener.host(), listener.port());
  auto receiver = listener.accept();
  return run_split_session(model, x, std::move(sender), *receiver);
}

}  // namespace edgesplit
