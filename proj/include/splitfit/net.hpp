// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <memory>
#include <mutex>
#include <thread>

#include "splitfit/graph.hpp"
#include "splitfit/simulate.hpp"
#include "splitfit/wire.hpp"

namespace splitfit {

namespace detail {

inline double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Fd& operator=(Fd&& o) noexcept {
    reset();
    std::swap(fd_, o.fd_);
    return *this;
  }
  ~Fd() { reset(); }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

 private:
  int fd_ = -1;
};

inline void set_recv_timeout(int fd, int ms) {
  timeval tv{ms / 1000, (ms % 1000) * 1000};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

inline bool send_all(int fd, const uint8_t* data, size_t len) {
  size_t sent = 0;
  while (sent < len) {
    ssize_t n = ::send(fd, data + sent, len - sent, MSG_NOSIGNAL);
    if (n <= 0) return false;
    sent += static_cast<size_t>(n);
  }
  return true;
}

// 1 = ok, 0 = clean EOF before any byte, -1 = timeout/error mid-read
inline int recv_exact(int fd, uint8_t* data, size_t len) {
  size_t got = 0;
  while (got < len) {
    ssize_t n = ::recv(fd, data + got, len - got, 0);
    if (n == 0) return got == 0 ? 0 : -1;
    if (n < 0) return -1;
    got += static_cast<size_t>(n);
  }
  return 1;
}

inline bool send_frame(int fd, MsgType type, const std::vector<uint8_t>& body) {
  auto bytes = encode_frame(type, body);
  return send_all(fd, bytes.data(), bytes.size());
}

}  // namespace detail

// Serves tail-model inference over a stream socket, one in-flight request per
// connection, any number of concurrent connections. Requests may use either
// codec regardless of the advertised default. A malformed body on an intact
// frame gets an ERROR reply and the connection stays usable; once framing is
// lost (bad magic/version/oversized) an ERROR goes out and the connection
// closes.
class Server {
 public:
  Server(ModelGraph<float> tail, uint16_t port, PayloadFormat codec,
         const std::string& bind_addr = "127.0.0.1")
      : tail_(std::move(tail)), codec_(codec) {
    validate(tail_);
    listen_fd_ = detail::Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listen_fd_.valid()) throw EndpointUnavailable("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind_addr.c_str(), &addr.sin_addr) != 1)
      throw EndpointUnavailable("bad bind address " + bind_addr);
    if (::bind(listen_fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw EndpointUnavailable("cannot bind port " + std::to_string(port));
    if (::listen(listen_fd_.get(), 16) != 0) throw EndpointUnavailable("listen() failed");
    sockaddr_in actual{};
    socklen_t alen = sizeof(actual);
    ::getsockname(listen_fd_.get(), reinterpret_cast<sockaddr*>(&actual), &alen);
    port_ = ntohs(actual.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  uint16_t port() const { return port_; }
  uint64_t requests_served() const { return requests_.load(); }
  uint64_t errors_sent() const { return errors_.load(); }

  void stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;
    ::shutdown(listen_fd_.get(), SHUT_RDWR);
    listen_fd_.reset();
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> workers;
    {
      std::lock_guard<std::mutex> lk(mu_);
      workers.swap(workers_);
      for (int fd : live_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : workers)
      if (t.joinable()) t.join();
  }

 private:
  void accept_loop() {
    while (!stopping_.load()) {
      int fd = ::accept(listen_fd_.get(), nullptr, nullptr);
      if (fd < 0) break;
      std::lock_guard<std::mutex> lk(mu_);
      if (stopping_.load()) {
        ::close(fd);
        break;
      }
      live_fds_.push_back(fd);
      workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
  }

  void drop_fd(int fd) {
    std::lock_guard<std::mutex> lk(mu_);
    live_fds_.erase(std::remove(live_fds_.begin(), live_fds_.end(), fd), live_fds_.end());
  }

  void send_error(int fd, uint32_t request_id, const std::string& code) {
    errors_.fetch_add(1);
    detail::send_frame(fd, MsgType::error, encode_wire_error({request_id, code}));
  }

  void serve_connection(int raw_fd) {
    detail::Fd fd(raw_fd);
    detail::set_recv_timeout(fd.get(), 10000);
    auto runner = Runner<float>::build(tail_);
    std::vector<uint8_t> header(kFrameHeaderBytes);
    while (!stopping_.load()) {
      int rc = detail::recv_exact(fd.get(), header.data(), header.size());
      if (rc != 1) break;
      FrameHeader fh;
      try {
        fh = parse_frame_header(header.data());
      } catch (const ProtocolError& e) {
        send_error(fd.get(), 0, e.what());
        break;  // framing lost; cannot resynchronize the stream
      }
      std::vector<uint8_t> body(fh.body_len);
      if (fh.body_len && detail::recv_exact(fd.get(), body.data(), body.size()) != 1) break;

      if (fh.type == MsgType::model_info) {
        ModelInfo info;
        info.input_dims = tail_.input_shape;
        info.codec = codec_;
        info.num_classes = static_cast<uint32_t>(tail_.num_classes);
        info.name = tail_.name;
        if (!detail::send_frame(fd.get(), MsgType::model_info, encode_model_info(info))) break;
        continue;
      }
      if (fh.type != MsgType::infer_request) {
        send_error(fd.get(), 0, "bad_type");
        continue;
      }

      uint32_t request_id = body.size() >= 4 ? get_u32(body.data()) : 0;
      try {
        InferRequest req = decode_infer_request(body);
        request_id = req.request_id;
        if (req.dims != tail_.input_shape) {
          send_error(fd.get(), request_id, "shape_mismatch");
          continue;
        }
        Tensor<float> x;
        if (req.codec == PayloadFormat::bq8) {
          auto qt = decode_payload(req.payload.data(), req.payload.size(), req.dims);
          x = dequantize<float>(qt);
        } else {
          x = decode_payload_f32(req.payload.data(), req.payload.size(), req.dims);
        }
        Shape batched = x.shape;
        batched.insert(batched.begin(), 1);
        x = x.reshaped(batched);

        auto t0 = std::chrono::steady_clock::now();
        ForwardOptions<float> opt;
        Tensor<float> logits = run_forward(runner, x, opt);
        auto t1 = std::chrono::steady_clock::now();

        InferResponse resp;
        resp.request_id = request_id;
        int best = 0;
        for (int c = 1; c < logits.dim(1); ++c)
          if (logits.data[static_cast<size_t>(c)] > logits.data[static_cast<size_t>(best)])
            best = c;
        resp.label = static_cast<uint32_t>(best);
        resp.server_compute_ns = static_cast<uint64_t>(
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
        requests_.fetch_add(1);
        if (!detail::send_frame(fd.get(), MsgType::infer_response, encode_infer_response(resp)))
          break;
      } catch (const ProtocolError& e) {
        send_error(fd.get(), request_id, e.what());
      } catch (const CorruptPayload&) {
        send_error(fd.get(), request_id, "bad_payload");
      } catch (const Error&) {
        send_error(fd.get(), request_id, "internal");
      }
    }
    drop_fd(raw_fd);
  }

  ModelGraph<float> tail_;
  PayloadFormat codec_;
  detail::Fd listen_fd_;
  uint16_t port_ = 0;
  std::thread accept_thread_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> live_fds_;
  std::atomic<bool> stopping_{false};
  std::atomic<uint64_t> requests_{0}, errors_{0};
};

inline std::unique_ptr<Server> serve(ModelGraph<float> tail, uint16_t port, PayloadFormat codec,
                                     const std::string& bind_addr = "127.0.0.1") {
  return std::make_unique<Server>(std::move(tail), port, codec, bind_addr);
}

// Blocking client connection, one request in flight.
class Connection {
 public:
  Connection(const std::string& host, uint16_t port, int timeout_ms = 5000)
      : timeout_ms_(timeout_ms) {
    fd_ = detail::Fd(::socket(AF_INET, SOCK_STREAM, 0));
    if (!fd_.valid()) throw EndpointUnavailable("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw EndpointUnavailable("bad address " + host);
    if (::connect(fd_.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw EndpointUnavailable("cannot connect to " + host + ":" + std::to_string(port));
    int one = 1;
    ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    detail::set_recv_timeout(fd_.get(), timeout_ms_);
  }

  void send_frame(MsgType type, const std::vector<uint8_t>& body) {
    if (!detail::send_frame(fd_.get(), type, body))
      throw EndpointUnavailable("connection lost while sending");
  }

  std::pair<MsgType, std::vector<uint8_t>> recv_frame() {
    std::vector<uint8_t> header(kFrameHeaderBytes);
    int rc = detail::recv_exact(fd_.get(), header.data(), header.size());
    if (rc == 0) throw EndpointUnavailable("server closed the connection");
    if (rc < 0) throw NetworkTimeout("no reply within " + std::to_string(timeout_ms_) + " ms");
    FrameHeader fh = parse_frame_header(header.data());
    std::vector<uint8_t> body(fh.body_len);
    if (fh.body_len && detail::recv_exact(fd_.get(), body.data(), body.size()) != 1)
      throw NetworkTimeout("truncated reply");
    return {fh.type, std::move(body)};
  }

  // raw byte access, used by robustness tests
  void send_raw(const std::vector<uint8_t>& bytes) {
    detail::send_all(fd_.get(), bytes.data(), bytes.size());
  }

 private:
  detail::Fd fd_;
  int timeout_ms_;
};

// Encode one image the way the wire path does: head forward, then the codec.
template <typename T>
std::vector<uint8_t> encode_head_output(const Tensor<T>& head_out, PayloadFormat codec) {
  if (codec == PayloadFormat::bq8) return encode_payload(quantize(head_out));
  return encode_payload_f32(head_out.template cast<float>());
}

struct RemoteResult {
  int label = 0;
  DelayBreakdown breakdown;
  uint64_t server_compute_ns = 0;
  std::vector<uint8_t> payload_bytes;  // exactly what went on the wire
};

// Full client-side pipeline: head forward, payload encoding, request,
// response. The breakdown buckets head compute (including encoding) in
// d_head_s, the server-reported tail time in d_tail_s, and splits the
// remaining measured wall time evenly across the two network legs.
inline RemoteResult infer_remote(const ModelGraph<float>& head, const Tensor<float>& image,
                                 Connection& conn, PayloadFormat codec, uint32_t request_id = 1) {
  const double t_start = detail::now_s();
  auto head_out_pair = forward(head, image);
  Shape dims(head_out_pair.first.shape.begin() + 1, head_out_pair.first.shape.end());
  Tensor<float> head_out = head_out_pair.first.reshaped(dims);

  InferRequest req;
  req.request_id = request_id;
  req.dims = dims;
  req.codec = codec;
  req.payload = encode_head_output(head_out, codec);
  const double t_encoded = detail::now_s();

  conn.send_frame(MsgType::infer_request, encode_infer_request(req));
  auto [type, body] = conn.recv_frame();
  const double t_done = detail::now_s();

  if (type == MsgType::error) {
    auto err = decode_wire_error(body);
    throw ProtocolError(err.code);
  }
  if (type != MsgType::infer_response) throw ProtocolError("bad_type");
  InferResponse resp = decode_infer_response(body);
  if (resp.request_id != request_id) throw ProtocolError("request_id_mismatch");

  RemoteResult out;
  out.label = static_cast<int>(resp.label);
  out.server_compute_ns = resp.server_compute_ns;
  out.payload_bytes = std::move(req.payload);
  const double head_s = t_encoded - t_start;
  const double tail_s = static_cast<double>(resp.server_compute_ns) * 1e-9;
  double net = (t_done - t_start) - head_s - tail_s;
  if (net < 0) net = 0;
  out.breakdown = DelayBreakdown::of(head_s, net / 2, tail_s, net / 2);
  out.breakdown.total_s = t_done - t_start;  // measured wall time
  return out;
}

struct LocalSplitResult {
  int label = 0;
  std::vector<uint8_t> payload_bytes;
};

// Oracle path: identical computation to the wire pipeline, no sockets. The
// payload is encoded and decoded exactly as it would be for transmission, so
// codec effects (quantization) match the remote path bit for bit.
inline LocalSplitResult infer_local_split(const ModelGraph<float>& head,
                                          const ModelGraph<float>& tail,
                                          const Tensor<float>& image, PayloadFormat codec) {
  auto head_out_pair = forward(head, image);
  Shape dims(head_out_pair.first.shape.begin() + 1, head_out_pair.first.shape.end());
  Tensor<float> head_out = head_out_pair.first.reshaped(dims);

  LocalSplitResult out;
  out.payload_bytes = encode_head_output(head_out, codec);

  Tensor<float> x;
  if (codec == PayloadFormat::bq8) {
    auto qt = decode_payload(out.payload_bytes.data(), out.payload_bytes.size(), dims);
    x = dequantize<float>(qt);
  } else {
    x = decode_payload_f32(out.payload_bytes.data(), out.payload_bytes.size(), dims);
  }
  auto logits = forward(tail, x).first;
  int best = 0;
  for (int c = 1; c < logits.dim(1); ++c)
    if (logits.data[static_cast<size_t>(c)] > logits.data[static_cast<size_t>(best)]) best = c;
  out.label = best;
  return out;
}

}  // namespace splitfit
