#include "fedplant/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include "fedplant/errors.hpp"

namespace fedplant {

namespace {

// ---- little-endian writers/readers over a byte buffer ----

void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& b, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(b, bits);
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw ProtocolError("truncated message payload");
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos++]) << (8 * i);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::vector<uint8_t> blob(std::size_t n) {
    need(n);
    std::vector<uint8_t> out(bytes.begin() + static_cast<long>(pos),
                             bytes.begin() + static_cast<long>(pos + n));
    pos += n;
    return out;
  }
  void done() const {
    if (pos != bytes.size()) throw ProtocolError("payload length mismatch");
  }
};

MsgType type_of(const Message& msg) {
  return std::visit(
      [](const auto& m) -> MsgType {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, JoinRequest>) return MsgType::kJoinRequest;
        if constexpr (std::is_same_v<T, JoinAccept>) return MsgType::kJoinAccept;
        if constexpr (std::is_same_v<T, GlobalModel>) return MsgType::kGlobalModel;
        if constexpr (std::is_same_v<T, LocalUpdatePlain>) return MsgType::kLocalUpdatePlain;
        if constexpr (std::is_same_v<T, LocalUpdateMasked>) return MsgType::kLocalUpdateMasked;
        if constexpr (std::is_same_v<T, RoundAck>) return MsgType::kRoundAck;
        if constexpr (std::is_same_v<T, Shutdown>) return MsgType::kShutdown;
        if constexpr (std::is_same_v<T, ProtocolErrorMsg>) return MsgType::kProtocolError;
      },
      msg);
}

std::vector<uint8_t> encode_payload(const Message& msg) {
  std::vector<uint8_t> p;
  std::visit(
      [&p](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, JoinRequest>) {
          put_u32(p, m.plant_id);
          put_u64(p, m.arch_hash);
        } else if constexpr (std::is_same_v<T, JoinAccept>) {
          put_u32(p, m.round_count);
          put_u32(p, m.param_count);
          put_u32(p, m.scale_bits);
          put_f64(p, m.clip_range);
          put_u8(p, static_cast<uint8_t>(m.weights_mode));
          put_u32(p, static_cast<uint32_t>(m.peer_ids.size()));
          for (uint32_t id : m.peer_ids) put_u32(p, id);
        } else if constexpr (std::is_same_v<T, GlobalModel>) {
          put_u32(p, m.round);
          put_f64(p, m.weight);
          p.insert(p.end(), m.params.begin(), m.params.end());
        } else if constexpr (std::is_same_v<T, LocalUpdatePlain>) {
          put_u32(p, m.round);
          put_u32(p, m.plant_id);
          put_u64(p, m.n_samples);
          put_f64(p, m.train_loss);
          p.insert(p.end(), m.params.begin(), m.params.end());
        } else if constexpr (std::is_same_v<T, LocalUpdateMasked>) {
          put_u32(p, m.round);
          put_u64(p, m.n_samples);
          put_f64(p, m.train_loss);
          put_u32(p, m.update.plant_id);
          put_u32(p, m.update.round);
          put_u32(p, static_cast<uint32_t>(m.update.masked_values.size()));
          for (uint64_t w : m.update.masked_values) put_u64(p, w);
        } else if constexpr (std::is_same_v<T, RoundAck>) {
          put_u32(p, m.round);
        } else if constexpr (std::is_same_v<T, Shutdown>) {
          // empty payload
        } else if constexpr (std::is_same_v<T, ProtocolErrorMsg>) {
          put_u32(p, m.code);
          put_u32(p, static_cast<uint32_t>(m.text.size()));
          p.insert(p.end(), m.text.begin(), m.text.end());
        }
      },
      msg);
  return p;
}

}  // namespace

std::vector<uint8_t> encode(const Message& msg) {
  const std::vector<uint8_t> payload = encode_payload(msg);
  std::vector<uint8_t> frame;
  frame.reserve(9 + payload.size());
  frame.insert(frame.end(), kMagic, kMagic + 4);
  put_u8(frame, static_cast<uint8_t>(type_of(msg)));
  put_u32(frame, static_cast<uint32_t>(payload.size()));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

Message decode(const std::vector<uint8_t>& frame) {
  if (frame.size() < 9) throw ProtocolError("frame shorter than header");
  if (std::memcmp(frame.data(), kMagic, 4) != 0) throw ProtocolError("bad magic");
  const uint8_t type = frame[4];
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(frame[5 + i]) << (8 * i);
  if (frame.size() != 9 + static_cast<std::size_t>(len)) {
    throw ProtocolError("frame length does not match header");
  }
  std::vector<uint8_t> payload(frame.begin() + 9, frame.end());
  Reader r{payload};

  switch (static_cast<MsgType>(type)) {
    case MsgType::kJoinRequest: {
      JoinRequest m;
      m.plant_id = r.u32();
      m.arch_hash = r.u64();
      r.done();
      return m;
    }
    case MsgType::kJoinAccept: {
      JoinAccept m;
      m.round_count = r.u32();
      m.param_count = r.u32();
      m.scale_bits = r.u32();
      m.clip_range = r.f64();
      m.weights_mode = static_cast<WeightsMode>(r.u8());
      const uint32_t n = r.u32();
      for (uint32_t i = 0; i < n; ++i) m.peer_ids.push_back(r.u32());
      r.done();
      return m;
    }
    case MsgType::kGlobalModel: {
      GlobalModel m;
      m.round = r.u32();
      m.weight = r.f64();
      m.params = r.blob(payload.size() - r.pos);
      r.done();
      return m;
    }
    case MsgType::kLocalUpdatePlain: {
      LocalUpdatePlain m;
      m.round = r.u32();
      m.plant_id = r.u32();
      m.n_samples = r.u64();
      m.train_loss = r.f64();
      m.params = r.blob(payload.size() - r.pos);
      r.done();
      return m;
    }
    case MsgType::kLocalUpdateMasked: {
      LocalUpdateMasked m;
      m.round = r.u32();
      m.n_samples = r.u64();
      m.train_loss = r.f64();
      m.update.plant_id = r.u32();
      m.update.round = r.u32();
      const uint32_t q = r.u32();
      m.update.masked_values.reserve(q);
      for (uint32_t i = 0; i < q; ++i) m.update.masked_values.push_back(r.u64());
      r.done();
      if (m.update.round != m.round) {
        throw ProtocolError("masked update round disagrees with message round");
      }
      return m;
    }
    case MsgType::kRoundAck: {
      RoundAck m;
      m.round = r.u32();
      r.done();
      return m;
    }
    case MsgType::kShutdown: {
      r.done();
      return Shutdown{};
    }
    case MsgType::kProtocolError: {
      ProtocolErrorMsg m;
      m.code = r.u32();
      const uint32_t n = r.u32();
      const auto text = r.blob(n);
      m.text.assign(text.begin(), text.end());
      r.done();
      return m;
    }
    default:
      throw ProtocolError("unknown message type " + std::to_string(type));
  }
}

// ---------------------------------------------------------------------------
// In-process backend
// ---------------------------------------------------------------------------

namespace {

struct FrameQueue {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<std::vector<uint8_t>> frames;
  bool closed = false;

  void push(std::vector<uint8_t> frame) {
    {
      std::lock_guard lock(mutex);
      if (closed) throw ProtocolError("send on closed channel");
      frames.push_back(std::move(frame));
    }
    cv.notify_one();
  }

  std::vector<uint8_t> pop(int timeout_ms) {
    std::unique_lock lock(mutex);
    if (!cv.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                     [this] { return !frames.empty() || closed; })) {
      throw ProtocolError("timeout waiting for message");
    }
    if (frames.empty()) throw ProtocolError("connection closed by peer");
    auto frame = std::move(frames.front());
    frames.pop_front();
    return frame;
  }

  void close() {
    {
      std::lock_guard lock(mutex);
      closed = true;
    }
    cv.notify_all();
  }
};

class InprocChannel final : public Channel {
 public:
  InprocChannel(std::shared_ptr<FrameQueue> out, std::shared_ptr<FrameQueue> in)
      : out_(std::move(out)), in_(std::move(in)) {}
  ~InprocChannel() override { close(); }

  void send_frame(const std::vector<uint8_t>& frame) override { out_->push(frame); }
  std::vector<uint8_t> recv_frame(int timeout_ms) override { return in_->pop(timeout_ms); }
  void close() override {
    out_->close();
    in_->close();
  }

 private:
  std::shared_ptr<FrameQueue> out_;
  std::shared_ptr<FrameQueue> in_;
};

struct PendingConnection {
  std::shared_ptr<FrameQueue> client_to_server;
  std::shared_ptr<FrameQueue> server_to_client;
};

struct InprocListenerState {
  std::mutex mutex;
  std::condition_variable cv;
  std::deque<PendingConnection> pending;
  bool closed = false;
};

std::mutex g_inproc_mutex;
std::map<std::string, std::shared_ptr<InprocListenerState>> g_inproc_registry;

class InprocListener final : public Listener {
 public:
  InprocListener(std::string name, std::shared_ptr<InprocListenerState> state)
      : name_(std::move(name)), state_(std::move(state)) {}
  ~InprocListener() override { close(); }

  std::unique_ptr<Channel> accept(int timeout_ms) override {
    std::unique_lock lock(state_->mutex);
    if (!state_->cv.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                             [this] { return !state_->pending.empty() || state_->closed; })) {
      throw ProtocolError("accept timeout on inproc:" + name_);
    }
    if (state_->pending.empty()) throw ProtocolError("listener closed");
    PendingConnection conn = std::move(state_->pending.front());
    state_->pending.pop_front();
    return std::make_unique<InprocChannel>(conn.server_to_client, conn.client_to_server);
  }

  std::string endpoint() const override { return "inproc:" + name_; }

  void close() override {
    {
      std::lock_guard reg_lock(g_inproc_mutex);
      const auto it = g_inproc_registry.find(name_);
      if (it != g_inproc_registry.end() && it->second == state_) {
        g_inproc_registry.erase(it);
      }
    }
    {
      std::lock_guard lock(state_->mutex);
      state_->closed = true;
    }
    state_->cv.notify_all();
  }

 private:
  std::string name_;
  std::shared_ptr<InprocListenerState> state_;
};

std::unique_ptr<Channel> inproc_dial(const std::string& name, int timeout_ms) {
  std::shared_ptr<InprocListenerState> state;
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  // The listener may start a moment after the client; retry until deadline.
  while (true) {
    {
      std::lock_guard lock(g_inproc_mutex);
      const auto it = g_inproc_registry.find(name);
      if (it != g_inproc_registry.end()) state = it->second;
    }
    if (state) break;
    if (std::chrono::steady_clock::now() >= deadline) {
      throw ProtocolError("no inproc listener named " + name);
    }
    std::this_thread::yield();
  }
  PendingConnection conn{std::make_shared<FrameQueue>(), std::make_shared<FrameQueue>()};
  auto channel = std::make_unique<InprocChannel>(conn.client_to_server, conn.server_to_client);
  {
    std::lock_guard lock(state->mutex);
    if (state->closed) throw ProtocolError("listener closed: inproc:" + name);
    state->pending.push_back(conn);
  }
  state->cv.notify_one();
  return channel;
}

// ---------------------------------------------------------------------------
// TCP backend
// ---------------------------------------------------------------------------

class TcpChannel final : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  ~TcpChannel() override { close(); }

  void send_frame(const std::vector<uint8_t>& frame) override {
    if (fd_ < 0) throw ProtocolError("send on closed socket");
    std::size_t sent = 0;
    while (sent < frame.size()) {
      const ssize_t n = ::send(fd_, frame.data() + sent, frame.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) throw ProtocolError("socket send failed");
      sent += static_cast<std::size_t>(n);
    }
  }

  std::vector<uint8_t> recv_frame(int timeout_ms) override {
    std::vector<uint8_t> header(9);
    recv_exact(header.data(), 9, timeout_ms);
    if (std::memcmp(header.data(), kMagic, 4) != 0) throw ProtocolError("bad magic");
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(header[5 + i]) << (8 * i);
    if (len > kMaxPayload) throw ProtocolError("oversized frame");
    std::vector<uint8_t> frame(9 + len);
    std::memcpy(frame.data(), header.data(), 9);
    if (len > 0) recv_exact(frame.data() + 9, len, timeout_ms);
    return frame;
  }

  void close() override {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  static constexpr uint32_t kMaxPayload = 1u << 28;

  void recv_exact(uint8_t* dst, std::size_t n, int timeout_ms) {
    std::size_t got = 0;
    while (got < n) {
      pollfd pfd{fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, timeout_ms);
      if (ready == 0) throw ProtocolError("timeout waiting for message");
      if (ready < 0) throw ProtocolError("poll failed");
      const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
      if (r == 0) throw ProtocolError("connection closed by peer");
      if (r < 0) throw ProtocolError("socket recv failed");
      got += static_cast<std::size_t>(r);
    }
  }

  int fd_ = -1;
};

class TcpListener final : public Listener {
 public:
  TcpListener(int fd, std::string endpoint) : fd_(fd), endpoint_(std::move(endpoint)) {}
  ~TcpListener() override { close(); }

  std::unique_ptr<Channel> accept(int timeout_ms) override {
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, timeout_ms);
    if (ready == 0) throw ProtocolError("accept timeout on " + endpoint_);
    if (ready < 0) throw ProtocolError("poll failed");
    const int client = ::accept(fd_, nullptr, nullptr);
    if (client < 0) throw ProtocolError("accept failed");
    return std::make_unique<TcpChannel>(client);
  }

  std::string endpoint() const override { return endpoint_; }

  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
  std::string endpoint_;
};

struct HostPort {
  std::string host;
  std::string port;
};

HostPort split_host_port(const std::string& endpoint) {
  const std::size_t colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size()) {
    throw ConfigError("endpoint must be host:port or inproc:<name>, got " + endpoint);
  }
  return {endpoint.substr(0, colon), endpoint.substr(colon + 1)};
}

}  // namespace

std::unique_ptr<Listener> make_listener(const std::string& endpoint) {
  if (endpoint.rfind("inproc:", 0) == 0) {
    const std::string name = endpoint.substr(7);
    if (name.empty()) throw ConfigError("inproc endpoint needs a name");
    auto state = std::make_shared<InprocListenerState>();
    {
      std::lock_guard lock(g_inproc_mutex);
      if (g_inproc_registry.contains(name)) {
        throw ConfigError("inproc listener already exists: " + name);
      }
      g_inproc_registry[name] = state;
    }
    return std::make_unique<InprocListener>(name, std::move(state));
  }

  const HostPort hp = split_host_port(endpoint);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res) != 0 || !res) {
    throw ProtocolError("cannot resolve " + endpoint);
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw ProtocolError("socket() failed");
  }
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, res->ai_addr, res->ai_addrlen) < 0 || ::listen(fd, 16) < 0) {
    ::close(fd);
    ::freeaddrinfo(res);
    throw ProtocolError("cannot bind/listen on " + endpoint);
  }
  ::freeaddrinfo(res);

  sockaddr_in actual{};
  socklen_t len = sizeof(actual);
  std::string resolved = endpoint;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&actual), &len) == 0) {
    resolved = hp.host + ":" + std::to_string(ntohs(actual.sin_port));
  }
  return std::make_unique<TcpListener>(fd, resolved);
}

std::unique_ptr<Channel> dial(const std::string& endpoint, int timeout_ms) {
  if (endpoint.rfind("inproc:", 0) == 0) {
    return inproc_dial(endpoint.substr(7), timeout_ms);
  }
  const HostPort hp = split_host_port(endpoint);
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res) != 0 || !res) {
    throw ProtocolError("cannot resolve " + endpoint);
  }
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  int fd = -1;
  // The server process may still be binding; retry until the deadline.
  while (true) {
    fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) break;
    if (::connect(fd, res->ai_addr, res->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
    if (std::chrono::steady_clock::now() >= deadline) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw ProtocolError("cannot connect to " + endpoint);
  return std::make_unique<TcpChannel>(fd);
}

void send_message(Channel& channel, const Message& msg) {
  channel.send_frame(encode(msg));
}

Message recv_message(Channel& channel, int timeout_ms) {
  return decode(channel.recv_frame(timeout_ms));
}

}  // namespace fedplant
