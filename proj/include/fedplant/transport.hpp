#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "fedplant/secure_agg.hpp"

namespace fedplant {

// Frame: magic "FPL1", msg_type u8, payload_len u32 LE, payload.
constexpr char kMagic[4] = {'F', 'P', 'L', '1'};
constexpr int kDefaultPhaseTimeoutMs = 60'000;

enum class MsgType : uint8_t {
  kJoinRequest = 1,
  kJoinAccept = 2,
  kGlobalModel = 3,
  kLocalUpdatePlain = 4,
  kLocalUpdateMasked = 5,
  kRoundAck = 6,
  kShutdown = 7,
  kProtocolError = 8,
};

enum class WeightsMode : uint8_t { kFedAvg = 0, kAdaptive = 1 };

struct JoinRequest {
  uint32_t plant_id = 0;
  uint64_t arch_hash = 0;
};

struct JoinAccept {
  uint32_t round_count = 0;
  uint32_t param_count = 0;
  uint32_t scale_bits = 24;
  double clip_range = 64.0;
  WeightsMode weights_mode = WeightsMode::kFedAvg;
  std::vector<uint32_t> peer_ids;
};

struct GlobalModel {
  uint32_t round = 0;
  double weight = 0.0;  // this client's aggregation weight w_k
  std::vector<uint8_t> params;  // model-core parameter serialization
};

struct LocalUpdatePlain {
  uint32_t round = 0;
  uint32_t plant_id = 0;
  uint64_t n_samples = 0;
  double train_loss = 0.0;
  std::vector<uint8_t> params;
};

struct LocalUpdateMasked {
  uint32_t round = 0;
  uint64_t n_samples = 0;
  double train_loss = 0.0;
  MaskedUpdate update;
};

struct RoundAck {
  uint32_t round = 0;
};

struct Shutdown {};

struct ProtocolErrorMsg {
  uint32_t code = 0;
  std::string text;
};

using Message = std::variant<JoinRequest, JoinAccept, GlobalModel, LocalUpdatePlain,
                             LocalUpdateMasked, RoundAck, Shutdown, ProtocolErrorMsg>;

std::vector<uint8_t> encode(const Message& msg);
Message decode(const std::vector<uint8_t>& frame);  // throws ProtocolError

// A bidirectional frame pipe. recv blocks up to timeout_ms, then throws
// ProtocolError; a closed peer also raises ProtocolError.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send_frame(const std::vector<uint8_t>& frame) = 0;
  virtual std::vector<uint8_t> recv_frame(int timeout_ms) = 0;
  virtual void close() = 0;
};

class Listener {
 public:
  virtual ~Listener() = default;
  virtual std::unique_ptr<Channel> accept(int timeout_ms) = 0;
  // Resolved endpoint (TCP listeners report the actual bound port).
  virtual std::string endpoint() const = 0;
  virtual void close() = 0;
};

// Endpoint strings: "inproc:<name>" or "host:port".
std::unique_ptr<Listener> make_listener(const std::string& endpoint);
std::unique_ptr<Channel> dial(const std::string& endpoint, int timeout_ms);

void send_message(Channel& channel, const Message& msg);
Message recv_message(Channel& channel, int timeout_ms);

}  // namespace fedplant
