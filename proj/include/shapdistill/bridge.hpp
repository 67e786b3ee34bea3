#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "shapdistill/env.hpp"
#include "shapdistill/policy.hpp"

namespace shapdistill {

// Newline-delimited JSON over a child process's stdin/stdout.
//
//   client  -> {"type":"hello","protocol_version":1}
//   adapter -> {"type":"hello_ack","protocol_version":1,"kind":"deterministic"|"stochastic",
//               "feature_count":n,"action_count":k,"policy_id":"..."}
//   client  -> {"type":"act","state":[...]}    adapter -> {"type":"action","action":i}
//   client  -> {"type":"probs","state":[...]}  adapter -> {"type":"probs","probs":[...]}
//   adapter may answer any request with {"type":"error","message":"..."}
//
// Requests are strictly sequential; one response line per request line.
inline constexpr int kBridgeProtocolVersion = 1;

struct BridgeHandshake {
  int protocol_version = kBridgeProtocolVersion;
  PolicyKind kind = PolicyKind::kDeterministic;
  int feature_count = 0;
  int action_count = 0;
  std::string policy_id;
};

// Owns a spawned child process and its two pipes. Closing stdin signals
// end-of-input; the destructor reaps the child (killing it if it lingers).
class ChildProcess {
 public:
  explicit ChildProcess(const std::vector<std::string>& argv);
  ~ChildProcess();
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  void write_line(const std::string& line);
  // Throws BridgeTimeoutError after `timeout`, BridgeError on EOF.
  std::string read_line(std::chrono::milliseconds timeout);
  void close_stdin();
  // Waits for exit and returns the exit status (-1 if killed by a signal).
  int wait();
  int pid() const { return pid_; }

 private:
  int pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  std::string buffer_;
  std::optional<int> exit_status_;
};

// Exchanges hello / hello_ack and validates the advertised protocol version
// and, when `expected` is given, the environment dimensions.
BridgeHandshake handshake(ChildProcess& child, const EnvSpec* expected,
                          std::chrono::milliseconds timeout = std::chrono::seconds(10));

// Parses and validates one hello_ack line. Exposed for conformance tests.
BridgeHandshake parse_hello_ack(const std::string& line);

// A policy served by an external adapter process, usable anywhere a local
// Policy is. Queries on one instance are serialized.
class RemotePolicy final : public Policy {
 public:
  static std::unique_ptr<RemotePolicy> launch(const std::vector<std::string>& argv, const EnvSpec* expected,
                                              std::chrono::milliseconds timeout = std::chrono::seconds(10));

  PolicyKind kind() const override { return handshake_.kind; }
  int feature_count() const override { return handshake_.feature_count; }
  int action_count() const override { return handshake_.action_count; }
  const BridgeHandshake& info() const { return handshake_; }

  int act(std::span<const double> state) const override;
  std::vector<double> action_probs(std::span<const double> state) const override;

  // Closes the adapter's input and returns its exit status.
  int shutdown();

 private:
  RemotePolicy(std::unique_ptr<ChildProcess> child, BridgeHandshake handshake, std::chrono::milliseconds timeout);
  std::string request(const std::string& line) const;

  mutable std::mutex mutex_;
  std::unique_ptr<ChildProcess> child_;
  BridgeHandshake handshake_;
  std::chrono::milliseconds timeout_;
};

// Validation of individual responses; exposed for conformance tests.
int parse_action_response(const std::string& line, int action_count);
std::vector<double> parse_probs_response(const std::string& line, int action_count);
std::string make_query(const char* type, std::span<const double> state);

}  // namespace shapdistill
