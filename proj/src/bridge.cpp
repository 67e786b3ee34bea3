#include "shapdistill/bridge.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "shapdistill/errors.hpp"

namespace shapdistill {

namespace {

std::string abbreviate(const std::string& payload) {
  constexpr std::size_t kMax = 200;
  return payload.size() <= kMax ? payload : payload.substr(0, kMax) + "...";
}

nlohmann::json parse_message(const std::string& line) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw BridgeProtocolError("bridge: malformed message (not JSON): '" + abbreviate(line) + "'");
  }
  if (!doc.is_object() || !doc.contains("type") || !doc["type"].is_string()) {
    throw BridgeProtocolError("bridge: malformed message (missing \"type\"): '" + abbreviate(line) + "'");
  }
  if (doc["type"] == "error") {
    throw BridgeProtocolError("bridge: adapter reported error: " + doc.value("message", std::string("(no message)")));
  }
  return doc;
}

}  // namespace

// --- ChildProcess ------------------------------------------------------------

ChildProcess::ChildProcess(const std::vector<std::string>& argv) {
  if (argv.empty()) throw BridgeError("bridge: empty adapter command");
  // Writes to a dead adapter must surface as EPIPE errors, not kill us.
  ::signal(SIGPIPE, SIG_IGN);

  int to_child[2], from_child[2], exec_status[2];
  if (::pipe(to_child) != 0 || ::pipe(from_child) != 0 || ::pipe2(exec_status, O_CLOEXEC) != 0) {
    throw BridgeError(std::string("bridge: pipe failed: ") + std::strerror(errno));
  }
  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  pid_ = ::fork();
  if (pid_ < 0) throw BridgeError(std::string("bridge: fork failed: ") + std::strerror(errno));
  if (pid_ == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::close(exec_status[0]);
    ::execvp(args[0], args.data());
    const int err = errno;
    [[maybe_unused]] auto n = ::write(exec_status[1], &err, sizeof(err));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::close(exec_status[1]);
  stdin_fd_ = to_child[1];
  stdout_fd_ = from_child[0];

  int err = 0;
  const ssize_t got = ::read(exec_status[0], &err, sizeof(err));
  ::close(exec_status[0]);
  if (got == sizeof(err)) {
    wait();
    throw BridgeError(fmt::format("bridge: cannot execute '{}': {}", argv[0], std::strerror(err)));
  }
}

ChildProcess::~ChildProcess() {
  close_stdin();
  if (stdout_fd_ >= 0) ::close(stdout_fd_);
  if (pid_ > 0 && !exit_status_) {
    for (int i = 0; i < 50; ++i) {
      int status = 0;
      if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
  }
}

void ChildProcess::write_line(const std::string& line) {
  if (stdin_fd_ < 0) throw BridgeError("bridge: adapter input already closed");
  std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(stdin_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BridgeError(std::string("bridge: write to adapter failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string ChildProcess::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
      std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      throw BridgeTimeoutError(fmt::format("bridge: no response from adapter within {} ms", timeout.count()));
    }
    pollfd pfd{stdout_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw BridgeError(std::string("bridge: poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) continue;
    char chunk[4096];
    const ssize_t n = ::read(stdout_fd_, chunk, sizeof(chunk));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw BridgeError(std::string("bridge: read from adapter failed: ") + std::strerror(errno));
    }
    if (n == 0) throw BridgeError("bridge: adapter closed its output (broken pipe)");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ChildProcess::close_stdin() {
  if (stdin_fd_ >= 0) {
    ::close(stdin_fd_);
    stdin_fd_ = -1;
  }
}

int ChildProcess::wait() {
  if (exit_status_) return *exit_status_;
  int status = 0;
  while (::waitpid(pid_, &status, 0) < 0) {
    if (errno != EINTR) throw BridgeError(std::string("bridge: waitpid failed: ") + std::strerror(errno));
  }
  exit_status_ = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return *exit_status_;
}

// --- Protocol ----------------------------------------------------------------

BridgeHandshake parse_hello_ack(const std::string& line) {
  const nlohmann::json doc = parse_message(line);
  if (doc["type"] != "hello_ack") {
    throw BridgeProtocolError("bridge: expected hello_ack, got '" + abbreviate(line) + "'");
  }
  BridgeHandshake h;
  try {
    h.protocol_version = doc.at("protocol_version").get<int>();
    h.kind = policy_kind_from_string(doc.at("kind").get<std::string>());
    h.feature_count = doc.at("feature_count").get<int>();
    h.action_count = doc.at("action_count").get<int>();
    h.policy_id = doc.value("policy_id", std::string("remote"));
  } catch (const nlohmann::json::exception&) {
    throw BridgeProtocolError("bridge: malformed hello_ack: '" + abbreviate(line) + "'");
  } catch (const ConfigError&) {
    throw BridgeProtocolError("bridge: unknown policy kind in hello_ack: '" + abbreviate(line) + "'");
  }
  if (h.protocol_version != kBridgeProtocolVersion) {
    throw BridgeProtocolError(fmt::format("bridge: protocol version mismatch (adapter {}, client {})",
                                          h.protocol_version, kBridgeProtocolVersion));
  }
  if (h.feature_count < 1 || h.action_count < 2) {
    throw BridgeProtocolError("bridge: invalid dimensions in hello_ack: '" + abbreviate(line) + "'");
  }
  return h;
}

BridgeHandshake handshake(ChildProcess& child, const EnvSpec* expected, std::chrono::milliseconds timeout) {
  nlohmann::ordered_json hello;
  hello["type"] = "hello";
  hello["protocol_version"] = kBridgeProtocolVersion;
  child.write_line(hello.dump());
  BridgeHandshake h = parse_hello_ack(child.read_line(timeout));
  if (expected != nullptr &&
      (h.feature_count != expected->feature_count() || h.action_count != expected->action_count)) {
    throw BridgeProtocolError(fmt::format(
        "bridge: dimension mismatch: adapter advertises {} features / {} actions, {} needs {} / {}",
        h.feature_count, h.action_count, expected->name, expected->feature_count(), expected->action_count));
  }
  return h;
}

std::string make_query(const char* type, std::span<const double> state) {
  nlohmann::ordered_json q;
  q["type"] = type;
  q["state"] = std::vector<double>(state.begin(), state.end());
  return q.dump();
}

int parse_action_response(const std::string& line, int action_count) {
  const nlohmann::json doc = parse_message(line);
  if (doc["type"] != "action" || !doc.contains("action") || !doc["action"].is_number_integer()) {
    throw BridgeProtocolError("bridge: invalid action response: '" + abbreviate(line) + "'");
  }
  const int a = doc["action"].get<int>();
  if (a < 0 || a >= action_count) {
    throw BridgeProtocolError(fmt::format("bridge: action {} out of range [0, {})", a, action_count));
  }
  return a;
}

std::vector<double> parse_probs_response(const std::string& line, int action_count) {
  const nlohmann::json doc = parse_message(line);
  if (doc["type"] != "probs" || !doc.contains("probs") || !doc["probs"].is_array()) {
    throw BridgeProtocolError("bridge: invalid probs response: '" + abbreviate(line) + "'");
  }
  std::vector<double> probs;
  try {
    probs = doc["probs"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception&) {
    throw BridgeProtocolError("bridge: non-numeric probabilities: '" + abbreviate(line) + "'");
  }
  if (static_cast<int>(probs.size()) != action_count) {
    throw BridgeProtocolError(fmt::format("bridge: expected {} probabilities, got {}", action_count, probs.size()));
  }
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) throw BridgeProtocolError("bridge: negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw BridgeProtocolError(fmt::format("bridge: probabilities sum to {} (not a simplex)", total));
  }
  return probs;
}

// --- RemotePolicy ------------------------------------------------------------

RemotePolicy::RemotePolicy(std::unique_ptr<ChildProcess> child, BridgeHandshake handshake,
                           std::chrono::milliseconds timeout)
    : child_(std::move(child)), handshake_(std::move(handshake)), timeout_(timeout) {}

std::unique_ptr<RemotePolicy> RemotePolicy::launch(const std::vector<std::string>& argv, const EnvSpec* expected,
                                                   std::chrono::milliseconds timeout) {
  auto child = std::make_unique<ChildProcess>(argv);
  BridgeHandshake h = handshake(*child, expected, timeout);
  return std::unique_ptr<RemotePolicy>(new RemotePolicy(std::move(child), std::move(h), timeout));
}

std::string RemotePolicy::request(const std::string& line) const {
  std::lock_guard lock(mutex_);
  if (!child_) throw BridgeError("bridge: adapter already shut down");
  child_->write_line(line);
  return child_->read_line(timeout_);
}

int RemotePolicy::act(std::span<const double> state) const {
  check_state(state);
  if (handshake_.kind == PolicyKind::kStochastic) return Policy::act(state);
  return parse_action_response(request(make_query("act", state)), handshake_.action_count);
}

std::vector<double> RemotePolicy::action_probs(std::span<const double> state) const {
  check_state(state);
  if (handshake_.kind == PolicyKind::kDeterministic) return Policy::action_probs(state);
  return parse_probs_response(request(make_query("probs", state)), handshake_.action_count);
}

int RemotePolicy::shutdown() {
  std::lock_guard lock(mutex_);
  if (!child_) return 0;
  child_->close_stdin();
  const int status = child_->wait();
  child_.reset();
  return status;
}

}  // namespace shapdistill
