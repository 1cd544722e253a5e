#include "prescient/teleop.hpp"

#include "prescient/error.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

namespace prescient {
namespace {

constexpr std::size_t kMaxLine = 1 << 20;

bool send_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

// Single-producer/single-consumer line queue between control loop and writer.
class Outbox {
 public:
  void push(std::string line) {
    {
      std::lock_guard lock(mutex_);
      lines_.push_back(std::move(line));
    }
    cv_.notify_one();
  }
  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_one();
  }
  /// Empty optional once closed and drained.
  std::optional<std::string> pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return closed_ || !lines_.empty(); });
    if (lines_.empty()) return std::nullopt;
    auto line = std::move(lines_.front());
    lines_.pop_front();
    return line;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::string> lines_;
  bool closed_ = false;
};

}  // namespace

ServiceConfig::ServiceConfig() {
  retarget.scale = 1.0;
  compensator.backward_delay_estimate = network.backward_total();
}

void ServiceConfig::validate() const {
  network.validate();
  compensator.validate();
  retarget.validate();
  if (!(controller.control_rate > 0.0)) fail(ErrorCode::kConfiguration, "service: control rate must be positive");
  if (!(feedback_rate > 0.0) || feedback_rate > controller.control_rate + 1e-9) {
    fail(ErrorCode::kConfiguration, "service: feedback rate must lie in (0, control rate]");
  }
  if (std::abs(compensator.control_rate - controller.control_rate) > 1e-9) {
    fail(ErrorCode::kConfiguration, "service: compensator and controller rates differ");
  }
}

ServiceConfig service_config_from_json(const nlohmann::json& j, ServiceConfig base) {
  try {
    ServiceConfig c = std::move(base);
    if (j.contains("network")) c.network = delay_profile_from_json(j["network"]);
    c.compensator.backward_delay_estimate = c.network.backward_total();
    if (j.contains("compensator")) c.compensator = compensator_config_from_json(j["compensator"], c.compensator);
    if (j.contains("compensation")) c.compensator.enabled = j["compensation"].get<bool>();
    if (j.contains("controller")) c.controller = arm_controller_config_from_json(j["controller"]);
    if (j.contains("retarget")) c.retarget = retarget_config_from_json(j["retarget"]);
    c.feedback_rate = j.value("feedback_rate_hz", c.feedback_rate);
    c.seed = j.value("seed", c.seed);
    c.host = j.value("host", c.host);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("service config: ") + e.what());
  }
}

nlohmann::json to_json(const FeedbackFrame& f) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : f.points) points.push_back({p.x(), p.y()});
  return {{"t", f.t},
          {"seq", f.seq},
          {"mode", to_string(f.mode)},
          {"q", std::vector<double>(f.q.data(), f.q.data() + f.q.size())},
          {"points", points},
          {"tau_f_ms", f.tau_f * 1000.0},
          {"task", f.task ? nlohmann::json(*f.task) : nlohmann::json(nullptr)},
          {"alpha", f.alpha}};
}

TeleopSession::TeleopSession(std::vector<TaskModel> library, ServiceConfig config, const Clock& clock)
    : config_(std::move(config)),
      clock_(clock),
      comp_([&] {
        config_.validate();
        if (library.empty()) fail(ErrorCode::kConfiguration, "session: empty task library");
        // Until the first command arrives the arm holds its rest pose.
        CompensatorConfig cc = config_.compensator;
        const Eigen::Vector2d hand = forward_kinematics(desk_arm()).back();
        const auto& channels = library.front().channels;
        cc.initial_reference = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(channels.size()));
        for (std::size_t i = 0; i < channels.size(); ++i) {
          if (channels[i].channel.name == "hand_x") cc.initial_reference(static_cast<Eigen::Index>(i)) = hand.x();
          if (channels[i].channel.name == "hand_y") cc.initial_reference(static_cast<Eigen::Index>(i)) = hand.y();
        }
        return Compensator(std::move(library), std::move(cc));
      }()),
      arm_(desk_arm(), config_.controller),
      forward_(config_.network.forward_mean, config_.network.forward_sigma, config_.network.loss,
               derive_seed(config_.seed, 1)),
      backward_(config_.network.backward, config_.network.backward_sigma, 0.0, derive_seed(config_.seed, 2)),
      buffer_(config_.network.backward, config_.network.jitter_buffer) {
  Eigen::Index hx = -1, hy = -1;
  for (const auto& c : comp_.channels()) {
    if (c.name == "hand_x") hx = static_cast<Eigen::Index>(channel_names_.size());
    if (c.name == "hand_y") hy = static_cast<Eigen::Index>(channel_names_.size());
    channel_names_.push_back(c.name);
    cartesian_.push_back(c.kind == ChannelKind::kCartesian);
  }
  if (hx < 0 || hy < 0) fail(ErrorCode::kConfiguration, "session: library must have hand_x and hand_y channels");
  hand_x_ = hx;
  hand_y_ = hy;
  feedback_every_ = std::max(1, static_cast<int>(std::lround(config_.controller.control_rate / config_.feedback_rate)));
}

TeleopSession::Event TeleopSession::parse(const std::string& line) const {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    return Malformed{"invalid JSON"};
  }
  if (!j.is_object()) return Malformed{"expected a JSON object"};
  if (j.contains("type")) {
    if (j["type"] != "config") return Malformed{"unknown message type"};
    if (!j.contains("compensation") || !j["compensation"].is_boolean()) {
      return Malformed{"config message needs a boolean 'compensation'"};
    }
    return Toggle{j["compensation"].get<bool>()};
  }
  if (!j.contains("t") || !j["t"].is_number()) return Malformed{"command needs a numeric 't'"};
  if (!j.contains("seq") || !j["seq"].is_number_unsigned()) return Malformed{"command needs a non-negative integer 'seq'"};
  if (!j.contains("channels") || !j["channels"].is_object()) return Malformed{"command needs a 'channels' object"};
  const auto& ch = j["channels"];
  const auto n = static_cast<Eigen::Index>(channel_names_.size());
  Eigen::VectorXd human(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& name = channel_names_[static_cast<std::size_t>(i)];
    if (!ch.contains(name) || !ch[name].is_number()) return Malformed{"missing numeric channel '" + name + "'"};
    human(i) = ch[name].get<double>();
  }
  const double t = j["t"].get<double>();
  if (!std::isfinite(t) || !human.allFinite()) return Malformed{"non-finite value"};

  // Cartesian channels are scaled as one point; angular ones go through the
  // joint map when they have an entry.
  Eigen::VectorXd robot = human;
  std::vector<Eigen::Index> cart;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (cartesian_[static_cast<std::size_t>(i)]) cart.push_back(i);
  }
  Eigen::VectorXd p(static_cast<Eigen::Index>(cart.size()));
  for (std::size_t k = 0; k < cart.size(); ++k) p(static_cast<Eigen::Index>(k)) = human(cart[k]);
  try {
    const Eigen::VectorXd mapped = scale_cartesian(p, config_.retarget);
    for (std::size_t k = 0; k < cart.size(); ++k) robot(cart[k]) = mapped(static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& name = channel_names_[static_cast<std::size_t>(i)];
      if (!cartesian_[static_cast<std::size_t>(i)] && config_.retarget.joint_map.count(name)) {
        robot(i) = retarget_joint(name, human(i), config_.retarget);
      }
    }
  } catch (const Error& e) {
    return Malformed{e.what()};
  }
  return Command{j["seq"].get<std::uint64_t>(), t, std::move(robot)};
}

void TeleopSession::handle_line(const std::string& line) {
  auto event = parse(line);
  std::lock_guard lock(inbox_mutex_);
  inbox_.push_back(std::move(event));
}

std::vector<nlohmann::json> TeleopSession::tick() {
  const double now = clock_.now();
  const double dt = 1.0 / config_.controller.control_rate;
  std::vector<nlohmann::json> out;
  std::vector<Event> events;
  {
    std::lock_guard lock(inbox_mutex_);
    events.swap(inbox_);
  }
  std::uint64_t commands = 0, errors = 0;
  for (auto& e : events) {
    if (auto* c = std::get_if<Command>(&e)) {
      forward_.send({c->seq, c->sent, std::move(c->values)}, c->sent);
      ++commands;
    } else if (auto* t = std::get_if<Toggle>(&e)) {
      comp_.set_enabled(t->compensation);
    } else {
      out.push_back({{"error", std::get<Malformed>(e).message}});
      ++errors;
    }
  }
  for (auto& d : forward_.poll(now)) comp_.ingest(d.packet.sent, d.arrival, std::move(d.packet.payload), d.packet.seq);

  const auto ref = comp_.tick(now);
  const auto& rec = comp_.last_record();
  const Eigen::Vector2d hand_ref(ref.values(hand_x_), ref.values(hand_y_));
  const Eigen::Vector2d vel = prev_ref_ ? Eigen::Vector2d((hand_ref - *prev_ref_) / dt) : Eigen::Vector2d::Zero();
  prev_ref_ = hand_ref;
  arm_.step(hand_ref, vel);
  const double excess = prev_record_ ? blend_bound_excess(*prev_record_, rec) : 0.0;
  prev_record_ = rec;

  if (tick_count_++ % static_cast<std::uint64_t>(feedback_every_) == 0) {
    FeedbackFrame f;
    f.seq = frame_seq_++;
    f.t = now;
    f.mode = rec.mode;
    f.q = arm_.chain().q;
    f.points.push_back(arm_.chain().base);
    for (const auto& p : forward_kinematics(arm_.chain())) f.points.push_back(p);
    f.tau_f = rec.forward_delay;
    if (rec.task_id >= 0) f.task = rec.task_id;
    f.alpha = rec.alpha;
    backward_.send({f.seq, now, std::move(f)}, now);
  }
  std::uint64_t released = 0;
  for (auto& d : backward_.poll(now)) buffer_.push(std::move(d.packet), d.arrival);
  for (auto& r : buffer_.pop(now)) {
    out.push_back(to_json(r.packet.payload));
    ++released;
  }

  std::lock_guard lock(stats_mutex_);
  stats_.commands += commands;
  stats_.errors += errors;
  stats_.ticks = tick_count_;
  stats_.frames_sent += released;
  stats_.frames_dropped = buffer_.dropped();
  stats_.forward_lost = forward_.lost_count();
  stats_.max_blend_excess = std::max(stats_.max_blend_excess, excess);
  stats_.transitions = comp_.transitions();
  return out;
}

SessionStats TeleopSession::stats() const {
  std::lock_guard lock(stats_mutex_);
  return stats_;
}

TeleopServer::TeleopServer(std::vector<TaskModel> library, ServiceConfig config)
    : library_(std::move(library)), config_(std::move(config)) {
  config_.validate();
  if (library_.empty()) fail(ErrorCode::kConfiguration, "server: empty task library");
}

TeleopServer::~TeleopServer() { stop(); }

std::uint16_t TeleopServer::start(std::uint16_t port) {
  if (running_) fail(ErrorCode::kInvalidArgument, "server: already running");
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) fail(ErrorCode::kIo, std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, config_.host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    fail(ErrorCode::kConfiguration, "server: bad host address '" + config_.host + "'");
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd, 4) < 0) {
    const std::string why = std::strerror(errno);
    ::close(fd);
    fail(ErrorCode::kIo, "server: cannot listen on port " + std::to_string(port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  listen_fd_ = fd;
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
  return port_;
}

void TeleopServer::stop() {
  {
    std::lock_guard lock(mutex_);
    if (!running_ && !acceptor_.joinable()) return;
    running_ = false;
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    if (active_fd_ >= 0) ::shutdown(active_fd_, SHUT_RDWR);
  }
  if (acceptor_.joinable()) acceptor_.join();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  stopped_.notify_all();
}

void TeleopServer::wait() {
  std::unique_lock lock(mutex_);
  stopped_.wait(lock, [&] { return !running_.load(); });
}

std::vector<SessionStats> TeleopServer::sessions() const {
  std::lock_guard lock(mutex_);
  auto out = finished_;
  if (active_) out.push_back(active_->stats());
  return out;
}

void TeleopServer::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    run_session(fd);
  }
}

void TeleopServer::run_session(int fd) {
  std::shared_ptr<TeleopSession> session;
  try {
    session = std::make_shared<TeleopSession>(library_, config_, clock_);
  } catch (const Error& e) {
    send_all(fd, nlohmann::json{{"error", e.what()}}.dump() + "\n");
    ::close(fd);
    return;
  }
  {
    std::lock_guard lock(mutex_);
    if (!running_) {
      ::close(fd);
      return;
    }
    active_ = session;
    active_fd_ = fd;
  }

  std::atomic<bool> done{false};
  Outbox outbox;

  std::thread reader([&] {
    std::string pending;
    char chunk[4096];
    while (true) {
      const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      pending.append(chunk, static_cast<std::size_t>(n));
      std::size_t pos;
      while ((pos = pending.find('\n')) != std::string::npos) {
        std::string line = pending.substr(0, pos);
        pending.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) session->handle_line(line);
      }
      if (pending.size() > kMaxLine) {
        session->handle_line("<oversized line>");
        pending.clear();
      }
    }
    done = true;
  });

  std::thread writer([&] {
    while (auto line = outbox.pop()) {
      if (!send_all(fd, *line)) {
        done = true;
        ::shutdown(fd, SHUT_RDWR);
        break;
      }
    }
  });

  // Control loop on the steady clock; the session itself reads wall time.
  const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / config_.controller.control_rate));
  auto next = std::chrono::steady_clock::now();
  while (!done && running_) {
    for (auto& msg : session->tick()) outbox.push(msg.dump() + "\n");
    next += period;
    const auto now = std::chrono::steady_clock::now();
    if (next < now) next = now;  // overrun: skip ahead rather than burst
    std::this_thread::sleep_until(next);
  }
  outbox.close();
  ::shutdown(fd, SHUT_RDWR);
  reader.join();
  writer.join();
  ::close(fd);

  std::lock_guard lock(mutex_);
  finished_.push_back(session->stats());
  active_.reset();
  active_fd_ = -1;
}

}  // namespace prescient
