#include "vip/server.hpp"

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <deque>
#include <iostream>
#include <thread>

#include "vip/session.hpp"
#include "vip/wire.hpp"

namespace vip::service {
namespace {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using Clock = std::chrono::steady_clock;

struct Shared {
  ServiceConfig config;
  Catalog catalog;
};

std::string mime_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/vnd.microsoft.icon";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') out += c;
  }
  if (out.empty()) out = "anon";
  return out.substr(0, 32);
}

std::string stamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%S", &tm);
  return buf;
}

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, std::shared_ptr<const Shared> shared)
      : ws_(std::move(socket)), timer_(ws_.get_executor()), shared_(std::move(shared)) {
    period_ = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(1.0 / shared_->config.tick_hz));
  }

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->on_accept();
    });
  }

 private:
  void on_accept() {
    last_msg_ = Clock::now();
    send(wire::encode_catalog(shared_->catalog.wire_entries()), false);
    do_read();
    next_tick_ = Clock::now() + period_;
    arm_timer();
  }

  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->on_disconnect();
        return;
      }
      const auto text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->last_msg_ = Clock::now();
      self->handle(text);
      if (!self->closed_) self->do_read();
    });
  }

  void handle(const std::string& text) {
    try {
      const auto msg = wire::parse_client(text);
      if (const auto* h = std::get_if<wire::Hello>(&msg)) {
        name_ = sanitize(h->name);
      } else if (const auto* s = std::get_if<wire::SelectAssistant>(&msg)) {
        select(s->id);
      } else if (const auto* e = std::get_if<wire::OperatorEvent>(&msg)) {
        if (!session_) {
          error("no_session", "select an assistant first");
        } else {
          events_.push_back(e->event);
        }
      } else if (const auto* in = std::get_if<wire::Input>(&msg)) {
        latest_u_ = in->u;  // latest wins
      }
    } catch (const wire::WireError& e) {
      error(e.code(), e.what());
    }
  }

  void select(const std::string& id) {
    if (session_) {
      error("session_active", "assistant already selected for this connection");
      return;
    }
    const auto& cat = shared_->catalog;
    const auto* entry = cat.find(id);
    if (!entry) {
      error("unknown_assistant", "unknown assistant '" + id + "'");
      return;
    }
    session::SessionConfig sc;
    sc.session_id = name_ + "-" + stamp();
    sc.runs_dir = shared_->config.runs_dir;
    sc.seed = shared_->config.seed.value_or(
        static_cast<std::uint64_t>(Clock::now().time_since_epoch().count()));
    sc.sim = shared_->config.sim;
    sc.trial_duration_s = shared_->config.trial_duration_s;
    try {
      session_.emplace(std::move(sc), cat.make(id), entry->path.string(), cat.predictor(),
                       cat.predictor_path().string());
    } catch (const std::exception& e) {
      error("session_failed", e.what());
    }
  }

  void arm_timer() {
    timer_.expires_at(next_tick_);
    timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (ec || self->closed_) return;
      self->on_tick();
    });
  }

  void on_tick() {
    next_tick_ += period_;
    const auto now = Clock::now();
    // Far behind (suspended process): resynchronize rather than burst.
    if (now - next_tick_ > 5 * period_) next_tick_ = now + period_;
    arm_timer();

    const std::chrono::duration<double> idle = now - last_msg_;
    if (idle.count() > shared_->config.idle_timeout_s) {
      error("idle_timeout", "no client message within the idle timeout");
      close_after_flush();
      return;
    }
    if (!session_ || session_->faulted()) return;

    try {
      while (!events_.empty()) {
        const auto ev = events_.front();
        events_.pop_front();
        try {
          if (auto end = session_->operator_event(ev)) send_summary(*end);
        } catch (const protocol::IllegalTransition& e) {
          error("illegal_transition", e.what());
        }
      }
      if (session_->phase() == SessionPhase::FineTuning) {
        if (auto job = session_->take_finetune_job()) launch_finetune(std::move(*job));
        return;
      }
      if (session_->trial_running()) {
        const auto out = session_->tick(latest_u_);
        if (out.frame) send(wire::encode_frame(*out.frame), true);
        if (out.ended) send_summary(*out.ended);
      }
      if (session_->phase() == SessionPhase::Summary) close_after_flush();
    } catch (const sim::SimulationFault& e) {
      error("simulation_fault", e.what());
    } catch (const std::exception& e) {
      error("session_error", e.what());
    }
  }

  void send_summary(const session::TrialEnd& end) {
    send(wire::encode(wire::PhaseSummary{end.phase, end.trial_id, end.metrics, session_->phase()}),
         false);
  }

  void launch_finetune(session::FinetuneJob job) {
    auto self = shared_from_this();
    auto ex = ws_.get_executor();
    std::thread([self, ex, job = std::move(job)]() {
      const auto epochs = job.spec.epochs;
      adapt::FinetuneResult res;
      std::string failure;
      try {
        res = session::run_finetune_job(job, [self, ex, epochs](const nn::EpochStats& s) {
          net::post(ex, [self, s, epochs] {
            self->send(wire::encode(wire::FinetuneProgress{s.epoch, epochs, s.train_loss,
                                                           s.test_loss}),
                       false);
          });
        });
      } catch (const std::exception& e) {
        failure = e.what();
        res.model = job.model;
        res.report.records = job.records.size();
        res.report.unchanged = true;
      }
      net::post(ex, [self, res = std::move(res), failure]() mutable {
        self->on_finetune_done(std::move(res), failure);
      });
    }).detach();
  }

  void on_finetune_done(adapt::FinetuneResult res, const std::string& failure) {
    if (!failure.empty()) error("finetune_failed", failure);
    if (!session_) return;
    try {
      session_->finish_finetune(std::move(res));
    } catch (const std::exception& e) {
      error("session_error", e.what());
    }
  }

  void error(const std::string& code, const std::string& detail) {
    send(wire::encode(wire::ErrorMsg{code, detail}), false);
  }

  void send(std::string msg, bool droppable) {
    if (closed_) return;
    // A client that cannot keep up loses frames, never summaries or errors.
    if (droppable && out_.size() > 120) return;
    out_.push_back(std::move(msg));
    if (!writing_) do_write();
  }

  void do_write() {
    writing_ = true;
    ws_.async_write(net::buffer(out_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->out_.pop_front();
                      if (ec) {
                        self->writing_ = false;
                        self->on_disconnect();
                        return;
                      }
                      if (!self->out_.empty()) {
                        self->do_write();
                        return;
                      }
                      self->writing_ = false;
                      if (self->close_pending_) self->do_close();
                    });
  }

  void close_after_flush() {
    close_pending_ = true;
    if (!writing_) do_close();
  }

  void do_close() {
    if (closed_) return;
    on_disconnect();
    ws_.async_close(websocket::close_code::normal,
                    [self = shared_from_this()](beast::error_code) {});
  }

  void on_disconnect() {
    if (closed_) return;
    closed_ = true;
    timer_.cancel();
    if (session_) {
      try {
        session_->abort_trial();
      } catch (const std::exception& e) {
        std::cerr << "persisting trial on disconnect failed: " << e.what() << '\n';
      }
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  net::steady_timer timer_;
  std::shared_ptr<const Shared> shared_;
  Clock::duration period_{};
  Clock::time_point next_tick_;
  Clock::time_point last_msg_;
  std::deque<std::string> out_;
  bool writing_ = false;
  bool close_pending_ = false;
  bool closed_ = false;
  std::string name_ = "anon";
  double latest_u_ = 0.0;
  std::deque<protocol::Event> events_;
  std::optional<session::Session> session_;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, std::shared_ptr<const Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void run() { do_read(); }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) {
                         self->shutdown();
                         return;
                       }
                       self->on_request();
                     });
  }

  void on_request() {
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), shared_)->run(std::move(req_));
      return;
    }
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      return send_text(http::status::method_not_allowed, "method not allowed\n");
    }
    std::string target(req_.target());
    if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (target.empty() || target[0] != '/' || target.find("..") != std::string::npos) {
      return send_text(http::status::bad_request, "bad path\n");
    }
    if (target.back() == '/') target += "index.html";
    const auto path = shared_->config.static_dir / target.substr(1);

    beast::error_code ec;
    http::file_body::value_type body;
    body.open(path.string().c_str(), beast::file_mode::scan, ec);
    if (ec) return send_text(http::status::not_found, "not found\n");
    const auto size = body.size();
    http::response<http::file_body> res{std::piecewise_construct,
                                        std::make_tuple(std::move(body)),
                                        std::make_tuple(http::status::ok, req_.version())};
    res.set(http::field::content_type, mime_type(path));
    res.content_length(size);
    res.keep_alive(req_.keep_alive());
    send(std::move(res));
  }

  void send_text(http::status status, const std::string& text) {
    http::response<http::string_body> res{status, req_.version()};
    res.set(http::field::content_type, "text/plain");
    res.body() = text;
    res.prepare_payload();
    res.keep_alive(req_.keep_alive());
    send(std::move(res));
  }

  template <class Body>
  void send(http::response<Body>&& msg) {
    auto sp = std::make_shared<http::response<Body>>(std::move(msg));
    res_ = sp;
    http::async_write(stream_, *sp,
                      [self = shared_from_this(), sp](beast::error_code ec, std::size_t) {
                        self->res_.reset();
                        if (ec || sp->need_eof()) {
                          self->shutdown();
                          return;
                        }
                        self->do_read();
                      });
  }

  void shutdown() {
    beast::error_code ec;
    stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  std::shared_ptr<void> res_;
  std::shared_ptr<const Shared> shared_;
};

}  // namespace

void ServiceConfig::validate() const {
  if (!(tick_hz > 0.0) || !std::isfinite(tick_hz)) {
    throw std::invalid_argument("tick rate must be > 0");
  }
  if (!(idle_timeout_s > 0.0)) throw std::invalid_argument("idle timeout must be > 0");
  if (trial_duration_s && !(*trial_duration_s > 0.0)) {
    throw std::invalid_argument("trial duration must be > 0");
  }
  sim.validate();
}

struct Server::Impl {
  explicit Impl(std::shared_ptr<const Shared> s) : shared(std::move(s)), acceptor(ioc) {}

  void do_accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) {
        if (ec == net::error::operation_aborted) return;
      } else {
        std::make_shared<HttpSession>(std::move(socket), shared)->run();
      }
      do_accept();
    });
  }

  std::shared_ptr<const Shared> shared;
  net::io_context ioc{1};
  tcp::acceptor acceptor;
  std::thread thread;
  std::uint16_t port = 0;
};

Server::Server(ServiceConfig config, Catalog catalog) {
  config.validate();
  impl_ = std::make_unique<Impl>(
      std::make_shared<const Shared>(Shared{std::move(config), std::move(catalog)}));
}

Server::~Server() { stop(); }

void Server::start() {
  auto& im = *impl_;
  const auto& cfg = im.shared->config;
  const tcp::endpoint ep{net::ip::make_address(cfg.address), cfg.port};
  im.acceptor.open(ep.protocol());
  im.acceptor.set_option(net::socket_base::reuse_address(true));
  im.acceptor.bind(ep);
  im.acceptor.listen(net::socket_base::max_listen_connections);
  im.port = im.acceptor.local_endpoint().port();
  im.do_accept();
  im.thread = std::thread([&im] { im.ioc.run(); });
}

std::uint16_t Server::port() const { return impl_->port; }

void Server::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void Server::stop() {
  if (!impl_) return;
  impl_->ioc.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace vip::service
