#include "resotune/backend.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "resotune/base64.hpp"
#include "resotune/error.hpp"
#include "resotune/rng.hpp"

extern char** environ;

namespace resotune {

using nlohmann::json;

const char* to_string(BackendKind kind) {
  return kind == BackendKind::Scale ? "scale" : "backbone";
}

int ModelBackend::classify(const PixelRaster&, int) const {
  throw Error(ErrorCode::BackendFailure,
              info().model_id + " is not a backbone model");
}

ResolutionScores ModelBackend::score(const PixelRaster&) const {
  throw Error(ErrorCode::BackendFailure,
              info().model_id + " is not a scale model");
}

namespace {

bool supports(const BackendInfo& info, int resolution) {
  return std::find(info.resolutions.begin(), info.resolutions.end(),
                   resolution) != info.resolutions.end();
}

void require_square(const PixelRaster& input, int resolution) {
  if (input.width != resolution || input.height != resolution) {
    throw Error(ErrorCode::BackendFailure,
                "input is " + std::to_string(input.width) + "x" +
                    std::to_string(input.height) + ", expected " +
                    std::to_string(resolution) + "x" +
                    std::to_string(resolution));
  }
}

std::uint64_t fnv1a(const std::vector<std::uint8_t>& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

double ObjectMeasurement::fill() const {
  if (!found) return 0.0;
  const double box = static_cast<double>(x1 - x0 + 1) * (y1 - y0 + 1);
  return static_cast<double>(area) / box;
}

ObjectMeasurement measure_object(const PixelRaster& input, double threshold) {
  const LumaPlane luma = to_luma(input);
  const int w = luma.width;
  auto inside = [&](int x, int y) {
    return luma.values[static_cast<std::size_t>(y) * w + x] >= threshold;
  };

  ObjectMeasurement m;
  m.x0 = w;
  m.y0 = luma.height;
  m.x1 = -1;
  m.y1 = -1;
  for (int y = 0; y < luma.height; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!inside(x, y)) continue;
      ++m.area;
      m.x0 = std::min(m.x0, x);
      m.x1 = std::max(m.x1, x);
      m.y0 = std::min(m.y0, y);
      m.y1 = std::max(m.y1, y);
    }
  }
  if (m.area == 0) return ObjectMeasurement{};
  m.found = true;

  const int yc = (m.y0 + m.y1) / 2;
  int first = -1, last = -1;
  for (int x = m.x0; x <= m.x1; ++x) {
    if (inside(x, yc)) {
      if (first < 0) first = x;
      last = x;
    }
  }
  int run = 0;
  for (int x = first + 1; x < last; ++x) {
    run = inside(x, yc) ? 0 : run + 1;
    m.hole_run = std::max(m.hole_run, run);
  }
  return m;
}

// ---- synthetic backbone ----------------------------------------------------

SyntheticBackbone::SyntheticBackbone(ScaleBand band, std::vector<int> resolutions,
                                     std::string model_id)
    : band_(band) {
  info_.model_id = std::move(model_id);
  info_.kind = BackendKind::Backbone;
  info_.resolutions = std::move(resolutions);
  info_.concurrency = 1;
}

int SyntheticBackbone::recognise(const ObjectMeasurement& m) const {
  if (!m.found) return static_cast<int>(Shape::Disc);
  if (m.hole_run >= band_.detail_min) return static_cast<int>(Shape::Ring);
  const double fill = m.fill();
  if (fill >= 0.89) return static_cast<int>(Shape::Square);
  if (fill >= 0.67) return static_cast<int>(Shape::Disc);
  return static_cast<int>(Shape::Cross);
}

int SyntheticBackbone::classify(const PixelRaster& input, int resolution) const {
  if (!supports(info_, resolution)) {
    throw Error(ErrorCode::BackendFailure,
                "unsupported resolution " + std::to_string(resolution));
  }
  require_square(input, resolution);
  const ObjectMeasurement m = measure_object(input, band_.object_threshold);
  const int guess = recognise(m);
  const double side = m.side();
  if (side < band_.lo || side > band_.hi) return (guess + 1) % kShapeClasses;
  return guess;
}

// ---- synthetic scale model -------------------------------------------------

SyntheticScale::SyntheticScale(ScaleBand band, std::vector<int> resolutions,
                               double noise_sigma, std::uint64_t seed,
                               std::string model_id)
    : band_(band), noise_sigma_(noise_sigma), seed_(seed) {
  info_.model_id = std::move(model_id);
  info_.kind = BackendKind::Scale;
  info_.resolutions = std::move(resolutions);
  info_.concurrency = 1;
}

double SyntheticScale::band_score(const ScaleBand& band, double apparent) {
  if (!(apparent > 0.0)) return 0.0;
  const double u = std::log(apparent / band.lo) / std::log(band.hi / band.lo);
  return std::max(0.0, 1.0 - std::abs(2.0 * u - 1.0));
}

ResolutionScores SyntheticScale::score(const PixelRaster& input) const {
  require_square(input, kScaleInputResolution);
  const ObjectMeasurement m = measure_object(input, band_.object_threshold);
  // Noise is keyed on the input content so repeated calls agree.
  Rng rng(Rng::derive(seed_, fnv1a(input.samples)));
  ResolutionScores scores;
  for (int r : info_.resolutions) {
    const double apparent =
        static_cast<double>(m.side()) * r / kScaleInputResolution;
    double s = band_score(band_, apparent);
    if (noise_sigma_ > 0.0) {
      s = std::clamp(s + noise_sigma_ * rng.normal(), 0.0, 1.0);
    }
    scores[r] = s;
  }
  return scores;
}

// ---- wire protocol ---------------------------------------------------------

namespace wire {

namespace {

BackendKind parse_kind(const std::string& s) {
  if (s == "backbone") return BackendKind::Backbone;
  if (s == "scale") return BackendKind::Scale;
  throw Error(ErrorCode::BackendFailure, "unknown backend kind '" + s + "'");
}

json parse_json(const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendFailure,
                std::string("malformed protocol message: ") + e.what());
  }
}

std::uint64_t id_of(const std::string& line) {
  try {
    const json j = json::parse(line);
    if (j.is_object() && j.contains("id") && j["id"].is_number_unsigned()) {
      return j["id"].get<std::uint64_t>();
    }
  } catch (const json::exception&) {
  }
  return 0;
}

}  // namespace

std::string hello(const BackendInfo& info) {
  json h = {{"kind", to_string(info.kind)},
            {"resolutions", info.resolutions},
            {"concurrency", info.concurrency},
            {"model_id", info.model_id}};
  if (info.kind == BackendKind::Scale) {
    h["input_resolution"] = kScaleInputResolution;
  }
  return json{{"hello", h}}.dump();
}

BackendInfo parse_hello(const std::string& line, Transport transport) {
  const json j = parse_json(line);
  try {
    const json& h = j.at("hello");
    BackendInfo info;
    info.kind = parse_kind(h.at("kind").get<std::string>());
    info.resolutions = h.at("resolutions").get<std::vector<int>>();
    info.concurrency = h.value("concurrency", 1);
    info.model_id = h.value("model_id", std::string(
        info.kind == BackendKind::Scale ? "scale-mobilenetv2" : "resnet18"));
    info.transport = transport;
    if (info.resolutions.empty()) {
      throw Error(ErrorCode::BackendFailure, "handshake lists no resolutions");
    }
    if (info.concurrency < 1) {
      throw Error(ErrorCode::BackendFailure, "handshake concurrency < 1");
    }
    if (info.kind == BackendKind::Scale &&
        h.value("input_resolution", kScaleInputResolution) !=
            kScaleInputResolution) {
      throw Error(ErrorCode::BackendFailure,
                  "scale model must consume 112x112 inputs");
    }
    return info;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendFailure,
                std::string("malformed handshake: ") + e.what());
  }
}

std::string request(std::uint64_t id, int resolution, const PixelRaster& input) {
  std::string pixels;
  if (input.channels == 3) {
    pixels = base64_encode(input.samples);
  } else {
    std::vector<std::uint8_t> rgb(input.samples.size() * 3);
    for (std::size_t i = 0; i < input.samples.size(); ++i) {
      rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = input.samples[i];
    }
    pixels = base64_encode(rgb);
  }
  return json{{"id", id},
              {"resolution", resolution},
              {"width", input.width},
              {"height", input.height},
              {"pixels_b64", std::move(pixels)}}
      .dump();
}

Request parse_request(const std::string& line) {
  const json j = parse_json(line);
  Request r;
  int w = 0, h = 0;
  Bytes pixels;
  try {
    r.id = j.at("id").get<std::uint64_t>();
    r.resolution = j.at("resolution").get<int>();
    w = j.at("width").get<int>();
    h = j.at("height").get<int>();
    pixels = base64_decode(j.at("pixels_b64").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendFailure,
                std::string("malformed request: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::BackendFailure, e.what());
  }
  if (w < 1 || h < 1 ||
      pixels.size() != static_cast<std::size_t>(w) * h * 3) {
    throw Error(ErrorCode::BackendFailure,
                "pixel payload does not match width x height x 3");
  }
  r.input.width = w;
  r.input.height = h;
  r.input.channels = 3;
  r.input.samples = std::move(pixels);
  return r;
}

std::string label_response(std::uint64_t id, int label) {
  return json{{"id", id}, {"label", label}}.dump();
}

std::string scores_response(std::uint64_t id, const ResolutionScores& scores) {
  json s = json::object();
  for (const auto& [r, v] : scores) s[std::to_string(r)] = v;
  return json{{"id", id}, {"scores", s}}.dump();
}

std::string error_response(std::uint64_t id, const std::string& message) {
  return json{{"id", id}, {"error", message}}.dump();
}

std::string handle(const ModelBackend& backend, const std::string& line) {
  try {
    const Request r = parse_request(line);
    if (backend.info().kind == BackendKind::Backbone) {
      return label_response(r.id, backend.classify(r.input, r.resolution));
    }
    if (r.resolution != kScaleInputResolution) {
      return error_response(r.id, "scale model consumes 112x112 inputs");
    }
    return scores_response(r.id, backend.score(r.input));
  } catch (const std::exception& e) {
    return error_response(id_of(line), e.what());
  }
}

}  // namespace wire

void serve_backend_stream(const ModelBackend& backend, std::istream& in,
                          std::ostream& out) {
  out << wire::hello(backend.info()) << '\n' << std::flush;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out << wire::handle(backend, line) << '\n' << std::flush;
  }
}

// ---- HTTP server -----------------------------------------------------------

struct BackendHttpServer::Impl {
  const ModelBackend& backend;
  httplib::Server server;
  std::thread thread;
};

BackendHttpServer::BackendHttpServer(const ModelBackend& backend)
    : impl_(new Impl{backend, {}, {}}) {
  const ModelBackend& b = backend;
  impl_->server.set_tcp_nodelay(true);
  impl_->server.Get("/hello", [&b](const httplib::Request&, httplib::Response& res) {
    res.set_content(wire::hello(b.info()), "application/json");
  });
  impl_->server.Post("/infer", [&b](const httplib::Request& req,
                                    httplib::Response& res) {
    const std::string body = wire::handle(b, req.body);
    if (body.find("\"error\"") != std::string::npos) res.status = 400;
    res.set_content(body, "application/json");
  });
}

BackendHttpServer::~BackendHttpServer() { stop(); }

int BackendHttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) {
    throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  }
  return bound;
}

void BackendHttpServer::listen() { impl_->server.listen_after_bind(); }

int BackendHttpServer::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  impl_->thread = std::thread([this] { listen(); });
  impl_->server.wait_until_ready();
  return bound;
}

void BackendHttpServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void serve_backend_http(const ModelBackend& backend, const std::string& host,
                        int port) {
  BackendHttpServer server(backend);
  server.bind(host, port);
  server.listen();
}

// ---- external clients ------------------------------------------------------

namespace {

int parse_label(const json& j, std::uint64_t id) {
  if (j.contains("error")) {
    throw Error(ErrorCode::BackendFailure,
                "backend error: " + j["error"].dump());
  }
  if (j.value("id", std::uint64_t{0}) != id) {
    throw Error(ErrorCode::BackendFailure, "response id mismatch");
  }
  if (!j.contains("label") || !j["label"].is_number_integer()) {
    throw Error(ErrorCode::BackendFailure, "response carries no integer label");
  }
  return j["label"].get<int>();
}

ResolutionScores parse_scores(const json& j, std::uint64_t id) {
  if (j.contains("error")) {
    throw Error(ErrorCode::BackendFailure,
                "backend error: " + j["error"].dump());
  }
  if (j.value("id", std::uint64_t{0}) != id) {
    throw Error(ErrorCode::BackendFailure, "response id mismatch");
  }
  if (!j.contains("scores") || !j["scores"].is_object()) {
    throw Error(ErrorCode::BackendFailure, "response carries no scores");
  }
  ResolutionScores out;
  for (const auto& [key, value] : j["scores"].items()) {
    if (!value.is_number()) {
      throw Error(ErrorCode::BackendFailure, "non-numeric score for " + key);
    }
    try {
      std::size_t used = 0;
      const int r = std::stoi(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
      out[r] = value.get<double>();
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::BackendFailure, "bad resolution key '" + key + "'");
    }
  }
  return out;
}

json parse_response(const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::BackendFailure,
                std::string("malformed response: ") + e.what());
  }
}

/// Child process speaking the stdio protocol. One pipe pair, so requests are
/// serialised regardless of the advertised concurrency.
class ProcessBackend final : public ModelBackend {
 public:
  ProcessBackend(const std::string& command, BackendKind expected) {
    // A dead child must surface as a write error, not kill the caller.
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) {
      throw Error(ErrorCode::BackendFailure, "pipe() failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) {
      posix_spawn_file_actions_addclose(&actions, fd);
    }
    std::string sh = "/bin/sh", flag = "-c", cmd = command;
    char* argv[] = {sh.data(), flag.data(), cmd.data(), nullptr};
    const int rc = posix_spawn(&pid_, "/bin/sh", &actions, nullptr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    close(to_child[0]);
    close(from_child[1]);
    if (rc != 0) {
      close(to_child[1]);
      close(from_child[0]);
      throw Error(ErrorCode::BackendFailure, "cannot spawn '" + command + "'");
    }
    out_ = fdopen(to_child[1], "w");
    in_ = fdopen(from_child[0], "r");

    const auto line = read_line();
    if (!line) {
      shutdown();
      throw Error(ErrorCode::BackendFailure,
                  "'" + command + "' exited before the handshake");
    }
    try {
      info_ = wire::parse_hello(*line, Transport::Process);
    } catch (...) {
      shutdown();
      throw;
    }
    if (info_.kind != expected) {
      shutdown();
      throw Error(ErrorCode::InvalidConfig,
                  "'" + command + "' is a " + to_string(info_.kind) +
                      " model, expected " + to_string(expected));
    }
  }

  ~ProcessBackend() override { shutdown(); }

  const BackendInfo& info() const override { return info_; }

  int classify(const PixelRaster& input, int resolution) const override {
    if (info_.kind != BackendKind::Backbone) return ModelBackend::classify(input, resolution);
    std::lock_guard lock(mu_);
    const std::uint64_t id = ++next_id_;
    return parse_label(parse_response(exchange(wire::request(id, resolution, input))), id);
  }

  ResolutionScores score(const PixelRaster& input) const override {
    if (info_.kind != BackendKind::Scale) return ModelBackend::score(input);
    std::lock_guard lock(mu_);
    const std::uint64_t id = ++next_id_;
    return parse_scores(
        parse_response(exchange(wire::request(id, kScaleInputResolution, input))), id);
  }

 private:
  std::optional<std::string> read_line() const {
    char* buf = nullptr;
    std::size_t cap = 0;
    const ssize_t n = getline(&buf, &cap, in_);
    if (n < 0) {
      std::free(buf);
      return std::nullopt;
    }
    std::string line(buf, static_cast<std::size_t>(n));
    std::free(buf);
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    return line;
  }

  std::string exchange(const std::string& body) const {
    if (!out_ || std::fputs(body.c_str(), out_) < 0 || std::fputc('\n', out_) < 0 ||
        std::fflush(out_) != 0) {
      throw Error(ErrorCode::BackendFailure, "backend process is gone");
    }
    auto line = read_line();
    if (!line) throw Error(ErrorCode::BackendFailure, "backend process closed its output");
    return *line;
  }

  void shutdown() {
    if (out_) std::fclose(out_);
    if (in_) std::fclose(in_);
    out_ = in_ = nullptr;
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  BackendInfo info_;
  pid_t pid_ = -1;
  FILE* out_ = nullptr;
  FILE* in_ = nullptr;
  mutable std::mutex mu_;
  mutable std::uint64_t next_id_ = 0;
};

/// HTTP client. Up to `concurrency` requests are in flight, each on its own
/// connection.
class HttpBackend final : public ModelBackend {
 public:
  HttpBackend(const std::string& uri, BackendKind expected) {
    const std::string rest = uri.substr(std::string("http://").size());
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) {
      throw Error(ErrorCode::InvalidConfig, "backend URI needs host:port: " + uri);
    }
    host_ = rest.substr(0, colon);
    try {
      port_ = std::stoi(rest.substr(colon + 1));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidConfig, "bad port in backend URI: " + uri);
    }
    auto client = connect();
    auto res = client->Get("/hello");
    if (!res || res->status != 200) {
      throw Error(ErrorCode::BackendFailure, "no handshake from " + uri);
    }
    info_ = wire::parse_hello(res->body, Transport::Http);
    if (info_.kind != expected) {
      throw Error(ErrorCode::InvalidConfig,
                  uri + " is a " + to_string(info_.kind) + " model, expected " +
                      to_string(expected));
    }
    idle_.push_back(std::move(client));
  }

  const BackendInfo& info() const override { return info_; }

  int classify(const PixelRaster& input, int resolution) const override {
    if (info_.kind != BackendKind::Backbone) return ModelBackend::classify(input, resolution);
    const std::uint64_t id = next_id_.fetch_add(1) + 1;
    return parse_label(post(wire::request(id, resolution, input)), id);
  }

  ResolutionScores score(const PixelRaster& input) const override {
    if (info_.kind != BackendKind::Scale) return ModelBackend::score(input);
    const std::uint64_t id = next_id_.fetch_add(1) + 1;
    return parse_scores(post(wire::request(id, kScaleInputResolution, input)), id);
  }

 private:
  std::unique_ptr<httplib::Client> connect() const {
    auto c = std::make_unique<httplib::Client>(host_, port_);
    c->set_connection_timeout(5, 0);
    c->set_read_timeout(120, 0);
    c->set_keep_alive(true);
    c->set_tcp_nodelay(true);
    return c;
  }

  json post(const std::string& body) const {
    std::unique_ptr<httplib::Client> client;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return in_flight_ < info_.concurrency; });
      ++in_flight_;
      if (!idle_.empty()) {
        client = std::move(idle_.back());
        idle_.pop_back();
      }
    }
    if (!client) client = connect();
    auto res = client->Post("/infer", body, "application/json");
    {
      std::lock_guard lock(mu_);
      --in_flight_;
      if (res) idle_.push_back(std::move(client));
    }
    cv_.notify_one();
    if (!res) {
      throw Error(ErrorCode::BackendFailure,
                  "HTTP request failed: " + httplib::to_string(res.error()));
    }
    return parse_response(res->body);
  }

  std::string host_;
  int port_ = 0;
  BackendInfo info_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  mutable int in_flight_ = 0;
  mutable std::vector<std::unique_ptr<httplib::Client>> idle_;
  mutable std::atomic<std::uint64_t> next_id_{0};
};

}  // namespace

std::unique_ptr<ModelBackend> make_backend(const std::string& uri,
                                           BackendKind kind) {
  if (uri == "synthetic" || uri.rfind("synthetic?", 0) == 0) {
    double noise = 0.0;
    std::uint64_t seed = 0;
    if (uri.size() > 10) {
      httplib::Params params;
      httplib::detail::parse_query_text(uri.substr(10), params);
      for (const auto& [key, value] : params) {
        try {
          if (key == "noise") {
            noise = std::stod(value);
          } else if (key == "seed") {
            seed = std::stoull(value);
          } else {
            throw Error(ErrorCode::InvalidConfig, "unknown synthetic option " + key);
          }
        } catch (const std::logic_error&) {
          throw Error(ErrorCode::InvalidConfig, "bad value for " + key + ": " + value);
        }
      }
      if (noise < 0.0) throw Error(ErrorCode::InvalidConfig, "noise must be >= 0");
    }
    if (kind == BackendKind::Backbone) {
      if (noise != 0.0) {
        throw Error(ErrorCode::InvalidConfig, "noise applies to scale models only");
      }
      return std::make_unique<SyntheticBackbone>();
    }
    return std::make_unique<SyntheticScale>(ScaleBand{}, std::vector<int>{112, 168, 224, 280, 336, 392, 448},
                                            noise, seed);
  }
  if (uri.rfind("proc:", 0) == 0) {
    return std::make_unique<ProcessBackend>(uri.substr(5), kind);
  }
  if (uri.rfind("http://", 0) == 0) {
    return std::make_unique<HttpBackend>(uri, kind);
  }
  throw Error(ErrorCode::InvalidConfig, "unrecognised backend URI '" + uri + "'");
}

// ---- conformance -----------------------------------------------------------

std::vector<std::string> check_backend_conformance(const ModelBackend& backend) {
  std::vector<std::string> failures;
  auto fail = [&](std::string msg) { failures.push_back(std::move(msg)); };

  const BackendInfo& info = backend.info();
  if (info.model_id.empty()) fail("handshake: empty model id");
  if (info.concurrency < 1) fail("handshake: concurrency < 1");
  if (info.resolutions.empty()) {
    fail("handshake: no resolutions");
    return failures;
  }
  for (std::size_t i = 0; i < info.resolutions.size(); ++i) {
    if (info.resolutions[i] < 1) fail("handshake: non-positive resolution");
    if (i > 0 && info.resolutions[i] <= info.resolutions[i - 1]) {
      fail("handshake: resolutions not strictly increasing");
    }
  }

  // Probes: rendered synthetic scenes of each shape, the same scene as RGB,
  // and a flat image with no object.
  SyntheticParams params;
  std::vector<PixelRaster> scenes;
  for (std::size_t i = 0; i < 4; ++i) {
    scenes.push_back(render_synthetic_image(0xC0FFEE, i, params, nullptr, nullptr));
  }
  PixelRaster rgb(scenes[0].width, scenes[0].height, 3);
  for (std::size_t i = 0; i < scenes[0].samples.size(); ++i) {
    rgb.samples[3 * i] = rgb.samples[3 * i + 1] = rgb.samples[3 * i + 2] =
        scenes[0].samples[i];
  }
  scenes.push_back(rgb);
  scenes.emplace_back(params.image_size, params.image_size, 1, 90);
  const CropSpec full(1.0);

  auto guarded = [&](const std::string& what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      fail(what + ": " + e.what());
    }
  };

  if (info.kind == BackendKind::Backbone) {
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      for (int r : info.resolutions) {
        const std::string what = "classify probe " + std::to_string(s) + " @" +
                                 std::to_string(r);
        guarded(what, [&] {
          const PixelRaster in = prepare_input(scenes[s], full, Size2::square(r));
          const int a = backend.classify(in, r);
          const int b = backend.classify(in, r);
          if (a < 0) fail(what + ": negative label");
          if (a != b) fail(what + ": nondeterministic label");
        });
      }
    }
    // Gray and RGB encodings of one scene are the same request on the wire.
    guarded("classify gray/rgb", [&] {
      const int r = info.resolutions.front();
      const int a = backend.classify(prepare_input(scenes[0], full, Size2::square(r)), r);
      const int b = backend.classify(prepare_input(scenes[4], full, Size2::square(r)), r);
      if (a != b) fail("classify gray/rgb: labels differ");
    });
    // An unsupported resolution must be rejected without breaking the link.
    const int bad = info.resolutions.back() + 1;
    try {
      backend.classify(PixelRaster(bad, bad, 3), bad);
      fail("classify unsupported resolution: accepted");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BackendFailure) {
        fail("classify unsupported resolution: wrong error kind");
      }
    } catch (const std::exception& e) {
      fail(std::string("classify unsupported resolution: ") + e.what());
    }
    guarded("classify after rejection", [&] {
      const int r = info.resolutions.front();
      backend.classify(prepare_input(scenes[0], full, Size2::square(r)), r);
    });
  } else {
    const std::set<int> expected(info.resolutions.begin(), info.resolutions.end());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
      const std::string what = "score probe " + std::to_string(s);
      guarded(what, [&] {
        const PixelRaster in =
            prepare_input(scenes[s], full, Size2::square(kScaleInputResolution));
        const ResolutionScores a = backend.score(in);
        const ResolutionScores b = backend.score(in);
        std::set<int> keys;
        for (const auto& [r, v] : a) {
          keys.insert(r);
          if (!(v >= 0.0 && v <= 1.0)) {
            fail(what + ": score outside [0,1] at " + std::to_string(r));
          }
        }
        if (keys != expected) fail(what + ": score keys differ from handshake");
        if (a != b) fail(what + ": nondeterministic scores");
      });
    }
    try {
      backend.score(PixelRaster(kScaleInputResolution + 1, kScaleInputResolution + 1, 3));
      fail("score wrong input size: accepted");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BackendFailure) {
        fail("score wrong input size: wrong error kind");
      }
    } catch (const std::exception& e) {
      fail(std::string("score wrong input size: ") + e.what());
    }
    guarded("score after rejection", [&] {
      backend.score(prepare_input(scenes[0], full, Size2::square(kScaleInputResolution)));
    });
  }
  return failures;
}

}  // namespace resotune
