#pragma once

#include <algorithm>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "resotune/jpeg_scan.hpp"
#include "resotune/synthetic.hpp"

namespace resotune {

enum class BackendKind { Scale, Backbone };
enum class Transport { InProcess, Process, Http };

const char* to_string(BackendKind kind);

/// Resolution the scale model consumes.
inline constexpr int kScaleInputResolution = 112;

struct BackendInfo {
  std::string model_id;
  BackendKind kind = BackendKind::Backbone;
  /// Backbone: resolutions it accepts. Scale: resolutions it scores.
  std::vector<int> resolutions;
  int concurrency = 1;
  Transport transport = Transport::InProcess;
};

using ResolutionScores = std::map<int, double>;

/// A model reachable in-process or over the newline-delimited JSON protocol.
/// Implementations are safe to call from several threads; external
/// transports serialise requests unless the handshake advertised more
/// capacity.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  virtual const BackendInfo& info() const = 0;

  /// Backbone only: class label for an input already prepared at
  /// `resolution` x `resolution`.
  virtual int classify(const PixelRaster& input, int resolution) const;

  /// Scale only: per-resolution likelihood that the backbone is correct.
  virtual ResolutionScores score(const PixelRaster& input) const;
};

// ---- synthetic in-process models ------------------------------------------

/// Bounding box and silhouette statistics of the bright object in an input.
struct ObjectMeasurement {
  bool found = false;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounds
  long area = 0;
  /// Longest background run strictly inside the object along its center row.
  int hole_run = 0;

  int side() const { return found ? std::max(x1 - x0 + 1, y1 - y0 + 1) : 0; }
  double fill() const;
};

ObjectMeasurement measure_object(const PixelRaster& input, double threshold);

/// Recognises the four synthetic shapes from pixels, but only when the
/// object's apparent side lies inside the band; outside it the prediction is
/// deliberately confused. Mirrors a CNN trained at one object scale.
class SyntheticBackbone final : public ModelBackend {
 public:
  explicit SyntheticBackbone(ScaleBand band = {},
                             std::vector<int> resolutions = {112, 168, 224, 280,
                                                             336, 392, 448},
                             std::string model_id = "resnet18");

  const BackendInfo& info() const override { return info_; }
  int classify(const PixelRaster& input, int resolution) const override;

  /// Shape guess ignoring the scale band.
  int recognise(const ObjectMeasurement& m) const;
  const ScaleBand& band() const { return band_; }

 private:
  BackendInfo info_;
  ScaleBand band_;
};

/// Scores each candidate resolution from the object size measured on the
/// low-resolution input, using the same band as the backbone. Optional
/// seeded Gaussian noise corrupts the scores.
class SyntheticScale final : public ModelBackend {
 public:
  explicit SyntheticScale(ScaleBand band = {},
                          std::vector<int> resolutions = {112, 168, 224, 280,
                                                          336, 392, 448},
                          double noise_sigma = 0.0, std::uint64_t seed = 0,
                          std::string model_id = "scale-mobilenetv2");

  const BackendInfo& info() const override { return info_; }
  ResolutionScores score(const PixelRaster& input) const override;

  /// Closed-form band membership of an apparent size: 1 at the band's
  /// geometric center, falling linearly in log-size to 0 at its edges.
  static double band_score(const ScaleBand& band, double apparent);

 private:
  BackendInfo info_;
  ScaleBand band_;
  double noise_sigma_;
  std::uint64_t seed_;
};

// ---- wire protocol ---------------------------------------------------------

namespace wire {

std::string hello(const BackendInfo& info);
BackendInfo parse_hello(const std::string& line, Transport transport);

/// Request body; gray inputs are expanded to RGB.
std::string request(std::uint64_t id, int resolution, const PixelRaster& input);

struct Request {
  std::uint64_t id = 0;
  int resolution = 0;
  PixelRaster input;  // RGB
};
Request parse_request(const std::string& line);

std::string label_response(std::uint64_t id, int label);
std::string scores_response(std::uint64_t id, const ResolutionScores& scores);
std::string error_response(std::uint64_t id, const std::string& message);

/// Answers one request line with `backend`; never throws for malformed or
/// unsupported requests, which produce an error response instead.
std::string handle(const ModelBackend& backend, const std::string& line);

}  // namespace wire

/// Serves `backend` over stdio-style streams: writes the handshake, then one
/// response line per request line until EOF.
void serve_backend_stream(const ModelBackend& backend, std::istream& in,
                          std::ostream& out);

/// HTTP front end for a backend: GET /hello returns the handshake, POST
/// /infer takes a request body.
class BackendHttpServer {
 public:
  explicit BackendHttpServer(const ModelBackend& backend);
  ~BackendHttpServer();
  BackendHttpServer(const BackendHttpServer&) = delete;
  BackendHttpServer& operator=(const BackendHttpServer&) = delete;

  /// Binds `host:port`; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Accept loop; returns after stop().
  void listen();
  /// bind + listen on a background thread.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Blocks serving `backend` over HTTP.
void serve_backend_http(const ModelBackend& backend, const std::string& host,
                        int port);

/// Builds a backend from a URI:
///   synthetic                  in-process synthetic model of `kind`
///   synthetic?noise=S&seed=N   synthetic scale model with noisy scores
///   proc:<command line>        child process speaking the stdio protocol
///   http://host:port           HTTP transport
std::unique_ptr<ModelBackend> make_backend(const std::string& uri,
                                           BackendKind kind);

/// Protocol conformance checks shared by the in-process and external
/// backends. Returns human-readable failures; empty means conformant.
std::vector<std::string> check_backend_conformance(const ModelBackend& backend);

}  // namespace resotune
