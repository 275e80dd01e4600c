#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "resotune/calibrate.hpp"
#include "resotune/jpeg_scan.hpp"

namespace resotune {

/// Ids are file stems: non-empty, no path separators, no "..", no NUL.
bool valid_image_id(const std::string& id);

/// Every *.jpg / *.jpeg directly under the root, indexed and held in memory.
class ImageStore {
 public:
  struct Rejected {
    std::string file;
    std::string reason;
  };

  ImageStore() = default;
  /// Throws Error(Io) if the root is not a directory or two files share a stem.
  static ImageStore load(const std::filesystem::path& root);
  void add(const std::string& id, ScanIndexedImage image);

  const ScanIndexedImage* find(const std::string& id) const;
  const std::map<std::string, ScanIndexedImage>& images() const { return images_; }
  const std::vector<Rejected>& rejected() const { return rejected_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::map<std::string, ScanIndexedImage> images_;
  std::vector<Rejected> rejected_;
};

struct ServeResponse {
  int status = 200;
  std::string content_type = "image/jpeg";
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;

  std::optional<std::string> header(const std::string& name) const;
};

struct MetricsSnapshot {
  std::uint64_t requests = 0;
  std::uint64_t bytes_served = 0;
  std::uint64_t bytes_saved = 0;
  std::map<int, std::uint64_t> by_resolution;

  /// `name value` lines.
  std::string to_text() const;
};

/// Request handling without the HTTP layer. Scan counts for every (image,
/// table resolution) at the table's crop are computed up front, so requests
/// only touch immutable state and atomic counters.
class ScanService {
 public:
  ScanService(ImageStore store, QualityThresholdTable table, int workers = 1);
  ~ScanService();

  /// `resolution` and `crop` are the raw query values (absent if missing).
  ServeResponse serve_image(const std::string& id, const std::optional<std::string>& resolution,
                            const std::optional<std::string>& crop) const;
  ServeResponse serve_more(const std::string& id, const std::optional<std::string>& from,
                           const std::optional<std::string>& to) const;
  ServeResponse metrics_response() const;

  MetricsSnapshot metrics() const;
  /// Scans a /image request reads; nullopt for unknown or unservable images.
  std::optional<std::size_t> scans_for(const std::string& id, int resolution) const;
  const ImageStore& store() const { return store_; }
  const QualityThresholdTable& table() const { return table_; }

 private:
  struct Entry {
    std::vector<std::size_t> scans;  // per table entry
    std::string error;               // non-empty: respond 422
  };
  struct Counters;

  void count_request() const;

  ImageStore store_;
  QualityThresholdTable table_;
  std::map<std::string, Entry> entries_;
  std::unique_ptr<Counters> counters_;
};

/// HTTP front end:
///   GET /image/{id}?resolution=R&crop=C
///   GET /image/{id}/scans?from=A&to=B
///   GET /metrics
class ScanServer {
 public:
  explicit ScanServer(const ScanService& service);
  ~ScanServer();

  /// Port 0 picks a free port; returns the bound port.
  int bind(const std::string& host, int port);
  void listen();
  /// bind + listen on a background thread.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace resotune
