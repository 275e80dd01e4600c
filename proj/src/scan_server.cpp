#include "resotune/scan_server.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "resotune/error.hpp"
#include "resotune/format.hpp"
#include "resotune/io.hpp"
#include "resotune/ladder.hpp"
#include "resotune/parallel.hpp"

namespace resotune {

namespace fs = std::filesystem;

bool valid_image_id(const std::string& id) {
  if (id.empty() || id == "." || id.find("..") != std::string::npos) return false;
  return id.find_first_of(std::string("/\\\0", 3)) == std::string::npos;
}

// ---- store ------------------------------------------------------------------

namespace {

void check_offsets(const ScanIndexedImage& img) {
  const auto& off = img.scan_offsets();
  for (std::size_t i = 0; i < off.size(); ++i) {
    if (off[i] >= img.total_bytes() || (i > 0 && off[i] <= off[i - 1])) {
      throw Error(ErrorCode::MalformedMarker, "scan offsets inconsistent with file size");
    }
  }
}

}  // namespace

ImageStore ImageStore::load(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw Error(ErrorCode::Io, "image root is not a directory: " + root.string());
  }
  ImageStore store;
  store.root_ = root;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string id = f.stem().string();
    if (!valid_image_id(id)) {
      store.rejected_.push_back({f.filename().string(), "invalid id"});
      continue;
    }
    if (store.images_.count(id)) {
      throw Error(ErrorCode::Io, "two files map to image id '" + id + "'");
    }
    try {
      ScanIndexedImage img = index_scans(read_file(f));
      check_offsets(img);
      store.images_.emplace(id, std::move(img));
    } catch (const Error& e) {
      store.rejected_.push_back({f.filename().string(), e.what()});
    }
  }
  return store;
}

void ImageStore::add(const std::string& id, ScanIndexedImage image) {
  if (!valid_image_id(id)) throw Error(ErrorCode::InvalidConfig, "invalid image id '" + id + "'");
  check_offsets(image);
  images_.insert_or_assign(id, std::move(image));
}

const ScanIndexedImage* ImageStore::find(const std::string& id) const {
  const auto it = images_.find(id);
  return it == images_.end() ? nullptr : &it->second;
}

// ---- responses ----------------------------------------------------------------

std::optional<std::string> ServeResponse::header(const std::string& name) const {
  for (const auto& [k, v] : headers) {
    if (k == name) return v;
  }
  return std::nullopt;
}

std::string MetricsSnapshot::to_text() const {
  std::string out;
  out += "requests " + std::to_string(requests) + "\n";
  out += "bytes_served " + std::to_string(bytes_served) + "\n";
  out += "bytes_saved " + std::to_string(bytes_saved) + "\n";
  for (const auto& [res, n] : by_resolution) {
    out += "image_requests{resolution=\"" + std::to_string(res) + "\"} " + std::to_string(n) +
           "\n";
  }
  return out;
}

namespace {

ServeResponse text(int status, const std::string& msg) {
  ServeResponse r;
  r.status = status;
  r.content_type = "text/plain";
  r.body = msg + "\n";
  return r;
}

template <class T>
std::optional<T> parse_number(const std::optional<std::string>& s) {
  if (!s || s->empty()) return std::nullopt;
  T v{};
  const char* end = s->data() + s->size();
  const auto [p, ec] = std::from_chars(s->data(), end, v);
  if (ec != std::errc() || p != end) return std::nullopt;
  return v;
}

}  // namespace

// ---- service ------------------------------------------------------------------

struct ScanService::Counters {
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> bytes_served{0};
  std::atomic<std::uint64_t> bytes_saved{0};
  std::vector<std::atomic<std::uint64_t>> by_entry;

  explicit Counters(std::size_t n) : by_entry(n) {}
};

ScanService::ScanService(ImageStore store, QualityThresholdTable table, int workers)
    : store_(std::move(store)),
      table_(std::move(table)),
      counters_(std::make_unique<Counters>(table_.entries.size())) {
  if (table_.entries.empty()) throw Error(ErrorCode::InvalidConfig, "threshold table is empty");
  const CropSpec crop(table_.crop);
  std::vector<const std::pair<const std::string, ScanIndexedImage>*> items;
  for (const auto& kv : store_.images()) items.push_back(&kv);
  std::vector<Entry> computed(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i) {
    const ScanIndexedImage& img = items[i]->second;
    Entry& e = computed[i];
    if (!img.progressive()) {
      e.error = "stored image is not progressive";
      return;
    }
    try {
      ScanLadder ladder(img, crop, table_.config.ssim);
      for (const auto& t : table_.entries) e.scans.push_back(ladder.min_scans(t.resolution, t.ssim));
    } catch (const Error& err) {
      e.scans.clear();
      e.error = std::string("stored image cannot be decoded: ") + err.what();
    }
  });
  for (std::size_t i = 0; i < items.size(); ++i) {
    entries_.emplace(items[i]->first, std::move(computed[i]));
  }
}

ScanService::~ScanService() = default;

void ScanService::count_request() const { counters_->requests.fetch_add(1); }

std::optional<std::size_t> ScanService::scans_for(const std::string& id, int resolution) const {
  const auto it = entries_.find(id);
  if (it == entries_.end() || !it->second.error.empty()) return std::nullopt;
  for (std::size_t i = 0; i < table_.entries.size(); ++i) {
    if (table_.entries[i].resolution == resolution) return it->second.scans[i];
  }
  return std::nullopt;
}

ServeResponse ScanService::serve_image(const std::string& id,
                                       const std::optional<std::string>& resolution,
                                       const std::optional<std::string>& crop) const {
  count_request();
  if (!valid_image_id(id)) return text(400, "invalid image id");
  const ScanIndexedImage* img = store_.find(id);
  if (!img) return text(404, "unknown image " + id);
  const auto res = parse_number<int>(resolution);
  std::size_t index = table_.entries.size();
  if (res) {
    for (std::size_t i = 0; i < table_.entries.size(); ++i) {
      if (table_.entries[i].resolution == *res) index = i;
    }
  }
  if (index == table_.entries.size()) {
    return text(400, "resolution not covered by the threshold table");
  }
  const Entry& entry = entries_.at(id);
  if (!entry.error.empty()) return text(422, entry.error);

  const std::size_t k = entry.scans[index];
  const Bytes body = truncate_at_scan(*img, k);
  ServeResponse r;
  r.body.assign(body.begin(), body.end());
  r.headers.emplace_back("X-Scans-Read", std::to_string(k));
  r.headers.emplace_back("X-Scans-Total", std::to_string(img->scan_count()));
  r.headers.emplace_back("X-Bytes-Total", std::to_string(img->total_bytes()));
  r.headers.emplace_back("X-Bytes-Read", std::to_string(body.size()));
  r.headers.emplace_back("X-Ssim-Threshold", fmt_g6(table_.entries[index].ssim));
  if (crop) {
    const auto c = parse_number<double>(crop);
    if (!c || std::abs(*c - table_.crop) > 1e-9) {
      r.headers.emplace_back("Warning", "199 resotune \"crop " + *crop +
                                            " is not calibrated; served crop " +
                                            fmt_g6(table_.crop) + "\"");
    }
  }
  counters_->bytes_served.fetch_add(body.size());
  counters_->bytes_saved.fetch_add(img->total_bytes() - body.size());
  counters_->by_entry[index].fetch_add(1);
  return r;
}

ServeResponse ScanService::serve_more(const std::string& id,
                                      const std::optional<std::string>& from,
                                      const std::optional<std::string>& to) const {
  count_request();
  if (!valid_image_id(id)) return text(400, "invalid image id");
  const ScanIndexedImage* img = store_.find(id);
  if (!img) return text(404, "unknown image " + id);
  const auto a = parse_number<std::size_t>(from);
  const auto b = parse_number<std::size_t>(to);
  if (!a || !b || *a < 1 || *a >= *b || *b > img->scan_count()) {
    ServeResponse r = text(416, "scan range must satisfy 1 <= from < to <= " +
                                    std::to_string(img->scan_count()));
    r.headers.emplace_back("Content-Range", "scans */" + std::to_string(img->scan_count()));
    return r;
  }
  const std::size_t lo = cumulative_bytes(*img, *a), hi = cumulative_bytes(*img, *b);
  const ByteView all = img->bytes();
  ServeResponse r;
  r.content_type = "application/octet-stream";
  r.body.assign(all.begin() + static_cast<std::ptrdiff_t>(lo),
                all.begin() + static_cast<std::ptrdiff_t>(hi));
  r.headers.emplace_back("X-Scan-From", std::to_string(*a));
  r.headers.emplace_back("X-Scan-To", std::to_string(*b));
  r.headers.emplace_back("X-Bytes-Total", std::to_string(img->total_bytes()));
  counters_->bytes_served.fetch_add(r.body.size());
  return r;
}

MetricsSnapshot ScanService::metrics() const {
  MetricsSnapshot m;
  m.requests = counters_->requests.load();
  m.bytes_served = counters_->bytes_served.load();
  m.bytes_saved = counters_->bytes_saved.load();
  for (std::size_t i = 0; i < table_.entries.size(); ++i) {
    m.by_resolution[table_.entries[i].resolution] = counters_->by_entry[i].load();
  }
  return m;
}

ServeResponse ScanService::metrics_response() const {
  ServeResponse r;
  r.content_type = "text/plain";
  r.body = metrics().to_text();
  return r;
}

// ---- http -----------------------------------------------------------------------

struct ScanServer::Impl {
  httplib::Server server;
  std::thread thread;
};

namespace {

std::optional<std::string> param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

void reply(httplib::Response& res, const ServeResponse& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  res.set_content(r.body, r.content_type);
}

}  // namespace

ScanServer::ScanServer(const ScanService& service) : impl_(std::make_unique<Impl>()) {
  const ScanService& s = service;
  // Registered first: "/image/x/scans" would otherwise match the id route.
  impl_->server.Get(R"(/image/(.+)/scans)", [&s](const httplib::Request& req,
                                                   httplib::Response& res) {
    reply(res, s.serve_more(req.matches[1], param(req, "from"), param(req, "to")));
  });
  impl_->server.Get(R"(/image/(.+))", [&s](const httplib::Request& req,
                                            httplib::Response& res) {
    reply(res, s.serve_image(req.matches[1], param(req, "resolution"), param(req, "crop")));
  });
  impl_->server.Get("/metrics", [&s](const httplib::Request&, httplib::Response& res) {
    reply(res, s.metrics_response());
  });
}

ScanServer::~ScanServer() { stop(); }

int ScanServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void ScanServer::listen() { impl_->server.listen_after_bind(); }

int ScanServer::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  impl_->thread = std::thread([this] { listen(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ScanServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace resotune
