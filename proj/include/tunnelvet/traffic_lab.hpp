#pragma once

// Synthetic corpus generation, a scriptable stub upstream and the detection
// quality harness. Generators are deterministic: one splitmix64 stream per
// spec, consumed in documented order, so a (spec, seed) pair reproduces a
// corpus byte for byte.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tunnelvet/classifier.hpp"
#include "tunnelvet/dns.hpp"
#include "tunnelvet/features.hpp"
#include "tunnelvet/net.hpp"

namespace tunnelvet::traffic_lab {

inline constexpr std::string_view kRngAlgorithm = "splitmix64";

// splitmix64 (Steele, Lea, Vigna). Bytes are the low 8 bits of next();
// bounded draws are next() % n.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t next_below(std::uint64_t n) { return next() % n; }
  std::uint8_t next_byte() { return static_cast<std::uint8_t>(next() & 0xff); }

 private:
  std::uint64_t state_;
};

namespace basenc {

// RFC 4648 base32 without padding, lowercased for DNS labels.
inline std::string base32_lower(std::span<const std::uint8_t> data) {
  static constexpr char alphabet[] = "abcdefghijklmnopqrstuvwxyz234567";
  std::string out;
  out.reserve((data.size() * 8 + 4) / 5);
  std::uint32_t buffer = 0;
  int bits = 0;
  for (std::uint8_t byte : data) {
    buffer = (buffer << 8) | byte;
    bits += 8;
    while (bits >= 5) {
      out.push_back(alphabet[(buffer >> (bits - 5)) & 0x1f]);
      bits -= 5;
    }
  }
  if (bits > 0) out.push_back(alphabet[(buffer << (5 - bits)) & 0x1f]);
  return out;
}

// RFC 4648 base64url without padding (mixed case, as tunnels emit it).
inline std::string base64url(std::span<const std::uint8_t> data) {
  static constexpr char alphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
  std::string out;
  out.reserve((data.size() * 4 + 2) / 3);
  std::uint32_t buffer = 0;
  int bits = 0;
  for (std::uint8_t byte : data) {
    buffer = (buffer << 8) | byte;
    bits += 8;
    while (bits >= 6) {
      out.push_back(alphabet[(buffer >> (bits - 6)) & 0x3f]);
      bits -= 6;
    }
  }
  if (bits > 0) out.push_back(alphabet[(buffer << (6 - bits)) & 0x3f]);
  return out;
}

inline std::string hex_lower(std::span<const std::uint8_t> data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t byte : data) {
    out.push_back(digits[byte >> 4]);
    out.push_back(digits[byte & 0x0f]);
  }
  return out;
}

}  // namespace basenc

class EmptyDictionaryError : public std::runtime_error {
 public:
  EmptyDictionaryError() : std::runtime_error("benign generator needs a non-empty dictionary") {}
};

class SuffixTooLongError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingleClassCorpusError : public std::runtime_error {
 public:
  SingleClassCorpusError()
      : std::runtime_error("corpus must contain both benign and tunnel names") {}
};

enum class Encoding { Base32, Base64Url, Hex };

inline std::string_view to_string(Encoding e) {
  switch (e) {
    case Encoding::Base32: return "base32";
    case Encoding::Base64Url: return "base64url";
    case Encoding::Hex: return "hex";
  }
  return "?";
}

inline Encoding encoding_from_string(std::string_view s) {
  if (s == "base32") return Encoding::Base32;
  if (s == "base64url") return Encoding::Base64Url;
  if (s == "hex") return Encoding::Hex;
  throw std::invalid_argument("unknown encoding: " + std::string(s));
}

struct CorpusSpec {
  enum class Kind { Benign, Tunnel };

  Kind kind = Kind::Benign;
  std::size_t count = 0;
  std::uint64_t seed = 0;

  // Benign: total label count range, TLD included.
  int label_count_min = 2;
  int label_count_max = 3;
  double numeric_name_fraction = 0.05;

  // Tunnel: payload size range in bytes, encoding, registered-style suffix,
  // cap on encoded labels per name.
  std::size_t payload_min = 60;
  std::size_t payload_max = 200;
  Encoding encoding = Encoding::Base32;
  std::string suffix = "t.example";
  int max_payload_labels = 4;
};

// Names built from dictionary words under common suffixes: plain words,
// the occasional hyphen-joined pair, and a small numeric-bearing slice
// ("mail2", "ns1") so the benign class is not artificially regular.
inline std::vector<std::string> gen_benign(const CorpusSpec& spec,
                                           const features::Dictionary& dict) {
  if (dict.empty()) throw EmptyDictionaryError();
  if (spec.label_count_min < 2 || spec.label_count_max < spec.label_count_min)
    throw std::invalid_argument("benign label count range must satisfy 2 <= min <= max");
  static const std::vector<std::string> tlds = {"com", "net", "org", "io",
                                                "info"};
  const auto words = dict.sorted_words();
  SplitMix64 rng(spec.seed);
  std::vector<std::string> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    int total = spec.label_count_min +
                static_cast<int>(rng.next_below(
                    spec.label_count_max - spec.label_count_min + 1ull));
    std::string name;
    for (int l = 0; l < total - 1; ++l) {
      std::string label = words[rng.next_below(words.size())];
      if (rng.next_below(5) == 0)
        label += "-" + words[rng.next_below(words.size())];
      if (rng.next_below(100) <
          static_cast<std::uint64_t>(spec.numeric_name_fraction * 100.0))
        label += static_cast<char>('1' + rng.next_below(9));
      if (!name.empty()) name.push_back('.');
      name += label;
    }
    name.push_back('.');
    name += tlds[rng.next_below(tlds.size())];
    out.push_back(std::move(name));
  }
  return out;
}

// Random payload bytes, encoded and chunked into <=63-char labels under the
// suffix, within the 253-char presentation bound; payload beyond the bound
// is dropped.
inline std::vector<std::string> gen_tunnel(const CorpusSpec& spec) {
  if (spec.payload_min < 1 || spec.payload_max < spec.payload_min)
    throw std::invalid_argument("payload range must satisfy 1 <= min <= max");
  if (spec.max_payload_labels < 1)
    throw std::invalid_argument("max_payload_labels must be >= 1");
  const auto suffix_name = dns::parse_name(spec.suffix);  // validates
  const std::size_t suffix_len = suffix_name.presentation_length();
  if (suffix_len + 2 > 253)
    throw SuffixTooLongError("suffix leaves no room for a payload label: " +
                             spec.suffix);

  SplitMix64 rng(spec.seed);
  std::vector<std::string> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    std::size_t payload_bytes =
        spec.payload_min +
        rng.next_below(spec.payload_max - spec.payload_min + 1ull);
    std::vector<std::uint8_t> payload(payload_bytes);
    for (auto& b : payload) b = rng.next_byte();

    std::string encoded;
    switch (spec.encoding) {
      case Encoding::Base32: encoded = basenc::base32_lower(payload); break;
      case Encoding::Base64Url: encoded = basenc::base64url(payload); break;
      case Encoding::Hex: encoded = basenc::hex_lower(payload); break;
    }

    std::size_t room = 253 - suffix_len - 1;  // the dot before the suffix
    std::string name;
    std::size_t consumed = 0;
    int labels = 0;
    while (consumed < encoded.size() && labels < spec.max_payload_labels) {
      std::size_t overhead = name.empty() ? 0 : 1;  // separating dot
      if (room < overhead + 1) break;
      std::size_t take = std::min({std::size_t{63}, encoded.size() - consumed,
                                   room - overhead});
      if (!name.empty()) name.push_back('.');
      name.append(encoded, consumed, take);
      consumed += take;
      room -= overhead + take;
      ++labels;
    }
    name.push_back('.');
    name += spec.suffix;
    out.push_back(std::move(name));
  }
  return out;
}

struct LabeledName {
  std::string name;
  bool tunnel = false;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct EvalReport {
  std::vector<std::pair<double, bool>> scored;  // (score, is_tunnel)
  std::vector<RocPoint> roc;                    // (0,0) .. (1,1)
  double auc = 0.0;
  double threshold = 0.0;
  Confusion confusion;
  double runtime_seconds = 0.0;

  // Best TPR among operating points with FPR within the bound.
  double tpr_at_fpr(double max_fpr) const {
    double best = 0.0;
    for (const auto& p : roc)
      if (p.fpr <= max_fpr) best = std::max(best, p.tpr);
    return best;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["rng_algorithm"] = std::string(kRngAlgorithm);
    j["samples"] = scored.size();
    j["auc"] = auc;
    j["threshold"] = threshold;
    j["confusion"] = {{"tp", confusion.tp},
                      {"fp", confusion.fp},
                      {"tn", confusion.tn},
                      {"fn", confusion.fn}};
    j["tpr_at_fpr_0.05"] = tpr_at_fpr(0.05);
    j["runtime_seconds"] = runtime_seconds;
    auto roc_json = nlohmann::json::array();
    for (const auto& p : roc)
      roc_json.push_back({{"fpr", p.fpr}, {"tpr", p.tpr},
                          {"threshold", p.threshold}});
    j["roc"] = roc_json;
    return j;
  }

  void write_roc_csv(std::ostream& out) const {
    out << "threshold,fpr,tpr\n";
    for (const auto& p : roc)
      out << p.threshold << ',' << p.fpr << ',' << p.tpr << '\n';
  }
};

// Scores the corpus through the feature path alone (no registry, no zone
// state), sweeps thresholds over the observed scores, and integrates the
// ROC by the trapezoid rule. Tied scores collapse into one operating point,
// which keeps the trapezoid area equal to the pairwise-comparison AUC.
inline EvalReport evaluate(const std::vector<LabeledName>& corpus,
                           const classifier::ClassifierConfig& cfg,
                           const features::Dictionary& dict) {
  auto started = std::chrono::steady_clock::now();
  EvalReport report;
  report.threshold = cfg.weights.score_threshold;

  std::size_t positives = 0, negatives = 0;
  report.scored.reserve(corpus.size());
  for (const auto& item : corpus) {
    auto name = dns::parse_name(item.name);
    double score = features::suspicion_score(
        features::extract_features(name, dict), cfg.weights);
    report.scored.emplace_back(score, item.tunnel);
    (item.tunnel ? positives : negatives) += 1;
  }
  if (positives == 0 || negatives == 0) throw SingleClassCorpusError();

  auto sorted = report.scored;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });

  report.roc.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    double score = sorted[i].first;
    while (i < sorted.size() && sorted[i].first == score) {
      (sorted[i].second ? tp : fp) += 1;
      ++i;
    }
    report.roc.push_back({static_cast<double>(fp) / negatives,
                          static_cast<double>(tp) / positives, score});
  }

  double auc = 0.0;
  for (std::size_t k = 1; k < report.roc.size(); ++k) {
    const auto& a = report.roc[k - 1];
    const auto& b = report.roc[k];
    auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  report.auc = auc;

  for (const auto& [score, is_tunnel] : report.scored) {
    bool predicted_tunnel = score > report.threshold;
    if (predicted_tunnel)
      (is_tunnel ? report.confusion.tp : report.confusion.fp) += 1;
    else
      (is_tunnel ? report.confusion.fn : report.confusion.tn) += 1;
  }

  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return report;
}

inline void write_names(const std::filesystem::path& path,
                        const std::vector<std::string>& names) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& n : names) out << n << '\n';
}

inline std::vector<std::string> load_names(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

inline void write_labels(const std::filesystem::path& path,
                         const std::vector<LabeledName>& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& item : corpus)
    out << item.name << '\t' << (item.tunnel ? "tunnel" : "benign") << '\n';
}

inline std::vector<LabeledName> load_labeled(
    const std::filesystem::path& corpus_path,
    const std::filesystem::path& labels_path) {
  std::ifstream in(labels_path);
  if (!in) throw std::runtime_error("cannot read " + labels_path.string());
  std::map<std::string, bool> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(labels_path.string() + ":" +
                               std::to_string(lineno) +
                               ": expected name<TAB>label");
    std::string label = line.substr(tab + 1);
    if (label != "benign" && label != "tunnel")
      throw std::runtime_error(labels_path.string() + ":" +
                               std::to_string(lineno) + ": unknown label '" +
                               label + "'");
    labels[line.substr(0, tab)] = (label == "tunnel");
  }
  std::vector<LabeledName> out;
  for (const auto& name : load_names(corpus_path)) {
    auto it = labels.find(name);
    if (it == labels.end())
      throw std::runtime_error("no label for corpus name: " + name);
    out.push_back({name, it->second});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scriptable stub upstream

struct StubBehavior {
  enum class Kind { Answer, NxDomain, NoData, ServFail, Silence };

  Kind kind = Kind::Answer;
  std::array<std::uint8_t, 4> a_addr = {127, 0, 0, 1};
  std::uint32_t ttl = 300;
  std::chrono::milliseconds latency{0};

  static StubBehavior answer(std::array<std::uint8_t, 4> addr,
                             std::uint32_t ttl = 300) {
    return {Kind::Answer, addr, ttl, {}};
  }
  static StubBehavior nxdomain() { return {Kind::NxDomain, {}, 0, {}}; }
  static StubBehavior nodata() { return {Kind::NoData, {}, 0, {}}; }
  static StubBehavior servfail() { return {Kind::ServFail, {}, 0, {}}; }
  static StubBehavior silence() { return {Kind::Silence, {}, 0, {}}; }

  StubBehavior with_latency(std::chrono::milliseconds ms) const {
    StubBehavior copy = *this;
    copy.latency = ms;
    return copy;
  }
};

struct StubScript {
  // Longest matching suffix wins; exact names are checked first.
  std::vector<std::pair<std::string, StubBehavior>> zones;
  std::map<std::string, StubBehavior> exact;
  StubBehavior default_behavior = StubBehavior::answer({127, 0, 0, 1});
};

struct ReceivedQuery {
  std::string qname;  // canonical form
  std::uint16_t qtype = 0;
  net::Endpoint client;
};

// In-process authoritative stand-in for tests and acceptance runs. Records
// every received query so callers can assert on upstream traffic.
class StubUpstream {
 public:
  explicit StubUpstream(StubScript script)
      : script_(std::move(script)),
        socket_(net::UdpSocket::bind(net::Endpoint::parse("127.0.0.1:0"))),
        endpoint_(socket_.local_endpoint()) {
    for (auto& [suffix, behavior] : script_.zones)
      zone_names_.emplace_back(dns::parse_name(suffix), behavior);
    std::sort(zone_names_.begin(), zone_names_.end(),
              [](const auto& a, const auto& b) {
                return a.first.label_count() > b.first.label_count();
              });
    thread_ = std::thread([this] { run(); });
  }

  ~StubUpstream() { stop(); }

  const net::Endpoint& endpoint() const { return endpoint_; }

  void stop() {
    if (!running_.exchange(false)) return;
    socket_.shutdown_read();
    if (thread_.joinable()) thread_.join();
    socket_.close();
  }

  std::vector<ReceivedQuery> received() const {
    std::lock_guard lock(mutex_);
    return received_;
  }

  std::size_t query_count() const {
    std::lock_guard lock(mutex_);
    return received_.size();
  }

  std::size_t count_for(const dns::DomainName& qname) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (const auto& q : received_)
      if (q.qname == qname.canonical()) ++n;
    return n;
  }

 private:
  void run() {
    while (running_) {
      auto datagram = socket_.recv_from(std::chrono::milliseconds(100));
      if (!datagram) continue;
      auto& [bytes, client] = *datagram;
      dns::DnsMessage query;
      try {
        query = dns::decode(bytes);
      } catch (const dns::DecodeError&) {
        continue;
      }
      if (query.questions.size() != 1) continue;
      const auto& q = query.questions[0];
      {
        std::lock_guard lock(mutex_);
        received_.push_back({q.qname.canonical(), q.qtype, client});
      }
      StubBehavior behavior = behavior_for(q.qname);
      if (behavior.kind == StubBehavior::Kind::Silence) continue;
      if (behavior.latency.count() > 0)
        std::this_thread::sleep_for(behavior.latency);

      dns::DnsMessage response;
      response.header = query.header;
      response.header.qr = true;
      response.header.ra = true;
      response.questions = query.questions;
      switch (behavior.kind) {
        case StubBehavior::Kind::Answer: {
          dns::ResourceRecord rr;
          rr.name = q.qname;
          rr.rtype = dns::qtype::a;
          rr.rclass = dns::qclass::in;
          rr.ttl = behavior.ttl;
          rr.rdata = dns::ARecord{behavior.a_addr};
          response.answers.push_back(std::move(rr));
          response.header.rcode = dns::rcode::noerror;
          break;
        }
        case StubBehavior::Kind::NoData:
          response.header.rcode = dns::rcode::noerror;
          break;
        case StubBehavior::Kind::NxDomain:
          response.header.rcode = dns::rcode::nxdomain;
          break;
        case StubBehavior::Kind::ServFail:
          response.header.rcode = dns::rcode::servfail;
          break;
        case StubBehavior::Kind::Silence:
          break;
      }
      response.sync_counts();
      try {
        socket_.send_to(dns::encode(response), client);
      } catch (const net::NetError&) {
        // peer vanished; keep serving
      }
    }
  }

  StubBehavior behavior_for(const dns::DomainName& qname) const {
    auto it = script_.exact.find(qname.canonical());
    if (it != script_.exact.end()) return it->second;
    for (const auto& [zone, behavior] : zone_names_)
      if (qname.has_suffix(zone)) return behavior;
    return script_.default_behavior;
  }

  StubScript script_;
  std::vector<std::pair<dns::DomainName, StubBehavior>> zone_names_;
  net::UdpSocket socket_;
  net::Endpoint endpoint_;
  std::atomic<bool> running_{true};
  std::thread thread_;
  mutable std::mutex mutex_;
  std::vector<ReceivedQuery> received_;
};

}  // namespace tunnelvet::traffic_lab
