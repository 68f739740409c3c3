#pragma once

// Per-zone response-outcome counters. A zone whose distinct query names
// keep drawing one and the same outcome (NXDOMAIN, NODATA, SERVFAIL,
// silence, or a constant wildcard answer) is the uniformity signature of a
// unidirectional tunnel.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tunnelvet/dns.hpp"

namespace tunnelvet::uniformity {

using Timestamp = std::chrono::system_clock::time_point;

// Exact distinct-qname tracking stops here; the counter saturates so a
// tunnel flood cannot grow memory without bound.
inline constexpr std::uint32_t kDistinctQnameCap = 4096;

class ZoneMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownZoneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The aggregation suffix: the last `zone_depth` labels of a query name
// (the whole name when it is shorter).
class ZoneKey {
 public:
  static ZoneKey of(const dns::DomainName& qname, std::size_t zone_depth) {
    std::size_t n = std::min(zone_depth, qname.label_count());
    return ZoneKey(qname.suffix(n));
  }

  explicit ZoneKey(dns::DomainName suffix) : suffix_(std::move(suffix)) {
    key_ = suffix_.canonical();
  }

  const dns::DomainName& name() const { return suffix_; }
  const std::string& key() const { return key_; }

  friend bool operator==(const ZoneKey& a, const ZoneKey& b) {
    return a.key_ == b.key_;
  }

 private:
  dns::DomainName suffix_;
  std::string key_;
};

enum class OutcomeClass { Answer, NoData, NxDomain, ServFail, Timeout };

namespace detail {

inline void fnv_mix(std::uint64_t& h, std::uint8_t byte) {
  h ^= byte;
  h *= 1099511628211ull;
}

inline void fnv_mix(std::uint64_t& h, const std::string& bytes) {
  for (char c : bytes) fnv_mix(h, static_cast<std::uint8_t>(c));
}

}  // namespace detail

// Order-independent hash of an answer's rdata set. Owner names and TTLs are
// excluded so a wildcard zone handing out one constant record fingerprints
// identically across distinct query names.
inline std::uint64_t answer_fingerprint(
    const std::vector<dns::ResourceRecord>& answers) {
  std::vector<std::string> parts;
  parts.reserve(answers.size());
  for (const auto& rr : answers) {
    std::string p;
    p.push_back(static_cast<char>(rr.rtype >> 8));
    p.push_back(static_cast<char>(rr.rtype & 0xff));
    p.push_back(static_cast<char>(rr.rclass >> 8));
    p.push_back(static_cast<char>(rr.rclass & 0xff));
    if (const auto* cname = std::get_if<dns::CnameRecord>(&rr.rdata)) {
      p += cname->target.canonical();
    } else {
      auto raw = dns::detail::rdata_bytes(rr.rdata);
      p.append(raw.begin(), raw.end());
    }
    parts.push_back(std::move(p));
  }
  std::sort(parts.begin(), parts.end());
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
  for (const auto& p : parts) {
    detail::fnv_mix(h, static_cast<std::uint8_t>(p.size() >> 8));
    detail::fnv_mix(h, static_cast<std::uint8_t>(p.size() & 0xff));
    detail::fnv_mix(h, p);
  }
  return h;
}

struct ResponseOutcome {
  OutcomeClass cls = OutcomeClass::Timeout;
  std::uint64_t fingerprint = 0;  // Answer only

  static ResponseOutcome answer(const std::vector<dns::ResourceRecord>& rrs) {
    return {OutcomeClass::Answer, answer_fingerprint(rrs)};
  }
  static ResponseOutcome nxdomain() { return {OutcomeClass::NxDomain, 0}; }
  static ResponseOutcome nodata() { return {OutcomeClass::NoData, 0}; }
  static ResponseOutcome servfail() { return {OutcomeClass::ServFail, 0}; }
  static ResponseOutcome timeout() { return {OutcomeClass::Timeout, 0}; }

  // Canonical mapping from a decoded response. NODATA is NOERROR with an
  // empty answer section; rcodes other than NOERROR/NXDOMAIN count as
  // server failure.
  static ResponseOutcome of_response(const dns::DnsMessage& response) {
    if (response.header.rcode == dns::rcode::nxdomain) return nxdomain();
    if (response.header.rcode != dns::rcode::noerror) return servfail();
    if (response.answers.empty()) return nodata();
    return answer(response.answers);
  }

  // Class labels order NXDOMAIN < NODATA < SERVFAIL < TIMEOUT < ANSWER:…
  // lexicographically only by accident; what matters is that they are
  // stable, so ties break deterministically.
  std::string class_label() const {
    switch (cls) {
      case OutcomeClass::NxDomain: return "NXDOMAIN";
      case OutcomeClass::NoData: return "NODATA";
      case OutcomeClass::ServFail: return "SERVFAIL";
      case OutcomeClass::Timeout: return "TIMEOUT";
      case OutcomeClass::Answer: {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fingerprint));
        return std::string("ANSWER:") + buf;
      }
    }
    return "?";
  }
};

struct ZoneStats {
  std::uint64_t total_responses = 0;
  std::uint32_t distinct_qnames = 0;
  std::map<std::string, std::uint64_t> outcome_counts;  // class label -> n
  Timestamp first_seen{};
  Timestamp last_seen{};
};

struct UniformityView {
  double dominant_fraction = 0.0;
  std::string dominant_class;
  std::uint64_t samples = 0;
};

class UniformityTracker {
 public:
  void record_response(const ZoneKey& zone, const dns::DomainName& qname,
                       const ResponseOutcome& outcome, Timestamp now) {
    if (!qname.has_suffix(zone.name()))
      throw ZoneMismatchError("zone " + zone.key() + " is not a suffix of " +
                              qname.to_text());
    std::unique_lock lock(mutex_);
    Entry& e = zones_[zone.key()];
    if (e.stats.total_responses == 0) e.stats.first_seen = now;
    e.stats.last_seen = now;
    ++e.stats.total_responses;
    ++e.stats.outcome_counts[outcome.class_label()];
    if (e.stats.distinct_qnames < kDistinctQnameCap &&
        e.seen_qnames.insert(qname.canonical()).second)
      ++e.stats.distinct_qnames;
  }

  UniformityView uniformity(const ZoneKey& zone) const {
    std::shared_lock lock(mutex_);
    auto it = zones_.find(zone.key());
    if (it == zones_.end())
      throw UnknownZoneError("no responses recorded for zone " + zone.key());
    return view_of(it->second.stats);
  }

  std::optional<UniformityView> try_uniformity(const ZoneKey& zone) const {
    std::shared_lock lock(mutex_);
    auto it = zones_.find(zone.key());
    if (it == zones_.end()) return std::nullopt;
    return view_of(it->second.stats);
  }

  bool is_uniform(const ZoneKey& zone, std::uint64_t min_samples,
                  double threshold) const {
    if (!(threshold > 0.0 && threshold <= 1.0))
      throw std::invalid_argument("uniformity threshold must be in (0,1]");
    auto v = uniformity(zone);
    return v.samples >= min_samples && v.dominant_fraction >= threshold;
  }

  std::optional<ZoneStats> stats(const ZoneKey& zone) const {
    std::shared_lock lock(mutex_);
    auto it = zones_.find(zone.key());
    if (it == zones_.end()) return std::nullopt;
    return it->second.stats;
  }

  std::size_t zone_count() const {
    std::shared_lock lock(mutex_);
    return zones_.size();
  }

  void reset() {
    std::unique_lock lock(mutex_);
    zones_.clear();
  }

  // One JSON record per zone, sorted by zone key.
  void write_snapshot(std::ostream& out) const {
    std::shared_lock lock(mutex_);
    std::map<std::string, const Entry*> ordered;
    for (const auto& [key, entry] : zones_) ordered.emplace(key, &entry);
    for (const auto& [key, entry] : ordered) {
      out << "{\"zone\":\"" << key
          << "\",\"total\":" << entry->stats.total_responses
          << ",\"distinct_qnames\":" << entry->stats.distinct_qnames
          << ",\"outcomes\":{";
      bool first = true;
      for (const auto& [label, count] : entry->stats.outcome_counts) {
        if (!first) out << ',';
        out << '"' << label << "\":" << count;
        first = false;
      }
      out << "}}\n";
    }
  }

 private:
  struct Entry {
    ZoneStats stats;
    std::unordered_set<std::string> seen_qnames;
  };

  static UniformityView view_of(const ZoneStats& s) {
    UniformityView v;
    v.samples = s.total_responses;
    std::uint64_t best = 0;
    // std::map iterates labels in ascending order, so with a strict compare
    // equal counts keep the lexicographically smallest label.
    for (const auto& [label, count] : s.outcome_counts) {
      if (count > best) {
        best = count;
        v.dominant_class = label;
      }
    }
    if (v.samples > 0)
      v.dominant_fraction =
          static_cast<double>(best) / static_cast<double>(v.samples);
    return v;
  }

  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Entry> zones_;
};

}  // namespace tunnelvet::uniformity
