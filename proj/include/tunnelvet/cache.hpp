#pragma once

// Answer cache for the validating forwarder. Entries live for the minimum
// answer TTL clamped into configured bounds; NXDOMAIN and NODATA are cached
// under the negative TTL.

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tunnelvet/config.hpp"
#include "tunnelvet/dns.hpp"

namespace tunnelvet::resolver {

using Timestamp = std::chrono::system_clock::time_point;

struct CacheKey {
  std::string qname;  // canonical form
  std::uint16_t qtype = 0;

  static CacheKey of(const dns::Question& q) {
    return {q.qname.canonical(), q.qtype};
  }

  friend auto operator<=>(const CacheKey&, const CacheKey&) = default;
};

struct CacheEntry {
  std::vector<dns::ResourceRecord> answers;
  std::uint8_t rcode = dns::rcode::noerror;
  Timestamp stored_at{};
  std::uint32_t ttl = 0;

  bool fresh(Timestamp now) const {
    return now < stored_at + std::chrono::seconds(ttl);
  }

  std::uint32_t remaining_ttl(Timestamp now) const {
    auto age =
        std::chrono::duration_cast<std::chrono::seconds>(now - stored_at);
    if (age.count() < 0) return ttl;
    return age.count() >= ttl ? 0 : ttl - static_cast<std::uint32_t>(age.count());
  }
};

class DnsCache {
 public:
  std::optional<CacheEntry> get(const CacheKey& key, Timestamp now) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end() || !it->second.fresh(now)) return std::nullopt;
    return it->second;
  }

  bool contains_fresh(const CacheKey& key, Timestamp now) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    return it != entries_.end() && it->second.fresh(now);
  }

  void put(const CacheKey& key, std::vector<dns::ResourceRecord> answers,
           std::uint8_t rcode, Timestamp now,
           const config::CacheClamps& clamps) {
    CacheEntry entry;
    entry.rcode = rcode;
    entry.stored_at = now;
    bool negative = answers.empty() || rcode != dns::rcode::noerror;
    if (negative) {
      entry.ttl = clamps.negative_ttl;
    } else {
      std::uint32_t min_ttl = answers.front().ttl;
      for (const auto& rr : answers) min_ttl = std::min(min_ttl, rr.ttl);
      entry.ttl = std::clamp(min_ttl, clamps.min_ttl, clamps.max_ttl);
    }
    entry.answers = std::move(answers);
    std::lock_guard lock(mutex_);
    entries_[key] = std::move(entry);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  void clear() {
    std::lock_guard lock(mutex_);
    entries_.clear();
  }

 private:
  mutable std::mutex mutex_;
  std::map<CacheKey, CacheEntry> entries_;
};

}  // namespace tunnelvet::resolver
